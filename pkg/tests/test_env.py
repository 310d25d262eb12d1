import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqdx.env import (
    CORRECT,
    DUPLICATE_TEXT,
    EXHAUSTED,
    INVALID,
    INVALID_TEXT,
    UNAVAILABLE_TEXT,
    WRONG,
    ConfigurationError,
    Diagnose,
    DiagnosisEnv,
    EpisodeConfig,
    Malformed,
    ObservedState,
    PatientRecord,
    RequestTest,
    TestCatalog,
    UsageError,
    available_tests,
)

CATALOG = TestCatalog()


def full_record():
    return PatientRecord("full", "cholecystitis", "h", {name: f"result of {name}" for name in CATALOG.names})


class TestCatalogDefaults:
    def test_sizes(self):
        assert CATALOG.n_tests == 12 and CATALOG.n_classes == 4

    @pytest.mark.parametrize("kwargs", [{"names": ()}, {"classes": ()}, {"names": ("CT", "CT")}, {"classes": ("a", "a")}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TestCatalog(**kwargs)

    def test_matching_is_case_insensitive(self):
        assert CATALOG.match_test("  complete blood count ") == "Complete Blood Count"
        assert CATALOG.match_class("APPENDICITIS") == "appendicitis"
        assert CATALOG.match_test("CBC") is None


class TestReset:
    def test_fresh_state(self, record):
        state = DiagnosisEnv().reset(record)
        assert state.history == record.history
        assert state.revealed == () and state.requested == frozenset() and state.step == 0

    def test_reset_is_pure(self, record):
        env = DiagnosisEnv()
        assert env.reset(record) == env.reset(record)

    @pytest.mark.parametrize(
        "bad",
        [
            PatientRecord("x", "influenza", "h", {}),
            PatientRecord("x", "appendicitis", "h", {"Blood Gas": "7.4"}),
            PatientRecord("x", "appendicitis", "", {}),
        ],
    )
    def test_invalid_record(self, bad):
        with pytest.raises(ConfigurationError):
            DiagnosisEnv().reset(bad)


class TestStep:
    def test_reveal(self, record):
        env = DiagnosisEnv()
        res = env.step(env.reset(record), RequestTest("Ultrasound"))
        assert not res.terminal
        assert res.state.revealed == (("Ultrasound", "enlarged appendix"),)
        assert res.observation.text == "Ultrasound: enlarged appendix"
        assert res.state.step == 1 and res.state.retries_used == 0

    def test_unavailable(self, record):
        env = DiagnosisEnv()
        res = env.step(env.reset(record), RequestTest("MRI"))
        assert res.observation.text == UNAVAILABLE_TEXT
        assert res.state.revealed == ()
        assert "MRI" in res.state.requested and res.state.retries_used == 1

    def test_duplicate(self, record):
        env = DiagnosisEnv()
        s = env.step(env.reset(record), RequestTest("CT")).state
        res = env.step(s, RequestTest("CT"))
        assert res.observation.text == DUPLICATE_TEXT
        assert res.state.revealed == s.revealed and res.state.retries_used == 1

    @pytest.mark.parametrize("action", [RequestTest("Blood Gas"), Diagnose("influenza"), Malformed("NoSentinel")])
    def test_invalid_actions(self, record, action):
        env = DiagnosisEnv()
        res = env.step(env.reset(record), action)
        assert res.observation.text == INVALID_TEXT and res.state.retries_used == 1
        assert not res.terminal

    def test_correct_diagnosis_at_step_zero(self, record):
        env = DiagnosisEnv()
        res = env.step(env.reset(record), Diagnose("appendicitis"))
        assert res.terminal and res.outcome.kind == CORRECT and res.outcome.tests_used == 0

    def test_wrong_diagnosis(self, record):
        env = DiagnosisEnv()
        s = env.step(env.reset(record), RequestTest("CT")).state
        res = env.step(s, Diagnose("pancreatitis"))
        assert res.outcome.kind == WRONG and res.outcome.predicted == "pancreatitis" and res.outcome.tests_used == 1

    def test_retry_budget(self, record):
        env = DiagnosisEnv(config=EpisodeConfig(retry_budget=3))
        s = env.reset(record)
        for _ in range(3):
            res = env.step(s, Malformed())
            assert not res.terminal
            s = res.state
        res = env.step(s, Malformed())
        assert res.terminal and res.outcome.kind == INVALID

    def test_successful_reveal_resets_retries(self, record):
        env = DiagnosisEnv(config=EpisodeConfig(retry_budget=1))
        s = env.step(env.reset(record), Malformed()).state
        s = env.step(s, RequestTest("CT")).state
        assert s.retries_used == 0
        assert not env.step(s, Malformed()).terminal

    def test_step_budget(self):
        env = DiagnosisEnv(config=EpisodeConfig(step_budget=3, retry_budget=10))
        s = env.reset(full_record())
        for name in CATALOG.names[:3]:
            s = env.step(s, RequestTest(name)).state
        res = env.step(s, RequestTest(CATALOG.names[3]))
        assert res.terminal and res.outcome.kind == EXHAUSTED and res.outcome.tests_used == 4

    def test_terminal_state_rejects_steps(self, record):
        env = DiagnosisEnv()
        res = env.step(env.reset(record), Diagnose("appendicitis"))
        with pytest.raises(UsageError):
            env.step(res.state, RequestTest("CT"))

    def test_step_before_reset(self):
        with pytest.raises(UsageError):
            DiagnosisEnv().step(ObservedState(history="h"), RequestTest("CT"))

    def test_custom_texts(self, record):
        env = DiagnosisEnv(config=EpisodeConfig(unavailable_text="n/a"))
        assert env.step(env.reset(record), RequestTest("MRI")).observation.text == "n/a"


class TestAvailableTests:
    def test_all_twelve(self):
        record = full_record()
        state = DiagnosisEnv().reset(record)
        assert available_tests(state, record) == set(CATALOG.names)

    def test_after_reveal(self):
        record = full_record()
        env = DiagnosisEnv()
        s = env.step(env.reset(record), RequestTest("CT")).state
        assert len(available_tests(s, record)) == 11

    def test_no_tests(self):
        record = PatientRecord("e", "appendicitis", "h", {})
        assert available_tests(DiagnosisEnv().reset(record), record) == set()


actions = st.one_of(
    st.builds(RequestTest, st.sampled_from(CATALOG.names + ("Blood Gas",))),
    st.builds(Diagnose, st.sampled_from(CATALOG.classes + ("influenza",))),
    st.builds(Malformed, st.just("x")),
)
records = st.builds(
    PatientRecord,
    st.just("r"),
    st.sampled_from(CATALOG.classes),
    st.just("history"),
    st.dictionaries(st.sampled_from(CATALOG.names), st.sampled_from(["a", "b", "c"]), max_size=12),
)


def rollout(record, seq, config=EpisodeConfig()):
    env = DiagnosisEnv(CATALOG, config)
    state = env.reset(record)
    out = []
    for action in seq:
        res = env.step(state, action)
        out.append((action, res))
        state = res.state
        if res.terminal:
            break
    return out


class TestProperties:
    @given(records, st.lists(actions, max_size=40))
    def test_revealed_monotone_and_consistent(self, record, seq):
        prev = ()
        for action, res in rollout(record, seq):
            rev = res.state.revealed
            assert rev[: len(prev)] == prev and len(rev) - len(prev) <= 1
            assert set(res.state.revealed_dict) <= set(record.tests)
            assert set(res.state.revealed_dict) <= res.state.requested
            if res.observation.kind in ("unavailable", "duplicate", "invalid"):
                assert rev == prev
            prev = rev

    @given(records, st.lists(actions, min_size=60, max_size=60))
    def test_terminates_within_budget(self, record, seq):
        config = EpisodeConfig(step_budget=25, retry_budget=100)
        out = rollout(record, seq, config)
        terminal = [res for _, res in out if res.terminal]
        assert terminal and len(out) <= config.step_budget + 1

    @given(records, st.lists(actions, max_size=40))
    def test_correct_iff_true_diagnosis(self, record, seq):
        out = rollout(record, seq)
        action, res = out[-1] if out else (None, None)
        if res is not None and res.terminal:
            is_true = isinstance(action, Diagnose) and action.label == record.diagnosis
            assert (res.outcome.kind == CORRECT) == is_true
            assert res.outcome.tests_used == len(res.state.revealed)

    @given(records, st.lists(actions, max_size=30))
    def test_replay_is_identical(self, record, seq):
        assert rollout(record, seq) == rollout(record, seq)

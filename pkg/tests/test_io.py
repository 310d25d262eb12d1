import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seqdx.env import (
    INVALID,
    ConfigurationError,
    Diagnose,
    Malformed,
    ObservedState,
    PatientRecord,
    RequestTest,
    TestCatalog,
)
from seqdx.io import (
    EpisodeLogEntry,
    RecordFormatError,
    load_dataset,
    load_records,
    parse_records,
    read_episode_log,
    record_to_json,
    replay_episode,
    save_dataset,
    save_records,
)
from seqdx.policies import (
    BayesOracle,
    Featurizer,
    ParametricPolicy,
    PolicyParams,
    ScriptedPolicy,
)
from seqdx.protocol import HypothesisOutput, ParseError
from seqdx.runner import (
    JsonlLogWriter,
    format_trace,
    run_episode,
    state_digest,
    trace_log_entries,
)

CATALOG = TestCatalog()

records_st = st.builds(
    PatientRecord,
    st.text(min_size=1, max_size=10),
    st.sampled_from(CATALOG.classes),
    st.text(min_size=1, max_size=60).filter(str.strip),
    st.dictionaries(st.sampled_from(CATALOG.names), st.text(max_size=30), max_size=12),
)


class TestRecords:
    @given(st.lists(records_st, max_size=5))
    def test_json_round_trip(self, records):
        lines = [record_to_json(r) for r in records]
        assert parse_records(lines, CATALOG) == records

    def test_file_round_trip(self, tmp_path, decisive_data):
        path = tmp_path / "r.jsonl"
        save_records(decisive_data.test, path)
        assert load_records(path, CATALOG) == decisive_data.test

    def test_blank_lines_skipped(self, record):
        assert parse_records(["", record_to_json(record), "   "]) == [record]

    @pytest.mark.parametrize("bad", [
        "not json",
        "[1, 2]",
        '{"id": "x", "diagnosis": "appendicitis", "history": "h"}',
        '{"id": "x", "diagnosis": "appendicitis", "history": "h", "tests": {}, "extra": 1}',
        '{"id": 3, "diagnosis": "appendicitis", "history": "h", "tests": {}}',
        '{"id": "x", "diagnosis": "appendicitis", "history": "h", "tests": {"CT": 4}}',
        '{"id": "x", "diagnosis": "influenza", "history": "h", "tests": {}}',
        '{"id": "x", "diagnosis": "appendicitis", "history": "h", "tests": {"Blood Gas": "7.4"}}',
    ])
    def test_errors_carry_line_number(self, tmp_path, record, bad):
        path = tmp_path / "bad.jsonl"
        path.write_text(record_to_json(record) + "\n\n" + bad + "\n", encoding="utf-8")
        with pytest.raises(RecordFormatError) as info:
            load_records(path, CATALOG)
        assert info.value.line == 3
        assert str(info.value).startswith(f"{path}:3:")
        assert isinstance(info.value, ConfigurationError)


class TestDataset:
    def test_round_trip(self, tmp_path, decisive_data):
        paths = save_dataset(decisive_data, tmp_path / "d")
        assert [p.name for p in paths] == ["train.jsonl", "val.jsonl", "test.jsonl"]
        loaded = load_dataset(tmp_path / "d", CATALOG)
        assert loaded.train == decisive_data.train and loaded.test == decisive_data.test

    def test_missing_split(self, tmp_path, decisive_data):
        save_dataset(decisive_data, tmp_path)
        (tmp_path / "val.jsonl").unlink()
        with pytest.raises(ConfigurationError):
            load_dataset(tmp_path, CATALOG)


class TestEpisodeLog:
    def _trace(self, decisive_model, decisive_data):
        return run_episode(decisive_data.test[0], BayesOracle(decisive_model), BayesOracle(decisive_model))

    def test_write_read_replay(self, tmp_path, decisive_model, decisive_data):
        trace = self._trace(decisive_model, decisive_data)
        path = tmp_path / "log.jsonl"
        with JsonlLogWriter(path) as log:
            log.write_all(trace_log_entries(trace, "test:0"))
        entries = read_episode_log(path)
        assert [e.step for e in entries] == list(range(len(trace.steps)))
        assert entries[0].state_digest == state_digest(trace.steps[0].state)
        assert replay_episode(entries, decisive_data.test[0]) == []

    def test_replay_detects_tampering(self, tmp_path, decisive_model, decisive_data):
        trace = self._trace(decisive_model, decisive_data)
        raw = trace_log_entries(trace, "e")
        raw[0]["observation"] = "Ultrasound: something else"
        entries = [EpisodeLogEntry.from_dict(json.loads(json.dumps(e))) for e in raw]
        assert replay_episode(entries, decisive_data.test[0]) == [0]

    def test_log_appends(self, tmp_path, decisive_model, decisive_data):
        trace = self._trace(decisive_model, decisive_data)
        path = tmp_path / "log.jsonl"
        for _ in range(2):
            with JsonlLogWriter(path) as log:
                log.write_all(trace_log_entries(trace, "e"))
        assert len(read_episode_log(path)) == 2 * len(trace.steps)

    def test_bad_log_line(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"episode": "e"}\n', encoding="utf-8")
        with pytest.raises(RecordFormatError) as info:
            read_episode_log(path)
        assert info.value.line == 1

    def test_digest_changes_with_state(self):
        a = ObservedState(history="h")
        b = ObservedState(history="h", step=1)
        assert state_digest(a) != state_digest(b) and len(state_digest(a)) == 16

    def test_format_trace(self, decisive_model, decisive_data):
        text = format_trace(self._trace(decisive_model, decisive_data))
        assert "Action: RequestTest Ultrasound" in text and "Outcome: CorrectDiagnosis" in text


class _FailingHypothesis:
    def hypothesis_act(self, state, rng=None):
        raise ParseError("MissingField", "")


class TestRunEpisode:
    def test_hypothesis_failure_is_invalid(self, record):
        trace = run_episode(record, _FailingHypothesis(), ScriptedPolicy(CATALOG))
        assert trace.outcome.kind == INVALID and trace.steps == []

    def test_malformed_actions_exhaust_retries(self, record):
        policy = ScriptedPolicy(CATALOG, [Malformed()] * 10)
        trace = run_episode(record, policy, policy)
        assert trace.outcome.kind == INVALID and len(trace.steps) == 4
        assert trace.terminal_reward == -1.5

    def test_exploration_recomputes_level_logprob(self, record):
        feat = Featurizer.from_records(CATALOG, [record])
        policy = ParametricPolicy(PolicyParams.random(feat, np.random.default_rng(0), 1.0), feat)
        trace = run_episode(record, policy, policy, rng=np.random.default_rng(1), explore_p=1.0)
        for step in trace.steps:
            assert step.explored
            assert step.hypothesis_logp[1] == pytest.approx(policy.level_logprob(step.state, step.hypothesis))

    def test_scripted_plan(self, record):
        policy = ScriptedPolicy(CATALOG, [RequestTest("CT")], HypothesisOutput("appendicitis", 9), "appendicitis")
        trace = run_episode(record, policy, policy)
        assert [type(s.action) for s in trace.steps] == [RequestTest, Diagnose]
        assert trace.outcome.tests_used == 1

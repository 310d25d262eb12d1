import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import f1_score

from seqdx.env import TestCatalog
from seqdx.metrics import (
    FIFTH_CLASS,
    PredictionRecord,
    avg_test_count,
    calibration_report,
    classwise_accuracy,
    ece,
    effective_prediction,
    evaluate,
    micro_macro_f1,
    run_episodes,
)
from seqdx.policies import BayesOracle, ScriptedPolicy

CLASSES = ("A", "B", "C", "D")


def recs(truths, preds):
    return [PredictionRecord(p, p, t) for t, p in zip(truths, preds)]


def brute_force_ece(conf, hit, n_bins):
    total = 0.0
    n = len(conf)
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        members = [i for i in range(n) if lo <= conf[i] < hi or (b == n_bins - 1 and conf[i] == 1.0)]
        if members:
            acc = sum(hit[i] for i in members) / len(members)
            mean_conf = sum(conf[i] for i in members) / len(members)
            total += len(members) / n * abs(acc - mean_conf)
    return total


class TestF1:
    def test_fixture(self):
        micro, macro = micro_macro_f1(recs("AABC", "ABBB"), CLASSES)
        assert micro == pytest.approx(0.5, abs=1e-9)
        assert macro == pytest.approx(0.38889, abs=1e-5)
        assert macro == pytest.approx((2 / 3 + 0.5 + 0.0) / 3, abs=1e-12)

    @given(st.lists(st.tuples(st.sampled_from(CLASSES), st.sampled_from(CLASSES)), min_size=1, max_size=40))
    def test_matches_sklearn(self, pairs):
        truths, preds = zip(*pairs)
        micro, macro = micro_macro_f1(recs(truths, preds), CLASSES)
        present = sorted(set(truths) | set(preds))
        assert micro == pytest.approx(f1_score(truths, preds, average="micro"), abs=1e-12)
        assert macro == pytest.approx(f1_score(truths, preds, labels=present, average="macro"), abs=1e-12)

    def test_fifth_class_counts_as_miss_without_own_term(self):
        records = [PredictionRecord("A", "A", "A"), PredictionRecord(None, None, "B")]
        micro, macro = micro_macro_f1(records, CLASSES)
        # A: f1 = 1; B: tp 0, fn 1 -> 0; the fifth class adds no term.
        assert (micro, macro) == (0.5, 0.5)

    def test_fifth_class_fixture_two(self):
        records = [
            PredictionRecord("A", "A", "A"),
            PredictionRecord(None, None, "A"),
            PredictionRecord("B", "B", "B"),
            PredictionRecord("not-a-class", None, "C"),
        ]
        micro, macro = micro_macro_f1(records, CLASSES)
        # A: tp 1 fn 1 -> 2/3; B: 1; C: tp 0 fn 1 -> 0.
        assert micro == 0.5
        assert macro == pytest.approx((2 / 3 + 1 + 0) / 3, abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            micro_macro_f1([], CLASSES)


class TestEffectivePrediction:
    def test_final_wins(self):
        assert effective_prediction(PredictionRecord("A", "B", "A")) == "A"

    def test_falls_back_to_hypothesis(self):
        assert effective_prediction(PredictionRecord(None, "B", "A")) == "B"
        assert effective_prediction(PredictionRecord("Z", "B", "A"), CLASSES) == "B"

    def test_fifth_class(self):
        assert effective_prediction(PredictionRecord(None, None, "A")) == FIFTH_CLASS


class TestClasswiseAccuracy:
    def test_values(self):
        per_class, mean = classwise_accuracy(recs("AABC", "ABBB"), CLASSES)
        assert per_class["A"] == 0.5 and per_class["B"] == 1.0 and per_class["C"] == 0.0
        assert math.isnan(per_class["D"])
        assert mean == pytest.approx(0.5)

    def test_unweighted_mean(self):
        per_class, mean = classwise_accuracy(recs("AAAAB", "AAAAA"), CLASSES)
        assert mean == 0.5


class TestECE:
    def test_fixture(self):
        records = [
            PredictionRecord("A", "A", "A", 0.95),
            PredictionRecord("A", "A", "B", 0.95),
            PredictionRecord("A", "A", "A", 0.65),
            PredictionRecord("B", "B", "A", 0.35),
        ]
        assert ece(records, 10).ece == pytest.approx(0.40, abs=1e-12)

    def test_randomized_against_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            n_bins = int(rng.integers(1, 16))
            if rng.random() < 0.5:
                conf = rng.integers(0, 21, size=n) / 20  # exercise bin edges
            else:
                conf = rng.random(n)
            hit = rng.random(n) < 0.6
            got = calibration_report(conf, hit, n_bins).ece
            assert abs(got - brute_force_ece(list(conf), list(hit), n_bins)) <= 1e-12

    def test_perfect_calibration(self):
        assert calibration_report([1.0, 1.0, 0.0], [True, True, False]).ece == 0.0

    def test_bins_reported(self):
        report = calibration_report([0.05, 0.95], [True, False], 10)
        assert [b.count for b in report.bins] == [1] + [0] * 8 + [1]
        assert report.to_csv().splitlines()[0] == "bin_lower,bin_upper,count,mean_conf,accuracy"

    @pytest.mark.parametrize("conf,n_bins", [([], 10), ([0.5], 0), ([1.5], 10), ([-0.1], 10)])
    def test_errors(self, conf, n_bins):
        with pytest.raises(ValueError):
            calibration_report(conf, [True] * len(conf), n_bins)


class TestEvaluate:
    def test_scripted_immediate_diagnosis(self, decisive_data):
        policy = ScriptedPolicy(TestCatalog(), fallback="appendicitis")
        records = decisive_data.test
        traces = run_episodes(policy, records)
        assert all(len(t.steps) == 1 for t in traces)
        assert avg_test_count(traces) == 0.0
        report = evaluate(policy, records)
        assert report.class_accuracy["appendicitis"] == 1.0
        assert report.mean_accuracy == pytest.approx(0.25)

    def test_oracle_on_decisive_task(self, decisive_model, decisive_data):
        report = evaluate(BayesOracle(decisive_model, 0.9), decisive_data.test)
        assert report.mean_accuracy == 1.0 and report.avg_tests == 1.0
        assert report.n_episodes == len(decisive_data.test)
        assert "Mean" in report.to_text()

    def test_report_csv_is_deterministic(self, decisive_model, decisive_data):
        a = evaluate(BayesOracle(decisive_model), decisive_data.test).to_csv()
        b = evaluate(BayesOracle(decisive_model), decisive_data.test).to_csv()
        assert a == b and a.startswith("acc_appendicitis,")

    def test_threaded_matches_serial(self, noise_model, noise_data):
        oracle = BayesOracle(noise_model)
        serial = evaluate(oracle, noise_data.test[:20])
        threaded = evaluate(oracle, noise_data.test[:20], n_workers=4)
        assert serial.to_csv() == threaded.to_csv()

    def test_empty(self):
        with pytest.raises(ValueError):
            evaluate(ScriptedPolicy(TestCatalog()), [])
        with pytest.raises(ValueError):
            avg_test_count([])

"""Evaluation metrics: class-wise accuracy, micro/macro F1, ECE and test counts.

Invalid final predictions fall back to the last hypothesis; if that is
missing too, the prediction becomes ``FIFTH_CLASS``, which is always wrong and
never gets a per-class F1 term of its own.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from copy import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import EpisodeConfig, TestCatalog
from .rewards import RewardConfig
from .runner import EpisodeTrace, run_episode

FIFTH_CLASS = "<fifth>"


@dataclass(frozen=True)
class PredictionRecord:
    final_prediction: Optional[str]
    last_hypothesis: Optional[str]
    truth: str
    confidence: float = float("nan")


def effective_prediction(rec: PredictionRecord, classes: Optional[Sequence[str]] = None) -> str:
    def valid(label):
        return label is not None and (classes is None or label in classes)

    if valid(rec.final_prediction):
        return rec.final_prediction
    if valid(rec.last_hypothesis):
        return rec.last_hypothesis
    return FIFTH_CLASS


def _require(records):
    if len(records) == 0:
        raise ValueError("no prediction records")


def classwise_accuracy(records: Sequence[PredictionRecord], classes: Sequence[str]) -> tuple:
    """Per-class accuracy (NaN for classes without examples) and their unweighted mean."""
    _require(records)
    per_class = {}
    for c in classes:
        subset = [r for r in records if r.truth == c]
        if subset:
            per_class[c] = sum(effective_prediction(r, classes) == c for r in subset) / len(subset)
        else:
            per_class[c] = float("nan")
    defined = [v for v in per_class.values() if not math.isnan(v)]
    return per_class, float(np.mean(defined))


def micro_macro_f1(records: Sequence[PredictionRecord], classes: Sequence[str]) -> tuple:
    _require(records)
    preds = [effective_prediction(r, classes) for r in records]
    truths = [r.truth for r in records]
    micro = sum(p == t for p, t in zip(preds, truths)) / len(records)
    scores = []
    for c in classes:
        tp = sum(p == c and t == c for p, t in zip(preds, truths))
        fp = sum(p == c and t != c for p, t in zip(preds, truths))
        fn = sum(p != c and t == c for p, t in zip(preds, truths))
        if tp + fp + fn == 0:
            continue  # class absent from both truths and predictions
        scores.append(2 * tp / (2 * tp + fp + fn))
    return micro, float(np.mean(scores)) if scores else 0.0


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


@dataclass
class CalibrationReport:
    bins: list
    ece: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lower", "bin_upper", "count", "mean_conf", "accuracy"])
        for b in self.bins:
            w.writerow([repr(b.lower), repr(b.upper), b.count, repr(b.mean_confidence), repr(b.accuracy)])
        return buf.getvalue()


def calibration_report(confidences, correct, n_bins: int = 10) -> CalibrationReport:
    """Equal-width binning over [0, 1]; the last bin includes 1.0."""
    conf = np.asarray(confidences, dtype=float)
    hit = np.asarray(correct, dtype=float)
    if conf.size == 0:
        raise ValueError("no prediction records")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, n_bins - 1)
    n = conf.size
    bins = []
    ece = 0.0
    for b in range(n_bins):
        sel = idx == b
        count = int(sel.sum())
        if count == 0:
            bins.append(CalibrationBin(float(edges[b]), float(edges[b + 1]), 0, float("nan"), float("nan")))
            continue
        mc = float(conf[sel].mean())
        acc = float(hit[sel].mean())
        ece += count / n * abs(acc - mc)
        bins.append(CalibrationBin(float(edges[b]), float(edges[b + 1]), count, mc, acc))
    return CalibrationReport(bins, float(ece))


def ece(records: Sequence[PredictionRecord], n_bins: int = 10) -> CalibrationReport:
    """Calibration of the final hypothesis: correct means hypothesis == truth."""
    _require(records)
    conf = [r.confidence for r in records]
    hit = [r.last_hypothesis == r.truth for r in records]
    return calibration_report(conf, hit, n_bins)


def avg_test_count(traces: Sequence[EpisodeTrace]) -> float:
    if len(traces) == 0:
        raise ValueError("no traces")
    return float(np.mean([t.outcome.tests_used for t in traces]))


def prediction_record(trace: EpisodeTrace) -> PredictionRecord:
    last = trace.last_hypothesis
    return PredictionRecord(
        final_prediction=trace.outcome.predicted if trace.outcome else None,
        last_hypothesis=last.hypothesis if last else None,
        truth=trace.record.diagnosis,
        confidence=last.confidence if last else 0.0,
    )


@dataclass
class EvaluationReport:
    classes: tuple
    class_accuracy: dict
    mean_accuracy: float
    micro_f1: float
    macro_f1: float
    ece: float
    avg_tests: float
    hypothesis_accuracy: float
    n_episodes: int
    calibration: CalibrationReport = field(repr=False, default=None)

    def as_row(self) -> dict:
        row = {f"acc_{c}": self.class_accuracy[c] for c in self.classes}
        row.update(
            mean_accuracy=self.mean_accuracy,
            micro_f1=self.micro_f1,
            macro_f1=self.macro_f1,
            ece=self.ece,
            avg_tests=self.avg_tests,
            hypothesis_accuracy=self.hypothesis_accuracy,
            n_episodes=self.n_episodes,
        )
        return row

    def to_csv(self) -> str:
        row = self.as_row()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(row))
        w.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
        return buf.getvalue()

    def to_text(self) -> str:
        head = [c[:8].capitalize() + "." for c in self.classes]
        cols = head + ["Mean", "Micro", "Macro", "ECE", "Avg#Tests", "HypAcc"]
        vals = [100 * self.class_accuracy[c] for c in self.classes]
        vals += [100 * self.mean_accuracy, 100 * self.micro_f1, 100 * self.macro_f1]
        cells = [f"{v:.1f}" for v in vals] + [f"{self.ece:.3f}", f"{self.avg_tests:.2f}", f"{100 * self.hypothesis_accuracy:.1f}"]
        widths = [max(len(a), len(b)) for a, b in zip(cols, cells)]
        fmt = "  ".join("{:>%d}" % w for w in widths)
        return "\n".join([fmt.format(*cols), fmt.format(*cells), f"({self.n_episodes} episodes)"])


def summarize(traces: Sequence[EpisodeTrace], classes: Sequence[str], n_bins: int = 10) -> EvaluationReport:
    records = [prediction_record(t) for t in traces]
    per_class, mean = classwise_accuracy(records, classes)
    micro, macro = micro_macro_f1(records, classes)
    cal = ece(records, n_bins)
    hyp_acc = float(np.mean([r.last_hypothesis == r.truth for r in records]))
    return EvaluationReport(
        classes=tuple(classes),
        class_accuracy=per_class,
        mean_accuracy=mean,
        micro_f1=micro,
        macro_f1=macro,
        ece=cal.ece,
        avg_tests=avg_test_count(traces),
        hypothesis_accuracy=hyp_acc,
        n_episodes=len(traces),
        calibration=cal,
    )


def _with_greedy(backend, greedy: bool):
    if hasattr(backend, "greedy") and backend.greedy != greedy:
        backend = copy(backend)
        backend.greedy = greedy
    return backend


def run_episodes(
    backend,
    records,
    catalog: TestCatalog = TestCatalog(),
    env_config: EpisodeConfig = EpisodeConfig(),
    decision_backend=None,
    greedy: bool = True,
    seed: int = 0,
    rewards: RewardConfig = RewardConfig(),
    n_workers: int = 1,
) -> list:
    hyp_b = _with_greedy(backend, greedy)
    dec_b = hyp_b if decision_backend is None else _with_greedy(decision_backend, greedy)

    def one(i):
        rng = np.random.default_rng([seed, i])
        return run_episode(records[i], hyp_b, dec_b, catalog, env_config, rng, rewards)

    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            return list(pool.map(one, range(len(records))))
    return [one(i) for i in range(len(records))]


def evaluate(
    backend,
    records,
    catalog: TestCatalog = TestCatalog(),
    env_config: EpisodeConfig = EpisodeConfig(),
    n_bins: int = 10,
    greedy: bool = True,
    seed: int = 0,
    decision_backend=None,
    n_workers: int = 1,
) -> EvaluationReport:
    """Run one episode per record and summarize. Greedy action selection by default."""
    if len(records) == 0:
        raise ValueError("no records to evaluate")
    traces = run_episodes(backend, records, catalog, env_config, decision_backend, greedy, seed, n_workers=n_workers)
    return summarize(traces, catalog.classes, n_bins)

"""Synthetic patients with a known generative model and exact posterior.

Each test outcome is a categorical draw over a small finding vocabulary. The
class-conditional distribution of test ``t`` interpolates between uniform and
a point mass on a class-specific peak finding::

    P(finding = v | class = k) = (1 - lam_t) / V_t + lam_t * [v == peak_t(k)]

The history carries one extra low-informativeness pseudo-test rendered as
prose, so the always-visible part of the record is weakly informative.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .env import ConfigurationError, ObservedState, PatientRecord, TestCatalog

HISTORY_KEY = "__history__"
HISTORY_TEMPLATE = (
    "Patient admitted to the emergency department with abdominal pain. "
    "Reported symptom pattern: {finding}."
)
_HISTORY_RE = re.compile(r"symptom pattern: (finding_\d+)")


def finding_text(index: int) -> str:
    return f"finding_{index}"


def _broadcast(value, n: int, name: str) -> tuple:
    if np.isscalar(value):
        return (value,) * n
    value = tuple(value)
    if len(value) != n:
        raise ConfigurationError(f"{name}: expected {n} entries, got {len(value)}")
    return value


@dataclass(frozen=True)
class GenerativeModel:
    catalog: TestCatalog = TestCatalog()
    priors: tuple = ()
    vocab_sizes: tuple = 3
    informativeness: tuple = 0.0
    availability: tuple = 1.0
    peaks: Optional[tuple] = None  # per test: one finding index per class
    history_vocab: int = 3
    history_informativeness: float = 0.2

    def __post_init__(self):
        cat = self.catalog
        n, k = cat.n_tests, cat.n_classes
        priors = self.priors or (1.0 / k,) * k
        object.__setattr__(self, "priors", tuple(float(p) for p in _broadcast(priors, k, "priors")))
        object.__setattr__(self, "vocab_sizes", tuple(int(v) for v in _broadcast(self.vocab_sizes, n, "vocab_sizes")))
        object.__setattr__(self, "informativeness", tuple(float(x) for x in _broadcast(self.informativeness, n, "informativeness")))
        object.__setattr__(self, "availability", tuple(float(x) for x in _broadcast(self.availability, n, "availability")))
        if min(self.vocab_sizes) < 1:
            raise ConfigurationError("every test needs a non-empty finding vocabulary")
        if self.peaks is None:
            peaks = tuple(tuple((c + t) % v for c in range(k)) for t, v in enumerate(self.vocab_sizes))
        else:
            peaks = tuple(tuple(int(p) for p in row) for row in self.peaks)
        object.__setattr__(self, "peaks", peaks)
        self._check()

    def _check(self):
        if abs(sum(self.priors) - 1.0) > 1e-9 or min(self.priors) < 0:
            raise ConfigurationError("class priors must be a probability vector")
        for t, (v, lam, a) in enumerate(zip(self.vocab_sizes, self.informativeness, self.availability)):
            if not 0.0 <= lam <= 1.0 or not 0.0 <= a <= 1.0:
                raise ConfigurationError(f"test {t}: informativeness/availability outside [0, 1]")
        if len(self.peaks) != self.catalog.n_tests:
            raise ConfigurationError("peaks: one row per test required")
        for t, row in enumerate(self.peaks):
            if len(row) != self.catalog.n_classes or not all(0 <= p < self.vocab_sizes[t] for p in row):
                raise ConfigurationError(f"test {t}: invalid peak row {row}")
        if not 0.0 <= self.history_informativeness <= 1.0 or self.history_vocab < 1:
            raise ConfigurationError("invalid history signal parameters")

    def likelihood(self, test: int) -> np.ndarray:
        """Class-conditional finding distribution for ``test``, shape (classes, vocab)."""
        v = self.vocab_sizes[test]
        lam = self.informativeness[test]
        table = np.full((self.catalog.n_classes, v), (1.0 - lam) / v)
        for c, p in enumerate(self.peaks[test]):
            table[c, p] += lam
        return table

    def history_likelihood(self) -> np.ndarray:
        v, lam = self.history_vocab, self.history_informativeness
        table = np.full((self.catalog.n_classes, v), (1.0 - lam) / v)
        for c in range(self.catalog.n_classes):
            table[c, c % v] += lam
        return table

    def vocabulary(self, test: int) -> list:
        return [finding_text(i) for i in range(self.vocab_sizes[test])]


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 2400
    seed: int = 0
    split: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigurationError("split fractions must be three non-negative values summing to 1")


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    classes: tuple = field(default=())

    def class_counts(self) -> dict:
        counts = {}
        for name in ("train", "val", "test"):
            split = getattr(self, name)
            counts[name] = {c: sum(r.diagnosis == c for r in split) for c in self.classes}
        return counts


def sample_patient(model: GenerativeModel, rng: np.random.Generator, patient_id: str = "p0") -> PatientRecord:
    cat = model.catalog
    label = int(rng.choice(cat.n_classes, p=model.priors))
    hist = model.history_likelihood()[label]
    hist_finding = int(rng.choice(len(hist), p=hist))
    tests = {}
    for t, name in enumerate(cat.names):
        available = rng.random() < model.availability[t]
        probs = model.likelihood(t)[label]
        finding = int(rng.choice(len(probs), p=probs))
        if available:
            tests[name] = finding_text(finding)
    history = HISTORY_TEMPLATE.format(finding=finding_text(hist_finding))
    return PatientRecord(id=patient_id, diagnosis=cat.classes[label], history=history, tests=tests)


def finding_index(model: GenerativeModel, test: int, text: str) -> int:
    vocab = model.vocabulary(test)
    try:
        return vocab.index(text.strip())
    except ValueError:
        raise ConfigurationError(f"finding {text!r} outside the vocabulary of {model.catalog.names[test]!r}") from None


def observed_findings(model: GenerativeModel, state: ObservedState, include_history: bool = True) -> dict:
    """Map an observed state to ``{test name: finding index}`` (plus the history finding)."""
    findings = {}
    if include_history:
        m = _HISTORY_RE.search(state.history)
        if m is not None:
            idx = int(m.group(1).split("_")[1])
            if idx < model.history_vocab:
                findings[HISTORY_KEY] = idx
    for name, text in state.revealed:
        findings[name] = finding_index(model, model.catalog.test_index(name), text)
    return findings


def exact_posterior(model: GenerativeModel, findings: Mapping[str, int]) -> np.ndarray:
    """Class posterior given observed findings; availability is missing-at-random."""
    post = np.array(model.priors, dtype=float)
    for name, value in findings.items():
        if name == HISTORY_KEY:
            post = post * model.history_likelihood()[:, value]
        else:
            post = post * model.likelihood(model.catalog.test_index(name))[:, value]
    total = post.sum()
    if total <= 0.0:
        raise ValueError("observed findings have zero probability under the model")
    return post / total


def split_sizes(n: int, split: Sequence[float]) -> tuple:
    n_val = int(np.floor(n * split[1] + 1e-9))
    n_test = int(np.floor(n * split[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def generate_dataset(config: SyntheticConfig, model: GenerativeModel) -> Dataset:
    n = config.n_patients
    sizes = split_sizes(n, config.split)
    if min(sizes) < 1:
        raise ConfigurationError(f"n_patients={n} too small for non-empty splits {sizes}")
    streams = np.random.SeedSequence(config.seed).spawn(n + 1)
    width = len(str(n - 1))
    records = [
        sample_patient(model, np.random.default_rng(streams[i]), f"p{i:0{width}d}")
        for i in range(n)
    ]
    order = np.random.default_rng(streams[n]).permutation(n)
    shuffled = [records[i] for i in order]
    n_train, n_val, _ = sizes
    return Dataset(
        train=shuffled[:n_train],
        val=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        classes=model.catalog.classes,
    )

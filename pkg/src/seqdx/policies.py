"""Agent backends for the hypothesis and decision roles.

Every backend exposes ``hypothesis_act(state, rng)`` returning a
:class:`HypothesisOutput` and a pair of log-probabilities, and
``decision_act(state, hyp, rng)`` returning an environment action and its
log-probability. Non-stochastic backends report log-probabilities of 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import Diagnose, EnvAction, Malformed, ObservedState, RequestTest, TestCatalog
from .protocol import N_LEVELS, HypothesisOutput
from .synth import GenerativeModel, exact_posterior, observed_findings


class Featurizer:
    """Fixed-length encoding of an observed state (and optionally a hypothesis).

    Layout: ``[test observed (T) | finding one-hots (sum V_t) | hypothesis
    one-hot (K) | confidence (1) | bias (1)]``. The history is not encoded.
    """

    def __init__(self, catalog: TestCatalog, vocabularies: Sequence[Sequence[str]], handle_unknown: str = "error"):
        if len(vocabularies) != catalog.n_tests:
            raise ValueError("one finding vocabulary per test required")
        if handle_unknown not in ("error", "ignore"):
            raise ValueError("handle_unknown must be 'error' or 'ignore'")
        self.catalog = catalog
        self.handle_unknown = handle_unknown  # "ignore": unseen results set only the observed indicator
        self.vocabularies = tuple(tuple(v) for v in vocabularies)
        sizes = [len(v) for v in self.vocabularies]
        T, K = catalog.n_tests, catalog.n_classes
        self.block_offsets = tuple(int(x) for x in T + np.concatenate([[0], np.cumsum(sizes)[:-1]]))
        self.hyp_offset = T + sum(sizes)
        self.conf_index = self.hyp_offset + K
        self.bias_index = self.conf_index + 1
        self.n_features = self.bias_index + 1
        self._lookup = [{f: i for i, f in enumerate(v)} for v in self.vocabularies]

    @classmethod
    def from_model(cls, model: GenerativeModel) -> "Featurizer":
        return cls(model.catalog, [model.vocabulary(t) for t in range(model.catalog.n_tests)])

    @classmethod
    def from_records(cls, catalog: TestCatalog, records, handle_unknown: str = "error") -> "Featurizer":
        """Vocabularies are the distinct results seen per test, in first-seen order."""
        vocab = {name: {} for name in catalog.names}
        for record in records:
            for name, text in record.tests.items():
                vocab[name].setdefault(text.strip(), None)
        return cls(catalog, [list(vocab[name]) for name in catalog.names], handle_unknown)

    def featurize(self, state: ObservedState, hyp: Optional[HypothesisOutput] = None) -> np.ndarray:
        x = np.zeros(self.n_features)
        for name, text in state.revealed:
            t = self.catalog.test_index(name)
            x[t] = 1.0
            v = self._lookup[t].get(text.strip())
            if v is None:
                if self.handle_unknown == "error":
                    raise ValueError(f"finding {text!r} not in the vocabulary of {name!r}")
                continue
            x[self.block_offsets[t] + v] = 1.0
        if hyp is not None:
            x[self.hyp_offset + self.catalog.class_index(hyp.hypothesis)] = 1.0
            x[self.conf_index] = hyp.confidence
        x[self.bias_index] = 1.0
        return x

    @property
    def n_confidence_inputs(self) -> int:
        return self.n_features + self.catalog.n_classes + N_LEVELS

    def confidence_input(self, x: np.ndarray, class_idx: int, class_prob: float) -> np.ndarray:
        """Confidence-head input: ``[x | class one-hot | class probability in tenths, one-hot]``."""
        K = self.catalog.n_classes
        extra = np.zeros(K + N_LEVELS)
        extra[class_idx] = 1.0
        extra[K + oracle_level(class_prob)] = 1.0
        return np.concatenate([x, extra])


@dataclass
class PolicyParams:
    class_head: np.ndarray  # (F, K)
    confidence_head: np.ndarray  # (F + K + 11, 11)
    decision_head: np.ndarray  # (F, T + K + 1)
    value_h: np.ndarray  # (F,)
    value_d: np.ndarray  # (F,)

    HEADS = ("class_head", "confidence_head", "decision_head", "value_h", "value_d")

    @classmethod
    def zeros(cls, featurizer: Featurizer) -> "PolicyParams":
        F = featurizer.n_features
        K = featurizer.catalog.n_classes
        T = featurizer.catalog.n_tests
        return cls(
            class_head=np.zeros((F, K)),
            confidence_head=np.zeros((featurizer.n_confidence_inputs, N_LEVELS)),
            decision_head=np.zeros((F, T + K + 1)),
            value_h=np.zeros(F),
            value_d=np.zeros(F),
        )

    @classmethod
    def random(cls, featurizer: Featurizer, rng: np.random.Generator, scale: float = 0.01) -> "PolicyParams":
        params = cls.zeros(featurizer)
        for name in ("class_head", "confidence_head", "decision_head"):
            arr = getattr(params, name)
            arr[...] = rng.normal(0.0, scale, size=arr.shape)
        return params

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(getattr(self, h).copy() for h in self.HEADS))

    def arrays(self) -> dict:
        return {h: getattr(self, h) for h in self.HEADS}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


def log_softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Log-softmax over the last axis; masked-out entries get ``-inf``."""
    z = np.asarray(logits, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _choose(logp: np.ndarray, rng: Optional[np.random.Generator], greedy: bool) -> int:
    if greedy or rng is None:
        return int(np.argmax(logp))
    p = np.exp(logp)
    return int(rng.choice(len(p), p=p / p.sum()))


class ParametricPolicy:
    """Linear softmax heads over a shared state encoding."""

    def __init__(self, params: PolicyParams, featurizer: Featurizer, greedy: bool = False, allow_invalid: bool = False,
                 greedy_class: bool = False):
        self.params = params
        self.featurizer = featurizer
        self.catalog = featurizer.catalog
        self.greedy = greedy
        self.allow_invalid = allow_invalid
        self.greedy_class = greedy_class  # argmax class even when sampling levels and actions

    @property
    def n_actions(self) -> int:
        return self.catalog.n_tests + self.catalog.n_classes + 1

    def class_logprobs(self, x: np.ndarray) -> np.ndarray:
        return log_softmax(x @ self.params.class_head)

    def confidence_features(self, x: np.ndarray, class_idx: int) -> np.ndarray:
        prob = float(np.exp(self.class_logprobs(x)[class_idx]))
        return self.featurizer.confidence_input(x, class_idx, prob)

    def level_logprobs(self, x: np.ndarray, class_idx: int) -> np.ndarray:
        return log_softmax(self.confidence_features(x, class_idx) @ self.params.confidence_head)

    def action_mask(self, state: ObservedState) -> np.ndarray:
        mask = np.ones(self.n_actions, dtype=bool)
        for name in state.requested:
            mask[self.catalog.test_index(name)] = False
        mask[-1] = self.allow_invalid
        return mask

    def action_logprobs(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return log_softmax(x @ self.params.decision_head, mask)

    def index_to_action(self, idx: int) -> EnvAction:
        T, K = self.catalog.n_tests, self.catalog.n_classes
        if idx < T:
            return RequestTest(self.catalog.names[idx])
        if idx < T + K:
            return Diagnose(self.catalog.classes[idx - T])
        return Malformed("reserved invalid action")

    def action_to_index(self, action: EnvAction) -> int:
        T = self.catalog.n_tests
        if isinstance(action, RequestTest):
            return self.catalog.test_index(action.name)
        if isinstance(action, Diagnose):
            return T + self.catalog.class_index(action.label)
        return self.n_actions - 1

    def hypothesis_act(self, state: ObservedState, rng: Optional[np.random.Generator] = None):
        x = self.featurizer.featurize(state)
        class_lp = self.class_logprobs(x)
        k = _choose(class_lp, rng, self.greedy or self.greedy_class)
        level_lp = self.level_logprobs(x, k)
        level = _choose(level_lp, rng, self.greedy)
        hyp = HypothesisOutput(self.catalog.classes[k], level)
        return hyp, (float(class_lp[k]), float(level_lp[level]))

    def level_logprob(self, state: ObservedState, hyp: HypothesisOutput) -> float:
        """Log-probability of ``hyp.level`` given its class (used after exploration)."""
        x = self.featurizer.featurize(state)
        return float(self.level_logprobs(x, self.catalog.class_index(hyp.hypothesis))[hyp.level])

    def decision_act(self, state: ObservedState, hyp: HypothesisOutput, rng: Optional[np.random.Generator] = None):
        x = self.featurizer.featurize(state, hyp)
        lp = self.action_logprobs(x, self.action_mask(state))
        idx = _choose(lp, rng, self.greedy)
        return self.index_to_action(idx), float(lp[idx])


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


class BayesOracle:
    """Exact-posterior agent with a confidence threshold and greedy information gain."""

    def __init__(self, model: GenerativeModel, tau: float = 0.9):
        self.model = model
        self.catalog = model.catalog
        self.tau = tau

    def posterior(self, state: ObservedState) -> np.ndarray:
        return exact_posterior(self.model, observed_findings(self.model, state))

    def hypothesis_act(self, state: ObservedState, rng=None):
        post = self.posterior(state)
        k = int(np.argmax(post))
        return HypothesisOutput(self.catalog.classes[k], oracle_level(post[k])), (0.0, 0.0)

    def expected_information_gain(self, post: np.ndarray, test: int) -> float:
        lik = self.model.likelihood(test)  # (K, V)
        joint = post[:, None] * lik
        p_v = joint.sum(axis=0)
        expected = 0.0
        for v, pv in enumerate(p_v):
            if pv > 0:
                expected += pv * _entropy(joint[:, v] / pv)
        return _entropy(post) - expected

    def decision_act(self, state: ObservedState, hyp: Optional[HypothesisOutput] = None, rng=None):
        post = self.posterior(state)
        k = int(np.argmax(post))
        candidates = [t for t, name in enumerate(self.catalog.names) if name not in state.requested]
        if post[k] >= self.tau or not candidates:
            return Diagnose(self.catalog.classes[k]), 0.0
        gains = np.array([self.expected_information_gain(post, t) for t in candidates])
        best = candidates[int(np.flatnonzero(gains >= gains.max() - 1e-12)[0])]
        return RequestTest(self.catalog.names[best]), 0.0


@dataclass
class ScriptedPolicy:
    """Replays a fixed action plan; falls back to diagnosing ``fallback`` when it runs out."""

    catalog: TestCatalog
    plan: list = field(default_factory=list)
    hypothesis: Optional[HypothesisOutput] = None
    fallback: Optional[str] = None

    def hypothesis_act(self, state: ObservedState, rng=None):
        hyp = self.hypothesis or HypothesisOutput(self.catalog.classes[0], 5)
        return hyp, (0.0, 0.0)

    def decision_act(self, state: ObservedState, hyp=None, rng=None):
        if state.step < len(self.plan):
            return self.plan[state.step], 0.0
        return Diagnose(self.fallback or self.catalog.classes[0]), 0.0


def oracle_level(p: float) -> int:
    """Round-half-up discretization of a probability onto the 0..10 scale."""
    return int(np.floor(10.0 * p + 0.5))


"""Rewards and targets for the three training objectives."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import CORRECT, EXHAUSTED, INVALID, WRONG, EpisodeOutcome
from .protocol import N_LEVELS


@dataclass(frozen=True)
class RewardConfig:
    eps: float = 0.05
    r_pos: float = 1.0
    r_neg: float = -1.0
    r_invalid: float = -1.5
    explore_p0: float = 0.9
    explore_decay: float = 0.995

    def __post_init__(self):
        if not 0.0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 0.5)")
        if not all(map(math.isfinite, (self.r_pos, self.r_neg, self.r_invalid))):
            raise ValueError("decision rewards must be finite")
        if not 0.0 <= self.explore_p0 <= 1.0 or not 0.0 < self.explore_decay <= 1.0:
            raise ValueError("invalid exploration schedule")

    @property
    def lower(self) -> float:
        return math.log(self.eps)

    @property
    def upper(self) -> float:
        return math.log(1.0 - self.eps)


def calibration_reward(correct: bool, c: float, config: RewardConfig = RewardConfig()) -> float:
    """Log-score betting reward mapped affinely from [ln eps, ln(1-eps)] onto [-1, 1].

    Both branches share the same affine map, so the expected-reward maximizer
    is unchanged by the scaling.
    """
    eps = config.eps
    if not eps - 1e-12 <= c <= 1.0 - eps + 1e-12:
        raise ValueError(f"confidence {c} outside the clipped range [{eps}, {1 - eps}]")
    raw = math.log(c) if correct else math.log(1.0 - c)
    lo, hi = config.lower, config.upper
    return 2.0 * (raw - lo) / (hi - lo) - 1.0


def decision_reward(outcome: EpisodeOutcome, config: RewardConfig = RewardConfig()) -> float:
    if outcome.kind == CORRECT:
        return config.r_pos
    if outcome.kind == WRONG:
        return config.r_neg
    if outcome.kind in (INVALID, EXHAUSTED):
        return config.r_invalid
    raise ValueError(f"unknown outcome kind {outcome.kind!r}")


def exploration_prob(t: int, config: RewardConfig = RewardConfig()) -> float:
    if t < 0:
        raise ValueError("step must be non-negative")
    return config.explore_p0 * config.explore_decay ** t


def explore_confidence(level: int, p: float, rng: np.random.Generator) -> int:
    """With probability ``p`` swap ``level`` for a uniformly chosen different level."""
    if not 0 <= level < N_LEVELS:
        raise ValueError(f"invalid confidence level {level}")
    if rng.random() >= p:
        return level
    other = int(rng.integers(N_LEVELS - 1))
    return other if other < level else other + 1


def build_hypothesis_targets(traces) -> list:
    """One ``(state, true class)`` pair per hypothesis-agent call across all traces."""
    targets = []
    for trace in traces:
        for step in trace.steps:
            targets.append((step.state, trace.record.diagnosis))
    return targets

"""Episode loop: hypothesis agent, decision agent, environment, repeat."""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .env import (
    INVALID,
    Diagnose,
    DiagnosisEnv,
    EnvAction,
    EpisodeConfig,
    EpisodeOutcome,
    Malformed,
    Observation,
    ObservedState,
    PatientRecord,
    RequestTest,
    TestCatalog,
)
from .protocol import HypothesisOutput, ParseError
from .remote import RemoteError
from .rewards import RewardConfig, decision_reward, explore_confidence


@dataclass
class TraceStep:
    state: ObservedState
    hypothesis: HypothesisOutput
    hypothesis_logp: tuple
    action: Optional[EnvAction]
    action_logp: float
    observation: Optional[Observation]
    reward: float = 0.0
    explored: bool = False


@dataclass
class EpisodeTrace:
    record: PatientRecord
    steps: list = field(default_factory=list)
    outcome: Optional[EpisodeOutcome] = None
    final_state: Optional[ObservedState] = None

    @property
    def last_hypothesis(self) -> Optional[HypothesisOutput]:
        return self.steps[-1].hypothesis if self.steps else None

    @property
    def terminal_reward(self) -> float:
        return self.steps[-1].reward if self.steps else 0.0


def run_episode(
    record: PatientRecord,
    hypothesis_backend,
    decision_backend,
    catalog: TestCatalog = TestCatalog(),
    config: EpisodeConfig = EpisodeConfig(),
    rng: Optional[np.random.Generator] = None,
    rewards: RewardConfig = RewardConfig(),
    explore_p: float = 0.0,
) -> EpisodeTrace:
    """Run one diagnosis episode to termination.

    With ``explore_p > 0`` the sampled confidence level is swapped for a random
    different level with that probability, and its log-probability is
    recomputed under the hypothesis backend.
    """
    env = DiagnosisEnv(catalog, config)
    state = env.reset(record)
    trace = EpisodeTrace(record)
    while True:
        try:
            hyp, hyp_lp = hypothesis_backend.hypothesis_act(state, rng)
        except (ParseError, RemoteError):
            _abort(trace, state, rewards)
            break
        explored = False
        if explore_p > 0.0:
            level = explore_confidence(hyp.level, explore_p, rng)
            if level != hyp.level:
                hyp = replace(hyp, level=level)
                hyp_lp = (hyp_lp[0], hypothesis_backend.level_logprob(state, hyp))
                explored = True
        try:
            action, action_lp = decision_backend.decision_act(state, hyp, rng)
        except RemoteError:
            trace.steps.append(TraceStep(state, hyp, hyp_lp, None, 0.0, None, explored=explored))
            _abort(trace, state, rewards)
            break
        result = env.step(state, action)
        reward = decision_reward(result.outcome, rewards) if result.terminal else 0.0
        trace.steps.append(TraceStep(state, hyp, hyp_lp, action, action_lp, result.observation, reward, explored))
        state = result.state
        if result.terminal:
            trace.outcome = result.outcome
            break
    trace.final_state = state
    return trace


def _abort(trace: EpisodeTrace, state: ObservedState, rewards: RewardConfig):
    trace.outcome = EpisodeOutcome(INVALID, None, len(state.revealed))
    if trace.steps:
        trace.steps[-1].reward = decision_reward(trace.outcome, rewards)


def action_to_json(action: Optional[EnvAction]) -> Optional[dict]:
    if isinstance(action, RequestTest):
        return {"type": "RequestTest", "name": action.name}
    if isinstance(action, Diagnose):
        return {"type": "Diagnose", "label": action.label}
    if isinstance(action, Malformed):
        return {"type": "Malformed", "reason": action.reason}
    return None


def action_from_json(obj: dict) -> EnvAction:
    kind = obj["type"]
    if kind == "RequestTest":
        return RequestTest(obj["name"])
    if kind == "Diagnose":
        return Diagnose(obj["label"])
    return Malformed(obj.get("reason", ""))


def state_digest(state: ObservedState) -> str:
    payload = json.dumps(
        {
            "history": state.history,
            "revealed": [list(p) for p in state.revealed],
            "requested": sorted(state.requested),
            "step": state.step,
            "retries": state.retries_used,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def trace_log_entries(trace: EpisodeTrace, episode_id: str) -> list:
    entries = []
    for i, step in enumerate(trace.steps):
        entries.append({
            "episode": episode_id,
            "step": i,
            "state_digest": state_digest(step.state),
            "hypothesis": [step.hypothesis.hypothesis, step.hypothesis.level],
            "action": action_to_json(step.action),
            "observation_kind": step.observation.kind if step.observation else None,
            "observation": step.observation.text if step.observation else None,
            "reward": step.reward,
        })
    return entries


def format_trace(trace: EpisodeTrace) -> str:
    """Human-readable transcript of an episode."""
    lines = [f"Patient {trace.record.id}", trace.record.history, ""]
    for i, step in enumerate(trace.steps):
        hyp = step.hypothesis
        tag = " (explored)" if step.explored else ""
        lines.append(f"[{i}] Hypothesis: {hyp.hypothesis}, Confidence: {hyp.level}{tag}")
        act = action_to_json(step.action)
        if act is not None:
            detail = act.get("name") or act.get("label") or act.get("reason", "")
            lines.append(f"    Action: {act['type']} {detail}".rstrip())
        if step.observation is not None:
            lines.append(f"    -> {step.observation.text}")
    out = trace.outcome
    if out is not None:
        lines.append("")
        lines.append(f"Outcome: {out.kind} (predicted={out.predicted}, truth={trace.record.diagnosis}, tests={out.tests_used})")
    return "\n".join(lines)


class JsonlLogWriter:
    """Append-only JSONL event log; a lock serializes writes from concurrent episodes."""

    def __init__(self, path):
        self._fh = open(path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def write_all(self, entries):
        with self._lock:
            for e in entries:
                self._fh.write(json.dumps(e, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

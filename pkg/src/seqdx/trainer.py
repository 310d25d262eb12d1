"""PPO and supervised updates for the linear heads, driven by a cyclic schedule.

Three objectives take turns: ``calibration`` (PPO on the confidence head with
the betting reward, one reward per hypothesis call), ``action`` (PPO on the
decision head with the terminal diagnosis reward) and ``hypothesis``
(cross-entropy on the class head). Each global step is one optimizer update
on one objective.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import ConfigurationError, EpisodeConfig, TestCatalog
from .metrics import EvaluationReport, calibration_report, evaluate
from .policies import Featurizer, ParametricPolicy, PolicyParams, log_softmax
from .protocol import level_to_confidence
from .rewards import RewardConfig, build_hypothesis_targets, calibration_reward, exploration_prob
from .runner import EpisodeTrace, run_episode

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CALIBRATION = "calibration"
ACTION = "action"
HYPOTHESIS = "hypothesis"
OBJECTIVES = (CALIBRATION, ACTION, HYPOTHESIS)


@dataclass(frozen=True)
class TrainConfig:
    # The reference LLM setup used 1e-5 with Adam; linear heads need larger steps.
    lr: float = 1e-2
    optimizer: str = "adam"
    batch_size: int = 2
    clip: float = 0.2
    gamma: float = 0.99
    ppo_epochs: int = 4
    warmup_steps: int = 959
    rotation_length: int = 50
    objective_order: tuple = (ACTION, HYPOTHESIS, CALIBRATION)
    eval_every: int = 50
    max_steps: int = 5000
    patience: int = 0  # evaluations without improvement before stopping; 0 disables
    seed: int = 0
    init_scale: float = 0.01
    init_confidence_level: int = -1  # >= 0 puts most confidence mass on this level
    init_confidence_logit: float = 8.0
    # Calibration rollouts use the class head's argmax, the hypothesis that greedy evaluation reports.
    calibration_greedy_class: bool = True

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.rotation_length <= 0:
            raise ValueError("rotation_length must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        bad = [o for o in self.objective_order if o not in OBJECTIVES]
        if bad or not self.objective_order:
            raise ValueError(f"invalid objective order {self.objective_order}")


def cyclic_schedule(global_step: int, config: TrainConfig) -> str:
    if global_step < 0:
        raise ValueError("step must be non-negative")
    if global_step < config.warmup_steps:
        return CALIBRATION
    block = (global_step - config.warmup_steps) // config.rotation_length
    return config.objective_order[block % len(config.objective_order)]


# ---------------------------------------------------------------- gradients


def cross_entropy_grad(W: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple:
    """Mean cross-entropy of ``softmax(X @ W)`` against labels ``y`` and its gradient."""
    lp = log_softmax(X @ W)
    n = X.shape[0]
    loss = -float(np.mean(lp[np.arange(n), y]))
    delta = np.exp(lp)
    delta[np.arange(n), y] -= 1.0
    return loss, X.T @ delta / n


def ppo_loss_grad(
    W: np.ndarray,
    X: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    adv: np.ndarray,
    clip: float,
    mask: Optional[np.ndarray] = None,
) -> tuple:
    """Negative clipped surrogate ``-mean(min(r A, clip(r) A))`` and its gradient in ``W``."""
    n = X.shape[0]
    lp = log_softmax(X @ W, mask)
    new = lp[np.arange(n), actions]
    ratio = np.exp(new - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    loss = -float(np.mean(np.minimum(surr1, surr2)))
    coef = np.where(surr1 <= surr2, ratio * adv, 0.0)
    probs = np.exp(lp)
    delta = -probs
    delta[np.arange(n), actions] += 1.0
    grad = -(X.T @ (coef[:, None] * delta)) / n
    return loss, grad


def value_loss_grad(w: np.ndarray, X: np.ndarray, returns: np.ndarray) -> tuple:
    err = X @ w - returns
    return 0.5 * float(np.mean(err ** 2)), X.T @ err / X.shape[0]


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray):
        m, v, t = self.state.get(name, (np.zeros_like(param), np.zeros_like(param), 0))
        t += 1
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad ** 2
        self.state[name] = (m, v, t)
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.state = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray):
        param -= self.lr * grad


def make_optimizer(config: TrainConfig):
    return Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)


# ---------------------------------------------------------------- rollouts


@dataclass
class HeadBatch:
    """Per-step training data for one softmax head."""

    X: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    returns: np.ndarray
    X_value: np.ndarray
    mask: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.actions)


@dataclass
class RolloutBatch:
    traces: list
    calibration: Optional[HeadBatch] = None
    decision: Optional[HeadBatch] = None
    hypothesis_X: Optional[np.ndarray] = None
    hypothesis_y: Optional[np.ndarray] = None


def compute_returns(trace: EpisodeTrace, gamma: float) -> np.ndarray:
    """Discounted terminal reward at every step: ``gamma**(T-1-k) * R``."""
    T = len(trace.steps)
    R = trace.terminal_reward
    return np.array([gamma ** (T - 1 - k) * R for k in range(T)], dtype=float)


def collect_rollouts(
    records: Sequence,
    policy: ParametricPolicy,
    n_episodes: int,
    seed: int,
    episode_offset: int = 0,
    env_config: EpisodeConfig = EpisodeConfig(),
    rewards: RewardConfig = RewardConfig(),
    explore_p: float = 0.0,
    gamma: float = 0.99,
) -> RolloutBatch:
    """Sample episodes; episode ``i`` uses the stream seeded by ``(seed, episode_offset + i)``."""
    traces = []
    for i in range(n_episodes):
        rng = np.random.default_rng([seed, episode_offset + i])
        record = records[int(rng.integers(len(records)))]
        traces.append(run_episode(record, policy, policy, policy.catalog, env_config, rng, rewards, explore_p))
    return build_batch(traces, policy, rewards, gamma)


def build_batch(traces: list, policy: ParametricPolicy, rewards: RewardConfig = RewardConfig(), gamma: float = 0.99) -> RolloutBatch:
    """Featurize traces; old log-probs are taken under the policy's current parameters."""
    batch = RolloutBatch(traces)
    if not traces:
        return batch
    fz, cat = policy.featurizer, policy.catalog
    xh, conf_x, levels, cal_r, classes = [], [], [], [], []
    xd, masks, acts, rets = [], [], [], []
    for trace in traces:
        returns = compute_returns(trace, gamma)
        truth = trace.record.diagnosis
        for k, step in enumerate(trace.steps):
            x = fz.featurize(step.state)
            ci = cat.class_index(step.hypothesis.hypothesis)
            xh.append(x)
            classes.append(ci)
            conf_x.append(policy.confidence_features(x, ci))
            levels.append(step.hypothesis.level)
            cal_r.append(calibration_reward(step.hypothesis.hypothesis == truth, step.hypothesis.confidence, rewards))
            if step.action is not None:
                xd.append(fz.featurize(step.state, step.hypothesis))
                masks.append(policy.action_mask(step.state))
                acts.append(policy.action_to_index(step.action))
                rets.append(returns[k])
    xh = np.array(xh)
    conf_x = np.array(conf_x)
    levels = np.array(levels, dtype=int)
    old_levels = log_softmax(conf_x @ policy.params.confidence_head)[np.arange(len(levels)), levels]
    batch.calibration = HeadBatch(conf_x, levels, old_levels, np.array(cal_r), xh)
    batch.hypothesis_X = xh
    batch.hypothesis_y = np.array([cat.class_index(t.record.diagnosis) for t in traces for _ in t.steps], dtype=int)
    if xd:
        xd, masks, acts = np.array(xd), np.array(masks), np.array(acts, dtype=int)
        old = log_softmax(xd @ policy.params.decision_head, masks)[np.arange(len(acts)), acts]
        batch.decision = HeadBatch(xd, acts, old, np.array(rets), xd, masks)
    return batch


# ---------------------------------------------------------------- updates

_HEAD_FOR = {CALIBRATION: ("confidence_head", "value_h"), ACTION: ("decision_head", "value_d")}


def ppo_update(params: PolicyParams, head: HeadBatch, config: TrainConfig, optimizer, objective: str) -> dict:
    """Clipped-surrogate PPO on one head plus value regression of its baseline.

    Advantages are computed once, before the epochs, from the current value
    head. Only the two arrays belonging to ``objective`` are modified.
    """
    policy_name, value_name = _HEAD_FOR[objective]
    W = getattr(params, policy_name)
    w = getattr(params, value_name)
    adv = head.returns - head.X_value @ w
    stats = {"loss": 0.0, "value_loss": 0.0, "aborted": False}
    for _ in range(config.ppo_epochs):
        loss, grad = ppo_loss_grad(W, head.X, head.actions, head.old_logp, adv, config.clip, head.mask)
        vloss, vgrad = value_loss_grad(w, head.X_value, head.returns)
        if not (math.isfinite(loss) and math.isfinite(vloss) and np.all(np.isfinite(grad))):
            logger.warning("non-finite %s loss; update aborted", objective)
            stats["aborted"] = True
            break
        optimizer.step(policy_name, W, grad)
        optimizer.step(value_name, w, vgrad)
        stats["loss"], stats["value_loss"] = loss, vloss
    return stats


def supervised_hypothesis_update(params: PolicyParams, X: np.ndarray, y: np.ndarray, optimizer) -> float:
    """One gradient step of mean cross-entropy on the class head only."""
    loss, grad = cross_entropy_grad(params.class_head, X, y)
    optimizer.step("class_head", params.class_head, grad)
    return loss


def hypothesis_targets_arrays(traces, featurizer: Featurizer) -> tuple:
    targets = build_hypothesis_targets(traces)
    X = np.array([featurizer.featurize(s) for s, _ in targets]).reshape(len(targets), featurizer.n_features)
    y = np.array([featurizer.catalog.class_index(c) for _, c in targets], dtype=int)
    return X, y


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    params: PolicyParams
    global_step: int = 0
    phase: str = CALIBRATION
    episodes_seen: int = 0
    calibration_steps: int = 0
    seed: int = 0
    best_score: Optional[float] = None
    version: int = CHECKPOINT_VERSION

    def to_json(self) -> str:
        arrays = {
            name: {"shape": list(arr.shape), "values": [float(v) for v in arr.ravel()]}
            for name, arr in self.params.arrays().items()
        }
        doc = {
            "format_version": self.version,
            "global_step": self.global_step,
            "phase": self.phase,
            "rng": {"seed": self.seed, "episodes_seen": self.episodes_seen},
            "calibration_steps": self.calibration_steps,
            "best_score": self.best_score,
            "params": arrays,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
        arrays = {
            name: np.array(spec["values"], dtype=float).reshape(spec["shape"])
            for name, spec in doc["params"].items()
        }
        return cls(
            params=PolicyParams(**arrays),
            global_step=doc["global_step"],
            phase=doc["phase"],
            episodes_seen=doc["rng"]["episodes_seen"],
            calibration_steps=doc["calibration_steps"],
            seed=doc["rng"]["seed"],
            best_score=doc["best_score"],
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# ---------------------------------------------------------------- training loop

HISTORY_FIELDS = ("step", "objective", "loss", "mean_accuracy", "ece", "avg_tests")


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list = field(default_factory=list)

    def history_csv(self) -> str:
        lines = [",".join(HISTORY_FIELDS)]
        for row in self.history:
            lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in HISTORY_FIELDS))
        return "\n".join(lines) + "\n"


def init_params(featurizer: Featurizer, config: TrainConfig) -> PolicyParams:
    params = PolicyParams.random(featurizer, np.random.default_rng([config.seed, 2 ** 32 - 1]), config.init_scale)
    if config.init_confidence_level >= 0:
        # The bias feature is at the same position in the confidence input.
        params.confidence_head[featurizer.bias_index, config.init_confidence_level] += config.init_confidence_logit
    return params


class Trainer:
    """Runs the cyclic three-objective loop on a parametric policy."""

    def __init__(
        self,
        featurizer: Featurizer,
        config: TrainConfig = TrainConfig(),
        env_config: EpisodeConfig = EpisodeConfig(),
        rewards: RewardConfig = RewardConfig(),
        n_bins: int = 10,
        params: Optional[PolicyParams] = None,
    ):
        self.featurizer = featurizer
        self.catalog: TestCatalog = featurizer.catalog
        self.config = config
        self.env_config = env_config
        self.rewards = rewards
        self.n_bins = n_bins
        self.params = params if params is not None else init_params(featurizer, config)
        self.optimizer = make_optimizer(config)
        self.policy = ParametricPolicy(self.params, featurizer)
        self.global_step = 0
        self.episodes_seen = 0
        self.calibration_steps = 0
        self.hypothesis_calls = 0

    def checkpoint(self, best_score=None) -> Checkpoint:
        phase = cyclic_schedule(self.global_step, self.config)
        return Checkpoint(
            self.params.copy(), self.global_step, phase, self.episodes_seen,
            self.calibration_steps, self.config.seed, best_score,
        )

    def rollouts(self, records, n_episodes: int, explore_p: float = 0.0, greedy_class: bool = False) -> RolloutBatch:
        policy = self.policy
        if greedy_class:
            policy = ParametricPolicy(self.params, self.featurizer, greedy_class=True)
        batch = collect_rollouts(
            records, policy, n_episodes, self.config.seed, self.episodes_seen,
            self.env_config, self.rewards, explore_p, self.config.gamma,
        )
        self.episodes_seen += n_episodes
        self.hypothesis_calls += sum(len(t.steps) for t in batch.traces)
        return batch

    def train_step(self, records) -> tuple:
        """One scheduled update. Returns ``(objective, loss)``."""
        cfg = self.config
        objective = cyclic_schedule(self.global_step, cfg)
        explore_p = 0.0
        if objective == CALIBRATION:
            explore_p = exploration_prob(self.calibration_steps, self.rewards)
            self.calibration_steps += 1
        batch = self.rollouts(records, cfg.batch_size, explore_p, objective == CALIBRATION and cfg.calibration_greedy_class)
        if objective == HYPOTHESIS:
            loss = supervised_hypothesis_update(self.params, batch.hypothesis_X, batch.hypothesis_y, self.optimizer)
        else:
            head = batch.calibration if objective == CALIBRATION else batch.decision
            loss = ppo_update(self.params, head, cfg, self.optimizer, objective)["loss"] if head is not None and len(head) else 0.0
        self.global_step += 1
        return objective, loss

    def evaluate(self, records) -> EvaluationReport:
        return evaluate(self.policy, records, self.catalog, self.env_config, self.n_bins, greedy=True, seed=self.config.seed)

    def fit(self, train_records, val_records) -> TrainResult:
        if not train_records or not val_records:
            raise ConfigurationError("training requires non-empty train and validation splits")
        cfg = self.config
        history = []
        best = self.checkpoint()
        best_key = (-math.inf, -math.inf)
        stale = 0
        losses = []
        while self.global_step < cfg.max_steps:
            objective, loss = self.train_step(train_records)
            losses.append(loss)
            if self.global_step % cfg.eval_every == 0:
                report = self.evaluate(val_records)
                history.append({
                    "step": self.global_step,
                    "objective": objective,
                    "loss": float(np.mean(losses)),
                    "mean_accuracy": report.mean_accuracy,
                    "ece": report.ece,
                    "avg_tests": report.avg_tests,
                })
                losses = []
                # Ties on accuracy go to the cheaper policy.
                key = (report.mean_accuracy, -report.avg_tests)
                if key > best_key:
                    best_key = key
                    best = self.checkpoint(report.mean_accuracy)
                    stale = 0
                else:
                    stale += 1
                    if cfg.patience and stale >= cfg.patience:
                        logger.info("stopping at step %d: no improvement for %d evaluations", self.global_step, stale)
                        break
        return TrainResult(best, self.checkpoint(), history)


def train(
    config: TrainConfig,
    dataset,
    featurizer: Featurizer,
    env_config: EpisodeConfig = EpisodeConfig(),
    rewards: RewardConfig = RewardConfig(),
    n_bins: int = 10,
) -> TrainResult:
    """Train on ``dataset.train`` and select the best checkpoint on ``dataset.val``."""
    for split in ("train", "val"):
        if not getattr(dataset, split, None):
            raise ConfigurationError(f"dataset is missing a non-empty {split!r} split")
    trainer = Trainer(featurizer, config, env_config, rewards, n_bins)
    return trainer.fit(dataset.train, dataset.val)


def hypothesis_calibration(policy: ParametricPolicy, traces: Sequence[EpisodeTrace], n_bins: int = 10):
    """Calibration of the greedy hypothesis output over every state visited in ``traces``."""
    conf, hit = [], []
    fz = policy.featurizer
    for trace in traces:
        for step in trace.steps:
            x = fz.featurize(step.state)
            k = int(np.argmax(policy.class_logprobs(x)))
            level = int(np.argmax(policy.level_logprobs(x, k)))
            conf.append(level_to_confidence(level))
            hit.append(policy.catalog.classes[k] == trace.record.diagnosis)
    return calibration_report(conf, hit, n_bins)

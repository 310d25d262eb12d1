"""scikit-learn style wrappers around the training loop and the Bayes oracle.

``X`` is a sequence of :class:`PatientRecord` (or dicts in the JSONL schema);
each record is diagnosed by running one greedy episode.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .env import EpisodeConfig
from .metrics import effective_prediction, evaluate, prediction_record, run_episodes
from .policies import BayesOracle, Featurizer, ParametricPolicy
from .rewards import RewardConfig
from .trainer import TrainConfig, Trainer
from .validation import check_catalog, check_records


class _EpisodeClassifier(ClassifierMixin, BaseEstimator):
    def _backend(self):
        raise NotImplementedError

    def _check_X(self, X):
        check_is_fitted(self, "classes_")
        return check_records(X, self.catalog_)

    def predict(self, X) -> np.ndarray:
        records = self._check_X(X)
        traces = run_episodes(self._backend(), records, self.catalog_, self.env_config_, greedy=True, seed=self.random_state)
        return np.array([effective_prediction(prediction_record(t), self.catalog_.classes) for t in traces], dtype=object)

    def score(self, X, y=None, sample_weight=None) -> float:
        """Accuracy; labels default to the records' own diagnoses."""
        records = self._check_X(X)
        if y is None:
            y = [r.diagnosis for r in records]
        return super().score(records, np.asarray(y, dtype=object), sample_weight)

    def evaluate(self, X, n_bins: int = 10):
        """Full metrics report (accuracy, F1, ECE, average test count)."""
        records = self._check_X(X)
        return evaluate(self._backend(), records, self.catalog_, self.env_config_, n_bins, greedy=True, seed=self.random_state)


class SequentialDiagnoser(_EpisodeClassifier):
    """Linear-head agent trained with the cyclic PPO/supervised schedule.

    A ``validation_fraction`` of the training records is held out for
    checkpoint selection. Feature vocabularies are the test results seen
    during ``fit``; results first seen at predict time only mark the test as
    observed.
    """

    def __init__(
        self,
        catalog=None,
        lr: float = 1e-2,
        optimizer: str = "adam",
        batch_size: int = 2,
        warmup_steps: int = 100,
        rotation_length: int = 50,
        max_steps: int = 3000,
        eval_every: int = 250,
        patience: int = 0,
        validation_fraction: float = 0.1,
        step_budget: int = 25,
        retry_budget: int = 3,
        random_state: int = 0,
    ):
        self.catalog = catalog
        self.lr = lr
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.warmup_steps = warmup_steps
        self.rotation_length = rotation_length
        self.max_steps = max_steps
        self.eval_every = eval_every
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.step_budget = step_budget
        self.retry_budget = retry_budget
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            optimizer=self.optimizer,
            batch_size=self.batch_size,
            warmup_steps=self.warmup_steps,
            rotation_length=self.rotation_length,
            max_steps=self.max_steps,
            eval_every=self.eval_every,
            patience=self.patience,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        catalog = check_catalog(self.catalog)
        records = check_records(X, catalog, y, min_records=2)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        order = np.random.default_rng(self.random_state).permutation(len(records))
        n_val = min(max(1, int(round(self.validation_fraction * len(records)))), len(records) - 1)
        val = [records[i] for i in order[:n_val]]
        train = [records[i] for i in order[n_val:]]

        self.catalog_ = catalog
        self.env_config_ = EpisodeConfig(step_budget=self.step_budget, retry_budget=self.retry_budget)
        self.featurizer_ = Featurizer.from_records(catalog, records, handle_unknown="ignore")
        trainer = Trainer(self.featurizer_, self._train_config(), self.env_config_, RewardConfig())
        result = trainer.fit(train, val)
        self.params_ = result.best.params
        self.history_ = result.history
        self.classes_ = np.array(catalog.classes, dtype=object)
        return self

    def _backend(self):
        return ParametricPolicy(self.params_, self.featurizer_)


class OracleDiagnoser(_EpisodeClassifier):
    """Exact-posterior baseline; ``fit`` only checks the inputs."""

    def __init__(self, model=None, tau: float = 0.9, step_budget: int = 25, retry_budget: int = 3, random_state: int = 0):
        self.model = model
        self.tau = tau
        self.step_budget = step_budget
        self.retry_budget = retry_budget
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("OracleDiagnoser needs the generative model")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        self.catalog_ = self.model.catalog
        if X is not None:
            check_records(X, self.catalog_, y)
        self.env_config_ = EpisodeConfig(step_budget=self.step_budget, retry_budget=self.retry_budget)
        self.classes_ = np.array(self.catalog_.classes, dtype=object)
        return self

    def _backend(self):
        return BayesOracle(self.model, self.tau)

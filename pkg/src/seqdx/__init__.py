"""Sequential diagnosis with calibrated hypothesis and decision agents."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("seqdx")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .env import DiagnosisEnv, EpisodeConfig, PatientRecord, TestCatalog
from .estimator import OracleDiagnoser, SequentialDiagnoser
from .metrics import EvaluationReport, evaluate
from .policies import BayesOracle, Featurizer, ParametricPolicy
from .runner import run_episode
from .synth import GenerativeModel, generate_dataset
from .trainer import TrainConfig, Trainer

__all__ = [
    "BayesOracle", "DiagnosisEnv", "EpisodeConfig", "EvaluationReport", "Featurizer", "GenerativeModel",
    "OracleDiagnoser", "ParametricPolicy", "PatientRecord", "SequentialDiagnoser", "TestCatalog",
    "TrainConfig", "Trainer", "evaluate", "generate_dataset", "run_episode",
]

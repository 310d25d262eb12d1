"""Episodic diagnosis environment.

A patient record holds a ground-truth diagnosis, an always-visible history and
a set of test results. The environment reveals results one request at a time
and terminates on a diagnosis, on too many consecutive invalid requests, or
when the step budget runs out.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Optional, Union

DEFAULT_TESTS = (
    "Physical Examination",
    "CT",
    "MRI",
    "Radiograph",
    "Ultrasound",
    "Complete Blood Count",
    "Basic Metabolic Panel",
    "Comprehensive Metabolic Panel",
    "Renal Function Panel",
    "Liver Function Panel",
    "Urinalysis",
    "Electrolyte Panel",
)
DEFAULT_CLASSES = ("appendicitis", "cholecystitis", "diverticulitis", "pancreatitis")

UNAVAILABLE_TEXT = "The requested test is not available. Please choose a different action."
DUPLICATE_TEXT = "This test was already requested. Please choose a different action."
INVALID_TEXT = "Invalid action. Please choose a different action."


class ConfigurationError(ValueError):
    """Invalid catalog, record or configuration."""


class UsageError(RuntimeError):
    """An operation was called in a state that does not allow it."""


@dataclass(frozen=True)
class TestCatalog:
    names: tuple = DEFAULT_TESTS
    classes: tuple = DEFAULT_CLASSES

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.names or len(set(self.names)) != len(self.names):
            raise ConfigurationError("test names must be unique and non-empty")
        if not self.classes or len(set(self.classes)) != len(self.classes):
            raise ConfigurationError("classes must be unique and non-empty")

    @property
    def n_tests(self) -> int:
        return len(self.names)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def test_index(self, name: str) -> int:
        return self.names.index(name)

    def class_index(self, label: str) -> int:
        return self.classes.index(label)

    def match_test(self, text: str) -> Optional[str]:
        """Case-insensitive, whitespace-trimmed lookup of a test name."""
        key = text.strip().casefold()
        for name in self.names:
            if name.casefold() == key:
                return name
        return None

    def match_class(self, text: str) -> Optional[str]:
        key = text.strip().casefold()
        for label in self.classes:
            if label.casefold() == key:
                return label
        return None


@dataclass(frozen=True)
class PatientRecord:
    id: str
    diagnosis: str
    history: str
    tests: Mapping[str, str] = field(default_factory=dict)

    def validate(self, catalog: TestCatalog) -> None:
        if self.diagnosis not in catalog.classes:
            raise ConfigurationError(f"record {self.id!r}: unknown diagnosis {self.diagnosis!r}")
        unknown = [name for name in self.tests if name not in catalog.names]
        if unknown:
            raise ConfigurationError(f"record {self.id!r}: unknown tests {unknown}")
        if not self.history:
            raise ConfigurationError(f"record {self.id!r}: empty history")


@dataclass(frozen=True)
class ObservedState:
    history: str
    revealed: tuple = ()  # ((test name, result text), ...) in reveal order
    requested: frozenset = frozenset()
    step: int = 0
    retries_used: int = 0
    outcome: Optional["EpisodeOutcome"] = None

    @property
    def revealed_dict(self) -> dict:
        return dict(self.revealed)

    @property
    def terminal(self) -> bool:
        return self.outcome is not None

    def render(self) -> str:
        """Serialize the visible patient information as prompt text."""
        lines = [self.history]
        lines.extend(f"{name}: {text}" for name, text in self.revealed)
        return "\n".join(lines)


@dataclass(frozen=True)
class RequestTest:
    name: str


@dataclass(frozen=True)
class Diagnose:
    label: str


@dataclass(frozen=True)
class Malformed:
    reason: str = ""


EnvAction = Union[RequestTest, Diagnose, Malformed]

CORRECT = "CorrectDiagnosis"
WRONG = "WrongDiagnosis"
INVALID = "InvalidTermination"
EXHAUSTED = "BudgetExhausted"
OUTCOME_KINDS = (CORRECT, WRONG, INVALID, EXHAUSTED)


@dataclass(frozen=True)
class EpisodeOutcome:
    kind: str
    predicted: Optional[str]
    tests_used: int


@dataclass(frozen=True)
class Observation:
    kind: str  # result | unavailable | duplicate | invalid | terminal
    text: str


class StepResult(NamedTuple):
    state: ObservedState
    observation: Observation
    terminal: bool
    outcome: Optional[EpisodeOutcome]


@dataclass(frozen=True)
class EpisodeConfig:
    step_budget: int = 25
    retry_budget: int = 3
    unavailable_text: str = UNAVAILABLE_TEXT
    duplicate_text: str = DUPLICATE_TEXT
    invalid_text: str = INVALID_TEXT


class DiagnosisEnv:
    """Reveals a single patient's tests on request.

    The environment is deterministic given the record; states are immutable
    values, so traces can be replayed from ``reset`` with the same actions.
    """

    def __init__(self, catalog: TestCatalog = TestCatalog(), config: EpisodeConfig = EpisodeConfig()):
        self.catalog = catalog
        self.config = config
        self.record: Optional[PatientRecord] = None

    def reset(self, record: PatientRecord) -> ObservedState:
        record.validate(self.catalog)
        self.record = record
        return ObservedState(history=record.history)

    def step(self, state: ObservedState, action: EnvAction) -> StepResult:
        if self.record is None:
            raise UsageError("step() called before reset()")
        if state.terminal:
            raise UsageError("episode already terminated")
        cfg = self.config
        record = self.record
        step = state.step + 1

        if isinstance(action, Diagnose) and action.label in self.catalog.classes:
            kind = CORRECT if action.label == record.diagnosis else WRONG
            outcome = EpisodeOutcome(kind, action.label, len(state.revealed))
            new = replace(state, step=step, outcome=outcome)
            return StepResult(new, Observation("terminal", kind), True, outcome)

        if isinstance(action, RequestTest) and action.name in self.catalog.names:
            name = action.name
            if name in state.requested:
                obs = Observation("duplicate", cfg.duplicate_text)
                new = replace(state, step=step, retries_used=state.retries_used + 1)
            elif name not in record.tests:
                obs = Observation("unavailable", cfg.unavailable_text)
                new = replace(
                    state,
                    step=step,
                    requested=state.requested | {name},
                    retries_used=state.retries_used + 1,
                )
            else:
                result = record.tests[name]
                obs = Observation("result", f"{name}: {result}")
                new = replace(
                    state,
                    step=step,
                    revealed=state.revealed + ((name, result),),
                    requested=state.requested | {name},
                    retries_used=0,
                )
        else:
            obs = Observation("invalid", cfg.invalid_text)
            new = replace(state, step=step, retries_used=state.retries_used + 1)

        if new.retries_used > cfg.retry_budget:
            outcome = EpisodeOutcome(INVALID, None, len(new.revealed))
        elif new.step > cfg.step_budget:
            outcome = EpisodeOutcome(EXHAUSTED, None, len(new.revealed))
        else:
            return StepResult(new, obs, False, None)
        new = replace(new, outcome=outcome)
        return StepResult(new, obs, True, outcome)


def available_tests(state: ObservedState, record: PatientRecord) -> set:
    """Tests the record still holds that have not been revealed (oracle/debug only)."""
    return set(record.tests) - set(state.revealed_dict)

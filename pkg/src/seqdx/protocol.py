"""Prompt rendering and output parsing for the hypothesis and decision agents."""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

from .env import ConfigurationError, Diagnose, EnvAction, ObservedState, RequestTest, TestCatalog

EPS = 0.05
N_LEVELS = 11
SUBMIT = "<submit>"

HYPOTHESIS_TEMPLATE = "hypothesis_v1.txt"
DECISION_TEMPLATE = "decision_v1.txt"

MISSING_FIELD = "MissingField"
UNKNOWN_CLASS = "UnknownClass"
UNKNOWN_TEST = "UnknownTest"
BAD_CONFIDENCE = "BadConfidence"
NO_SENTINEL = "NoSentinel"

_HYP_RE = re.compile(r"hypothesis\s*:[ \t]*([^\n,]*)", re.IGNORECASE)
_CONF_RE = re.compile(r"confidence\s*:[ \t]*([^\n,]*)", re.IGNORECASE)
_LEVEL_RE = re.compile(r"(\d+)\s*(?:/\s*10)?\s*\.?")
_THOUGHT_RE = re.compile(r"^[ \t]*thought[ \t]*:[ \t]*(.*)$", re.IGNORECASE | re.MULTILINE)
_ACTION_RE = re.compile(r"^[ \t]*action[ \t]*:[ \t]*(.*)$", re.IGNORECASE | re.MULTILINE)
_INPUT_RE = re.compile(r"^[ \t]*action[ \t]+input[ \t]*:[ \t]*(.*)$", re.IGNORECASE | re.MULTILINE)
_SUBMIT_RE = re.compile(re.escape(SUBMIT), re.IGNORECASE)


class ParseError(ValueError):
    """A generation that does not follow the agent's output format.

    ``reason`` is one of the module-level reason constants and ``span`` holds
    the offending text.
    """

    def __init__(self, reason: str, span: str = ""):
        super().__init__(f"{reason}: {span!r}")
        self.reason = reason
        self.span = span


@dataclass(frozen=True)
class HypothesisOutput:
    hypothesis: str
    level: int

    @property
    def confidence(self) -> float:
        return level_to_confidence(self.level)


@dataclass(frozen=True)
class DecisionOutput:
    kind: str  # "Test" | "Diagnosis"
    input: str
    thought: Optional[str] = None

    def to_action(self) -> EnvAction:
        if self.kind == "Test":
            return RequestTest(self.input)
        return Diagnose(self.input)


def level_to_confidence(level: int, eps: float = EPS) -> float:
    if not 0 <= level <= N_LEVELS - 1:
        raise ValueError(f"confidence level must be in 0..10, got {level}")
    return min(max(level / 10, eps), 1 - eps)


@lru_cache(maxsize=None)
def _packaged_template(name: str) -> str:
    return resources.files("seqdx").joinpath("templates", name).read_text(encoding="utf-8")


def load_template(name: str, path: Optional[str] = None) -> str:
    """Return a packaged template, or the file at ``path`` when overridden."""
    if path:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    return _packaged_template(name)


def render_hypothesis_prompt(state: ObservedState, catalog: TestCatalog, template: Optional[str] = None) -> str:
    if not catalog.classes:
        raise ConfigurationError("catalog has no classes")
    template = template if template is not None else load_template(HYPOTHESIS_TEMPLATE)
    return template.format(
        classes="\n".join(catalog.classes),
        observed_patient_state=state.render(),
    )


def render_decision_prompt(
    state: ObservedState,
    hyp: HypothesisOutput,
    catalog: TestCatalog,
    template: Optional[str] = None,
) -> str:
    if not catalog.classes or not catalog.names:
        raise ConfigurationError("catalog has no classes or tests")
    template = template if template is not None else load_template(DECISION_TEMPLATE)
    return template.format(
        classes="\n".join(catalog.classes),
        tests="\n".join(catalog.names),
        observed_patient_state=state.render(),
        hypothesis=hyp.hypothesis,
        hypothesis_confidence=hyp.level,
    )


def render_hypothesis_output(hyp: HypothesisOutput) -> str:
    return f"Hypothesis: {hyp.hypothesis}\nConfidence: {hyp.level}"


def render_decision_output(dec: DecisionOutput) -> str:
    thought = dec.thought or ""
    return f"Thought: {thought}\nAction: {dec.kind}\nAction Input: {dec.input}\n{SUBMIT}"


def parse_hypothesis(text: str, catalog: TestCatalog) -> HypothesisOutput:
    """Parse ``Hypothesis: <class>`` / ``Confidence: <0-10>``; first occurrence wins."""
    hyp_m = _HYP_RE.search(text)
    conf_m = _CONF_RE.search(text)
    if hyp_m is None or not hyp_m.group(1).strip():
        raise ParseError(MISSING_FIELD, "Hypothesis")
    if conf_m is None or not conf_m.group(1).strip():
        raise ParseError(MISSING_FIELD, "Confidence")
    raw_label = hyp_m.group(1).strip()
    label = catalog.match_class(raw_label)
    if label is None:
        raise ParseError(UNKNOWN_CLASS, raw_label)
    raw_level = conf_m.group(1).strip()
    level_m = _LEVEL_RE.fullmatch(raw_level)
    if level_m is None:
        raise ParseError(BAD_CONFIDENCE, raw_level)
    level = int(level_m.group(1))
    if level > N_LEVELS - 1:
        raise ParseError(BAD_CONFIDENCE, raw_level)
    return HypothesisOutput(label, level)


def parse_decision(text: str, catalog: TestCatalog) -> DecisionOutput:
    """Parse a ReAct-style ``Thought / Action / Action Input`` block.

    Only the text before the first ``<submit>`` counts. Without a sentinel the
    whole text is used. Fields that only appear after the sentinel raise
    ``NoSentinel``.
    """
    sentinel = _SUBMIT_RE.search(text)
    head = text[: sentinel.start()] if sentinel else text
    action_m = _ACTION_RE.search(head)
    input_m = _INPUT_RE.search(head)
    if action_m is None or input_m is None:
        if sentinel and _ACTION_RE.search(text) and _INPUT_RE.search(text):
            raise ParseError(NO_SENTINEL, text[sentinel.start():].strip()[:200])
        raise ParseError(MISSING_FIELD, "Action" if action_m is None else "Action Input")
    kind_raw = action_m.group(1).strip()
    value = input_m.group(1).strip()
    if not value:
        raise ParseError(MISSING_FIELD, "Action Input")
    thought_m = _THOUGHT_RE.search(head)
    thought = thought_m.group(1).strip() if thought_m else None

    kind = kind_raw.casefold()
    if kind == "test":
        name = catalog.match_test(value)
        if name is None:
            raise ParseError(UNKNOWN_TEST, value)
        return DecisionOutput("Test", name, thought)
    if kind == "diagnosis":
        label = catalog.match_class(value)
        if label is None:
            raise ParseError(UNKNOWN_CLASS, value)
        return DecisionOutput("Diagnosis", label, thought)
    raise ParseError(MISSING_FIELD, kind_raw)

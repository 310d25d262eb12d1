"""JSONL persistence for patient records and episode logs."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .env import ConfigurationError, DiagnosisEnv, EpisodeConfig, PatientRecord, TestCatalog
from .runner import action_from_json
from .synth import Dataset

RECORD_KEYS = ("id", "diagnosis", "history", "tests")
SPLITS = ("train", "val", "test")


class RecordFormatError(ConfigurationError):
    """A dataset line is malformed or fails validation."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = f"{path or '<records>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.path = path


def record_to_json(record: PatientRecord) -> str:
    obj = {"id": record.id, "diagnosis": record.diagnosis, "history": record.history, "tests": dict(record.tests)}
    return json.dumps(obj, ensure_ascii=False)


def record_from_obj(obj) -> PatientRecord:
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    keys = set(obj)
    if keys != set(RECORD_KEYS):
        missing = sorted(set(RECORD_KEYS) - keys)
        extra = sorted(keys - set(RECORD_KEYS))
        raise ValueError(f"missing keys {missing}, unknown keys {extra}")
    for key in ("id", "diagnosis", "history"):
        if not isinstance(obj[key], str):
            raise ValueError(f"{key!r} must be a string")
    tests = obj["tests"]
    if not isinstance(tests, dict) or not all(isinstance(v, str) for v in tests.values()):
        raise ValueError("'tests' must map test names to strings")
    return PatientRecord(obj["id"], obj["diagnosis"], obj["history"], dict(tests))


def parse_records(lines: Iterable[str], catalog: Optional[TestCatalog] = None, path: Optional[str] = None) -> list:
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = record_from_obj(json.loads(line))
            if catalog is not None:
                record.validate(catalog)
        except (ValueError, ConfigurationError) as exc:
            raise RecordFormatError(str(exc), lineno, path) from exc
        records.append(record)
    return records


def load_records(path, catalog: Optional[TestCatalog] = None) -> list:
    """Read one record per line; blank lines are skipped. Errors carry the line number."""
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh, catalog, str(path))


def save_records(records: Iterable[PatientRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record_to_json(record) + "\n")


def save_dataset(dataset: Dataset, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for split in SPLITS:
        path = directory / f"{split}.jsonl"
        save_records(getattr(dataset, split), path)
        paths.append(path)
    return paths


def load_dataset(directory, catalog: TestCatalog = TestCatalog()) -> Dataset:
    directory = Path(directory)
    splits = {}
    for split in SPLITS:
        path = directory / f"{split}.jsonl"
        if not path.is_file():
            raise ConfigurationError(f"dataset split not found: {path}")
        splits[split] = load_records(path, catalog)
    return Dataset(splits["train"], splits["val"], splits["test"], catalog.classes)


@dataclass(frozen=True)
class EpisodeLogEntry:
    episode: str
    step: int
    state_digest: str
    hypothesis: tuple  # (class, level)
    action: Optional[dict]
    observation_kind: Optional[str]
    observation: Optional[str]
    reward: float

    @classmethod
    def from_dict(cls, obj: dict) -> "EpisodeLogEntry":
        hyp = obj["hypothesis"]
        return cls(
            obj["episode"], int(obj["step"]), obj["state_digest"], (hyp[0], int(hyp[1])),
            obj["action"], obj["observation_kind"], obj["observation"], float(obj["reward"]),
        )


def read_episode_log(path) -> list:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entries.append(EpisodeLogEntry.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise RecordFormatError(f"bad log entry: {exc}", lineno, str(path)) from exc
    return entries


def replay_episode(entries, record: PatientRecord, catalog: TestCatalog = TestCatalog(),
                   config: EpisodeConfig = EpisodeConfig()) -> list:
    """Re-run the logged actions through a fresh environment and return the mismatching steps."""
    env = DiagnosisEnv(catalog, config)
    state = env.reset(record)
    mismatches = []
    for entry in sorted(entries, key=lambda e: e.step):
        if entry.action is None:
            break
        result = env.step(state, action_from_json(entry.action))
        if (result.observation.kind, result.observation.text) != (entry.observation_kind, entry.observation):
            mismatches.append(entry.step)
        state = result.state
        if result.terminal:
            break
    return mismatches

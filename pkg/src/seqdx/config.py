"""Sectioned key-value run configuration (INI syntax).

Every key has a default; a config file only needs to list what it changes.
``RunConfig.to_ini`` writes the fully resolved configuration.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .env import ConfigurationError, EpisodeConfig, TestCatalog
from .remote import RemoteConfig
from .rewards import RewardConfig
from .synth import GenerativeModel, SyntheticConfig
from .trainer import TrainConfig

PRESETS = ("one-decisive-test", "uniform-noise", "graded")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    dataset_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    log_dir: str = "logs"


@dataclass(frozen=True)
class CatalogSection:
    tests: tuple = TestCatalog().names
    classes: tuple = TestCatalog().classes


@dataclass(frozen=True)
class ProtocolSection:
    eps: float = 0.05
    hypothesis_template: str = ""
    decision_template: str = ""


@dataclass(frozen=True)
class MetricsSection:
    n_bins: int = 10
    greedy: bool = True


@dataclass(frozen=True)
class PolicySection:
    allow_invalid_action: bool = False


@dataclass(frozen=True)
class SyntheticSection:
    n_patients: int = 2400
    split: tuple = (0.8, 0.1, 0.1)
    priors: tuple = ()
    vocab_sizes: tuple = (3,)
    informativeness: tuple = (0.3,)
    availability: tuple = (0.8,)
    history_vocab: int = 3
    history_informativeness: float = 0.2


_SECTIONS = {
    "run": ("run", RunSection),
    "catalog": ("catalog", CatalogSection),
    "environment": ("environment", EpisodeConfig),
    "protocol": ("protocol", ProtocolSection),
    "rewards": ("rewards", RewardConfig),
    "trainer": ("trainer", TrainConfig),
    "metrics": ("metrics", MetricsSection),
    "policy": ("policy", PolicySection),
    "synthetic": ("synthetic", SyntheticSection),
    "remote": ("remote", RemoteConfig),
}


def _parse_value(raw: str, default, key: str):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        sample = default[0] if default else 0.0
        if isinstance(sample, str):
            return tuple(items)
        try:
            return tuple(_number(s) for s in items)
        except ValueError:
            raise ConfigurationError(f"{key}: expected comma-separated numbers, got {raw!r}") from None
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r}") from None
    return raw


def _number(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _unwrap(values: tuple):
    return values[0] if len(values) == 1 else values


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = RunSection()
    catalog: CatalogSection = CatalogSection()
    environment: EpisodeConfig = EpisodeConfig()
    protocol: ProtocolSection = ProtocolSection()
    rewards: RewardConfig = RewardConfig()
    trainer: TrainConfig = TrainConfig()
    metrics: MetricsSection = MetricsSection()
    policy: PolicySection = PolicySection()
    synthetic: SyntheticSection = SyntheticSection()
    remote: RemoteConfig = RemoteConfig()
    source: Optional[str] = field(default=None, compare=False)

    # ------------------------------------------------------------ parsing
    @classmethod
    def from_ini_text(cls, text: str, source: Optional[str] = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source or "<config>")
        except configparser.Error as exc:
            raise ConfigurationError(str(exc)) from exc
        updates = {}
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown config section [{section}]")
            attr, klass = _SECTIONS[section]
            known = {f.name: f for f in fields(klass)}
            base = getattr(cls(), attr)
            values = {}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigurationError(f"unknown key {key!r} in [{section}]")
                values[key] = _parse_value(raw, getattr(base, key), f"{section}.{key}")
            try:
                updates[attr] = replace(base, **values)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"[{section}]: {exc}") from exc
        return cls(**updates, source=source)

    @classmethod
    def load(cls, path_or_preset: Optional[str]) -> "RunConfig":
        """Load a config file, or a packaged preset by name (``presets/<name>`` also works)."""
        if not path_or_preset:
            return cls()
        path = Path(path_or_preset)
        if path.is_file():
            return cls.from_ini_text(path.read_text(encoding="utf-8"), str(path))
        name = path.name[:-4] if path.name.endswith(".ini") else path.name
        if name in PRESETS:
            text = resources.files("seqdx").joinpath("presets", f"{name}.ini").read_text(encoding="utf-8")
            return cls.from_ini_text(text, f"preset:{name}")
        raise ConfigurationError(f"config file or preset not found: {path_or_preset}")

    def to_ini(self) -> str:
        lines = []
        for section, (attr, _klass) in _SECTIONS.items():
            lines.append(f"[{section}]")
            obj = getattr(self, attr)
            for f in fields(obj):
                lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(
            self,
            run=replace(self.run, seed=seed),
            trainer=replace(self.trainer, seed=seed),
        )

    # ------------------------------------------------------------ builders
    def build_catalog(self) -> TestCatalog:
        return TestCatalog(self.catalog.tests, self.catalog.classes)

    def build_model(self) -> GenerativeModel:
        s = self.synthetic
        return GenerativeModel(
            catalog=self.build_catalog(),
            priors=s.priors,
            vocab_sizes=_unwrap(s.vocab_sizes),
            informativeness=_unwrap(s.informativeness),
            availability=_unwrap(s.availability),
            history_vocab=s.history_vocab,
            history_informativeness=s.history_informativeness,
        )

    def build_synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(self.synthetic.n_patients, self.run.seed, self.synthetic.split)

    def build_remote(self) -> RemoteConfig:
        return self.remote.with_env_overrides()

    def resolve_path(self, value: str, base: Optional[str] = None) -> str:
        return os.path.join(base, value) if base and not os.path.isabs(value) else value

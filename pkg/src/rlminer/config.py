"""Run configuration: typed INI sections mapped onto the component configs.

Every key is checked against the dataclass it feeds, so a typo is an error
rather than a silently ignored setting. Values are parsed by the annotated
field type and then validated by the dataclass itself.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .agent.curriculum import PAPER_CURRICULUM, CurriculumError, scaled_curriculum
from .agent.training import AgentTrainConfig
from .embedding import ConfigError, EmbedTrainConfig
from .search import SearchConfig, SearchConfigError


@dataclass(frozen=True)
class PathsConfig:
    kg: str = "toy"          # a triple file, or "toy" for the bundled graph
    out: str = "run"


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0


@dataclass(frozen=True)
class CurriculumConfig:
    episodes: str = "150,150,150,300"   # per stage, comma separated
    seed_count: int = 1000
    seed_top_fraction: float = 0.1
    seed_pool: int = 50_000

    def budgets(self) -> list[int]:
        try:
            return [int(x) for x in self.episodes.split(",")]
        except ValueError:
            raise ConfigError("episodes must be a comma-separated list of integers") from None

    def validate(self):
        stages = scaled_curriculum(self.budgets())
        if self.seed_count <= 0 or self.seed_pool <= 0:
            raise ConfigError("seed_count and seed_pool must be positive")
        if not 0 < self.seed_top_fraction <= 1:
            raise ConfigError("seed_top_fraction must be in (0, 1]")
        return stages


@dataclass(frozen=True)
class MiningConfig:
    """Search settings shared by every head predicate."""
    length: int = 3
    batch_size: int = 128
    min_conf: float = 0.1
    min_hc: float = 0.01
    min_value: float = 0.0001
    lam: float = 0.9
    time_limit: float | None = None
    measure: str = "cwa"
    grounding_limit: int | None = None
    predicates: str = ""         # comma-separated names; empty means all

    def template(self) -> SearchConfig:
        kw = asdict(self)
        kw.pop("predicates")
        return SearchConfig(**kw)


@dataclass(frozen=True)
class EvalConfig:
    holdout: float = 0.3     # fraction of head facts held out; 0 disables the split
    min_cd: float = 0.7

    def validate(self):
        if not 0 <= self.holdout < 1:
            raise ConfigError("holdout must be in [0, 1)")
        if not 0 <= self.min_cd <= 1:
            raise ConfigError("min_cd must be in [0, 1]")


SECTIONS = {
    "paths": PathsConfig,
    "run": RunSettings,
    "embedding": EmbedTrainConfig,
    "agent": AgentTrainConfig,
    "curriculum": CurriculumConfig,
    "search": MiningConfig,
    "eval": EvalConfig,
}

# full-scale values where they differ from the desk defaults
PAPER_VALUES = {
    "embedding": {"dim": 1000, "negatives": 256, "eta": 24.0},
    "agent": {"batch_size": 128, "token_dim": 256, "hidden": 512},
    "curriculum": {"episodes": ",".join(str(s.episodes) for s in PAPER_CURRICULUM)},
}

# settings that only change where files go, not what is computed
_NOT_FINGERPRINTED = {("paths", "out")}


class ConfigValidationError(ValueError):
    """A field-level configuration problem."""

    def __init__(self, section: str, key: str | None, message: str):
        where = f"[{section}]" + (f" {key}" if key else "")
        super().__init__(f"{where}: {message}")
        self.section, self.key = section, key


def _parse(value: str, annotation, section: str, key: str):
    # field annotations arrive as strings such as "int" or "float | None"
    annotation = getattr(annotation, "__name__", annotation)
    optional = "None" in annotation
    base = annotation.replace("| None", "").strip()
    if optional and value.strip().lower() in ("", "none"):
        return None
    try:
        if base == "int":
            return int(value)
        if base == "float":
            return float(value)
        if base == "bool":
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return value.strip()
    except ValueError:
        raise ConfigValidationError(section, key, f"cannot parse {value!r} as {base}") from None


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    run: RunSettings = field(default_factory=RunSettings)
    embedding: EmbedTrainConfig = field(default_factory=EmbedTrainConfig)
    agent: AgentTrainConfig = field(default_factory=AgentTrainConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    search: MiningConfig = field(default_factory=MiningConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigValidationError("config", None, str(exc).splitlines()[0]) from None
        parts = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigValidationError(section, None, "unknown section")
            klass = SECTIONS[section]
            types = {f.name: f.type for f in fields(klass)}
            kw = {}
            for key, value in parser.items(section):
                if key not in types:
                    raise ConfigValidationError(section, key, "unknown key")
                kw[key] = _parse(value, types[key], section, key)
            try:
                parts[section] = klass(**kw)
            except (ValueError, TypeError) as exc:
                raise ConfigValidationError(section, None, str(exc)) from None
        return cls(**parts)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))

    def override(self, **changes) -> "RunConfig":
        """Apply command-line overrides given as ``section__key=value``."""
        cfg = self
        for name, value in changes.items():
            if value is None:
                continue
            section, key = name.split("__")
            try:
                cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{key: value})})
            except (ValueError, TypeError) as exc:
                raise ConfigValidationError(section, key, str(exc)) from None
        return cfg

    def with_seed(self, seed: int) -> "RunConfig":
        """One global seed drives every component."""
        return self.override(run__seed=seed, embedding__seed=seed, agent__seed=seed)

    def validate(self):
        """Check every field before any long-running phase starts."""
        checks = [("embedding", self.embedding.validate), ("curriculum", self.curriculum.validate),
                  ("eval", self.eval.validate), ("search", self.search.template)]
        for section, check in checks:
            try:
                check()
            except (ConfigError, CurriculumError, SearchConfigError, ValueError) as exc:
                raise ConfigValidationError(section, None, str(exc)) from None

    def as_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def fingerprint(self) -> str:
        d = self.as_dict()
        for section, key in _NOT_FINGERPRINTED:
            d[section].pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def to_ini(self, annotate: bool = True) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            paper = PAPER_VALUES.get(name, {})
            for key, value in asdict(getattr(self, name)).items():
                text = "none" if value is None else str(value).lower() if isinstance(value, bool) else str(value)
                line = f"{key} = {text}"
                if annotate and key in paper:
                    line += f"    ; paper: {paper[key]}"
                lines.append(line)
            lines.append("")
        return "\n".join(lines)

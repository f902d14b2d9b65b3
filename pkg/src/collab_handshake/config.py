"""Run configuration: one tree of section dataclasses, read from TOML with dotted overrides."""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field

from .errors import ConfigError
from .model import Method, ModelConfig
from .scenario import DEFAULT_SEEDS, DEFAULT_SIZES, ScenarioConfig, Setting
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class SplitConfig:
    train_size: int = DEFAULT_SIZES["train"]
    val_size: int = DEFAULT_SIZES["val"]
    test_size: int = DEFAULT_SIZES["test"]
    train_seeds: tuple = DEFAULT_SEEDS["train"]
    val_seeds: tuple = DEFAULT_SEEDS["val"]
    test_seeds: tuple = DEFAULT_SEEDS["test"]

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, f"{name}_seeds", tuple(getattr(self, f"{name}_seeds")))
            if getattr(self, f"{name}_size") < 1:
                raise ConfigError(f"split.{name}_size must be >= 1")
            if len(getattr(self, f"{name}_seeds")) != 2:
                raise ConfigError(f"split.{name}_seeds must be a [start, stop) pair")

    def seeds(self):
        return {"train": self.train_seeds, "val": self.val_seeds, "test": self.test_seeds}

    def sizes(self):
        return {"train": self.train_size, "val": self.val_size, "test": self.test_size}


@dataclass(frozen=True)
class TrainSection:
    iterations: int = 3000
    batch_size: int = 8
    lr: float = 1e-3
    eval_every: int = 500
    redegrade: bool = True


@dataclass(frozen=True)
class MetricsSection:
    format: str = "csv"

    def __post_init__(self):
        if self.format not in ("csv", "json"):
            raise ConfigError(f"metrics.format must be 'csv' or 'json', got {self.format!r}")


@dataclass(frozen=True)
class SweepSection:
    messages: tuple = (1, 2, 4, 8, 16, 64)
    keys: tuple = (4, 16, 64, 256, 1024)

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(int(m) for m in self.messages))
        object.__setattr__(self, "keys", tuple(int(k) for k in self.keys))
        if not self.messages or not self.keys or min(self.messages + self.keys) < 1:
            raise ConfigError("sweep sizes must be non-empty lists of positive integers")


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs/default"


_SECTIONS = {
    "scenario": ScenarioConfig,
    "split": SplitConfig,
    "model": ModelConfig,
    "train": TrainSection,
    "metrics": MetricsSection,
    "sweep": SweepSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    setting: Setting = Setting.HIDDEN_TARGET
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        m, s = self.model, self.scenario
        for name in ("num_agents", "image_size", "num_classes"):
            if getattr(m, name) != getattr(s, name):
                raise ConfigError(f"model.{name}={getattr(m, name)} disagrees with scenario.{name}={getattr(s, name)}")
        self.train_config()

    def train_config(self, model=None):
        t = self.train
        return TrainConfig(iterations=t.iterations, batch_size=t.batch_size, lr=t.lr, seed=self.seed,
                           eval_every=t.eval_every, redegrade=t.redegrade, model=model or self.model)

    def to_dict(self):
        out = {"seed": self.seed, "setting": self.setting.value}
        for name in _SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, "to_dict") else _plain(dataclasses.asdict(section))
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"seed", "setting"} - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "seed" in d:
            kwargs["seed"] = _int(d["seed"], "seed")
        if "setting" in d:
            try:
                kwargs["setting"] = Setting(d["setting"])
            except ValueError:
                raise ConfigError(f"unknown setting {d['setting']!r}; expected one of "
                                  f"{[s.value for s in Setting]}") from None
        for name, kind in _SECTIONS.items():
            if name in d:
                kwargs[name] = _section(kind, name, d[name])
        return cls(**kwargs)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, Setting) or isinstance(v, Method):
        return v.value
    return v


def _int(v, name):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    return v


def _section(kind, name, values):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    if kind is ModelConfig:
        return ModelConfig.from_dict(values)
    known = {f.name for f in dataclasses.fields(kind)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return kind(**values)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_value(text):
    """TOML literal if it parses as one (numbers, booleans, arrays), else a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(tree, overrides):
    """Set dotted ``a.b`` paths in a nested dict; the path must name an existing field."""
    defaults = RunConfig().to_dict()
    for key, value in overrides:
        parts = key.split(".")
        ref, node = defaults, tree
        for p in parts[:-1]:
            if not isinstance(ref, dict) or p not in ref:
                raise ConfigError(f"unknown config key {key!r}")
            ref = ref[p]
            node = node.setdefault(p, {})
        if not isinstance(ref, dict) or parts[-1] not in ref:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return tree


def load_config(path=None, overrides=()):
    tree = {}
    if path:
        try:
            with open(path, "rb") as fh:
                tree = json.load(fh) if str(path).endswith(".json") else tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return RunConfig.from_dict(apply_overrides(tree, overrides))

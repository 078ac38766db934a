"""Declarative run configuration: one YAML file drives the whole chain.

An empty file is a complete synthetic-mode run: every key has a default,
and `RunConfig.to_dict()` echoes the fully resolved configuration.
Validation never stops at the first problem; every bad key is reported
with its path and a remedy, so a config can be repaired in one pass.

The top-level `seed` governs all randomness: it overrides the seeds of
the synth and train sections so one integer pins the entire run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date, datetime

import yaml

from .errors import ConfigError, DataError, PipelineError
from .features import VARIANTS
from .model import ACTIVATIONS, EmbeddingConfig, ModelConfig
from .pipeline import TrainConfig
from .synth import SynthConfig

__all__ = ["RunConfig", "ModelSettings", "validate_config", "config_hash",
           "INPUT_NAMES", "DEFAULT_VARIANTS"]

DEFAULT_VARIANTS = tuple(VARIANTS)  # the full 15-variant roster
INPUT_NAMES = ("zones", "stations", "trips", "weather", "loops",
               "loop_zones", "calendar")


@dataclass(frozen=True)
class ModelSettings:
    """Architecture knobs shared by every variant of a run."""

    h_t: int = 64
    h_s: int = 64
    k_e: int = 3
    k_d: int = 3
    activation: str = "relu"
    cell: str = "gru"
    p: int = 10
    embed_width: int = 5
    branch_width: int = 5
    hidden_widths: tuple[int, int] = (32, 16)

    def to_model_config(self, variant: str, dropout: float) -> ModelConfig:
        embedding = EmbeddingConfig(
            embed_width=self.embed_width, branch_width=self.branch_width,
            hidden_widths=tuple(self.hidden_widths), p=self.p,
        )
        return ModelConfig(
            h_t=self.h_t, h_s=self.h_s, k_e=self.k_e, k_d=self.k_d,
            activation=self.activation, dropout=dropout, cell=self.cell,
            embedding=embedding, variant=VARIANTS[variant],
        )


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    n_zones: int = 50
    p_bike: float = 0.6
    day_window: tuple[int, int] = (7, 21)
    variants: tuple[str, ...] = DEFAULT_VARIANTS
    train_days: int = 23
    test_days: int = 7
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    inputs: dict = field(default_factory=dict)  # optional user data files

    @property
    def train_window(self) -> tuple[int, int]:
        return (0, self.train_days * 24)

    @property
    def test_window(self) -> tuple[int, int]:
        return (self.train_days * 24, (self.train_days + self.test_days) * 24)

    def to_dict(self) -> dict:
        def plain(value):
            if isinstance(value, tuple):
                return [plain(v) for v in value]
            if isinstance(value, datetime):
                return value.isoformat()
            return value

        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                out[f.name] = {
                    g.name: plain(getattr(value, g.name))
                    for g in dataclasses.fields(value)
                }
            else:
                out[f.name] = plain(value)
        return out


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _coerce(value, kind):
    """YAML-native value into the dataclass field's shape."""
    if kind == "datetime":
        if isinstance(value, datetime):
            return value
        if isinstance(value, date):
            return datetime(value.year, value.month, value.day)
        return datetime.fromisoformat(str(value))
    if kind == "tuple":
        return tuple(value) if isinstance(value, (list, tuple)) else value
    return value


_FIELD_KINDS = {
    ("synth", "start"): "datetime",
    ("synth", "weekday_profile"): "tuple",
    ("synth", "weekend_profile"): "tuple",
    ("model", "hidden_widths"): "tuple",
}


def _build_section(name, cls, data, errors):
    """Construct a config dataclass from a YAML mapping, collecting every
    unknown-key and constructor complaint instead of failing fast."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{name}: expected a mapping, got {type(data).__name__}")
        return cls()
    valid = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            errors.append(
                f"{name}.{key}: unknown key; valid keys: {sorted(valid)}"
            )
            continue
        kwargs[key] = _coerce(value, _FIELD_KINDS.get((name, key)))
    try:
        return cls(**kwargs)
    except (DataError, PipelineError, TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc}")
        return cls()


def validate_config(path: str | None) -> RunConfig:
    """Parse and normalize a YAML run config; `None` or an empty file
    yields pure defaults. Raises ConfigError carrying the full error list
    when anything is wrong."""
    data = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(
                    [f"top level: expected a mapping, got "
                     f"{type(loaded).__name__}"]
                )
            data = loaded
    errors: list[str] = []

    top_valid = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = [k for k in data if k not in top_valid]
    for key in unknown:
        errors.append(f"{key}: unknown key; valid keys: {sorted(top_valid)}")

    synth = _build_section("synth", SynthConfig, data.get("synth"), errors)
    train = _build_section("train", TrainConfig, data.get("train"), errors)
    model = _build_section("model", ModelSettings, data.get("model"), errors)

    config = RunConfig(synth=synth, train=train, model=model)
    for key in ("seed", "out_dir", "n_zones", "p_bike", "train_days",
                "test_days"):
        if key in data:
            setattr(config, key, data[key])
    if "day_window" in data:
        config.day_window = tuple(data["day_window"]) \
            if isinstance(data["day_window"], (list, tuple)) \
            else data["day_window"]
    if "variants" in data:
        v = data["variants"]
        config.variants = tuple(v) if isinstance(v, (list, tuple)) else (v,)
    if "inputs" in data:
        config.inputs = data["inputs"] if isinstance(data["inputs"], dict) \
            else {}
        if not isinstance(data["inputs"], dict):
            errors.append("inputs: expected a mapping of artifact name to "
                          f"path; valid names: {sorted(INPUT_NAMES)}")

    _check_top_level(config, errors)

    # one seed to rule the run: push it into the seeded sections
    if not errors:
        config.synth = dataclasses.replace(config.synth, seed=config.seed)
        config.train = dataclasses.replace(config.train, seed=config.seed)
    if errors:
        raise ConfigError(errors)
    return config


def _check_top_level(config: RunConfig, errors: list[str]) -> None:
    if not isinstance(config.seed, int) or isinstance(config.seed, bool):
        errors.append(f"seed: expected an integer, got {config.seed!r}")
    if not isinstance(config.out_dir, str) or not config.out_dir:
        errors.append("out_dir: expected a non-empty path string")
    if not isinstance(config.n_zones, int) or config.n_zones < 2:
        errors.append(
            f"n_zones: {config.n_zones!r} invalid; use an integer >= 2"
        )
    if not isinstance(config.p_bike, (int, float)) \
            or not 0.0 < float(config.p_bike) <= 1.0:
        errors.append(
            f"p_bike: {config.p_bike!r} outside (0, 1]; use e.g. 0.6"
        )
    dw = config.day_window
    if (len(dw) != 2 or not all(isinstance(h, int) for h in dw)
            or not 0 <= dw[0] <= dw[1] <= 23):
        errors.append(
            f"day_window: {dw!r} invalid; use [first_hour, last_hour] "
            "with 0 <= first <= last <= 23"
        )
    bad = [v for v in config.variants if v not in VARIANTS]
    if bad:
        errors.append(
            f"variants: unknown {bad}; valid names: {list(VARIANTS)}"
        )
    if not config.variants:
        errors.append("variants: list is empty; name at least one variant")
    if not isinstance(config.train_days, int) or config.train_days < 8:
        errors.append(
            f"train_days: {config.train_days!r} invalid; need an integer "
            ">= 8 (one week of lag history plus at least one sample day)"
        )
    if not isinstance(config.test_days, int) or config.test_days < 1:
        errors.append(
            f"test_days: {config.test_days!r} invalid; need an integer >= 1"
        )
    if isinstance(config.train_days, int) and isinstance(config.test_days,
                                                         int):
        needed = config.train_days + config.test_days
        if not config.inputs and needed > config.synth.horizon_days:
            errors.append(
                f"train_days + test_days = {needed} exceeds "
                f"synth.horizon_days = {config.synth.horizon_days}; extend "
                "the horizon or shrink the windows"
            )
    for name in config.inputs:
        if name not in INPUT_NAMES:
            errors.append(
                f"inputs.{name}: unknown artifact; valid names: "
                f"{sorted(INPUT_NAMES)}"
            )
    if config.model.activation not in ACTIVATIONS:
        errors.append(
            f"model.activation: {config.model.activation!r} unknown; "
            f"choose from {sorted(ACTIVATIONS)}"
        )
    if config.model.cell not in ("gru", "lstm"):
        errors.append(
            f"model.cell: {config.model.cell!r} unknown; choose gru or lstm"
        )
    for key in ("h_t", "h_s", "k_e", "k_d", "p", "embed_width",
                "branch_width"):
        v = getattr(config.model, key)
        if not isinstance(v, int) or v < 1:
            errors.append(f"model.{key}: {v!r} invalid; use an integer >= 1")

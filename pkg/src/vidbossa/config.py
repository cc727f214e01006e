"""Flat key/value run configuration, read from and written to TOML."""

from __future__ import annotations

import dataclasses
import difflib
import json
from dataclasses import dataclass, fields

import tomli

from .exceptions import ConfigurationError

METHODS = ("descriptor", "vote", "global")


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline.  ``seed`` is the single root seed."""

    seed: int = 42
    manifest: str = ""
    output: str = "run"
    threads: int = 1
    # corpus generation (used by ``run`` when ``synth`` is true)
    synth: bool = False
    synth_seed: int = 7
    synth_videos_per_class: int = 20
    synth_frames_min: int = 5
    synth_frames_max: int = 12
    synth_size: int = 128
    synth_folds: int = 5
    synth_gap: float = 1.0
    # descriptors
    bits: int = 256
    patch: int = 16
    step: int = 6
    smooth_radius: int = 2
    # codebook
    M: int = 256
    max_iter: int = 100
    sample: int = 1_000_000
    shared_codebook: bool = False
    # encoding
    encoder: str = "bossanova"
    B: int = 10
    lambda_min: float = 0.0
    lambda_max: float = 3.0
    s: float = 1e-3
    knn: int = 10
    raw_counts: bool = False
    normalization: str = "l2"
    # video
    method: str = "descriptor"
    agg_z: str = "median"
    agg_t: str = "median"
    tie_rule: str = "positive"
    # classifier
    metric: str = "l2"
    C: float = 10.0
    gamma: str = "auto"
    tol: float = 1e-3
    max_passes: int = 200
    fold_holdout: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.encoder not in ("bow", "bossanova"):
            raise ConfigurationError(f"encoder must be 'bow' or 'bossanova', got {self.encoder!r}")
        if self.normalization not in ("l2", "none"):
            raise ConfigurationError(f"normalization must be 'l2' or 'none', got {self.normalization!r}")
        if self.gamma != "auto":
            try:
                if float(self.gamma) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigurationError(f"gamma must be 'auto' or a positive number, got {self.gamma!r}") from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def gamma_value(self):
        return "auto" if self.gamma == "auto" else float(self.gamma)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    ftype = _FIELDS[name].type
    if ftype == "bool":
        if not isinstance(value, bool):
            raise ConfigurationError(f"{name}: expected true/false, got {value!r}")
        return value
    if ftype == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{name}: expected an integer, got {value!r}")
        return value
    if ftype == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if name == "gamma" and isinstance(value, (int, float)) and not isinstance(value, bool):
        return repr(float(value))
    if not isinstance(value, str):
        raise ConfigurationError(f"{name}: expected a string, got {value!r}")
    return value


def config_from_dict(data: dict) -> RunConfig:
    unknown = [k for k in data if k not in _FIELDS]
    if unknown:
        key = unknown[0]
        close = difflib.get_close_matches(key, list(_FIELDS), n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigurationError(f"unknown config key {key!r}{hint}")
    return RunConfig(**{k: _coerce(k, v) for k, v in data.items()})


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigurationError(f"config must be flat; found table [{nested[0]}]")
    return config_from_dict(data)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return json.dumps(v)


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved config, defaults included, one key per line."""
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in cfg.as_dict().items())


def write_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))

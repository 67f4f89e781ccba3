"""Training hyper-parameters and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Any, Mapping

ESTIMATORS = ("dirac_gauss", "ste", "tanh")
WK_SCHEMES = ("geometric", "linear_decay", "inverse_rank", "exp_rank")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    """All knobs for teacher pre-training and student training.

    Defaults follow the MovieLens column of the published settings
    (B=2048, d=256, eta=1e-3, lambda=1e-4, lambda1=1, lambda2=0.1, gamma=1,
    L=2). ``lambda_`` is spelled ``lambda`` in config files and flags.
    """

    d: int = 256
    L: int = 2
    B: int = 2048
    eta: float = 1e-3
    lambda_: float = 1e-4
    lambda1: float = 1.0
    lambda2: float = 0.1
    gamma: float = 1.0
    R: int = 100
    epochs_teacher: int = 100
    epochs_student: int = 100
    estimator: str = "dirac_gauss"
    wl_scheme: str = "linear_shifted"
    wk_scheme: str = "geometric"
    seed: int = 0
    norm_mode: str = "symmetric"
    init_std: float = 0.1

    def __post_init__(self):
        from .scoring import WL_SCHEMES
        from .graph import NORM_MODES

        for name in ("d", "B", "R"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("L", "epochs_teacher", "epochs_student"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("eta", "gamma", "init_std"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("lambda_", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{config_key(name)} must be >= 0")
        choices = {"estimator": ESTIMATORS, "wl_scheme": WL_SCHEMES,
                   "wk_scheme": WK_SCHEMES, "norm_mode": NORM_MODES}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {', '.join(allowed)}")

    def replace(self, **changes) -> "TrainingConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        return {config_key(f.name): getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())


def config_key(field_name: str) -> str:
    return "lambda" if field_name == "lambda_" else field_name


def field_name(key: str) -> str:
    return "lambda_" if key == "lambda" else key


FIELD_TYPES = {config_key(f.name): f.type for f in fields(TrainingConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def coerce(key: str, value: Any) -> Any:
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    cast = _CASTS[FIELD_TYPES[key]]
    try:
        if cast is int and isinstance(value, str):
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError(value)
            return int(as_float)
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{lineno}: {exc}") from None
    return out


def load_config(path: str | os.PathLike | None = None,
                overrides: Mapping[str, Any] | None = None,
                base: TrainingConfig | None = None) -> TrainingConfig:
    """Config from defaults (or ``base``), then the file, then overrides."""
    values = (base or TrainingConfig()).as_dict()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), os.fspath(path)))
    for key, value in (overrides or {}).items():
        values[key] = coerce(key, value)
    return TrainingConfig(**{field_name(k): v for k, v in values.items()})

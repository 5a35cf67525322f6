"""Experiment configuration: a params dictionary from JSON, validated into ExperimentConfig."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

from .adversary import GENERATORS
from .channels import DEFAULT_C
from .errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMES = ("cr", "iter", "iter_uf", "uf_compiled")
UF_SCHEMES = ("iter_uf", "uf_compiled")
ORDERS = ("alternating", "bulk", "random")
DEFAULT_SLOPE_BOUND = 18000.0


@dataclass
class ExperimentConfig:
    scheme: str = "cr"
    N: int = 32
    T_values: List[int] = field(default_factory=lambda: [0])
    adversary: str = "uniform"
    params: dict = field(default_factory=dict)
    trials: int = 100
    master_seed: int = 0
    horizon: Optional[int] = None
    out: str = "results"
    repetition: int = 3
    workers: int = 1
    xlsx: bool = False
    relaxed_termination: bool = False
    alphabet: int = 2
    order: str = "alternating"
    C: float = DEFAULT_C
    slope_bound: float = DEFAULT_SLOPE_BOUND

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"unknown scheme '{self.scheme}' (expected one of {', '.join(SCHEMES)})")
        if self.adversary not in GENERATORS:
            raise ConfigError("adversary", f"unknown generator '{self.adversary}'")
        if self.adversary == "erasure_only" and self.scheme in UF_SCHEMES:
            raise ConfigError("adversary", f"erasure_only has no effect on '{self.scheme}': a UF channel only flips")
        if self.order not in ORDERS:
            raise ConfigError("order", f"unknown speaking order '{self.order}'")
        if self.N < 1:
            raise ConfigError("N", f"must be positive, got {self.N}")
        if not self.T_values or any(t < 0 for t in self.T_values):
            raise ConfigError("T_values", "need at least one non-negative budget")
        if self.trials < 1:
            raise ConfigError("trials", f"must be positive, got {self.trials}")
        if self.workers < 1:
            raise ConfigError("workers", f"must be positive, got {self.workers}")
        if self.repetition < 1:
            raise ConfigError("repetition", f"must be positive, got {self.repetition}")
        if self.horizon is not None and self.horizon < max(self.T_values):
            raise ConfigError("horizon", f"{self.horizon} cannot hold T={max(self.T_values)} corruptions")
        if self.alphabet < 2:
            raise ConfigError("alphabet", f"must be at least 2, got {self.alphabet}")
        if self.scheme in ("iter", "iter_uf") and self.alphabet != 2:
            raise ConfigError("alphabet", "the iterative schemes run binary protocols")
        if self.C < 0:
            raise ConfigError("C", "must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


_INT_FIELDS = {"N", "trials", "master_seed", "repetition", "workers", "alphabet"}
_BOOL_FIELDS = {"xlsx", "relaxed_termination"}
_FLOAT_FIELDS = {"C", "slope_bound"}
_STR_FIELDS = {"scheme", "adversary", "out", "order"}


def _typed(name: str, value):
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
    elif name in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true or false, got {value!r}")
    elif name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        value = float(value)
    elif name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
    elif name == "T_values":
        if not isinstance(value, list) or any(isinstance(t, bool) or not isinstance(t, int) for t in value):
            raise ConfigError(name, f"expected a list of integers, got {value!r}")
    elif name == "horizon":
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(name, f"expected an integer or null, got {value!r}")
    elif name == "params":
        if not isinstance(value, dict):
            raise ConfigError(name, f"expected an object, got {value!r}")
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "expected a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
    return ExperimentConfig(**{k: _typed(k, v) for k, v in raw.items()})


def load_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError("config", f"file '{path}' not found")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"'{path}' is not valid JSON: {e}") from e
    cfg = config_from_dict(raw)
    logger.debug(f"loaded configuration from {path}")
    return cfg


def parse_int_list(text: str, name: str = "T_values") -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(name, f"expected comma-separated integers, got '{text}'") from e


_OVERRIDES = (
    ("seed", "master_seed"),
    ("trials", "trials"),
    ("out", "out"),
    ("scheme", "scheme"),
    ("n", "N"),
    ("adversary", "adversary"),
    ("workers", "workers"),
    ("horizon", "horizon"),
    ("repetition", "repetition"),
)


def apply_cli_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    """Flags given on the command line win over file values."""
    values = cfg.to_dict()
    for flag, name in _OVERRIDES:
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    t_values = getattr(args, "t_values", None)
    if t_values:
        values["T_values"] = parse_int_list(t_values)
    if getattr(args, "xlsx", False):
        values["xlsx"] = True
    if getattr(args, "relaxed_termination", False):
        values["relaxed_termination"] = True
    return ExperimentConfig(**values)

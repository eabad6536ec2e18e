"""Run configuration: a strict JSON schema with lossless round trip.

Every section is a frozen dataclass.  Parsing rejects unknown keys, wrong
types and out-of-range values with :class:`ConfigError`; ``to_dict`` and
``from_dict`` are exact inverses.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigError",
    "GridConfig",
    "TQuadConfig",
    "LegendreConfig",
    "SolverConfig",
    "HessianConfig",
    "SweepConfig",
    "BisectConfig",
    "OutputConfig",
    "RunConfig",
    "parse_u_range",
]


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


def _number(name, value, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite")
    below = value <= lo if lo_open else value < lo
    above = value >= hi if hi_open else value > hi
    if below or above:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"{name}={value} outside {lb}{lo}, {hi}{rb}")
    return value


def _integer(name, value, lo, hi) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")
    return int(value)


def _u_list(name, values) -> tuple:
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"{name} must be a nonempty list of couplings")
    out = tuple(_number(f"{name}[{i}]", v, 0.0) for i, v in enumerate(values))
    if any(b < a for a, b in zip(out, out[1:])):
        raise ConfigError(f"{name} must be nondecreasing")
    return out


@dataclass(frozen=True)
class GridConfig:
    n: int = 200
    r_max: float = 60.0
    mapping: str = "uniform"
    sigma: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "n", _integer("grid.n", self.n, 8, 4000))
        object.__setattr__(self, "r_max", _number("grid.r_max", self.r_max, 0.0, lo_open=True))
        if self.mapping not in ("uniform", "exponential"):
            raise ConfigError(f"grid.mapping must be 'uniform' or 'exponential', got {self.mapping!r}")
        object.__setattr__(self, "sigma", _number("grid.sigma", self.sigma, 0.0, 50.0, lo_open=True))


@dataclass(frozen=True)
class TQuadConfig:
    m: int = 32

    def __post_init__(self):
        object.__setattr__(self, "m", _integer("tquad.m", self.m, 2, 256))


@dataclass(frozen=True)
class LegendreConfig:
    k_max: int = 16

    def __post_init__(self):
        object.__setattr__(self, "k_max", _integer("legendre.k_max", self.k_max, 0, 255))


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 300
    damping: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tol", _number("solver.tol", self.tol, 0.0, 1.0, lo_open=True))
        object.__setattr__(self, "max_iter", _integer("solver.max_iter", self.max_iter, 1, 100000))
        object.__setattr__(self, "damping", _number("solver.damping", self.damping, 0.0, 1.0, hi_open=True))


@dataclass(frozen=True)
class HessianConfig:
    l_max: int = 8
    n_eigs: int = 2
    zero_threshold: float = 1e-5
    U_values: tuple = (0.0, 0.05, 0.1, 0.2)

    def __post_init__(self):
        object.__setattr__(self, "l_max", _integer("hessian.l_max", self.l_max, 2, 24))
        object.__setattr__(self, "n_eigs", _integer("hessian.n_eigs", self.n_eigs, 1, 10))
        object.__setattr__(self, "zero_threshold",
                           _number("hessian.zero_threshold", self.zero_threshold, 0.0, 1.0, lo_open=True))
        object.__setattr__(self, "U_values", _u_list("hessian.U_values", self.U_values))


@dataclass(frozen=True)
class SweepConfig:
    """Either an explicit ``U_values`` list or ``range = [lo, hi]`` with ``step``."""

    U_values: tuple | None = None
    range: tuple | None = (0.0, 1.0)
    step: float | None = 0.25

    def __post_init__(self):
        if self.U_values is not None:
            if self.range is not None or self.step is not None:
                raise ConfigError("sweep takes either U_values or range+step, not both")
            object.__setattr__(self, "U_values", _u_list("sweep.U_values", self.U_values))
            return
        if self.range is None or self.step is None:
            raise ConfigError("sweep needs U_values or both range and step")
        if not isinstance(self.range, (list, tuple)) or len(self.range) != 2:
            raise ConfigError("sweep.range must be [lo, hi]")
        lo = _number("sweep.range[0]", self.range[0], 0.0)
        hi = _number("sweep.range[1]", self.range[1], lo)
        object.__setattr__(self, "range", (lo, hi))
        object.__setattr__(self, "step", _number("sweep.step", self.step, 0.0, lo_open=True))

    def values(self) -> tuple:
        if self.U_values is not None:
            return self.U_values
        lo, hi = self.range
        count = int(math.floor((hi - lo) / self.step + 1e-9)) + 1
        return tuple(float(v) for v in lo + self.step * np.arange(count))


@dataclass(frozen=True)
class BisectConfig:
    lo: float = 0.5
    hi: float = 4.0
    tol_U: float = 0.02

    def __post_init__(self):
        lo = _number("bisect.lo", self.lo, 0.0)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", _number("bisect.hi", self.hi, lo, lo_open=True))
        object.__setattr__(self, "tol_U", _number("bisect.tol_U", self.tol_U, 0.0, lo_open=True))


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("json", "csv")

    def __post_init__(self):
        if not isinstance(self.directory, str) or not self.directory:
            raise ConfigError("output.directory must be a nonempty string")
        if not isinstance(self.formats, (list, tuple)) or not self.formats:
            raise ConfigError("output.formats must be a nonempty list")
        bad = [f for f in self.formats if f not in ("json", "csv")]
        if bad:
            raise ConfigError(f"unknown output formats {bad}")
        object.__setattr__(self, "formats", tuple(self.formats))


_SECTIONS = {
    "grid": GridConfig,
    "tquad": TQuadConfig,
    "legendre": LegendreConfig,
    "solver": SolverConfig,
    "hessian": HessianConfig,
    "sweep": SweepConfig,
    "bisect": BisectConfig,
    "output": OutputConfig,
}


def _section(name: str, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    if cls is SweepConfig and "U_values" in kwargs:
        # an explicit list replaces the default range
        kwargs.setdefault("range", None)
        kwargs.setdefault("step", None)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    """Complete, validated configuration of one run."""

    grid: GridConfig = field(default_factory=GridConfig)
    tquad: TQuadConfig = field(default_factory=TQuadConfig)
    legendre: LegendreConfig = field(default_factory=LegendreConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    hessian: HessianConfig = field(default_factory=HessianConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    bisect: BisectConfig = field(default_factory=BisectConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.legendre.k_max >= self.tquad.m:
            raise ConfigError(f"legendre.k_max={self.legendre.k_max} must be below tquad.m={self.tquad.m}")
        if self.hessian.l_max > self.tquad.m - 1:
            raise ConfigError(f"hessian.l_max={self.hessian.l_max} exceeds tquad.m - 1")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
        return cls(**{k: _section(k, _SECTIONS[k], v) for k, v in data.items()})

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            sec = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(text)


def parse_u_range(text: str) -> tuple:
    """``"LO:HI:STEP"`` to the list ``LO, LO + STEP, ...`` up to ``HI`` inclusive."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--u-range expects LO:HI:STEP, got {text!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--u-range expects numbers, got {text!r}") from None
    return SweepConfig(range=(lo, hi), step=step).values()

"""Additive noise: W = X + R with zero-mean R of known variance."""

from __future__ import annotations

import math
import warnings
import zlib
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .dataset import Table
from .errors import DegenerateColumn, InvalidVariance

FAMILIES = ("gaussian", "uniform")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family, known variance (shared scalar or one per attribute) and seed."""

    family: str = "gaussian"
    variance: Union[float, tuple[float, ...]] = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if not isinstance(self.variance, (int, float)):
            object.__setattr__(self, "variance", tuple(float(v) for v in self.variance))
        for v in np.atleast_1d(self.variance):
            if not v >= 0 or not math.isfinite(v):
                raise InvalidVariance(f"noise variance must be finite and >= 0, got {v}")

    def variance_for(self, attribute_index: int) -> float:
        if isinstance(self.variance, tuple):
            return self.variance[attribute_index]
        return float(self.variance)


@dataclass(frozen=True, eq=False)
class PerturbedColumn:
    attribute_name: str
    values: np.ndarray
    noise_variance: float


@dataclass(frozen=True)
class Absolute:
    variance: float

    def to_dict(self) -> dict:
        return {"kind": "absolute", "value": self.variance}


@dataclass(frozen=True)
class RatioOfSampleVariance:
    ratio: float

    def to_dict(self) -> dict:
        return {"kind": "ratio", "value": self.ratio}


NoiseMode = Union[Absolute, RatioOfSampleVariance]


def noise_mode_from_dict(d: dict) -> NoiseMode:
    kind, value = d["kind"], float(d["value"])
    if value < 0 or not math.isfinite(value):
        raise InvalidVariance(f"noise {kind} must be finite and >= 0, got {value}")
    if kind == "absolute":
        return Absolute(value)
    if kind == "ratio":
        return RatioOfSampleVariance(value)
    raise ValueError(f"unknown noise mode {kind!r}")


def attribute_key(name: str) -> int:
    """Stable per-attribute stream key, independent of which site holds it."""
    return zlib.crc32(name.encode("utf-8"))


def _noise(n: int, family: str, variance: float, seed: int, attribute_index: int) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, attribute_index])))
    if family == "gaussian":
        return gen.standard_normal(n) * math.sqrt(variance)
    half_width = math.sqrt(3.0 * variance)
    return gen.uniform(-half_width, half_width, n)


def perturb_column(
    x: Sequence[float], spec: NoiseSpec, attribute_index: int, attribute_name: str = ""
) -> PerturbedColumn:
    """Return ``x + r`` with ``r`` drawn i.i.d. from ``spec``.

    The noise stream is keyed by ``(spec.seed, attribute_index)``; element
    ``t`` depends only on that key and ``t``. Zero variance returns the input
    values unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("column contains non-finite values")
    variance = spec.variance_for(attribute_index)
    if variance == 0.0:
        values = x.copy()
    else:
        values = x + _noise(len(x), spec.family, variance, spec.seed, attribute_index)
    values.setflags(write=False)
    return PerturbedColumn(attribute_name, values, variance)


def sample_variance(x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.var(x, ddof=1))


def resolve_variance(mode: NoiseMode, x: Sequence[float]) -> float:
    """Turn a noise mode into a concrete variance for column ``x``."""
    if isinstance(mode, Absolute):
        if mode.variance < 0:
            raise InvalidVariance(f"negative noise variance {mode.variance}")
        return float(mode.variance)
    if len(x) < 2:
        raise ValueError("ratio mode needs at least 2 values")
    if mode.ratio < 0:
        raise InvalidVariance(f"negative noise ratio {mode.ratio}")
    s2 = sample_variance(x)
    if s2 == 0.0:
        warnings.warn("constant column: ratio-mode noise variance is 0", DegenerateColumn, stacklevel=2)
    return mode.ratio * s2


def perturb_table(t: Table, mode: NoiseMode, family: str = "gaussian", seed: int = 0) -> list[PerturbedColumn]:
    """Perturb every attribute of ``t`` with its own resolved variance."""
    columns = []
    for j, name in enumerate(t.attribute_names):
        x = t.values[:, j]
        spec = NoiseSpec(family, resolve_variance(mode, x), seed)
        columns.append(perturb_column(x, spec, attribute_key(name), name))
    return columns

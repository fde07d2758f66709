"""Oscillator frequency-error modelling for random-walk FM clocks.

Only the ``h_-2`` (random-walk FM) term of the power-law model is carried:
over a one-minute capture it dominates the frequency instability of the
crystal oscillators of interest. Frequency errors are fractional (s/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InsufficientData(ValueError):
    pass


class UnsupportedExponent(ValueError):
    pass


@dataclass(frozen=True)
class ClockModel:
    h_minus2: float  # 1/s
    label: str = "custom"

    def __post_init__(self):
        if not self.h_minus2 >= 0:
            raise ValueError("h_minus2 must be non-negative")

    def increment_variance(self, dt: float) -> float:
        """Variance of one frequency-error step of length ``dt``."""
        return 2.0 * math.pi**2 * self.h_minus2 * dt

    def allan_variance(self, tau: float) -> float:
        return 2.0 * math.pi**2 / 3.0 * self.h_minus2 * tau


TCXO = ClockModel(3e-21, "TCXO")
LOW_OCXO = ClockModel(3e-23, "Low-quality OCXO")
OCXO = ClockModel(3e-25, "OCXO")
NO_CLOCK_NOISE = ClockModel(0.0, "ideal")

PRESETS = {"tcxo": TCXO, "low_ocxo": LOW_OCXO, "ocxo": OCXO, "ideal": NO_CLOCK_NOISE}


def clock_preset(name: str) -> ClockModel:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown clock preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True, eq=False)
class FrequencySeries:
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("frequency values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class StabilityMeasure:
    sigma_y: float
    tau: float
    T: float
    kind: str = "allan"  # or "two_sample_dead_time"

    def __post_init__(self):
        if self.kind not in ("allan", "two_sample_dead_time"):
            raise ValueError(f"unknown stability kind {self.kind!r}")
        if self.sigma_y < 0 or not self.tau > 0 or self.T < self.tau:
            raise ValueError("need sigma_y >= 0 and T >= tau > 0")


def random_walk_values(model: ClockModel, dt: float, n: int, rng: np.random.Generator,
                       size: tuple = ()) -> np.ndarray:
    """Zero-start random-walk frequency errors, shape ``size + (n,)``."""
    out = np.zeros(size + (n,))
    if n < 2:
        return out
    # always consume the stream so runs differing only in h_-2 share later draws
    steps = rng.normal(0.0, math.sqrt(model.increment_variance(dt)), size=size + (n - 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def synthesize_random_walk(model: ClockModel, dt: float, n: int, seed=None) -> FrequencySeries:
    if n < 1 or not dt > 0:
        raise ValueError("need n >= 1 and dt > 0")
    rng = np.random.default_rng(seed)
    return FrequencySeries(dt, random_walk_values(model, dt, n, rng))


def _samples_per_tau(dt: float, tau: float) -> int:
    m = tau / dt
    mi = int(round(m))
    if mi < 1 or abs(m - mi) > 1e-9 * max(1.0, m):
        raise ValueError(f"tau={tau} is not an integer multiple of dt={dt}")
    return mi


def allan_deviation(series: FrequencySeries, tau: float) -> StabilityMeasure:
    """Non-overlapping, zero-dead-time Allan deviation at averaging time ``tau``."""
    m = _samples_per_tau(series.dt, tau)
    if len(series) < 3 * m:
        raise InsufficientData(f"need at least {3 * m} samples for tau={tau}, have {len(series)}")
    k = len(series) // m
    means = series.values[: k * m].reshape(k, m).mean(axis=1)
    avar = 0.5 * np.mean(np.diff(means) ** 2)
    return StabilityMeasure(float(math.sqrt(avar)), tau, tau, "allan")


def _generalized_cov(t: float, mu: int) -> float:
    # generalized autocovariance of phase for sigma_y^2 ~ tau^mu
    t = abs(t)
    if mu == 0:
        return 0.0 if t == 0 else t * t * math.log(t)
    return t ** (mu + 2)


def b2_bias(r: float, mu: int) -> float:
    """Barnes' B2 bias function: ratio of the dead-time two-sample variance to the Allan variance.

    ``r = T / tau``; supported ``mu``: -1 (white FM), 0 (flicker FM), 1 (random-walk FM).
    """
    if mu not in (-1, 0, 1):
        raise UnsupportedExponent(f"mu={mu} not supported; use -1, 0 or 1")
    if r < 1:
        raise ValueError("r = T/tau must be >= 1")
    g = lambda t: _generalized_cov(t, mu)  # noqa: E731
    num = g(r + 1) + g(r - 1) - 2.0 * g(r) - 2.0 * g(1)
    den = g(2) - 4.0 * g(1)
    return num / den


def two_sample_to_allan(m: StabilityMeasure, mu: int) -> StabilityMeasure:
    if m.kind != "two_sample_dead_time":
        raise ValueError("input must be a two-sample deviation with dead time")
    b2 = b2_bias(m.T / m.tau, mu)
    return StabilityMeasure(m.sigma_y / math.sqrt(b2), m.tau, m.tau, "allan")


def two_sample_deviation(y1: float, y2: float, tau: float, T: float) -> StabilityMeasure:
    """Two-sample deviation from a single pair of tau-averaged frequencies ``T`` apart."""
    return StabilityMeasure(abs(y2 - y1) / math.sqrt(2.0), tau, T, "two_sample_dead_time")

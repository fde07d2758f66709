"""Interference power bookkeeping and jamming-efficiency figures.

Arithmetic is linear internally with dB at the interfaces. The interference
model is multi-access: a matched-spectrum interferer of received power
``P_I`` raises the effective noise density by ``I0 = (2/3) P_I T_C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import integrate

from .constants import T_CHIP_L1CA
from .geodesy import free_space_path_loss_db

N0_DEFAULT = -204.0  # dBW/Hz


class UnsupportedConfiguration(ValueError):
    pass


def db_to_lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin_to_db(x: float) -> float:
    if x <= 0.0:
        return -math.inf
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class LinkBudget:
    N0: float = N0_DEFAULT  # dBW/Hz
    T_C: float = T_CHIP_L1CA  # s
    G_r: float = 0.0  # dB
    L: float = 0.0  # dB
    P_I: float = -math.inf  # dBW received
    P_S: float = -math.inf  # dBW transmitted toward receiver
    I0: float = -math.inf  # dBW/Hz

    def __post_init__(self):
        if not self.T_C > 0:
            raise ValueError("chip interval must be positive")


@dataclass(frozen=True)
class JammerSpec:
    eta: float = 30.0  # dB-Hz, cold-start acquisition threshold
    style: str = "matched_spectrum"

    def __post_init__(self):
        if self.style not in ("matched_spectrum", "flat_4_over_Tc", "spoof_power_matched"):
            raise ValueError(f"unknown jammer style {self.style!r}")
        if not math.isfinite(self.eta):
            raise ValueError("eta must be finite")


def interference_density(P_I_dbw: float, T_C: float = T_CHIP_L1CA) -> float:
    """Matched-spectrum interference density ``(2/3) P_I T_C`` in dBW/Hz."""
    return P_I_dbw + lin_to_db(2.0 * T_C / 3.0)


def interference_power_from_cinr_drop(drop_db: float, N0: float = N0_DEFAULT,
                                      T_C: float = T_CHIP_L1CA) -> float:
    """Received interference power (dBW) that lowers C/(N0 + I0) by ``drop_db``.

    Returns ``-inf`` for a zero drop.
    """
    if drop_db < 0:
        raise ValueError("CINR drop must be non-negative")
    i0 = db_to_lin(N0) * (db_to_lin(drop_db) - 1.0)
    return lin_to_db(i0 * 3.0 / (2.0 * T_C))


def cinr_drop_from_interference(P_I_dbw: float, N0: float = N0_DEFAULT,
                                T_C: float = T_CHIP_L1CA) -> float:
    """Forward model: CINR degradation (dB) caused by received interference ``P_I``."""
    i0 = db_to_lin(interference_density(P_I_dbw, T_C)) if math.isfinite(P_I_dbw) else 0.0
    return lin_to_db(1.0 + i0 / db_to_lin(N0))


def transmit_power(P_I: float, G_r: float, L: float) -> tuple[float, float]:
    """Transmitted power toward the receiver, as ``(dBW, W)``."""
    p_s = P_I - G_r + L
    return p_s, db_to_lin(p_s)


def received_power(P_S: float, G_r: float, L: float) -> float:
    return P_S + G_r - L


def matched_jamming_ratio(eta: float, T_C: float = T_CHIP_L1CA) -> float:
    """Jamming-to-authentic power ratio (dB) a matched-spectrum jammer needs to push CINR below ``eta``."""
    return -(eta + lin_to_db(2.0 * T_C / 3.0))


def spoofing_efficiency_factor(eta: float, T_C: float = T_CHIP_L1CA) -> float:
    """How many times less power power-matched spoofing needs than matched-spectrum jamming."""
    return db_to_lin(matched_jamming_ratio(eta, T_C))


def matched_vs_flat_advantage(T_C: float = T_CHIP_L1CA, flat_span_multiple: float = 4.0) -> float:
    """Potency gain (dB) of matched-spectrum over flat jamming spanning ``flat_span_multiple / T_C`` Hz.

    ``T_C`` cancels; it is accepted for interface symmetry.
    """
    if flat_span_multiple <= 0:
        raise ValueError("span multiple must be positive")
    return lin_to_db((2.0 / 3.0) * flat_span_multiple)


_LOBES = {"none": 0.0, "main": 1.0, "main+2sides": 2.0, "main+4sides": 3.0}


def sinc2_power_within(half_width_chips: float) -> float:
    """Fraction of a rectangular-chip signal's power with ``|f T_C| <= half_width_chips``."""
    if half_width_chips <= 0:
        return 0.0
    k = int(math.floor(half_width_chips))
    breaks = [float(j) for j in range(1, k + 1) if j < half_width_chips]

    def f(x):
        s = 1.0 if x == 0.0 else math.sin(math.pi * x) / (math.pi * x)
        return s * s

    val, _ = integrate.quad(f, 0.0, half_width_chips, points=breaks or None,
                            epsabs=0.0, epsrel=1e-12, limit=max(200, 4 * len(breaks)))
    return 2.0 * val


def excision_attenuation(lobes_removed: str = "main+2sides") -> float:
    """Attenuation (dB) of a binary-code signal after excising the given spectral lobes.

    ``main+2sides`` removes the main lobe plus the first side lobe on each
    side, i.e. ``|f| <= 2/T_C`` measured null to null.
    """
    try:
        half = _LOBES[lobes_removed]
    except KeyError:
        raise UnsupportedConfiguration(
            f"unsupported lobe configuration {lobes_removed!r}; choose from {sorted(_LOBES)}") from None
    remaining = 1.0 - sinc2_power_within(half)
    return -lin_to_db(remaining)


def budget_report(drop_db: float = 6.0, range_m: float = 1_340e3, G_r: float = 3.0,
                  N0: float = N0_DEFAULT, T_C: float = T_CHIP_L1CA, freq_hz: float = 1575.42e6,
                  eta: float = 30.0, L: float | None = None) -> dict:
    """Whole chain: CINR drop to received and transmitted power, plus the jamming figures."""
    L = free_space_path_loss_db(range_m, freq_hz) if L is None else L
    p_i = interference_power_from_cinr_drop(drop_db, N0, T_C)
    p_s, watts = transmit_power(p_i, G_r, L)
    return {
        "inputs": {"cinr_drop_db": drop_db, "range_m": range_m, "G_r_db": G_r, "N0_dbw_hz": N0,
                   "T_C_s": T_C, "freq_hz": freq_hz, "eta_dbhz": eta},
        "path_loss_db": L,
        "I0_dbw_hz": interference_density(p_i, T_C),
        "P_I_dbw": p_i,
        "P_S_dbw": p_s,
        "P_S_w": watts,
        "matched_jamming_ratio_db": matched_jamming_ratio(eta, T_C),
        "spoofing_efficiency_factor": spoofing_efficiency_factor(eta, T_C),
        "matched_vs_flat_advantage_db": matched_vs_flat_advantage(T_C, 4.0),
        "excision_attenuation_db": excision_attenuation("main+2sides"),
    }

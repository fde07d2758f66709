"""Synthetic CINR observables for exercising the interference survey end to end.

A GPS-like constellation is viewed from an ISS-like receiver whose antenna
boresight points opposite the inertial velocity. Each SV has a constant
EIRP, so the raw CINR varies only through free-space loss and Gaussian
scatter; ground emitters depress CINR through the multi-access link budget
whenever they fall inside the receiver antenna beam.

Geometry and noise are split: ``survey_geometry`` is computed once and
``realize`` draws any number of independent noise replays over it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import BAND_FREQ, WGS84_A
from .geodesy import (
    ecef_to_geodetic_arrays,
    free_space_path_loss_db,
    geodetic_to_ecef_arrays,
    viewing_geometry_arrays,
)
from .linkbudget import N0_DEFAULT, interference_density
from .orbits import OrbitSpec, circular_eci_state, eci_to_ecef, eci_to_ecef_rotation
from .survey import BANDS, REGIONS, Observables

GNSS_RADIUS = 26_560e3
GNSS_INCLINATION = 55.0


@dataclass(frozen=True)
class Emitter:
    latitude: float
    longitude: float
    altitude: float = 0.0
    eirp_dbw: float = 19.0  # transmitted power toward the receiver
    bands: tuple = ("L1",)

    def ecef(self) -> np.ndarray:
        return geodetic_to_ecef_arrays(self.latitude, self.longitude, self.altitude)


@dataclass(frozen=True)
class SurveyConfig:
    duration: float = 86_400.0  # s
    rate: float = 1.0  # records per second per visible SV and band
    t0: float = 0.0
    receiver: OrbitSpec = OrbitSpec(408e3, 51.6, 0.0, 0.0, 0.0)
    n_sv: int = 31
    n_planes: int = 6
    z_r_keep: float = 20.0  # records beyond this receiver off-boresight angle are not reported
    cinr_sigma_db: float = 0.5
    compensated_level_db: tuple = (228.0, 225.0)  # per band, CINR + path loss, dB-Hz
    sv_level_spread_db: float = 2.0
    # (lat_min, lat_max, lon_min, lon_max) boxes tagged as ocean control
    ocean_boxes: tuple = ((-55.0, 0.0, -160.0, -90.0), (-55.0, -5.0, 60.0, 100.0))
    beam_half_angle: float = 45.0  # deg, receiver exposure cone for ground emitters
    receiver_gain_db: float = 3.0
    N0: float = N0_DEFAULT

    def __post_init__(self):
        if not self.duration > 0 or not self.rate > 0:
            raise ValueError("duration and rate must be positive")
        if not 1 <= self.n_planes <= self.n_sv:
            raise ValueError("need 1 <= n_planes <= n_sv")


def constellation(n_sv: int = 31, n_planes: int = 6):
    """``(raan, arg_latitude)`` in degrees for a Walker-like spread of ``n_sv`` SVs."""
    out = []
    for j in range(n_sv):
        plane = j % n_planes
        slot = j // n_planes
        per_plane = len(range(plane, n_sv, n_planes))
        out.append((60.0 * plane * 6 / n_planes % 360.0,
                    (360.0 * slot / per_plane + 15.0 * plane) % 360.0))
    return out


def sv_levels(cfg: SurveyConfig) -> np.ndarray:
    """Compensated CINR level (dB-Hz) per ``(sv, band)``; deterministic in the SV index."""
    j = np.arange(cfg.n_sv)
    spread = cfg.sv_level_spread_db * np.sin(1.7 * j + 0.3)
    return np.stack([lvl + spread for lvl in cfg.compensated_level_db], axis=1)


def _los_clear(rx, sv):
    # the segment rx -> sv must not pass below the ellipsoid's equatorial radius sphere
    d = sv - rx
    s = np.clip(-np.sum(rx * d, axis=-1) / np.sum(d * d, axis=-1), 0.0, 1.0)
    closest = rx + s[..., None] * d
    return np.linalg.norm(closest, axis=-1) > WGS84_A


@dataclass(eq=False)
class SurveyGeometry:
    """Band-independent receiver/SV geometry at each reporting epoch."""

    t: np.ndarray
    sv_id: np.ndarray
    z_r: np.ndarray
    z_s: np.ndarray
    r_sr: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    region: np.ndarray
    epoch_index: np.ndarray
    # per-epoch receiver state, for emitter exposure
    epoch_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rx_ecef: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    boresight: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __len__(self):
        return self.t.shape[0]


def tag_regions(lat, lon, boxes) -> np.ndarray:
    ocean = np.zeros(np.shape(lat), dtype=bool)
    for la0, la1, lo0, lo1 in boxes:
        ocean |= (lat >= la0) & (lat <= la1) & (lon >= lo0) & (lon <= lo1)
    return np.where(ocean, REGIONS.index("ocean_control"), REGIONS.index("survey")).astype(np.int8)


def survey_geometry(cfg: SurveyConfig, chunk: int = 20_000) -> SurveyGeometry:
    n = int(round(cfg.duration * cfg.rate))
    t_all = cfg.t0 + np.arange(n) / cfg.rate
    elems = constellation(cfg.n_sv, cfg.n_planes)
    parts = {k: [] for k in ("t", "sv", "zr", "zs", "r", "k")}
    rx_all, bs_all = [], []
    for i0 in range(0, n, chunk):
        t = t_all[i0:i0 + chunk]
        pos_i, vel_i = circular_eci_state(cfg.receiver.radius, cfg.receiver.inclination,
                                          cfg.receiver.raan, cfg.receiver.arg_latitude,
                                          cfg.receiver.epoch, t)
        rx, _ = eci_to_ecef(t, pos_i, vel_i)
        rot = eci_to_ecef_rotation(t)
        # antenna boresight opposite the inertial velocity
        bs = -np.einsum("kij,kj->ki", rot, vel_i)
        bs /= np.linalg.norm(bs, axis=1, keepdims=True)
        rx_all.append(rx)
        bs_all.append(bs)
        for j, (raan, argl) in enumerate(elems):
            sp, sv_ = circular_eci_state(GNSS_RADIUS, GNSS_INCLINATION, raan, argl, 0.0, t)
            sv, _ = eci_to_ecef(t, sp, sv_)
            z_r, z_s, r_sr = viewing_geometry_arrays(rx, bs, sv)
            keep = (z_r <= cfg.z_r_keep) & _los_clear(rx, sv)
            if not np.any(keep):
                continue
            idx = np.flatnonzero(keep)
            parts["t"].append(t[idx])
            parts["sv"].append(np.full(idx.size, j + 1))
            parts["zr"].append(z_r[idx])
            parts["zs"].append(z_s[idx])
            parts["r"].append(r_sr[idx])
            parts["k"].append(i0 + idx)
    rx_all = np.concatenate(rx_all)
    bs_all = np.concatenate(bs_all)
    cat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in parts.items()}
    order = np.lexsort((cat["sv"], cat["t"]))
    cat = {k: v[order] for k, v in cat.items()}
    k = cat["k"].astype(np.int64)
    lat, lon, _ = ecef_to_geodetic_arrays(rx_all) if n else (np.zeros(0),) * 3
    lat, lon = np.atleast_1d(lat), np.atleast_1d(lon)
    return SurveyGeometry(
        t=cat["t"], sv_id=cat["sv"].astype(np.int64), z_r=cat["zr"], z_s=cat["zs"], r_sr=cat["r"],
        lat=lat[k], lon=lon[k], region=tag_regions(lat[k], lon[k], cfg.ocean_boxes),
        epoch_index=k, epoch_t=t_all, rx_ecef=rx_all, boresight=bs_all,
    )


def emitter_drop_db(geom: SurveyGeometry, emitter: Emitter, band: str, cfg: SurveyConfig) -> np.ndarray:
    """CINR depression (dB) at each epoch due to ``emitter``; zero outside the beam or horizon."""
    if band not in emitter.bands:
        return np.zeros(geom.epoch_t.shape[0])
    e = emitter.ecef()
    los = e - geom.rx_ecef
    rng = np.linalg.norm(los, axis=1)
    cosang = np.sum(los * geom.boresight, axis=1) / rng
    in_beam = cosang >= math.cos(math.radians(cfg.beam_half_angle))
    lat, lon = math.radians(emitter.latitude), math.radians(emitter.longitude)
    up = np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])
    visible = (-los @ up) > 0.0  # receiver above the emitter's local horizon
    p_i = emitter.eirp_dbw + cfg.receiver_gain_db - free_space_path_loss_db(rng, BAND_FREQ[band])
    # vectorised cinr_drop_from_interference
    drop = 10.0 * np.log10(1.0 + 10.0 ** ((interference_density(p_i) - cfg.N0) / 10.0))
    return np.where(in_beam & visible, drop, 0.0)


def realize(geom: SurveyGeometry, cfg: SurveyConfig, rng: np.random.Generator, emitters=(),
            injected_drop_db: float = 0.0, noise: bool = True) -> Observables:
    """One noise replay over ``geom`` for both bands."""
    levels = sv_levels(cfg)
    parts = []
    for b, band in enumerate(BANDS):
        f = BAND_FREQ[band]
        comp = levels[geom.sv_id - 1, b]
        if noise:
            comp = comp + rng.normal(0.0, cfg.cinr_sigma_db, size=comp.shape)
        drop = np.zeros(geom.epoch_t.shape[0])
        for em in emitters:
            d = emitter_drop_db(geom, em, band, cfg)
            # drops combine through their interference densities
            drop = 10.0 * np.log10(10.0 ** (drop / 10.0) + 10.0 ** (d / 10.0) - 1.0)
        cinr = comp - free_space_path_loss_db(geom.r_sr, f) - drop[geom.epoch_index] - injected_drop_db
        parts.append(Observables(geom.t, geom.sv_id, np.full(len(geom), b), cinr, geom.r_sr,
                                 geom.z_r, geom.z_s, geom.lat, geom.lon, geom.region))
    return Observables.concat(parts)

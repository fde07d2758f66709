"""Synthetic LEO receiver trajectories and trajectory file I/O.

Receiver motion is a two-body circular orbit rotated into ECEF by a uniform
Earth rotation about the z axis, with ECI and ECEF aligned at ``t = 0``.
That is all a 60 second Doppler arc needs; no J2, drag or polar motion.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .constants import MU_EARTH, OMEGA_EARTH, WGS84_A
from .geodesy import (
    GeodeticPosition,
    ecef_to_geodetic_arrays,
    elevation_azimuth,
    enu_rotation,
    geodetic_to_ecef,
)

TRAJECTORY_HEADER = ["t", "x_m", "y_m", "z_m", "vx_ms", "vy_ms", "vz_ms", "clk_rate_ss"]


class NoVisibilityWindow(RuntimeError):
    pass


class MalformedRecord(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class NonUniformSampling(ValueError):
    pass


@dataclass(frozen=True)
class OrbitSpec:
    altitude: float = 408_000.0
    inclination: float = 51.6
    raan: float = 0.0
    arg_latitude: float = 0.0  # at epoch, deg
    epoch: float = 0.0

    def __post_init__(self):
        if not 200e3 < self.altitude < 2000e3:
            raise ValueError(f"altitude {self.altitude} m outside (200 km, 2000 km)")
        if not 0.0 <= self.inclination <= 180.0:
            raise ValueError("inclination must lie in [0, 180] deg")

    @property
    def radius(self) -> float:
        return WGS84_A + self.altitude

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.radius**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class ReceiverState:
    t: float
    position: np.ndarray
    velocity: np.ndarray
    clock_rate: float = 0.0


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pass:
    """Time-ordered receiver states sampled at a uniform interval.

    Stored column-wise: ``t (n,)``, ``position (n, 3)``, ``velocity (n, 3)``,
    ``clock_rate (n,)``.
    """

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    clock_rate: np.ndarray
    label: str = "pass"
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        t = _frozen(self.t)
        n = t.shape[0]
        pos = _frozen(np.reshape(self.position, (n, 3)))
        vel = _frozen(np.reshape(self.velocity, (n, 3)))
        clk = _frozen(np.broadcast_to(self.clock_rate, (n,)))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)
        object.__setattr__(self, "clock_rate", clk)
        if n == 0:
            raise ValueError("a pass needs at least one state")
        if n > 1:
            d = np.diff(t)
            if np.any(d <= 0):
                raise NonUniformSampling("timestamps must be strictly increasing")
            if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, np.max(np.abs(t))) + 1e-9:
                raise NonUniformSampling(
                    f"sampling interval varies between {d.min():.9g} and {d.max():.9g} s")

    def __len__(self):
        return self.t.shape[0]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self) > 1 else 0.0

    @property
    def states(self) -> list[ReceiverState]:
        return [ReceiverState(float(self.t[k]), self.position[k], self.velocity[k],
                              float(self.clock_rate[k])) for k in range(len(self))]

    def with_clock_rate(self, clock_rate) -> "Pass":
        return Pass(self.t, self.position, self.velocity, clock_rate, self.label)

    def relabel(self, label: str) -> "Pass":
        return Pass(self.t, self.position, self.velocity, self.clock_rate, label)

    def displacement(self) -> float:
        return float(np.linalg.norm(self.position[-1] - self.position[0]))


def circular_eci_state(radius: float, inclination: float, raan: float, arg_latitude: float,
                       epoch: float, t):
    """Inertial position and velocity on a circular orbit; angles in degrees.

    ``arg_latitude`` is the argument of latitude at ``epoch``.
    """
    if not radius > WGS84_A:
        raise ValueError("orbit radius must exceed the Earth's equatorial radius")
    n = math.sqrt(MU_EARTH / radius**3)
    u = math.radians(arg_latitude) + n * (np.asarray(t, dtype=float) - epoch)
    om = math.radians(raan)
    inc = math.radians(inclination)
    co, so = math.cos(om), math.sin(om)
    ci, si = math.cos(inc), math.sin(inc)
    cu, su = np.cos(u), np.sin(u)
    pos = radius * np.stack([co * cu - so * su * ci, so * cu + co * su * ci, su * si], axis=-1)
    vel = radius * n * np.stack([-co * su - so * cu * ci, -so * su + co * cu * ci, cu * si], axis=-1)
    return pos, vel


def _eci_state(spec: OrbitSpec, t):
    return circular_eci_state(spec.radius, spec.inclination, spec.raan, spec.arg_latitude,
                              spec.epoch, t)


def eci_to_ecef_rotation(t):
    """Rotation matrices (``(..., 3, 3)``) taking inertial vectors into ECEF at times ``t``."""
    theta = OMEGA_EARTH * np.asarray(t, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack([np.stack([c, s, z], -1), np.stack([-s, c, z], -1), np.stack([z, z, o], -1)], -2)


def eci_to_ecef(t, pos_eci, vel_eci):
    theta = OMEGA_EARTH * np.asarray(t, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    x, y, z = pos_eci[..., 0], pos_eci[..., 1], pos_eci[..., 2]
    # velocity relative to the rotating frame: v - omega x r
    vx = vel_eci[..., 0] + OMEGA_EARTH * y
    vy = vel_eci[..., 1] - OMEGA_EARTH * x
    vz = vel_eci[..., 2]
    pos = np.stack([c * x + s * y, -s * x + c * y, z], axis=-1)
    vel = np.stack([c * vx + s * vy, -s * vx + c * vy, vz], axis=-1)
    return pos, vel


def ecef_state(spec: OrbitSpec, t):
    """ECEF position and ECEF-relative velocity at times ``t``."""
    return eci_to_ecef(t, *_eci_state(spec, t))


def propagate_circular(spec: OrbitSpec, t0: float, duration: float, rate: float,
                       label: str = "pass", clock_rate=0.0) -> Pass:
    if duration < 0 or rate <= 0:
        raise ValueError("duration must be >= 0 and rate > 0")
    n = int(round(duration * rate)) + 1
    t = t0 + np.arange(n) / rate
    pos, vel = ecef_state(spec, t)
    return Pass(t, pos, vel, clock_rate, label)


def ground_track_azimuth(p: Pass, index: int | None = None) -> float:
    """Azimuth (deg east of north) of the ground-track direction at ``index`` (default mid-pass)."""
    k = len(p) // 2 if index is None else index
    lat, lon, _ = ecef_to_geodetic_arrays(p.position[k])
    enu = enu_rotation(float(lat), float(lon)) @ p.velocity[k]
    return math.degrees(math.atan2(enu[0], enu[1])) % 360.0


def _closest_approach_residuals(spec: OrbitSpec, target_ecef, t_ca, offset_m):
    pos, vel = ecef_state(spec, t_ca)
    d = pos - target_ecef
    range_rate = float(d @ vel / np.linalg.norm(d))
    lat, lon, _ = ecef_to_geodetic_arrays(pos)
    rot = enu_rotation(float(lat), float(lon))
    v = rot @ vel
    g = rot @ (target_ecef - pos)
    cross = (v[0] * g[1] - v[1] * g[0]) / math.hypot(v[0], v[1])
    # cross > 0: target to the left of travel, ground track passes to its right
    return range_rate, cross - offset_m


def design_orbit(target: GeodeticPosition, offset_m: float, ascending: bool = True,
                 t_ca: float = 0.0, altitude: float = 408_000.0,
                 inclination: float = 51.6) -> OrbitSpec:
    """Phase a circular orbit so it reaches closest approach to ``target`` at ``t_ca``.

    ``offset_m`` is the signed horizontal cross-track distance of the target
    from the ground track at closest approach; positive puts the target on the
    left of the direction of travel.
    """
    tgt = geodetic_to_ecef(target)
    inc = math.radians(inclination)
    lat = math.radians(target.latitude)
    ratio = max(-1.0, min(1.0, math.cos(inc) / math.cos(lat)))
    heading = math.asin(ratio) if ascending else math.pi - math.asin(ratio)
    # sub-point guess: step right of travel by offset along the sphere
    ang = offset_m / WGS84_A
    brg = heading + math.pi / 2.0
    lat_s = math.asin(math.sin(lat) * math.cos(ang) + math.cos(lat) * math.sin(ang) * math.cos(brg))
    lon_s = math.radians(target.longitude) + math.atan2(
        math.sin(brg) * math.sin(ang) * math.cos(lat), math.cos(ang) - math.sin(lat) * math.sin(lat_s))
    su = max(-1.0, min(1.0, math.sin(lat_s) / math.sin(inc)))
    u = math.asin(su) if ascending else math.pi - math.asin(su)
    lon_eci = lon_s + OMEGA_EARTH * t_ca
    raan0 = lon_eci - math.atan2(math.cos(inc) * math.sin(u), math.cos(u))

    def resid(x):
        spec = OrbitSpec(altitude, inclination, math.degrees(x[0]), math.degrees(x[1]), t_ca)
        rr, dc = _closest_approach_residuals(spec, tgt, t_ca, offset_m)
        return [rr, dc / 1000.0]

    sol = optimize.root(resid, [raan0, u], method="hybr", options={"xtol": 1e-13})
    if not sol.success or max(abs(v) for v in resid(sol.x)) > 1e-3:
        raise NoVisibilityWindow(f"could not phase orbit for offset {offset_m} m: {sol.message}")
    raan = (math.degrees(sol.x[0]) + 180.0) % 360.0 - 180.0
    argl = math.degrees(sol.x[1]) % 360.0
    return OrbitSpec(altitude, inclination, raan, argl, t_ca)


def pass_over_target(spec: OrbitSpec, target: GeodeticPosition, duration: float, rate: float,
                     min_elevation: float = 0.0, offset: float = 0.0,
                     search_span: float = 86400.0, label: str = "pass") -> Pass:
    """First capture window during which ``target`` sees the receiver above ``min_elevation``.

    The search starts half an orbit before ``spec.epoch``. The window is
    centred on the culmination of the first long-enough visibility arc,
    shifted by ``offset`` seconds and clipped to stay inside the arc.
    """
    step = 1.0
    t = spec.epoch - spec.period / 2.0 + np.arange(0.0, search_span, step)
    pos, _ = ecef_state(spec, t)
    el, _ = elevation_azimuth(target, pos)
    vis = el >= min_elevation
    edges = np.flatnonzero(np.diff(np.concatenate([[0], vis.astype(int), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        # stop is exclusive; require margin of one step on each side
        lo, hi = t[start] + step, t[stop - 1] - step
        if hi - lo < duration:
            continue
        t_peak = t[start + int(np.argmax(el[start:stop]))]
        t_start = min(max(t_peak - duration / 2.0 + offset, lo), hi - duration)
        p = propagate_circular(spec, t_start, duration, rate, label=label)
        el_p, _ = elevation_azimuth(target, p.position)
        if np.all(el_p >= min_elevation):
            return p
    raise NoVisibilityWindow(
        f"no {duration:g} s window above {min_elevation:g} deg within {search_span:g} s")


def save_trajectory(p: Pass, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for k in range(len(p)):
            w.writerow([repr(float(p.t[k]))]
                       + [repr(float(v)) for v in p.position[k]]
                       + [repr(float(v)) for v in p.velocity[k]]
                       + [repr(float(p.clock_rate[k]))])


def load_trajectory(path, label: str | None = None) -> Pass:
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRAJECTORY_HEADER:
            raise MalformedRecord(1, f"expected header {','.join(TRAJECTORY_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRAJECTORY_HEADER):
                raise MalformedRecord(lineno, f"expected {len(TRAJECTORY_HEADER)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise MalformedRecord(lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedRecord(lineno, "non-finite value")
            rows.append(vals)
    if not rows:
        raise MalformedRecord(2, "no data rows")
    a = np.array(rows)
    return Pass(a[:, 0], a[:, 1:4], a[:, 4:7], a[:, 7], label or path.stem)

"""WGS-84 frames, free-space path loss and antenna viewing geometry.

Angles are degrees at every public interface and radians internally.
ECEF vectors are plain ``numpy`` arrays of shape ``(3,)`` or ``(n, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import C, WGS84_A, WGS84_B, WGS84_E2, WGS84_EP2


class GeometryError(ValueError):
    """Input geometry is outside the domain where a transform is well posed."""


@dataclass(frozen=True)
class GeodeticPosition:
    latitude: float  # deg
    longitude: float  # deg
    altitude: float = 0.0  # m above the ellipsoid

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not math.isfinite(self.altitude):
            raise ValueError("altitude must be finite")
        # normalise longitude into [-180, 180)
        lon = (self.longitude + 180.0) % 360.0 - 180.0
        object.__setattr__(self, "longitude", lon)

    def to_ecef(self) -> np.ndarray:
        return geodetic_to_ecef(self)

    def as_tuple(self):
        return (self.latitude, self.longitude, self.altitude)


@dataclass(frozen=True)
class ViewingGeometry:
    z_r: float  # receiver antenna off-boresight angle, deg
    z_s: float  # GNSS satellite antenna off-boresight angle, deg
    r_sr: float  # satellite-to-receiver range, m


def geodetic_to_ecef(p: GeodeticPosition) -> np.ndarray:
    return np.asarray(geodetic_to_ecef_arrays(p.latitude, p.longitude, p.altitude), dtype=float)


def geodetic_to_ecef_arrays(lat_deg, lon_deg, alt_m):
    """Vectorised forward transform; returns ``(..., 3)``."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    slat = np.sin(lat)
    clat = np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat**2)
    x = (n + alt_m) * clat * np.cos(lon)
    y = (n + alt_m) * clat * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + alt_m) * slat
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def ecef_to_geodetic_arrays(xyz, tol=1e-12, max_iter=10):
    """Vectorised inverse transform returning ``(lat_deg, lon_deg, alt_m)``.

    Bowring's parametric-latitude start followed by fixed-point refinement
    of the geodetic latitude until the relative change is below ``tol``.
    """
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    norm = np.sqrt(x * x + y * y + z * z)
    if np.any(norm < 6.2e6):
        raise GeometryError("ECEF vector too close to the geocenter for a stable inverse")
    p = np.hypot(x, y)
    lon = np.arctan2(y, x)
    beta = np.arctan2(WGS84_A * z, WGS84_B * p)
    lat = np.arctan2(z + WGS84_EP2 * WGS84_B * np.sin(beta) ** 3,
                     p - WGS84_E2 * WGS84_A * np.cos(beta) ** 3)
    for _ in range(max_iter):
        slat = np.sin(lat)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat**2)
        # height via the numerically safe projection onto the normal
        h = p * np.cos(lat) + z * slat - WGS84_A * np.sqrt(1.0 - WGS84_E2 * slat**2)
        new = np.arctan2(z, p * (1.0 - WGS84_E2 * n / (n + h)))
        done = np.all(np.abs(new - lat) <= tol * np.maximum(1.0, np.abs(new)))
        lat = new
        if done:
            break
    slat = np.sin(lat)
    h = p * np.cos(lat) + z * slat - WGS84_A * np.sqrt(1.0 - WGS84_E2 * slat**2)
    lon_deg = (np.degrees(lon) + 180.0) % 360.0 - 180.0
    return np.degrees(lat), lon_deg, h


def ecef_to_geodetic(v) -> GeodeticPosition:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise GeometryError("expected a finite ECEF 3-vector")
    lat, lon, h = ecef_to_geodetic_arrays(v)
    return GeodeticPosition(float(lat), float(lon), float(h))


def enu_rotation(lat_deg: float, lon_deg: float) -> np.ndarray:
    """Rows are the local east, north and up unit vectors in ECEF."""
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def elevation_azimuth(observer: GeodeticPosition, targets_ecef) -> tuple[np.ndarray, np.ndarray]:
    """Elevation and azimuth (deg, azimuth east of north) of targets seen from ``observer``."""
    rot = enu_rotation(observer.latitude, observer.longitude)
    d = np.atleast_2d(targets_ecef) - geodetic_to_ecef(observer)
    enu = d @ rot.T
    horiz = np.hypot(enu[:, 0], enu[:, 1])
    el = np.degrees(np.arctan2(enu[:, 2], horiz))
    az = np.degrees(np.arctan2(enu[:, 0], enu[:, 1])) % 360.0
    return el, az


def free_space_path_loss_db(range_m, freq_hz):
    """Free-space path loss ``20 log10(4 pi r f / c)`` in dB."""
    r = np.asarray(range_m, dtype=float)
    f = np.asarray(freq_hz, dtype=float)
    if np.any(r <= 0) or np.any(f <= 0):
        raise ValueError("range and frequency must be positive")
    out = 20.0 * np.log10(4.0 * np.pi * r * f / C)
    return float(out) if out.ndim == 0 else out


def _angle_between(u, v):
    # atan2 form stays accurate near 0 and 180 deg
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def viewing_geometry_arrays(receiver_ecef, receiver_boresight_unit, satellite_ecef):
    """Vectorised off-boresight angles; returns ``(z_r, z_s, r_sr)`` arrays.

    The GNSS satellite antenna is taken to be nadir pointing.
    """
    rx = np.atleast_2d(np.asarray(receiver_ecef, dtype=float))
    bs = np.atleast_2d(np.asarray(receiver_boresight_unit, dtype=float))
    sv = np.atleast_2d(np.asarray(satellite_ecef, dtype=float))
    los = sv - rx
    r_sr = np.linalg.norm(los, axis=-1)
    z_r = _angle_between(bs, los)
    z_s = _angle_between(-sv, -los)
    return z_r, z_s, r_sr


def viewing_geometry(receiver_ecef, receiver_boresight_unit, satellite_ecef) -> ViewingGeometry:
    bs = np.asarray(receiver_boresight_unit, dtype=float)
    if abs(np.linalg.norm(bs) - 1.0) > 1e-6:
        raise ValueError("boresight must be a unit vector")
    if np.linalg.norm(receiver_ecef) >= np.linalg.norm(satellite_ecef):
        raise GeometryError("receiver must lie below the satellite orbit radius")
    z_r, z_s, r_sr = viewing_geometry_arrays(receiver_ecef, bs, satellite_ecef)
    return ViewingGeometry(float(z_r[0]), float(z_s[0]), float(r_sr[0]))

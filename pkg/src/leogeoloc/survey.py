"""Receiver-reported CINR interference survey.

Pipeline: accumulation-domain CINR with an analytic 2-bit noise floor,
free-space range compensation, ocean-referenced control statistics binned
by (SV, band, receiver off-boresight angle), a 3-sigma lower-tail test per
one-second window and band, and per-cell event ratios.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .constants import BAND_FREQ
from .geodesy import free_space_path_loss_db

CINR_FLOOR_DBHZ = -10.0
OBSERVABLES_HEADER = ["t", "sv_id", "band", "cinr_dbhz", "r_sr_m", "z_r_deg", "z_s_deg",
                      "lat_deg", "lon_deg", "region"]
BANDS = ("L1", "L2")
REGIONS = ("ocean_control", "survey")


class UnusableBin(KeyError):
    pass


# ------------------------------------------------------------ CINR


@dataclass(frozen=True)
class QuantizationSpec:
    a0: float
    a1: float
    b0: float
    b1: float
    p_a0: float
    p_a1: float
    p_b0: float
    p_b1: float
    N: float

    def __post_init__(self):
        if abs(self.p_a0 + self.p_a1 - 1.0) > 1e-6 or abs(self.p_b0 + self.p_b1 - 1.0) > 1e-6:
            raise ValueError("quantization probabilities must sum to 1")
        if min(self.a0, self.a1, self.b0, self.b1) <= 0 or self.N <= 0:
            raise ValueError("magnitudes and N must be positive")


FOTON_QUANTIZATION = QuantizationSpec(
    a0=1.0, a1=3.0, b0=1.0, b1=3.0,
    p_a0=0.68269, p_a1=0.31731, p_b0=0.38418, p_b1=0.61582,
    N=5714.286,
)


def noise_floor(q: QuantizationSpec) -> float:
    """Noise floor ``2 sigma_IQ^2`` of the prompt correlator in front-end units squared."""
    front = q.a0**2 * q.p_a0 + q.a1**2 * q.p_a1
    replica = q.b0**2 * q.p_b0 + q.b1**2 * q.p_b1
    return 2.0 * q.N * front * replica


@dataclass(frozen=True)
class CinrFilterState:
    smoothed_power: float = 0.0
    T_a: float = 0.01
    tau_filter: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.K <= 1.0:
            raise ValueError("filter gain T_a / tau must lie in (0, 1]")
        if self.smoothed_power < 0:
            raise ValueError("smoothed power must be non-negative")

    @property
    def K(self) -> float:
        return self.T_a / self.tau_filter


def cinr_from_power(power, noise_floor_units, T_a):
    """CINR in dB-Hz from smoothed ``E[I^2 + Q^2]``; non-positive values map to the floor."""
    lin = (np.asarray(power, dtype=float) / noise_floor_units - 1.0) / T_a
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(lin > 0, 10.0 * np.log10(np.where(lin > 0, lin, 1.0)), CINR_FLOOR_DBHZ)
    return float(out) if out.ndim == 0 else out


def cinr_update(state: CinrFilterState, I_k: float, Q_k: float, noise_floor_units: float):
    """One Euler low-pass step of ``E[I^2+Q^2]``; returns ``(new_state, cinr_dbhz)``."""
    p = state.smoothed_power + state.K * (I_k * I_k + Q_k * Q_k - state.smoothed_power)
    new = replace(state, smoothed_power=max(p, 0.0))
    return new, cinr_from_power(new.smoothed_power, noise_floor_units, state.T_a)


def cinr_series(I, Q, noise_floor_units: float, T_a: float = 0.01, tau_filter: float = 0.5,
                initial_power: float = 0.0):
    """Vectorised equivalent of repeated ``cinr_update``; returns ``(smoothed, cinr_dbhz)``."""
    K = T_a / tau_filter
    x = np.asarray(I, dtype=float) ** 2 + np.asarray(Q, dtype=float) ** 2
    zi = np.array([(1.0 - K) * initial_power])
    smoothed, _ = signal.lfilter([K], [1.0, -(1.0 - K)], x, zi=zi)
    return smoothed, cinr_from_power(smoothed, noise_floor_units, T_a)


# ---------------------------------------------------------- records


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    sv_id: int
    band: str
    cinr: float
    r_sr: float
    z_r: float
    z_s: float
    ground_lat: float
    ground_lon: float
    region: str = "survey"

    def __post_init__(self):
        if self.band not in BANDS:
            raise ValueError(f"band must be one of {BANDS}")
        if self.z_r < 0:
            raise ValueError("z_r must be non-negative")
        if self.region not in REGIONS:
            raise ValueError(f"region must be one of {REGIONS}")


@dataclass(eq=False)
class Observables:
    """Column-oriented batch of observable records."""

    t: np.ndarray
    sv_id: np.ndarray
    band: np.ndarray  # 0 = L1, 1 = L2
    cinr: np.ndarray
    r_sr: np.ndarray
    z_r: np.ndarray
    z_s: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    region: np.ndarray  # 0 = ocean_control, 1 = survey

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = self.t.shape[0]
        for name, dtype in (("sv_id", np.int64), ("band", np.int8), ("cinr", float), ("r_sr", float),
                            ("z_r", float), ("z_s", float), ("lat", float), ("lon", float),
                            ("region", np.int8)):
            a = np.asarray(getattr(self, name), dtype=dtype)
            a = np.broadcast_to(a, (n,)).copy() if a.ndim == 0 else a
            if a.shape != (n,):
                raise ValueError(f"column {name} has shape {a.shape}, expected ({n},)")
            setattr(self, name, a)

    def __len__(self):
        return self.t.shape[0]

    def take(self, idx) -> "Observables":
        return Observables(*(getattr(self, f)[idx] for f in _COLUMNS))

    @classmethod
    def concat(cls, parts) -> "Observables":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in _COLUMNS))

    @classmethod
    def empty(cls) -> "Observables":
        return cls(*([np.zeros(0)] * len(_COLUMNS)))

    @classmethod
    def from_records(cls, records) -> "Observables":
        records = list(records)
        return cls(
            [r.t for r in records], [r.sv_id for r in records],
            [BANDS.index(r.band) for r in records], [r.cinr for r in records],
            [r.r_sr for r in records], [r.z_r for r in records], [r.z_s for r in records],
            [r.ground_lat for r in records], [r.ground_lon for r in records],
            [REGIONS.index(r.region) for r in records],
        )

    def records(self) -> list[ObservableRecord]:
        return [ObservableRecord(float(self.t[i]), int(self.sv_id[i]), BANDS[self.band[i]],
                                 float(self.cinr[i]), float(self.r_sr[i]), float(self.z_r[i]),
                                 float(self.z_s[i]), float(self.lat[i]), float(self.lon[i]),
                                 REGIONS[self.region[i]]) for i in range(len(self))]


_COLUMNS = ("t", "sv_id", "band", "cinr", "r_sr", "z_r", "z_s", "lat", "lon", "region")


def band_frequency(band) -> np.ndarray:
    freqs = np.array([BAND_FREQ["L1"], BAND_FREQ["L2"]])
    return freqs[np.asarray(band, dtype=int)]


def range_compensate(rec: ObservableRecord) -> float:
    """Range-compensated CINR (dB-Hz): the raw value plus the band's free-space path loss."""
    if rec.r_sr <= 0:
        raise ValueError("range must be positive")
    return rec.cinr + free_space_path_loss_db(rec.r_sr, BAND_FREQ[rec.band])


def range_compensate_all(obs: Observables) -> np.ndarray:
    if len(obs) == 0:
        return np.zeros(0)
    return obs.cinr + free_space_path_loss_db(obs.r_sr, band_frequency(obs.band))


# ---------------------------------------------------------- control


@dataclass
class ControlGrid:
    """Per-(SV, band, z_r bin) count/mean/M2 triples of compensated CINR."""

    bin_width: float = 1.0
    z_max: float = 15.0
    min_count: int = 100
    bins: dict = field(default_factory=dict)  # (sv, band_idx, zbin) -> [count, mean, M2]

    @property
    def n_zbins(self) -> int:
        return int(round(self.z_max / self.bin_width))

    def zbin(self, z_r):
        z = np.asarray(z_r, dtype=float)
        return np.minimum(np.floor(z / self.bin_width).astype(np.int64), self.n_zbins - 1)

    def in_window(self, z_r):
        z = np.asarray(z_r, dtype=float)
        return (z >= 0.0) & (z <= self.z_max)

    def stats(self, sv_id: int, band, zbin: int):
        """``(count, mean, variance)``; variance is NaN with fewer than two samples."""
        b = band if isinstance(band, (int, np.integer)) else BANDS.index(band)
        n, mean, m2 = self.bins.get((int(sv_id), int(b), int(zbin)), (0, math.nan, 0.0))
        var = m2 / (n - 1) if n > 1 else math.nan
        return n, mean, var

    def usable(self, sv_id, band, zbin) -> bool:
        n, _, var = self.stats(sv_id, band, zbin)
        return n >= max(self.min_count, 2) and var > 0

    def add(self, key, count, mean, m2):
        """Chan's pairwise merge of one partial (count, mean, M2) triple."""
        if count == 0:
            return
        if key not in self.bins:
            self.bins[key] = [int(count), float(mean), float(m2)]
            return
        n_a, mean_a, m2_a = self.bins[key]
        n = n_a + count
        delta = mean - mean_a
        self.bins[key] = [n, mean_a + delta * count / n, m2_a + m2 + delta * delta * n_a * count / n]

    def merge(self, other: "ControlGrid") -> "ControlGrid":
        if (other.bin_width, other.z_max) != (self.bin_width, self.z_max):
            raise ValueError("cannot merge grids with different binning")
        out = ControlGrid(self.bin_width, self.z_max, self.min_count,
                          {k: list(v) for k, v in self.bins.items()})
        for k in sorted(other.bins):
            out.add(k, *other.bins[k])
        return out

    def lookup(self, sv_id, band, zbin):
        """Vectorised ``(mean, std, usable)`` arrays for record keys."""
        sv_id = np.asarray(sv_id)
        mean = np.full(sv_id.shape, np.nan)
        std = np.full(sv_id.shape, np.nan)
        ok = np.zeros(sv_id.shape, dtype=bool)
        keys = np.stack([sv_id, np.asarray(band, dtype=np.int64), np.asarray(zbin)], axis=-1)
        uniq, inv = np.unique(keys.reshape(-1, 3), axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        for j, k in enumerate(uniq):
            n, m, v = self.stats(*k)
            if n >= max(self.min_count, 2) and v > 0:
                sel = inv == j
                mean.reshape(-1)[sel] = m
                std.reshape(-1)[sel] = math.sqrt(v)
                ok.reshape(-1)[sel] = True
        return mean, std, ok

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "bin_width_deg": self.bin_width,
            "z_max_deg": self.z_max,
            "min_count": self.min_count,
            "bins": [
                {"sv_id": k[0], "band": BANDS[k[1]], "zbin": k[2], "count": v[0], "mean": v[1],
                 "variance": (v[2] / (v[0] - 1)) if v[0] > 1 else None, "m2": v[2]}
                for k, v in sorted(self.bins.items())
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ControlGrid":
        if d.get("schema") != 1:
            raise ValueError(f"unsupported control grid schema {d.get('schema')!r}")
        g = cls(d["bin_width_deg"], d["z_max_deg"], d["min_count"])
        for b in d["bins"]:
            g.bins[(int(b["sv_id"]), BANDS.index(b["band"]), int(b["zbin"]))] = [
                int(b["count"]), float(b["mean"]), float(b["m2"])]
        return g

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ControlGrid":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_control_grid(records, bin_width: float = 1.0, z_max: float = 15.0,
                       min_count: int = 100) -> ControlGrid:
    """Control statistics from ``ocean_control`` records inside the z_r window; others are skipped."""
    obs = records if isinstance(records, Observables) else Observables.from_records(records)
    grid = ControlGrid(bin_width, z_max, min_count)
    keep = (obs.region == REGIONS.index("ocean_control")) & grid.in_window(obs.z_r)
    if not np.any(keep):
        return grid
    sub = obs.take(keep)
    c = range_compensate_all(sub)
    keys = np.stack([sub.sv_id, sub.band.astype(np.int64), grid.zbin(sub.z_r)], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    counts = np.bincount(inv)
    means = np.bincount(inv, weights=c) / counts
    m2 = np.bincount(inv, weights=(c - means[inv]) ** 2)
    for k, n, m, s in zip(uniq, counts, means, m2):
        grid.add((int(k[0]), int(k[1]), int(k[2])), int(n), float(m), float(s))
    return grid


# --------------------------------------------------------- detection


THRESHOLD_SIGMA = 3.0


def standardized_scores(obs: Observables, grid: ControlGrid):
    """``(z, usable)``: compensated CINR standardised by its control bin."""
    c = range_compensate_all(obs)
    mean, std, ok = grid.lookup(obs.sv_id, obs.band, grid.zbin(obs.z_r))
    ok &= grid.in_window(obs.z_r)
    z = np.where(ok, (c - np.where(ok, mean, 0.0)) / np.where(ok, std, 1.0), np.nan)
    return z, ok


def test_statistic(records, grid: ControlGrid, band: str) -> float:
    """Window statistic: the mean standardised score scaled by sqrt(n), so it is N(0, 1) under H0."""
    obs = records if isinstance(records, Observables) else Observables.from_records(records)
    b = BANDS.index(band)
    sel = obs.band == b
    if not np.any(sel):
        raise ValueError(f"no {band} records in window")
    sub = obs.take(sel)
    if not np.all(grid.in_window(sub.z_r)):
        raise ValueError("records outside the z_r window cannot be tested")
    z, ok = standardized_scores(sub, grid)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        raise UnusableBin((int(sub.sv_id[i]), band, int(grid.zbin(sub.z_r[i]))))
    return float(np.sum(z) / math.sqrt(len(z)))


def detect(records, grid: ControlGrid, band: str) -> str:
    """``"H1"`` (interference) if the window statistic falls below -3, else ``"H0"``."""
    return "H1" if test_statistic(records, grid, band) < -THRESHOLD_SIGMA else "H0"


@dataclass(eq=False)
class WindowTests:
    """Vectorised outcome of one hypothesis test per (window, band)."""

    window: np.ndarray
    band: np.ndarray
    n: np.ndarray
    statistic: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    @property
    def decision(self) -> np.ndarray:
        """True where H1 is declared."""
        return self.statistic < -THRESHOLD_SIGMA

    def __len__(self):
        return self.window.shape[0]


def detect_windows(obs: Observables, grid: ControlGrid, window_s: float = 1.0) -> WindowTests:
    """Run the test over every (window, band) group of testable survey-side records.

    Records outside the z_r window or in unusable bins are dropped first.
    """
    z, ok = standardized_scores(obs, grid)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        e = np.zeros(0)
        return WindowTests(e.astype(np.int64), e.astype(np.int8), e.astype(np.int64), e, e, e)
    win = np.floor(obs.t[idx] / window_s).astype(np.int64)
    key = np.stack([win, obs.band[idx].astype(np.int64)], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    n = np.bincount(inv)
    s = np.bincount(inv, weights=z[idx]) / np.sqrt(n)
    lat = np.bincount(inv, weights=obs.lat[idx]) / n
    # longitude mean via unit vectors to survive the antimeridian
    lr = np.radians(obs.lon[idx])
    lon = np.degrees(np.arctan2(np.bincount(inv, weights=np.sin(lr)), np.bincount(inv, weights=np.cos(lr))))
    return WindowTests(uniq[:, 0], uniq[:, 1].astype(np.int8), n, s, lat, lon)


# ------------------------------------------------------------ maps


@dataclass(frozen=True)
class DetectionResult:
    cell: tuple  # (lat index, lon index) on the cell grid
    band: str
    tests: int
    events: int
    ratio: float
    cell_deg: float = 1.0

    def __post_init__(self):
        if not 0 <= self.events <= self.tests:
            raise ValueError("events must lie in [0, tests]")

    @property
    def bounds(self):
        """``(lat_min, lon_min, lat_max, lon_max)`` in degrees."""
        i, j = self.cell
        d = self.cell_deg
        return (i * d, j * d, (i + 1) * d, (j + 1) * d)


def hotspot_map(lat, lon, band, decision, cell_deg: float = 1.0) -> list[DetectionResult]:
    """Per-cell, per-band hypothesis-test and event counts.

    ``band`` entries are band names or indices; ``decision`` is True for H1.
    """
    lat = np.asarray(lat, dtype=float)
    lon = (np.asarray(lon, dtype=float) + 180.0) % 360.0 - 180.0
    b = np.array([BANDS.index(x) if isinstance(x, str) else int(x) for x in np.atleast_1d(band)],
                 dtype=np.int64) if lat.size else np.zeros(0, dtype=np.int64)
    b = np.broadcast_to(b, lat.shape)
    dec = np.asarray(decision, dtype=bool)
    if lat.size == 0:
        return []
    ci = np.floor(lat / cell_deg).astype(np.int64)
    cj = np.floor(lon / cell_deg).astype(np.int64)
    key = np.stack([ci, cj, b], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    tests = np.bincount(inv)
    events = np.bincount(inv, weights=dec.astype(float)).astype(np.int64)
    return [DetectionResult((int(k[0]), int(k[1])), BANDS[int(k[2])], int(t), int(e), float(e / t),
                            cell_deg)
            for k, t, e in zip(uniq, tests, events)]


def hotspot_map_from_tests(tests: WindowTests, cell_deg: float = 1.0) -> list[DetectionResult]:
    return hotspot_map(tests.lat, tests.lon, tests.band, tests.decision, cell_deg)


def select_hotspots(results, min_events: int = 3, min_ratio: float = 0.5) -> list[DetectionResult]:
    """Cells whose event counts cannot plausibly be false alarms at the 3-sigma threshold."""
    return [r for r in results if r.events >= min_events and r.ratio >= min_ratio]


def hotspots_geojson(results) -> dict:
    feats = []
    for r in results:
        la0, lo0, la1, lo1 = r.bounds
        ring = [[lo0, la0], [lo1, la0], [lo1, la1], [lo0, la1], [lo0, la0]]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"band": r.band, "tests": r.tests, "events": r.events, "ratio": r.ratio},
        })
    return {"type": "FeatureCollection", "features": feats}


def write_hotspots_csv(results, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lat_min", "lon_min", "lat_max", "lon_max", "band", "tests", "events", "ratio"])
        for r in results:
            w.writerow([*(repr(float(x)) for x in r.bounds), r.band, r.tests, r.events, repr(r.ratio)])


# ------------------------------------------------------------- I/O


def write_observables(obs: Observables, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSERVABLES_HEADER)
        for i in range(len(obs)):
            w.writerow([repr(float(obs.t[i])), int(obs.sv_id[i]), BANDS[obs.band[i]],
                        repr(float(obs.cinr[i])), repr(float(obs.r_sr[i])), repr(float(obs.z_r[i])),
                        repr(float(obs.z_s[i])), repr(float(obs.lat[i])), repr(float(obs.lon[i])),
                        REGIONS[obs.region[i]]])


def read_observables(path) -> Observables:
    from .orbits import MalformedRecord

    cols = {k: [] for k in _COLUMNS}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != OBSERVABLES_HEADER:
            raise MalformedRecord(1, f"expected header {','.join(OBSERVABLES_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(OBSERVABLES_HEADER):
                raise MalformedRecord(lineno, f"expected {len(OBSERVABLES_HEADER)} fields")
            try:
                band = BANDS.index(row[2].strip())
                region = REGIONS.index(row[9].strip())
                vals = [float(row[i]) for i in (0, 3, 4, 5, 6, 7, 8)]
                sv = int(row[1])
            except ValueError as exc:
                raise MalformedRecord(lineno, str(exc)) from None
            cols["t"].append(vals[0])
            cols["sv_id"].append(sv)
            cols["band"].append(band)
            cols["cinr"].append(vals[1])
            cols["r_sr"].append(vals[2])
            cols["z_r"].append(vals[3])
            cols["z_s"].append(vals[4])
            cols["lat"].append(vals[5])
            cols["lon"].append(vals[6])
            cols["region"].append(region)
    return Observables(*(cols[k] for k in _COLUMNS))

"""Doppler measurement model and batch ML geolocation of a static emitter.

The estimator solves a weighted nonlinear least-squares problem for the
transmitter ECEF position and one constant transmitter clock frequency
error per capture, optionally constrained by an altitude pseudo-measurement.
Internally position is parameterised as east/north/up offsets about the
current iterate and each clock rate as ``c * dtdot`` (m/s), which keeps the
normal matrix well scaled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clocks import ClockModel, random_walk_values
from .constants import C, F_L1
from .geodesy import (
    GeodeticPosition,
    ecef_to_geodetic,
    ecef_to_geodetic_arrays,
    enu_rotation,
    geodetic_to_ecef,
    geodetic_to_ecef_arrays,
)
from .orbits import MalformedRecord, Pass, ReceiverState, load_trajectory

CAPTURE_HEADER = ["t", "f_d_hz", "sigma_hz"]


class SingularGeometry(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, msg, solution=None):
        super().__init__(msg)
        self.solution = solution


@dataclass(frozen=True)
class TransmitterState:
    position: GeodeticPosition
    clock_rate_per_pass: dict = field(default_factory=dict)
    frequency: float = F_L1

    @property
    def wavelength(self) -> float:
        return C / self.frequency

    def clock_rate(self, label: str) -> float:
        return float(self.clock_rate_per_pass.get(label, 0.0))


@dataclass(frozen=True)
class DopplerMeasurement:
    t: float
    f_d: float
    sigma: float


@dataclass(frozen=True, eq=False)
class PassCapture:
    """Doppler measurements aligned one-to-one with the states of ``pass_``."""

    pass_: Pass
    f_d: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        n = len(self.pass_)
        f = np.array(self.f_d, dtype=float).reshape(-1)
        s = np.array(np.broadcast_to(self.sigma, f.shape), dtype=float)
        if f.shape[0] != n:
            raise ValueError(f"{f.shape[0]} measurements for {n} receiver states")
        if np.any(s <= 0):
            raise ValueError("measurement sigma must be positive")
        f.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "f_d", f)
        object.__setattr__(self, "sigma", s)

    @property
    def label(self) -> str:
        return self.pass_.label

    @property
    def t(self) -> np.ndarray:
        return self.pass_.t

    @property
    def measurements(self) -> list[DopplerMeasurement]:
        return [DopplerMeasurement(float(t), float(f), float(s))
                for t, f, s in zip(self.t, self.f_d, self.sigma)]

    def __len__(self):
        return self.f_d.shape[0]


@dataclass(frozen=True)
class ErrorEllipse:
    a: float
    b: float
    orientation: float  # deg east of north, major axis, in [0, 180)
    confidence: float


@dataclass(eq=False)
class GeolocationSolution:
    transmitter: TransmitterState
    position_ecef: np.ndarray
    labels: list
    covariance: np.ndarray  # (east m, north m, up m, dtdot per pass)
    ellipse95: ErrorEllipse
    ellipse99: ErrorEllipse
    postfit_residuals: dict
    converged: bool
    iterations: int
    cost: float

    @property
    def horizontal_covariance(self) -> np.ndarray:
        return self.covariance[:2, :2]


# ---------------------------------------------------------------- model


def doppler_model(tx_ecef, tx_clock_rate, rx_pos, rx_vel, rx_clock_rate, frequency=F_L1):
    """Vectorised Doppler (Hz) for receiver states ``rx_pos``/``rx_vel`` of shape ``(n, 3)``."""
    d = rx_pos - tx_ecef
    rng = np.linalg.norm(d, axis=-1)
    if np.any(rng <= 0):
        raise ValueError("transmitter and receiver positions coincide")
    range_rate = np.sum(d * rx_vel, axis=-1) / rng
    lam = C / frequency
    return (-range_rate - C * (rx_clock_rate - tx_clock_rate * (1.0 - rx_clock_rate))) / lam


def predict_doppler(tx_pos: GeodeticPosition, tx_clock_rate: float, rx: ReceiverState,
                    frequency: float = F_L1) -> float:
    f = doppler_model(geodetic_to_ecef(tx_pos), tx_clock_rate, np.atleast_2d(rx.position),
                      np.atleast_2d(rx.velocity), np.atleast_1d(rx.clock_rate), frequency)
    return float(f[0])


def predict_pass(tx: TransmitterState, p: Pass, tx_clock_rate=None) -> np.ndarray:
    clk = tx.clock_rate(p.label) if tx_clock_rate is None else tx_clock_rate
    return doppler_model(geodetic_to_ecef(tx.position), clk, p.position, p.velocity,
                         p.clock_rate, tx.frequency)


def synthesize_capture(tx: TransmitterState, p: Pass, clock_model: ClockModel, w_sigma: float,
                       seed=None, sigma: float | None = None) -> PassCapture:
    """Noisy Doppler for ``p``: true model with a random-walk transmitter clock plus white noise.

    The clock walk starts at the transmitter's nominal rate for this pass.
    ``sigma`` is the recorded measurement sigma; it defaults to ``w_sigma``
    (or 1 Hz when no white noise is injected).
    """
    rng = np.random.default_rng(seed)
    walk = random_walk_values(clock_model, p.dt if len(p) > 1 else 1.0, len(p), rng)
    f = predict_pass(tx, p, tx.clock_rate(p.label) + walk)
    if w_sigma > 0:
        f = f + rng.normal(0.0, w_sigma, size=f.shape)
    if sigma is None:
        sigma = w_sigma if w_sigma > 0 else 1.0
    return PassCapture(p, f, sigma)


# ------------------------------------------------------------ estimator


def _jacobian_blocks(tx_ecef, cap: PassCapture, frequency):
    """Predicted Doppler at zero tx clock, d f/d position (ECEF) and d f/d (c*dtdot)."""
    p = cap.pass_
    d = p.position - tx_ecef
    rng = np.linalg.norm(d, axis=1)
    u = d / rng[:, None]
    rr = np.sum(u * p.velocity, axis=1)
    lam = C / frequency
    f0 = (-rr - C * p.clock_rate) / lam
    # d(range_rate)/d(tx) = -(v - u (u.v)) / rho
    dpos = (p.velocity - u * rr[:, None]) / (rng[:, None] * lam)
    dclk = (1.0 - p.clock_rate) / lam
    return f0, dpos, dclk


class _Problem:
    def __init__(self, captures, altitude_prior, frequency):
        self.captures = list(captures)
        self.k = len(self.captures)
        self.frequency = frequency
        self.altitude_prior = altitude_prior
        self.w = [1.0 / c.sigma for c in self.captures]

    def residuals(self, tx_ecef, clk_ms):
        """Whitened residuals (measured - predicted) and Jacobian in (ENU m, m/s) coordinates."""
        geo = ecef_to_geodetic(tx_ecef)
        rot = enu_rotation(geo.latitude, geo.longitude)
        rows, jacs = [], []
        n_par = 3 + self.k
        for i, cap in enumerate(self.captures):
            f0, dpos, dclk = _jacobian_blocks(tx_ecef, cap, self.frequency)
            pred = f0 + dclk * clk_ms[i]
            w = self.w[i]
            J = np.zeros((len(cap), n_par))
            J[:, :3] = (dpos @ rot.T) * w[:, None]
            J[:, 3 + i] = dclk * w
            rows.append((cap.f_d - pred) * w)
            jacs.append(J)
        if self.altitude_prior is not None:
            alt, sig = self.altitude_prior
            J = np.zeros((1, n_par))
            J[0, 2] = 1.0 / sig
            rows.append(np.array([(alt - geo.altitude) / sig]))
            jacs.append(J)
        return np.concatenate(rows), np.vstack(jacs), rot

    def cost(self, tx_ecef, clk_ms):
        r, _, _ = self.residuals(tx_ecef, clk_ms)
        return float(r @ r)


def _profile_clock_cost(problem: _Problem, nodes_ecef: np.ndarray, max_samples: int = 120) -> np.ndarray:
    """Cost at each candidate position with per-pass clock rates eliminated in closed form.

    Each pass is thinned to about ``max_samples`` points; a coarse grid does
    not need the full sampling rate.
    """
    total = np.zeros(nodes_ecef.shape[0])
    lam = C / problem.frequency
    for cap, w in zip(problem.captures, problem.w):
        p = cap.pass_
        k = slice(None, None, max(1, len(cap) // max_samples))
        pos, vel, f_d, clock = p.position[k], p.velocity[k], cap.f_d[k], p.clock_rate[k]
        w2 = np.broadcast_to(w, (len(cap),))[k] ** 2
        dclk = (1.0 - clock) / lam
        for j0 in range(0, nodes_ecef.shape[0], 256):
            nodes = nodes_ecef[j0:j0 + 256]
            d = pos[None, :, :] - nodes[:, None, :]
            rr = np.sum(d * vel[None], axis=2) / np.linalg.norm(d, axis=2)
            res = f_d[None, :] - (-rr - C * clock[None, :]) / lam
            # optimal clock per node: weighted LS on the dclk column
            b = np.sum(w2 * dclk * res, axis=1) / np.sum(w2 * dclk**2)
            r2 = res - b[:, None] * dclk[None, :]
            total[j0:j0 + 256] += np.sum(w2 * r2**2, axis=1)
    return total


def _grid_init(problem: _Problem, altitude: float, half_width=1_500e3, spacing=50e3, n_keep=4):
    pos = np.vstack([c.pass_.position for c in problem.captures])
    mid = ecef_to_geodetic(pos[len(pos) // 2])
    rot = enu_rotation(mid.latitude, mid.longitude)
    ax = np.arange(-half_width, half_width + 0.5 * spacing, spacing)
    ee, nn = np.meshgrid(ax, ax, indexing="ij")
    # tangent-plane offsets projected back onto the ellipsoid at the prior altitude
    centre = geodetic_to_ecef(GeodeticPosition(mid.latitude, mid.longitude, altitude))
    pts = centre + ee.reshape(-1, 1) * rot[0] + nn.reshape(-1, 1) * rot[1]
    lat, lon, _ = ecef_to_geodetic_arrays(pts)
    nodes = geodetic_to_ecef_arrays(lat, lon, np.full_like(lat, altitude))
    cost = _profile_clock_cost(problem, nodes).reshape(ee.shape)
    # local minima of the grid cost, best first
    padded = np.pad(cost, 1, constant_values=np.inf)
    neigh = np.min(np.stack([padded[1 + di:1 + di + cost.shape[0], 1 + dj:1 + dj + cost.shape[1]]
                             for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]), axis=0)
    idx = np.flatnonzero((cost <= neigh).ravel())
    idx = idx[np.argsort(cost.ravel()[idx])][:n_keep]
    return [nodes.reshape(-1, 3)[i] for i in idx]


def _initial_clocks(problem: _Problem, tx_ecef):
    out = []
    for cap, w in zip(problem.captures, problem.w):
        f0, _, dclk = _jacobian_blocks(tx_ecef, cap, problem.frequency)
        w2 = w * w
        out.append(float(np.sum(w2 * dclk * (cap.f_d - f0)) / np.sum(w2 * dclk**2)))
    return np.array(out)


def _solve(problem: _Problem, x0_ecef, max_iter=100, xtol=1e-4, ftol=1e-10, cond_max=1e12):
    tx = np.array(x0_ecef, dtype=float)
    clk = _initial_clocks(problem, tx)
    r, J, rot = problem.residuals(tx, clk)
    cost = float(r @ r)
    lm = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        scale = np.sqrt(np.maximum(np.diag(A), 1e-300))
        As = A / np.outer(scale, scale)
        if np.linalg.cond(As) > cond_max:
            raise SingularGeometry(f"normal matrix condition number exceeds {cond_max:g}")
        while True:
            M = As + lm * np.eye(len(scale))
            step = np.linalg.solve(M, g / scale) / scale
            tx_new = tx + rot.T @ step[:3]
            clk_new = clk + step[3:]
            r_new, J_new, rot_new = problem.residuals(tx_new, clk_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost * (1.0 + 1e-12) + 1e-300:
                break
            lm = 1e-3 if lm == 0.0 else lm * 10.0
            if lm > 1e12:
                break
        dcost = cost - cost_new
        tx, clk, r, J, rot, cost = tx_new, clk_new, r_new, J_new, rot_new, cost_new
        lm = 0.0 if lm <= 1e-3 else lm / 10.0
        step_pos = float(np.linalg.norm(step[:3]))
        if step_pos < xtol or (0.0 <= dcost <= ftol * cost and step_pos < 1e3 * xtol):
            converged = True
            break
    return tx, clk, r, J, rot, cost, converged, it


def error_ellipse(covariance, confidence: float = 0.95) -> ErrorEllipse:
    """Horizontal confidence ellipse from the leading 2x2 (east, north) block, in metres."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    P = np.asarray(covariance, dtype=float)[:2, :2]
    P = 0.5 * (P + P.T)
    vals, vecs = np.linalg.eigh(P)
    if vals[0] < -1e-9:
        raise ValueError(f"horizontal covariance is not PSD (eigenvalue {vals[0]:.3g})")
    vals = np.clip(vals, 0.0, None)
    q = -2.0 * math.log(1.0 - confidence)  # chi-square, 2 dof
    major = vecs[:, 1]
    orient = math.degrees(math.atan2(major[0], major[1])) % 180.0
    return ErrorEllipse(math.sqrt(vals[1] * q), math.sqrt(vals[0] * q), orient, confidence)


def estimate(captures, altitude_prior=None, init: GeodeticPosition | None = None,
             frequency: float = F_L1, max_iter: int = 100, raise_on_nonconvergence: bool = True
             ) -> GeolocationSolution:
    """Batch weighted least-squares estimate of emitter position and per-capture clock rate.

    ``altitude_prior`` is ``(altitude_m, sigma_m)`` or ``None``. Without
    ``init`` a coarse grid search around the receiver ground track picks the
    starting points; the best few local minima are refined and the lowest
    final cost wins.
    """
    captures = list(captures)
    if not captures:
        raise ValueError("need at least one capture")
    labels = [c.label for c in captures]
    if len(set(labels)) != len(labels):
        raise ValueError(f"capture labels must be unique, got {labels}")
    problem = _Problem(captures, altitude_prior, frequency)
    if init is not None:
        starts = [geodetic_to_ecef(init)]
    else:
        alt0 = altitude_prior[0] if altitude_prior is not None else 0.0
        starts = _grid_init(problem, alt0)
    best = None
    for x0 in starts:
        try:
            out = _solve(problem, x0, max_iter=max_iter)
        except SingularGeometry:
            if len(starts) == 1:
                raise
            continue
        if best is None or out[5] < best[5]:
            best = out
    if best is None:
        raise SingularGeometry("no starting point produced a well-conditioned solution")
    tx, clk, r, J, rot, cost, converged, iters = best

    A = J.T @ J
    scale = np.sqrt(np.maximum(np.diag(A), 1e-300))
    cov = np.linalg.inv(A / np.outer(scale, scale)) / np.outer(scale, scale)
    # clock parameters back from m/s to s/s
    s = np.ones(len(scale))
    s[3:] = 1.0 / C
    cov = cov * np.outer(s, s)
    cov = 0.5 * (cov + cov.T)

    geo = ecef_to_geodetic(tx)
    clocks = {lab: float(b / C) for lab, b in zip(labels, clk)}
    resid = {}
    for cap, lab in zip(captures, labels):
        f0, _, dclk = _jacobian_blocks(tx, cap, frequency)
        resid[lab] = np.asarray(cap.f_d - (f0 + dclk * clocks[lab] * C))
    sol = GeolocationSolution(
        transmitter=TransmitterState(geo, clocks, frequency),
        position_ecef=tx,
        labels=labels,
        covariance=cov,
        ellipse95=error_ellipse(cov, 0.95),
        ellipse99=error_ellipse(cov, 0.99),
        postfit_residuals=resid,
        converged=converged,
        iterations=iters,
        cost=cost,
    )
    if not converged and raise_on_nonconvergence:
        raise NonConvergence(f"no convergence after {iters} iterations", sol)
    return sol


def predicted_covariance(tx: TransmitterState, captures, clock_model: ClockModel | None = None,
                         w_sigma: float = 0.0, altitude_prior=None, prior_noise: bool = False,
                         frequency: float = F_L1) -> np.ndarray:
    """Linearised error covariance of ``estimate`` when the data carry the given noise.

    The estimator weights each capture by its recorded sigma; the actual
    noise is white (``w_sigma``) plus a zero-start random walk of the
    transmitter clock (``clock_model``). The result is the sandwich
    ``A R A^T`` with ``A`` the weighted least-squares gain at the truth, in
    the same (east m, north m, up m, dtdot per pass) layout as
    ``GeolocationSolution.covariance``. With ``prior_noise`` False the
    altitude pseudo-measurement is treated as exact.
    """
    captures = list(captures)
    problem = _Problem(captures, altitude_prior, frequency)
    tx_ecef = geodetic_to_ecef(tx.position)
    clk = np.array([tx.clock_rate(c.label) * C for c in captures])
    _, J, _ = problem.residuals(tx_ecef, clk)
    gain = np.linalg.solve(J.T @ J, J.T)
    lam = C / frequency
    P = np.zeros((J.shape[1], J.shape[1]))
    n0 = 0
    for cap, w in zip(captures, problem.w):
        n = len(cap)
        G = gain[:, n0:n0 + n] * w[None, :]  # maps Hz-domain noise to parameters
        if w_sigma > 0:
            P += w_sigma**2 * (G @ G.T)
        if clock_model is not None and clock_model.h_minus2 > 0 and n > 1:
            # walk_i = sum_{k<=i} s_k, so G cov(walk) G^T = q (G L)(G L)^T with L lower-triangular ones
            q = clock_model.increment_variance(cap.pass_.dt) * (C / lam) ** 2
            GL = np.cumsum(G[:, ::-1], axis=1)[:, ::-1][:, 1:]
            P += q * (GL @ GL.T)
        n0 += n
    if prior_noise and altitude_prior is not None:
        g = gain[:, n0:n0 + 1]
        P += g @ g.T
    s = np.ones(J.shape[1])
    s[3:] = 1.0 / C
    P = P * np.outer(s, s)
    return 0.5 * (P + P.T)


def postfit_residual_stats(sol: GeolocationSolution) -> dict:
    """Per-pass ``(mean, std)`` of post-fit Doppler residuals in Hz."""
    return {lab: (float(np.mean(r)), float(np.std(r))) for lab, r in sol.postfit_residuals.items()}


def horizontal_error(sol: GeolocationSolution, truth: GeodeticPosition) -> np.ndarray:
    """East/north error (m) of the estimate relative to ``truth``, in the truth's local frame."""
    rot = enu_rotation(truth.latitude, truth.longitude)
    return (rot @ (sol.position_ecef - geodetic_to_ecef(truth)))[:2]


# ------------------------------------------------------------------ I/O


def save_capture(cap: PassCapture, path, trajectory_path) -> Path:
    """Write the capture CSV and its JSON sidecar (``<path>.json``)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CAPTURE_HEADER)
        for t, f, s in zip(cap.t, cap.f_d, cap.sigma):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(s))])
    sidecar = path.with_suffix(".json")
    traj = Path(trajectory_path)
    try:
        traj = traj.relative_to(path.parent)
    except ValueError:
        pass
    sidecar.write_text(json.dumps({"trajectory": str(traj), "label": cap.label}, indent=2) + "\n",
                       encoding="utf-8")
    return sidecar


def load_capture(path) -> PassCapture:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    traj = Path(meta["trajectory"])
    if not traj.is_absolute():
        traj = path.parent / traj
    label = meta.get("label", path.stem)
    p = load_trajectory(traj, label=label)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CAPTURE_HEADER:
            raise MalformedRecord(1, f"expected header {','.join(CAPTURE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRecord(lineno, f"expected 3 fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise MalformedRecord(lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in vals) or vals[2] <= 0:
                raise MalformedRecord(lineno, "non-finite value or non-positive sigma")
            rows.append(vals)
    a = np.array(rows).reshape(-1, 3)
    if a.shape[0] != len(p) or np.max(np.abs(a[:, 0] - p.t)) > 1e-9 * max(1.0, np.max(np.abs(p.t))):
        raise ValueError(f"capture {path} is not aligned with trajectory {traj}")
    return PassCapture(p, a[:, 1], a[:, 2])

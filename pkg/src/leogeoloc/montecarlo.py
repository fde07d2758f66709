"""Monte Carlo study of transmitter clock instability on geolocation accuracy.

Each trial synthesises Doppler captures whose only error source is a
random-walk transmitter clock, runs the batch estimator, and records the
horizontal error. The empirical 95% ellipse comes from the sample
covariance of those errors with chi-square (2 dof) scaling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .clocks import LOW_OCXO, OCXO, TCXO, ClockModel
from .geodesy import GeodeticPosition
from .geolocate import (
    ErrorEllipse,
    NonConvergence,
    SingularGeometry,
    TransmitterState,
    error_ellipse,
    estimate,
    horizontal_error,
    predicted_covariance,
    synthesize_capture,
)
from .orbits import Pass
from .scenarios import DAY144, Scenario

CLOCK_CLASSES = (TCXO, LOW_OCXO, OCXO)
SUBGROUP_CONFIDENCES = (0.5, 0.9, 0.95, 0.99)


class TrialFailure(RuntimeError):
    def __init__(self, trial: int, cause: Exception):
        super().__init__(f"trial {trial}: {cause}")
        self.trial = trial
        self.cause = cause


@dataclass(frozen=True)
class McConfig:
    transmitter: GeodeticPosition
    passes: tuple
    clock_model: ClockModel
    trials: int = 1000
    subgroup_size: int = 250
    subgroup_draws: int = 100_000
    seed: int = 0
    w_sigma: float = 0.0  # injected white Doppler noise, Hz
    weight_sigma: tuple = (2.3,)  # recorded sigma per pass, Hz
    altitude_prior: tuple | None = (48.0, 5.0)
    init_at_truth: bool = True

    def __post_init__(self):
        if not self.trials >= self.subgroup_size >= 2:
            raise ValueError("need trials >= subgroup_size >= 2")
        if not self.passes:
            raise ValueError("need at least one pass")
        if len(self.weight_sigma) not in (1, len(self.passes)):
            raise ValueError("weight_sigma must have one entry or one per pass")
        if self.subgroup_draws < 1:
            raise ValueError("subgroup_draws must be positive")

    @property
    def rate(self) -> float:
        return 1.0 / self.passes[0].dt

    @property
    def duration(self) -> float:
        p = self.passes[0]
        return float(p.t[-1] - p.t[0])

    def sigmas(self) -> list[float]:
        if len(self.weight_sigma) == 1:
            return [float(self.weight_sigma[0])] * len(self.passes)
        return [float(s) for s in self.weight_sigma]

    @classmethod
    def from_scenario(cls, scenario: Scenario, clock_model: ClockModel, **kw) -> "McConfig":
        kw.setdefault("weight_sigma", tuple(scenario.sigmas))
        kw.setdefault("altitude_prior", scenario.altitude_prior)
        return cls(scenario.transmitter, tuple(scenario.passes()), clock_model, **kw)


@dataclass(eq=False)
class McResult:
    clock_label: str
    errors: np.ndarray  # (trials, 2) east/north metres
    empirical_ellipse95: ErrorEllipse
    predicted_ellipse95: ErrorEllipse
    mean_formal_ellipse95: ErrorEllipse
    subgroup_deviation_quantiles: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return self.errors.shape[0]

    def summary(self) -> dict:
        e = self.empirical_ellipse95
        out = {
            "clock": self.clock_label,
            "trials": self.trials,
            "a_m": e.a,
            "b_m": e.b,
            "orientation_deg": e.orientation,
            "predicted_a_m": self.predicted_ellipse95.a,
            "predicted_b_m": self.predicted_ellipse95.b,
            "mean_error_east_m": float(self.errors[:, 0].mean()),
            "mean_error_north_m": float(self.errors[:, 1].mean()),
        }
        if self.subgroup_deviation_quantiles:
            out["subgroup_deviation"] = self.subgroup_deviation_quantiles
        return out


def trial_seed(master_seed: int, trial: int) -> np.random.SeedSequence:
    """Independent stream for ``trial``; depends only on the master seed and the index."""
    return np.random.SeedSequence(master_seed, spawn_key=(trial,))


def _trial_captures(cfg: McConfig, tx: TransmitterState, trial: int):
    seeds = trial_seed(cfg.seed, trial).spawn(len(cfg.passes))
    return [synthesize_capture(tx, p, cfg.clock_model, cfg.w_sigma, seed=s, sigma=sig)
            for p, s, sig in zip(cfg.passes, seeds, cfg.sigmas())]


def run_trial(cfg: McConfig, trial: int):
    """One trial; returns ``(east/north error, formal covariance)``."""
    tx = TransmitterState(cfg.transmitter)
    caps = _trial_captures(cfg, tx, trial)
    try:
        sol = estimate(caps, cfg.altitude_prior, init=cfg.transmitter if cfg.init_at_truth else None)
    except (NonConvergence, SingularGeometry) as exc:
        raise TrialFailure(trial, exc) from exc
    return horizontal_error(sol, cfg.transmitter), sol.horizontal_covariance


def empirical_ellipse(errors, confidence: float = 0.95) -> ErrorEllipse:
    """Confidence ellipse from the sample covariance of east/north errors."""
    errors = np.asarray(errors, dtype=float)
    if errors.ndim != 2 or errors.shape[1] != 2 or errors.shape[0] < 2:
        raise ValueError("need an (n >= 2, 2) array of errors")
    return error_ellipse(np.cov(errors, rowvar=False), confidence)


def predicted_clock_ellipse(cfg: McConfig, confidence: float = 0.95) -> ErrorEllipse:
    """Linearised ellipse the study should produce, from the sandwich covariance."""
    from .geolocate import PassCapture, predict_pass

    tx = TransmitterState(cfg.transmitter)
    caps = [PassCapture(p, predict_pass(tx, p), s) for p, s in zip(cfg.passes, cfg.sigmas())]
    P = predicted_covariance(tx, caps, cfg.clock_model, cfg.w_sigma, cfg.altitude_prior)
    return error_ellipse(P, confidence)


def run_clock_study(cfg: McConfig) -> McResult:
    errors = np.zeros((cfg.trials, 2))
    formal = np.zeros((2, 2))
    # sequential loop over independent per-trial streams: order does not affect results
    for i in range(cfg.trials):
        errors[i], cov = run_trial(cfg, i)
        formal += cov
    formal /= cfg.trials
    return McResult(
        clock_label=cfg.clock_model.label,
        errors=errors,
        empirical_ellipse95=empirical_ellipse(errors),
        predicted_ellipse95=predicted_clock_ellipse(cfg),
        mean_formal_ellipse95=error_ellipse(formal),
    )


def _axes_from_cov(sxx, syy, sxy, q):
    tr = 0.5 * (sxx + syy)
    d = np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy**2, 0.0))
    return np.sqrt(q * (tr + d)), np.sqrt(q * np.maximum(tr - d, 0.0))


def subgroup_deviations(errors, subgroup_size: int, draws: int, seed=0, chunk: int = 2000):
    """Relative deviation of subgroup ellipse axes from the full-population axes.

    Returns ``(dev_a, dev_b)`` arrays of length ``draws``; each subgroup is a
    uniformly random subset (without replacement) of the trials.
    """
    errors = np.asarray(errors, dtype=float)
    n = errors.shape[0]
    if not 2 <= subgroup_size <= n:
        raise ValueError("subgroup size must lie in [2, number of trials]")
    q = -2.0 * math.log(0.05)
    pop = np.cov(errors, rowvar=False)
    a0, b0 = _axes_from_cov(pop[0, 0], pop[1, 1], pop[0, 1], q)
    rng = np.random.default_rng(seed)
    dev_a = np.empty(draws)
    dev_b = np.empty(draws)
    for j0 in range(0, draws, chunk):
        m = min(chunk, draws - j0)
        if subgroup_size == n:
            idx = np.broadcast_to(np.arange(n), (m, n))
        else:
            idx = np.argpartition(rng.random((m, n)), subgroup_size - 1, axis=1)[:, :subgroup_size]
        x = errors[idx, 0]
        y = errors[idx, 1]
        x = x - x.mean(axis=1, keepdims=True)
        y = y - y.mean(axis=1, keepdims=True)
        k = subgroup_size - 1
        a, b = _axes_from_cov((x * x).sum(1) / k, (y * y).sum(1) / k, (x * y).sum(1) / k, q)
        dev_a[j0:j0 + m] = a / a0 - 1.0
        dev_b[j0:j0 + m] = b / b0 - 1.0
    return dev_a, dev_b


def subgroup_analysis(result: McResult, cfg: McConfig) -> dict:
    """Quantiles of |relative axis deviation| over random subgroups, per axis, plus the maxima."""
    if result.trials < cfg.trials:
        raise ValueError("result holds fewer trials than the configuration")
    dev_a, dev_b = subgroup_deviations(result.errors, cfg.subgroup_size, cfg.subgroup_draws,
                                       seed=np.random.SeedSequence(cfg.seed, spawn_key=(2**32,)))
    out = {}
    for name, d in (("a", np.abs(dev_a)), ("b", np.abs(dev_b))):
        out[name] = {f"{c:g}": float(np.quantile(d, c)) for c in SUBGROUP_CONFIDENCES}
        out[name]["max"] = float(d.max())
    result.subgroup_deviation_quantiles = out
    return out


def clock_class_study(scenario: Scenario = DAY144, trials: int = 1000, seed: int = 0, subgroups: bool = True,
           subgroup_draws: int = 100_000, classes=CLOCK_CLASSES):
    """Run the study for each clock class; returns ``(configs, results)``."""
    cfgs, results = [], []
    for k, model in enumerate(classes):
        cfg = McConfig.from_scenario(scenario, model, trials=trials, seed=seed + k,
                                     subgroup_size=min(250, trials), subgroup_draws=subgroup_draws)
        res = run_clock_study(cfg)
        if subgroups:
            subgroup_analysis(res, cfg)
        cfgs.append(cfg)
        results.append(res)
    return cfgs, results


def clock_table_rows(results) -> list[dict]:
    return [{"clock": r.clock_label, "a_m": round(r.empirical_ellipse95.a, 1),
             "b_m": round(r.empirical_ellipse95.b, 2)} for r in results]


def format_clock_table(results) -> str:
    lines = ["clock,a_m,b_m"]
    lines += [f"{row['clock']},{row['a_m']},{row['b_m']}" for row in clock_table_rows(results)]
    return "\n".join(lines) + "\n"


def results_json(results, include_errors: bool = False) -> str:
    doc = {"studies": []}
    for r in results:
        s = r.summary()
        if include_errors:
            s["errors_en_m"] = r.errors.tolist()
        doc["studies"].append(s)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def combined_solution_study(scenario: Scenario, clock_model: ClockModel, trials: int, seed: int = 0,
                            init_at_truth: bool = False):
    """Multi-pass study with white noise at each pass's sigma plus clock noise.

    Returns ``(errors, mean formal ellipse, empirical ellipse)``.
    """
    passes = tuple(scenario.passes())
    tx = TransmitterState(scenario.transmitter)
    errors = np.zeros((trials, 2))
    formal = np.zeros((2, 2))
    for i in range(trials):
        seeds = trial_seed(seed, i).spawn(len(passes))
        caps = [synthesize_capture(tx, p, clock_model, s, seed=sd)
                for p, s, sd in zip(passes, scenario.sigmas, seeds)]
        try:
            sol = estimate(caps, scenario.altitude_prior,
                           init=scenario.transmitter if init_at_truth else None)
        except (NonConvergence, SingularGeometry) as exc:
            raise TrialFailure(i, exc) from exc
        errors[i] = horizontal_error(sol, scenario.transmitter)
        formal += sol.horizontal_covariance
    return errors, error_ellipse(formal / trials), empirical_ellipse(errors)


def passes_of(cfg: McConfig) -> list[Pass]:
    return list(cfg.passes)

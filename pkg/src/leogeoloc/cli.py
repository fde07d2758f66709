"""Command-line entry point: ``leogeoloc <command> [--config FILE] [--out DIR] ...``.

Commands: simulate, estimate, montecarlo, survey, linkbudget. Every run
writes its artifacts plus ``manifest.json`` (resolved config, seed and
artifact hashes) into ``--out``. Exit codes: 0 ok, 2 bad config or input,
3 I/O failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clocks import clock_preset
from .geodesy import GeodeticPosition
from .geolocate import (
    NonConvergence,
    SingularGeometry,
    TransmitterState,
    estimate,
    load_capture,
    postfit_residual_stats,
    save_capture,
    synthesize_capture,
)
from .linkbudget import UnsupportedConfiguration, budget_report
from .montecarlo import (
    McConfig,
    TrialFailure,
    combined_solution_study,
    format_clock_table,
    run_clock_study,
    subgroup_analysis,
)
from .orbits import MalformedRecord, NoVisibilityWindow, save_trajectory
from .scenarios import PassPlan, Scenario, get_scenario
from .survey import (
    ControlGrid,
    Observables,
    build_control_grid,
    detect_windows,
    hotspot_map_from_tests,
    hotspots_geojson,
    read_observables,
    select_hotspots,
    write_hotspots_csv,
    write_observables,
)
from .synthsurvey import Emitter, SurveyConfig, realize, survey_geometry

SCHEMA = 1
EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "simulate": {"kind": "capture", "scenario": "day144", "clock": "tcxo", "seed": 0},
    "estimate": {"captures": [], "altitude_prior": [48.0, 5.0], "init": None},
    "montecarlo": {"mode": "clock_study", "scenario": "day144", "clocks": ["tcxo", "low_ocxo", "ocxo"],
                   "trials": 1000, "subgroup_size": 250, "subgroup_draws": 100000, "per_trial": False,
                   "seed": 0},
    "survey": {"observables": [], "control_grid": None, "cell_deg": 1.0, "window_s": 1.0,
               "min_count": 100, "z_max_deg": 15.0, "bin_width_deg": 1.0, "min_events": 3,
               "min_ratio": 0.5},
    "linkbudget": {"drop_db": 6.0, "range_m": 1340e3, "G_r_db": 3.0, "N0_dbw_hz": -204.0,
                   "T_C_s": 1.0 / 1.023e6, "freq_hz": 1575.42e6, "eta_dbhz": 30.0},
}


# ------------------------------------------------------------ config


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p} is not a mapping")
    node[parts[-1]] = _parse_value(value)


def load_config(command: str, path, overrides, seed) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text(encoding="utf-8")
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(user, dict) or not user:
            raise ConfigError(f"{p}: config must be a non-empty JSON object")
        schema = user.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"{p}: unsupported schema {schema!r} (expected {SCHEMA})")
        cfg.update(user)
    for item in overrides or []:
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = seed
    cfg["schema"] = SCHEMA
    return cfg


def _require(cfg, key, kind=None):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"missing config key {key!r}")
    v = cfg[key]
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"config key {key!r} has the wrong type")
    return v


def _position(d) -> GeodeticPosition:
    try:
        return GeodeticPosition(float(d["lat"]), float(d["lon"]), float(d.get("alt", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad position {d!r}: {exc}") from None


def _scenario(cfg) -> Scenario:
    if "passes" in cfg:
        try:
            plans = tuple(PassPlan(**p) for p in cfg["passes"])
        except TypeError as exc:
            raise ConfigError(f"bad pass plan: {exc}") from None
        tx = _position(_require(cfg, "transmitter", dict))
        prior = cfg.get("altitude_prior", [tx.altitude, 5.0])
        return Scenario("custom", tx, plans, tuple(prior) if prior else None)
    try:
        return get_scenario(cfg["scenario"])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def _clock(name):
    try:
        return clock_preset(name)
    except (KeyError, AttributeError) as exc:
        raise ConfigError(str(exc.args[0])) from None


# ------------------------------------------------------------- output


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _finite(x):
    return None if x is None or not math.isfinite(x) else x


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, artifacts, timestamp: bool) -> Path:
    cfg_text = json.dumps(cfg, sort_keys=True)
    doc = {
        "command": command,
        "version": __version__,
        "schema": SCHEMA,
        "seed": cfg.get("seed"),
        "config": cfg,
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
    }
    if timestamp:
        import datetime

        doc["created_utc"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    path = out / "manifest.json"
    path.write_text(_dump_json(doc), encoding="utf-8")
    return path


# ----------------------------------------------------------- commands


def cmd_simulate(cfg: dict, out: Path, fmt: str) -> list[Path]:
    seed = int(cfg.get("seed", 0))
    if cfg.get("kind", "capture") == "survey":
        return _simulate_survey(cfg, out, seed)
    if cfg["kind"] != "capture":
        raise ConfigError(f"unknown simulate kind {cfg['kind']!r}")
    scen = _scenario(cfg)
    model = _clock(cfg.get("clock", "tcxo"))
    clock_rates = {k: float(v) for k, v in cfg.get("clock_rate_per_pass", {}).items()}
    tx = TransmitterState(scen.transmitter, clock_rates)
    seeds = np.random.SeedSequence(seed).spawn(len(scen.plans))
    arts = []
    for plan, p, ss in zip(scen.plans, scen.passes(), seeds):
        w = float(cfg.get("w_sigma", plan.w_sigma))
        traj = out / f"trajectory_{plan.label}.csv"
        save_trajectory(p, traj)
        cap = synthesize_capture(tx, p, model, w, seed=ss, sigma=w if w > 0 else plan.w_sigma)
        cpath = out / f"capture_{plan.label}.csv"
        arts += [traj, cpath, save_capture(cap, cpath, traj)]
    truth = {"transmitter": {"lat": scen.transmitter.latitude, "lon": scen.transmitter.longitude,
                             "alt": scen.transmitter.altitude},
             "clock": model.label, "h_minus2": model.h_minus2, "clock_rate_per_pass": clock_rates}
    tp = out / "truth.json"
    tp.write_text(_dump_json(truth), encoding="utf-8")
    return arts + [tp]


def _simulate_survey(cfg, out, seed):
    try:
        scfg = SurveyConfig(duration=float(cfg.get("duration_s", 86400.0)),
                            cinr_sigma_db=float(cfg.get("cinr_sigma_db", 0.5)))
        emitters = [Emitter(**e) for e in cfg.get("emitters", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad survey simulation config: {exc}") from None
    geom = survey_geometry(scfg)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_ctrl = int(cfg.get("control_replays", 20))
    # extra ocean-only replays give the control grid enough samples per bin
    ocean = geom.region == 0
    ctrl = [realize(geom, scfg, rng).take(np.concatenate([ocean, ocean])) for _ in range(n_ctrl)]
    main = realize(geom, scfg, rng, emitters=emitters,
                   injected_drop_db=float(cfg.get("injected_drop_db", 0.0)))
    obs = Observables.concat([main] + ctrl)
    path = out / "observables.csv"
    write_observables(obs, path)
    return [path]


def cmd_estimate(cfg: dict, out: Path, fmt: str) -> list[Path]:
    paths = _require(cfg, "captures", list)
    if not paths:
        raise ConfigError("estimate needs at least one capture path")
    caps = []
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"capture file not found: {p}")
        caps.append(load_capture(p))
    prior = cfg.get("altitude_prior")
    init = _position(cfg["init"]) if cfg.get("init") else None
    status = "ok"
    try:
        sol = estimate(caps, tuple(prior) if prior else None, init=init)
    except NonConvergence as exc:
        sol, status = exc.solution, "nonconvergence"
    doc = solution_dict(sol)
    doc["status"] = status
    arts = [out / "solution.json"]
    arts[0].write_text(_dump_json(doc), encoding="utf-8")
    if fmt == "geojson":
        gp = out / "ellipse.geojson"
        gp.write_text(_dump_json(ellipse_geojson(sol)), encoding="utf-8")
        arts.append(gp)
    if status != "ok":
        raise NonConvergence("estimator did not converge; partial diagnostics written", sol)
    return arts


def solution_dict(sol) -> dict:
    p = sol.transmitter.position
    e95, e99 = sol.ellipse95, sol.ellipse99
    return {
        "position": {"lat": p.latitude, "lon": p.longitude, "alt": p.altitude,
                     "ecef_m": [float(x) for x in sol.position_ecef]},
        "clock_rate_per_pass": sol.transmitter.clock_rate_per_pass,
        "labels": list(sol.labels),
        "covariance": sol.covariance.tolist(),
        "covariance_layout": ["east_m", "north_m", "up_m"] + [f"dtdot_{lab}" for lab in sol.labels],
        "ellipse95": {"a_m": e95.a, "b_m": e95.b, "orientation_deg": e95.orientation},
        "ellipse99": {"a_m": e99.a, "b_m": e99.b, "orientation_deg": e99.orientation},
        "residuals": {lab: {"mean_hz": m, "std_hz": s} for lab, (m, s) in postfit_residual_stats(sol).items()},
        "converged": sol.converged,
        "iterations": sol.iterations,
        "cost": sol.cost,
    }


def ellipse_geojson(sol, n: int = 72) -> dict:
    from .geodesy import ecef_to_geodetic_arrays, enu_rotation

    feats = []
    p = sol.transmitter.position
    rot = enu_rotation(p.latitude, p.longitude)
    for e in (sol.ellipse95, sol.ellipse99):
        th = np.linspace(0.0, 2.0 * np.pi, n + 1)
        phi = math.radians(e.orientation)
        major = np.array([math.sin(phi), math.cos(phi)])
        minor = np.array([math.cos(phi), -math.sin(phi)])
        en = e.a * np.cos(th)[:, None] * major + e.b * np.sin(th)[:, None] * minor
        xyz = sol.position_ecef + en[:, 0:1] * rot[0] + en[:, 1:2] * rot[1]
        lat, lon, _ = ecef_to_geodetic_arrays(xyz)
        ring = [[float(lo), float(la)] for la, lo in zip(lat, lon)]
        ring[-1] = ring[0]
        feats.append({"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [ring]},
                      "properties": {"confidence": e.confidence, "a_m": e.a, "b_m": e.b}})
    feats.append({"type": "Feature", "geometry": {"type": "Point", "coordinates": [p.longitude, p.latitude]},
                  "properties": {"kind": "estimate"}})
    return {"type": "FeatureCollection", "features": feats}


def cmd_montecarlo(cfg: dict, out: Path, fmt: str) -> list[Path]:
    scen = _scenario(cfg)
    seed = int(cfg.get("seed", 0))
    trials = int(cfg["trials"])
    if cfg.get("mode", "clock_study") == "combined":
        return _montecarlo_combined(cfg, scen, seed, trials, out)
    rows, results = [], []
    for k, name in enumerate(cfg["clocks"]):
        model = _clock(name)
        try:
            mc = McConfig.from_scenario(scen, model, trials=trials, seed=seed + k,
                                        subgroup_size=min(int(cfg["subgroup_size"]), trials),
                                        subgroup_draws=int(cfg["subgroup_draws"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        res = run_clock_study(mc)
        if int(cfg["subgroup_draws"]) > 0:
            subgroup_analysis(res, mc)
        s = res.summary()
        s["h_minus2"] = model.h_minus2
        if cfg.get("per_trial"):
            s["errors_en_m"] = res.errors.tolist()
        rows.append(s)
        results.append(res)
    jp = out / "montecarlo.json"
    jp.write_text(_dump_json({"scenario": scen.name, "trials": trials, "studies": rows}), encoding="utf-8")
    cp = out / "clock_ellipses.csv"
    lines = ["clock,h_minus2,a_m,b_m"]
    lines += [f"{r['clock']},{r['h_minus2']!r},{r['a_m']:.1f},{r['b_m']:.2f}" for r in rows]
    cp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(format_clock_table(results), end="")
    return [jp, cp]


def _montecarlo_combined(cfg, scen, seed, trials, out):
    model = _clock(cfg.get("clock", "low_ocxo"))
    errs, formal, emp = combined_solution_study(scen, model, trials, seed, init_at_truth=True)
    errs0, formal0, emp0 = combined_solution_study(scen, _clock("ideal"), trials, seed, init_at_truth=True)
    doc = {
        "scenario": scen.name, "clock": model.label, "trials": trials,
        "formal_ellipse95": {"a_m": formal.a, "b_m": formal.b},
        "empirical_ellipse95": {"a_m": emp.a, "b_m": emp.b},
        "noise_free_clock_empirical_ellipse95": {"a_m": emp0.a, "b_m": emp0.b},
        "clock_contribution_a_m": emp.a - emp0.a,
    }
    jp = out / "combined.json"
    jp.write_text(_dump_json(doc), encoding="utf-8")
    return [jp]


def cmd_survey(cfg: dict, out: Path, fmt: str) -> list[Path]:
    paths = _require(cfg, "observables", list)
    if not paths:
        raise ConfigError("survey needs at least one observables file")
    parts = []
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"observables file not found: {p}")
        parts.append(read_observables(p))
    obs = Observables.concat(parts)
    if cfg.get("control_grid"):
        gpath = Path(cfg["control_grid"])
        if not gpath.is_file():
            raise ConfigError(f"control grid not found: {gpath}")
        grid = ControlGrid.load(gpath)
    else:
        grid = build_control_grid(obs, float(cfg["bin_width_deg"]), float(cfg["z_max_deg"]),
                                  int(cfg["min_count"]))
    gp = out / "control_grid.json"
    grid.save(gp)
    survey_obs = obs.take(obs.region == 1)
    tests = detect_windows(survey_obs, grid, float(cfg["window_s"]))
    cells = hotspot_map_from_tests(tests, float(cfg["cell_deg"]))
    hot = select_hotspots(cells, int(cfg["min_events"]), float(cfg["min_ratio"]))
    arts = [gp]
    summary = {"tests": int(len(tests)), "events": int(tests.decision.sum()),
               "cells": len(cells), "hotspot_cells": len(hot)}
    sp = out / "survey_summary.json"
    sp.write_text(_dump_json(summary), encoding="utf-8")
    arts.append(sp)
    if fmt in ("geojson", "json"):
        hp = out / "hotspots.geojson"
        hp.write_text(_dump_json(hotspots_geojson(cells)), encoding="utf-8")
        arts.append(hp)
    if fmt in ("csv", "json"):
        cp = out / "hotspots.csv"
        write_hotspots_csv(cells, cp)
        arts.append(cp)
    return arts


def cmd_linkbudget(cfg: dict, out: Path, fmt: str) -> list[Path]:
    try:
        rep = budget_report(drop_db=float(cfg["drop_db"]), range_m=float(cfg["range_m"]),
                            G_r=float(cfg["G_r_db"]), N0=float(cfg["N0_dbw_hz"]), T_C=float(cfg["T_C_s"]),
                            freq_hz=float(cfg["freq_hz"]), eta=float(cfg["eta_dbhz"]),
                            L=cfg.get("path_loss_db"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad link budget parameters: {exc}") from None
    rep = {k: (_finite(v) if isinstance(v, float) else v) for k, v in rep.items()}
    rep["rendered"] = {
        "P_I_dbw": f"{rep['P_I_dbw']:.1f}" if rep["P_I_dbw"] is not None else "none",
        "P_S_dbw": f"{rep['P_S_dbw']:.1f}" if rep["P_S_dbw"] is not None else "none",
        "matched_jamming_ratio_db": f"{rep['matched_jamming_ratio_db']:.1f}",
    }
    path = out / "linkbudget.json"
    path.write_text(_dump_json(rep), encoding="utf-8")
    if fmt == "csv":
        cp = out / "linkbudget.csv"
        flat = {k: v for k, v in rep.items() if not isinstance(v, dict)}
        cp.write_text("key,value\n" + "".join(f"{k},{v!r}\n" for k, v in sorted(flat.items())),
                      encoding="utf-8")
        return [path, cp]
    return [path]


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "montecarlo": cmd_montecarlo,
    "survey": cmd_survey,
    "linkbudget": cmd_linkbudget,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leogeoloc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override a config key; dotted keys reach nested mappings")
        p.add_argument("--format", choices=("json", "csv", "geojson"), default="json")
        p.add_argument("--timestamp", action="store_true", help="record creation time in the manifest")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.command, args.config, args.set, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = COMMANDS[args.command](cfg, out, args.format)
        write_manifest(out, args.command, cfg, artifacts, args.timestamp)
    except (ConfigError, MalformedRecord, UnsupportedConfiguration, NoVisibilityWindow) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, SingularGeometry, TrialFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

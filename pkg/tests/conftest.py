import time

import numpy as np
import pytest

from leogeoloc.montecarlo import clock_class_study
from leogeoloc.scenarios import DAY144, THREE_PASS
from leogeoloc.survey import build_control_grid
from leogeoloc.synthsurvey import SurveyConfig, SurveyGeometry, realize, survey_geometry


@pytest.fixture(scope="session")
def day144_pass():
    return DAY144.passes()[0]


@pytest.fixture(scope="session")
def three_passes():
    return THREE_PASS.passes()


@pytest.fixture(scope="session")
def clock_study():
    """The full three-class, 1000-trial clock study; returns ``(configs, results, seconds)``."""
    t0 = time.perf_counter()
    cfgs, results = clock_class_study(DAY144, trials=1000, seed=0, subgroups=True, subgroup_draws=100_000)
    return cfgs, results, time.perf_counter() - t0


def _subset(g: SurveyGeometry, mask) -> SurveyGeometry:
    idx = np.flatnonzero(mask)
    return SurveyGeometry(g.t[idx], g.sv_id[idx], g.z_r[idx], g.z_s[idx], g.r_sr[idx], g.lat[idx],
                          g.lon[idx], g.region[idx], g.epoch_index[idx], g.epoch_t, g.rx_ecef, g.boresight)


@pytest.fixture(scope="session")
def survey_setup():
    """One day of geometry split into control and survey parts, a dense control grid, and the build time."""
    t0 = time.perf_counter()
    cfg = SurveyConfig(duration=86_400.0)
    geom = survey_geometry(cfg)
    ocean = _subset(geom, geom.region == 0)
    land = _subset(geom, geom.region == 1)
    rng = np.random.default_rng(20240601)
    grid = None
    for _ in range(1000):
        g = build_control_grid(realize(ocean, cfg, rng))
        grid = g if grid is None else grid.merge(g)
    return cfg, geom, ocean, land, grid, time.perf_counter() - t0


# ------------------------------------------------------ acceptance log

ACCEPTANCE = {}
N_CRITERIA = 11


@pytest.fixture
def criterion():
    """``record(n, ok, detail)`` logs one acceptance line, prints it and asserts it."""

    def record(n: int, ok: bool, detail: str):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n:2d}: FAIL  (not evaluated)"))

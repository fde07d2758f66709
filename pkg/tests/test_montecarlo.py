import math

import numpy as np
import pytest

from leogeoloc.clocks import LOW_OCXO, NO_CLOCK_NOISE, TCXO, ClockModel
from leogeoloc.montecarlo import (
    McConfig,
    empirical_ellipse,
    format_clock_table,
    results_json,
    run_clock_study,
    run_trial,
    subgroup_deviations,
    trial_seed,
)
from leogeoloc.scenarios import DAY144


def _cfg(model, trials=20, **kw):
    return McConfig.from_scenario(DAY144, model, trials=trials, subgroup_size=min(10, trials), **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig.from_scenario(DAY144, TCXO, trials=5, subgroup_size=10)
    with pytest.raises(ValueError):
        McConfig(DAY144.transmitter, (), TCXO)


def test_noise_free_trials_exact():
    cfg = _cfg(NO_CLOCK_NOISE, trials=3)
    for i in range(3):
        err, _ = run_trial(cfg, i)
        assert np.linalg.norm(err) < 0.1


def test_trial_seeds_independent_of_order():
    cfg = _cfg(TCXO, trials=10)
    forward = [run_trial(cfg, i)[0] for i in range(4)]
    backward = [run_trial(cfg, i)[0] for i in reversed(range(4))][::-1]
    np.testing.assert_array_equal(forward, backward)
    a = trial_seed(0, 3).generate_state(4)
    b = trial_seed(0, 4).generate_state(4)
    assert not np.array_equal(a, b)


def test_study_deterministic():
    r1 = run_clock_study(_cfg(TCXO, trials=10, seed=5))
    r2 = run_clock_study(_cfg(TCXO, trials=10, seed=5))
    np.testing.assert_array_equal(r1.errors, r2.errors)
    assert results_json([r1]) == results_json([r2])
    r3 = run_clock_study(_cfg(TCXO, trials=10, seed=6))
    assert not np.array_equal(r1.errors, r3.errors)


def test_errors_scale_with_root_h():
    """The estimator is linear near truth, so errors scale as sqrt(h) for a common noise stream."""
    e1 = run_clock_study(_cfg(ClockModel(3e-21), trials=10)).errors
    e2 = run_clock_study(_cfg(ClockModel(3e-23), trials=10)).errors
    np.testing.assert_allclose(e2 * 10.0, e1, rtol=0.02, atol=1.0)


def test_clock_study_matches_linear_prediction(clock_study):
    _, results, _ = clock_study
    for r in results:
        assert r.empirical_ellipse95.a == pytest.approx(r.predicted_ellipse95.a, rel=0.2)
        assert r.empirical_ellipse95.b == pytest.approx(r.predicted_ellipse95.b, rel=0.2)


def test_clock_errors_zero_mean(clock_study):
    _, results, _ = clock_study
    for r in results:
        cov = np.cov(r.errors, rowvar=False)
        m = r.errors.mean(axis=0)
        assert m @ np.linalg.solve(cov / r.trials, m) < 13.8  # chi2(2) at 99.9%


def test_clock_ellipse_much_larger_than_formal(clock_study):
    # the white-noise formal ellipse ignores clock drift entirely
    _, results, _ = clock_study
    assert results[0].empirical_ellipse95.a > 5 * results[0].mean_formal_ellipse95.a


def test_empirical_ellipse_of_known_cloud():
    rng = np.random.default_rng(0)
    e = rng.normal(size=(200_000, 2)) * [30.0, 3.0]
    ell = empirical_ellipse(e)
    q = math.sqrt(-2 * math.log(0.05))
    assert ell.a == pytest.approx(30 * q, rel=0.01)
    assert ell.b == pytest.approx(3 * q, rel=0.01)
    with pytest.raises(ValueError):
        empirical_ellipse(np.zeros((1, 2)))


def test_subgroup_full_population_has_no_deviation():
    e = np.random.default_rng(1).normal(size=(300, 2))
    a, b = subgroup_deviations(e, 300, 10)
    np.testing.assert_allclose(a, 0.0, atol=1e-12)
    np.testing.assert_allclose(b, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        subgroup_deviations(e, 301, 10)


def test_subgroup_deviation_spread_matches_theory():
    # relative std of a sample-std axis from k of n draws without replacement, Gaussian case
    n, k = 1000, 250
    e = np.random.default_rng(2).normal(size=(n, 2)) * [10.0, 1.0]
    a, _ = subgroup_deviations(e, k, 20_000, seed=3)
    theory = math.sqrt((1 - k / n) / (2 * (k - 1)))
    assert np.std(a) == pytest.approx(theory, rel=0.1)
    assert abs(np.mean(a)) < 0.01


def test_table_output(clock_study):
    _, results, _ = clock_study
    text = format_clock_table(results)
    lines = text.splitlines()
    assert lines[0] == "clock,a_m,b_m" and len(lines) == 4
    assert [r.clock_label for r in results] == [TCXO.label, LOW_OCXO.label, "OCXO"]

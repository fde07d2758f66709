import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leogeoloc.constants import BAND_FREQ
from leogeoloc.geodesy import free_space_path_loss_db
from leogeoloc.orbits import MalformedRecord
from leogeoloc.survey import (
    CINR_FLOOR_DBHZ,
    FOTON_QUANTIZATION,
    CinrFilterState,
    ControlGrid,
    ObservableRecord,
    Observables,
    QuantizationSpec,
    UnusableBin,
    build_control_grid,
    cinr_from_power,
    cinr_series,
    cinr_update,
    detect,
    detect_windows,
    hotspot_map,
    hotspots_geojson,
    noise_floor,
    range_compensate,
    range_compensate_all,
    read_observables,
    select_hotspots,
    test_statistic as window_statistic,
    write_hotspots_csv,
    write_observables,
)

NF = noise_floor(FOTON_QUANTIZATION)


def test_noise_floor_golden():
    # 2 N E[a^2] E[b^2] at 30 digits
    assert NF == pytest.approx(239668.743741151, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 5), st.floats(0.5, 5), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
       st.floats(1.0, 1e4))
def test_noise_floor_symmetric_and_linear(a0, a1, pa, pb, n):
    q = QuantizationSpec(a0, a1, 1.0, 3.0, pa, 1 - pa, pb, 1 - pb, n)
    swapped = QuantizationSpec(1.0, 3.0, a0, a1, pb, 1 - pb, pa, 1 - pa, n)
    assert noise_floor(q) == pytest.approx(noise_floor(swapped), rel=1e-12)
    doubled = QuantizationSpec(a0, a1, 1.0, 3.0, pa, 1 - pa, pb, 1 - pb, 2 * n)
    assert noise_floor(doubled) == pytest.approx(2 * noise_floor(q), rel=1e-12)


def test_quantization_validation():
    with pytest.raises(ValueError):
        QuantizationSpec(1, 3, 1, 3, 0.5, 0.6, 0.5, 0.5, 100)
    with pytest.raises(ValueError):
        CinrFilterState(T_a=1.0, tau_filter=0.5)


def test_filter_contracts_by_one_minus_k():
    s = CinrFilterState(1000.0)
    target = 5000.0
    err = [abs(s.smoothed_power - target)]
    for _ in range(10):
        s, _ = cinr_update(s, math.sqrt(target), 0.0, NF)
        err.append(abs(s.smoothed_power - target))
    ratios = np.array(err[1:]) / np.array(err[:-1])
    np.testing.assert_allclose(ratios, 1 - 0.02, rtol=1e-12)


def test_step_response_time():
    # 95% of a step after ln(0.05) / ln(1 - K) accumulations, about 148 for K = 0.02
    x = np.ones(400)
    smoothed, _ = cinr_series(x, np.zeros(400), NF)
    k95 = int(np.argmax(smoothed >= 0.95)) + 1
    assert k95 == math.ceil(math.log(0.05) / math.log(0.98))
    assert 140 <= k95 <= 160


def test_series_matches_recursive_updates():
    rng = np.random.default_rng(0)
    i, q = rng.normal(0, 400, 300), rng.normal(0, 400, 300)
    smoothed, cinr = cinr_series(i, q, NF, initial_power=NF)
    s = CinrFilterState(NF)
    for k in range(300):
        s, c = cinr_update(s, i[k], q[k], NF)
        assert s.smoothed_power == pytest.approx(smoothed[k], rel=1e-10)
        assert c == pytest.approx(cinr[k], rel=1e-9, abs=1e-9)


def test_steady_state_cinr():
    cn0 = 10 ** (42.0 / 10)
    p = NF * (1 + cn0 * 0.01)
    assert cinr_from_power(p, NF, 0.01) == pytest.approx(42.0, abs=1e-9)
    smoothed, cinr = cinr_series(np.full(2000, math.sqrt(p)), np.zeros(2000), NF)
    assert cinr[-1] == pytest.approx(42.0, abs=1e-6)


def test_cinr_floor_below_noise():
    assert cinr_from_power(0.5 * NF, NF, 0.01) == CINR_FLOOR_DBHZ
    assert cinr_from_power(NF, NF, 0.01) == CINR_FLOOR_DBHZ


def _rec(**kw):
    base = dict(t=0.0, sv_id=5, band="L1", cinr=40.0, r_sr=20_000e3, z_r=5.0, z_s=14.5,
                ground_lat=10.0, ground_lon=20.0, region="ocean_control")
    base.update(kw)
    return ObservableRecord(**base)


def test_range_compensation():
    a = range_compensate(_rec(r_sr=20_000e3))
    b = range_compensate(_rec(r_sr=40_000e3))
    assert b - a == pytest.approx(20 * math.log10(2), abs=1e-9)
    assert a == pytest.approx(40.0 + free_space_path_loss_db(20_000e3, BAND_FREQ["L1"]))
    l2 = range_compensate(_rec(band="L2"))
    assert a - l2 == pytest.approx(20 * math.log10(BAND_FREQ["L1"] / BAND_FREQ["L2"]), abs=1e-9)
    with pytest.raises(ValueError):
        range_compensate(_rec(r_sr=0.0))
    obs = Observables.from_records([_rec(r_sr=20_000e3), _rec(band="L2")])
    np.testing.assert_allclose(range_compensate_all(obs), [a, l2])


def test_record_validation():
    with pytest.raises(ValueError):
        _rec(band="L5")
    with pytest.raises(ValueError):
        _rec(z_r=-1.0)


def _gaussian_control(n, seed, mean=225.0, sd=1.5, sv=3):
    rng = np.random.default_rng(seed)
    r = rng.uniform(19_000e3, 25_000e3, n)
    c = rng.normal(mean, sd, n) - free_space_path_loss_db(r, BAND_FREQ["L1"])
    return Observables(np.arange(n, dtype=float), sv, 0, c, r, rng.uniform(0, 15, n), 14.5,
                       rng.uniform(-40, -10, n), rng.uniform(-150, -100, n), 0)


def test_control_grid_recovers_gaussian():
    obs = _gaussian_control(10_000, 1)
    g = build_control_grid(obs)
    n_total = sum(v[0] for v in g.bins.values())
    assert n_total == 10_000
    for zb in range(15):
        n, m, v = g.stats(3, "L1", zb)
        assert n > 500
        assert m == pytest.approx(225.0, abs=4 * 1.5 / math.sqrt(n))
        assert math.sqrt(v) == pytest.approx(1.5, rel=0.1)


def test_control_grid_skips_outside_window_and_survey_records():
    recs = [_rec(z_r=20.0), _rec(region="survey"), _rec(z_r=15.0)]
    g = build_control_grid(recs)
    assert list(g.bins) == [(5, 0, 14)]
    assert not g.usable(5, "L1", 14)


def test_single_record_bin_unusable():
    g = build_control_grid([_rec()], min_count=1)
    n, m, v = g.stats(5, "L1", 5)
    assert n == 1 and math.isnan(v)
    assert not g.usable(5, "L1", 5)
    with pytest.raises(UnusableBin):
        window_statistic([_rec(region="survey")], g, "L1")


def test_merge_equals_single_pass():
    obs = _gaussian_control(5000, 2)
    whole = build_control_grid(obs)
    merged = build_control_grid(obs.take(np.arange(0, 1700))).merge(
        build_control_grid(obs.take(np.arange(1700, 5000))))
    assert set(whole.bins) == set(merged.bins)
    for k in whole.bins:
        np.testing.assert_allclose(merged.bins[k], whole.bins[k], rtol=1e-9)
    with pytest.raises(ValueError):
        whole.merge(ControlGrid(bin_width=0.5))


def test_grid_json_round_trip(tmp_path):
    g = build_control_grid(_gaussian_control(2000, 3))
    g.save(tmp_path / "grid.json")
    back = ControlGrid.load(tmp_path / "grid.json")
    assert back.bins == g.bins
    assert (back.bin_width, back.z_max, back.min_count) == (1.0, 15.0, 100)
    bad = json.loads((tmp_path / "grid.json").read_text())
    bad["schema"] = 7
    with pytest.raises(ValueError):
        ControlGrid.from_json(bad)


def test_detect_at_control_mean_is_h0():
    g = build_control_grid(_gaussian_control(10_000, 4))
    recs = [_rec(region="survey", sv_id=3, z_r=z + 0.5,
                 cinr=g.stats(3, "L1", z)[1] - free_space_path_loss_db(20_000e3, BAND_FREQ["L1"]))
            for z in range(15)]
    assert window_statistic(recs, g, "L1") == pytest.approx(0.0, abs=1e-9)
    assert detect(recs, g, "L1") == "H0"
    low = [_rec(region="survey", sv_id=3, z_r=r.z_r, cinr=r.cinr - 6.0) for r in recs]
    assert detect(low, g, "L1") == "H1"
    with pytest.raises(ValueError):
        detect(recs, g, "L2")
    with pytest.raises(ValueError):
        detect([_rec(sv_id=3, z_r=16.0)], g, "L1")


def test_statistic_is_standard_normal_under_h0():
    g = build_control_grid(_gaussian_control(200_000, 5))
    obs = _gaussian_control(60_000, 6)
    obs.region[:] = 1
    obs.t[:] = np.repeat(np.arange(20_000), 3)
    tests = detect_windows(obs, g)
    assert len(tests) == 20_000 and np.all(tests.n == 3)
    assert np.mean(tests.statistic) == pytest.approx(0.0, abs=0.05)
    assert np.std(tests.statistic) == pytest.approx(1.0, abs=0.03)


def test_hotspot_counting():
    lat = [10.2, 10.7, 10.9, 11.5, -0.5]
    lon = [20.1, 20.2, 20.9, 20.5, 179.5]
    dec = [True, True, False, True, True]
    res = {(r.cell, r.band): r for r in hotspot_map(lat, lon, "L1", dec)}
    r = res[((10, 20), "L1")]
    assert (r.tests, r.events, r.ratio) == (3, 2, pytest.approx(2 / 3))
    assert r.bounds == (10.0, 20.0, 11.0, 21.0)
    assert res[((-1, 179), "L1")].events == 1
    assert [x.cell for x in select_hotspots(res.values(), min_events=2)] == [(10, 20)]
    assert hotspot_map([], [], "L1", []) == []


def test_hotspot_outputs(tmp_path):
    res = hotspot_map([10.5, 10.6], [20.5, 20.6], ["L1", "L2"], [True, False])
    gj = hotspots_geojson(res)
    assert gj["type"] == "FeatureCollection" and len(gj["features"]) == 2
    ring = gj["features"][0]["geometry"]["coordinates"][0]
    assert ring[0] == ring[-1] and ring[0] == [20.0, 10.0]
    write_hotspots_csv(res, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("lat_min") and len(lines) == 3


def test_observables_round_trip(tmp_path):
    obs = _gaussian_control(50, 7)
    write_observables(obs, tmp_path / "o.csv")
    back = read_observables(tmp_path / "o.csv")
    for name in ("t", "sv_id", "band", "cinr", "r_sr", "z_r", "lat", "lon", "region"):
        np.testing.assert_array_equal(getattr(back, name), getattr(obs, name))


def test_observables_malformed(tmp_path):
    obs = _gaussian_control(10, 8)
    path = tmp_path / "o.csv"
    write_observables(obs, path)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace("L1", "L9")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedRecord) as err:
        read_observables(path)
    assert err.value.line == 4
    path.write_text("a,b\n")
    with pytest.raises(MalformedRecord):
        read_observables(path)

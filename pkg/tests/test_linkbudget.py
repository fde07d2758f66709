import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leogeoloc.constants import F_L1, T_CHIP_L1CA
from leogeoloc.linkbudget import (
    UnsupportedConfiguration,
    budget_report,
    cinr_drop_from_interference,
    db_to_lin,
    excision_attenuation,
    interference_density,
    interference_power_from_cinr_drop,
    lin_to_db,
    matched_jamming_ratio,
    matched_vs_flat_advantage,
    received_power,
    sinc2_power_within,
    spoofing_efficiency_factor,
    transmit_power,
)

# values computed independently at 30 digits with mpmath, frozen here
P_I_6DB = -137.396606847
P_S_6DB = 18.541199433
JAM_RATIO_30 = 31.859668928
EFFICIENCY_30 = 1534.5
INSIDE_TWO_LOBES = 0.949939340
EXCISION_DB = 13.005034269


def test_db_helpers():
    assert db_to_lin(3.0) == pytest.approx(1.99526231, rel=1e-8)
    assert lin_to_db(100.0) == 20.0
    assert lin_to_db(0.0) == -math.inf


def test_interference_density_offset():
    # 10 log10(2 T_C / 3) for the 1.023 MHz chipping rate
    assert interference_density(0.0) == pytest.approx(-61.8597, abs=1e-4)


def test_six_db_drop_chain():
    p_i = interference_power_from_cinr_drop(6.0, -204.0)
    assert p_i == pytest.approx(P_I_6DB, abs=1e-6)
    r = budget_report(6.0, 1340e3, 3.0, -204.0)
    assert r["path_loss_db"] == pytest.approx(158.937806, abs=1e-6)
    assert r["P_S_dbw"] == pytest.approx(P_S_6DB, abs=1e-6)
    assert r["P_S_w"] == pytest.approx(db_to_lin(P_S_6DB))


def test_zero_drop_is_no_interference():
    assert interference_power_from_cinr_drop(0.0) == -math.inf
    assert cinr_drop_from_interference(-math.inf) == 0.0
    with pytest.raises(ValueError):
        interference_power_from_cinr_drop(-1.0)


def test_three_db_drop_matches_noise_density():
    # I0 equals N0 when the drop is 10 log10(2)
    p_i = interference_power_from_cinr_drop(10 * math.log10(2), -204.0)
    assert interference_density(p_i) == pytest.approx(-204.0, abs=1e-9)
    assert p_i == pytest.approx(-142.14, abs=0.01)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 40.0), st.floats(-215.0, -195.0))
def test_drop_round_trip(drop, n0):
    p_i = interference_power_from_cinr_drop(drop, n0)
    assert cinr_drop_from_interference(p_i, n0) == pytest.approx(drop, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(-200.0, -100.0), st.floats(0.01, 20.0))
def test_drop_monotone_in_power(p_i, step):
    assert cinr_drop_from_interference(p_i + step) > cinr_drop_from_interference(p_i)


def test_large_drop_slope_is_one():
    a = interference_power_from_cinr_drop(40.0)
    b = interference_power_from_cinr_drop(41.0)
    assert b - a == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.floats(-200, 0), st.floats(-10, 30), st.floats(100, 200))
def test_transmit_received_inverse(p_i, g, loss):
    p_s, watts = transmit_power(p_i, g, loss)
    assert received_power(p_s, g, loss) == pytest.approx(p_i, abs=1e-9)
    assert watts == pytest.approx(10 ** (p_s / 10))


def test_jamming_ratio_and_efficiency():
    assert matched_jamming_ratio(30.0) == pytest.approx(JAM_RATIO_30, abs=1e-6)
    assert spoofing_efficiency_factor(30.0) == pytest.approx(EFFICIENCY_30, abs=0.1)
    # one dB-Hz of threshold is one dB of ratio
    assert matched_jamming_ratio(20.0) == pytest.approx(41.8597, abs=1e-4)
    assert matched_jamming_ratio(30.0, T_C=2 * T_CHIP_L1CA) == pytest.approx(JAM_RATIO_30 - 3.0103, abs=1e-4)


def test_matched_vs_flat():
    assert matched_vs_flat_advantage() == pytest.approx(4.25969, abs=1e-5)
    # a flat jammer spanning 1.5 / T_C is exactly as potent
    assert matched_vs_flat_advantage(flat_span_multiple=1.5) == pytest.approx(0.0, abs=1e-12)
    assert matched_vs_flat_advantage(flat_span_multiple=8.0) == pytest.approx(7.27, abs=0.01)
    with pytest.raises(ValueError):
        matched_vs_flat_advantage(flat_span_multiple=0.0)


def test_sinc2_power_fractions():
    assert sinc2_power_within(0.0) == 0.0
    assert sinc2_power_within(1.0) == pytest.approx(0.902823, abs=1e-6)
    assert sinc2_power_within(2.0) == pytest.approx(INSIDE_TWO_LOBES, abs=1e-6)
    assert sinc2_power_within(1e4) == pytest.approx(1.0, abs=1e-4)
    assert -lin_to_db(1 - sinc2_power_within(3.0)) == pytest.approx(14.737956, abs=1e-5)
    vals = [sinc2_power_within(x) for x in (0.5, 1.0, 1.5, 2.0, 3.0)]
    assert vals == sorted(vals)


def test_excision():
    assert excision_attenuation("main+2sides") == pytest.approx(EXCISION_DB, abs=1e-4)
    assert excision_attenuation("none") == pytest.approx(0.0)
    assert excision_attenuation("main") < excision_attenuation("main+2sides") < excision_attenuation(
        "main+4sides")
    with pytest.raises(UnsupportedConfiguration):
        excision_attenuation("everything")


def test_report_keys():
    r = budget_report()
    assert r["inputs"]["freq_hz"] == F_L1
    assert r["excision_attenuation_db"] == pytest.approx(EXCISION_DB, abs=1e-4)
    assert r["matched_vs_flat_advantage_db"] == pytest.approx(4.25969, abs=1e-5)

"""Physical constants shared across the package."""

import math

C = 299792458.0  # speed of light, m/s

# WGS-84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_EP2 = WGS84_E2 / (1.0 - WGS84_E2)

MU_EARTH = 3.986004418e14  # m^3/s^2
OMEGA_EARTH = 7.2921150e-5  # rad/s

F_L1 = 1575.42e6
F_L2 = 1227.60e6
BAND_FREQ = {"L1": F_L1, "L2": F_L2}

T_CHIP_L1CA = 1.0 / 1.023e6  # s

TWO_PI = 2.0 * math.pi

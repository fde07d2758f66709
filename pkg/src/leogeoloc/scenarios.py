"""Reconstructed capture geometries for the emitter-geolocation studies.

The original receiver ephemerides are not available, so each pass is
rebuilt from a circular ISS-like orbit phased to a chosen cross-track
offset from the emitter, then windowed to match the reported capture
length and displacement.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geodesy import GeodeticPosition
from .orbits import Pass, design_orbit, propagate_circular

EMITTER = GeodeticPosition(35.4, 35.95, 48.0)
ALTITUDE_PRIOR = (48.0, 5.0)


@dataclass(frozen=True)
class PassPlan:
    label: str
    offset_m: float  # signed cross-track offset of the emitter, + = left of travel
    ascending: bool
    window_start: float  # s relative to closest approach
    duration: float = 60.0
    rate: float = 20.0
    w_sigma: float = 2.3  # Hz, white Doppler noise / recorded measurement sigma

    def build(self, target: GeodeticPosition) -> Pass:
        spec = design_orbit(target, self.offset_m, ascending=self.ascending, t_ca=0.0)
        return propagate_circular(spec, self.window_start, self.duration, self.rate, label=self.label)


@dataclass(frozen=True)
class Scenario:
    name: str
    transmitter: GeodeticPosition
    plans: tuple
    altitude_prior: tuple = ALTITUDE_PRIOR

    def passes(self) -> list[Pass]:
        return [p.build(self.transmitter) for p in self.plans]

    @property
    def sigmas(self) -> list[float]:
        return [p.w_sigma for p in self.plans]


# Single low-elevation pass far to one side of the emitter, captured well before
# closest approach: about 442 km of receiver displacement in 60 s.
DAY144 = Scenario("day144", EMITTER, (PassPlan("d144", -1010e3, True, -150.0, w_sigma=2.3),))

# Three passes with distinct ground-track headings (about 42, 59 and 120 deg).
THREE_PASS = Scenario("three_pass", EMITTER, (
    PassPlan("d074", 600e3, True, -120.0, w_sigma=2.4),
    PassPlan("d144", -1010e3, True, -150.0, w_sigma=2.3),
    PassPlan("d151", -1000e3, False, 0.0, w_sigma=2.5),
))

SCENARIOS = {s.name: s for s in (DAY144, THREE_PASS)}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None

"""Turn bound-holding control levels into ON/OFF switching with a minimum period.

A unit holding the upper bound runs ON for ``lam`` then OFF for the rest of
each period; at the lower bound the pattern starts OFF so the temperature
first rises away from the bound and returns to it.  ``lam`` is chosen so that
the temperature at the end of every period equals that of the relaxed level.
A phase that is not a whole number of periods ends with one shorter period
built the same way.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from . import dynamics
from .dynamics import PiecewiseControl
from .errors import DomainError
from .model import boundary_controls

ON, OFF = "ON", "OFF"


def duty_on_time(u_hat, unit, t_m, off_first=False):
    """ON time per period of length ``t_m`` that reproduces level ``u_hat``.

    For ON-first periods ``lam = log(1 + (exp(alpha t_m) - 1) u_hat) / alpha``.
    OFF-first periods put the ON stretch at the end of the period, where it
    weighs more, so the matching time is
    ``lam = -log(1 - (1 - exp(-alpha t_m)) u_hat) / alpha``.
    """
    if t_m <= 0:
        raise ValueError("switching period must be positive")
    if not 0.0 <= u_hat <= 1.0:
        raise ValueError("u_hat must lie in [0, 1]")
    if u_hat == 0.0:
        return 0.0
    if u_hat == 1.0:
        return t_m
    a = unit.alpha
    if off_first:
        lam = -math.log1p(u_hat * math.expm1(-a * t_m)) / a
    else:
        lam = math.log1p(math.expm1(a * t_m) * u_hat) / a
    return min(max(lam, 0.0), t_m)


def period_pattern(start, lam, t_m, off_first):
    """``(start, end, state)`` pieces of one full period."""
    if off_first:
        cut = start + t_m - lam
        return [(start, cut, OFF), (cut, start + t_m, ON)]
    cut = start + lam
    return [(start, cut, ON), (cut, start + t_m, OFF)]


@dataclass(frozen=True)
class SwitchSchedule:
    units: tuple  # per unit: tuple of (start, end, state)
    period: float

    def controls(self):
        """Replayable 0/1 controls, one per unit."""
        return tuple(PiecewiseControl.from_phases([(a, b, 1.0 if s == ON else 0.0) for a, b, s in runs],
                                                  min_length=0.0)
                     for runs in self.units)

    def energy(self):
        return math.fsum(b - a for runs in self.units for a, b, s in runs if s == ON)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["unit_id", "start", "end", "state"])
            for i, runs in enumerate(self.units, start=1):
                for a, b, s in runs:
                    w.writerow([i, f"{a:.6f}", f"{b:.6f}", s])


def _merge(runs):
    out = []
    for a, b, s in runs:
        if b - a <= 0.0:
            continue
        if out and out[-1][2] == s and abs(out[-1][1] - a) <= 1e-12:
            out[-1] = (out[-1][0], b, s)
        else:
            out.append((a, b, s))
    return tuple(out)


def _close(a, b):
    return abs(a - b) <= 1e-12


def synthesize_unit(control: PiecewiseControl, unit, ambient, t_m):
    """ON/OFF runs for one unit's relaxed control."""
    if t_m <= 0:
        raise ValueError("switching period must be positive")
    u_bar, u_under = boundary_controls(unit, ambient)
    runs = []
    for a, b, v in control.pieces():
        if _close(v, 0.0) or _close(v, 1.0):
            runs.append((a, b, ON if _close(v, 1.0) else OFF))
            continue
        if _close(v, u_bar):
            off_first = False
        elif _close(v, u_under):
            off_first = True
        else:
            raise DomainError(f"level {v} is not one of 0, 1, {u_bar}, {u_under}")
        lam = duty_on_time(v, unit, t_m, off_first)
        whole = int(math.floor((b - a) / t_m + 1e-9))
        for k in range(whole):
            runs += period_pattern(a + k * t_m, lam, t_m, off_first)
        # the leftover piece gets its own exact pattern so the state still
        # matches the relaxed plan where the phase ends
        s = a + whole * t_m
        if b - s > 1e-12:
            rest = b - s
            runs += period_pattern(s, duty_on_time(v, unit, rest, off_first), rest, off_first)
    return _merge(runs)


def synthesize(plan, scenario, t_m=None) -> SwitchSchedule:
    """Implementable schedule for every unit of ``plan`` (anything with ``controls``)."""
    t_m = scenario.t_min_switch if t_m is None else t_m
    controls = getattr(plan, "controls", plan)
    units = tuple(synthesize_unit(c, u, scenario.ambient, t_m) for c, u in zip(controls, scenario.fleet.units))
    return SwitchSchedule(units, t_m)


def overshoot_bound(level, unit, t_m, ambient):
    """Largest distance from the held bound reached inside one switching period."""
    u_bar, u_under = boundary_controls(unit, ambient)
    if _close(level, 0.0) or _close(level, 1.0):
        return 0.0
    if _close(level, u_bar):
        lam = duty_on_time(level, unit, t_m)
        return unit.upper - dynamics.step(unit.upper, 1.0, lam, unit, ambient)
    if _close(level, u_under):
        lam = duty_on_time(level, unit, t_m, off_first=True)
        return dynamics.step(unit.lower, 0.0, t_m - lam, unit, ambient) - unit.lower
    raise DomainError(f"level {level} is not a bound-holding level")


def energy_deviation(schedule: SwitchSchedule, plan):
    """Energy of the schedule minus the energy of the relaxed plan."""
    controls = getattr(plan, "controls", plan)
    return schedule.energy() - math.fsum(c.energy() for c in controls)

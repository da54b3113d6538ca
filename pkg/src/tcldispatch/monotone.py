"""Explicit optimal plans for a homogeneous fleet over one monotone price segment.

For a rising price every unit cools at full power (holding at ``lower`` once
it gets there) until a common switch time, then coasts up to ``upper`` and
holds.  A falling price mirrors this: coast to ``upper`` and hold, then cool at
full power from the switch time on, holding at ``lower`` if it is reached.
The switch time is pinned by the energy budget and found by bisection.

The budget multiplier ``pi_star`` is recovered from the costate of each unit;
:func:`verify_certificate` rebuilds those costates and checks the switching
conditions of the maximum principle along the plan.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics
from .dynamics import PiecewiseControl
from .errors import DomainError, HeterogeneousFleetError, InfeasibleError, NonMonotonePriceError
from .model import Fleet, PriceForecast, Scenario, boundary_controls, energy_range

log = logging.getLogger(__name__)

INCREASING = "increasing"
DECREASING = "decreasing"

T_TOL = 1e-10
MONOTONE_GRID = 1e-3
BAND_SNAP = 1e-6


# -- closed-form times -------------------------------------------------------


def entry_time_L(unit, ambient):
    """Time for ``unit`` to cool from ``x0`` to its lower bound at full power."""
    num = unit.x0 + unit.beta / unit.alpha - ambient
    den = unit.lower + unit.beta / unit.alpha - ambient
    if den <= 0 or num / den < 1.0:
        raise DomainError("unit cannot reach its lower bound under full cooling")
    return math.log(num / den) / unit.alpha


def drift_time_L_to_U(unit, ambient):
    """Time to warm from the lower to the upper bound with the unit off."""
    if ambient <= unit.upper:
        raise DomainError("ambient must exceed the upper bound")
    return math.log((ambient - unit.lower) / (ambient - unit.upper)) / unit.alpha


def drain_time_U_to_L(unit, ambient):
    """Time to cool from the upper to the lower bound at full power."""
    num = unit.upper - ambient + unit.beta / unit.alpha
    den = unit.lower - ambient + unit.beta / unit.alpha
    if den <= 0 or num <= 0:
        raise DomainError("unit cannot drain from upper to lower bound")
    return math.log(num / den) / unit.alpha


# -- problem and plan --------------------------------------------------------


@dataclass(frozen=True)
class SegmentProblem:
    """One monotone stretch ``[start, end]`` of the horizon with its energy share."""

    fleet: Fleet
    price: PriceForecast
    direction: str
    ambient: float
    energy: float
    start: float
    end: float
    initial_temps: tuple

    def __post_init__(self):
        if self.direction not in (INCREASING, DECREASING):
            raise ValueError(f"unknown direction {self.direction!r}")
        # chained segments hand over temperatures that can sit a rounding error
        # outside the band; snap those onto it so entry times start at zero
        temps = []
        for x, unit in zip(self.initial_temps, self.fleet.units):
            x = float(x)
            if unit.lower - BAND_SNAP <= x < unit.lower:
                x = unit.lower
            elif unit.upper < x <= unit.upper + BAND_SNAP:
                x = unit.upper
            temps.append(x)
        object.__setattr__(self, "initial_temps", tuple(temps))

    @property
    def duration(self):
        return self.end - self.start

    @classmethod
    def from_scenario(cls, scenario: Scenario, direction=None):
        if direction is None:
            rise = scenario.price.value(scenario.horizon) - scenario.price.value(0.0)
            direction = INCREASING if rise >= 0 else DECREASING
        return cls(scenario.fleet, scenario.price, direction, scenario.ambient, scenario.budget,
                   0.0, scenario.horizon, scenario.fleet.initial_temps())

    def energy_range(self):
        return energy_range(self.fleet.units, self.ambient, self.duration, self.initial_temps)

    def check_monotone(self):
        n = max(2, int(math.ceil(self.duration / MONOTONE_GRID)) + 1)
        values = self.price.value(np.linspace(self.start, self.end, n))
        diffs = np.diff(values)
        slack = 1e-12 * max(1.0, float(np.max(np.abs(values))))
        bad = diffs < -slack if self.direction == INCREASING else diffs > slack
        if np.any(bad):
            k = int(np.argmax(bad))
            raise NonMonotonePriceError(
                f"price is not {self.direction} on [{self.start}, {self.end}] "
                f"(near t={self.start + k * self.duration / (n - 1):.4f})")


def price_accelerates(price, start, end, samples=2001, tol=1e-9):
    """True when the price gets steeper somewhere on ``[start, end]``.

    The explicit plan is certified for prices whose slope flattens out (affine,
    concave rising, convex falling); on stretches where the slope grows in
    magnitude a cheaper plan with an extra cool-down cycle can exist.
    """
    ts = np.linspace(start, end, samples)
    steepness = np.abs(np.asarray(price.derivative(ts), dtype=float))
    return bool(np.any(np.diff(steepness) > tol * max(1.0, float(steepness.max()))))


@dataclass(frozen=True)
class RelaxedPlan:
    """Optimal relaxed controls of a segment plus the quantities that certify them.

    ``t_star`` is the common switch time; it is ``None`` when units starting
    from different temperatures end up switching at different times (see
    ``switch_times``).  Entry times are ``None`` for bounds not reached.
    """

    direction: str
    start: float
    end: float
    controls: tuple
    switch_times: tuple
    t_star: Optional[float]
    entry_times_L: tuple
    entry_times_U: tuple
    pi_star: float
    unit_multipliers: tuple
    cost: float
    energy: float
    initial_temps: tuple
    final_temps: tuple
    u_bar: float
    u_under: float

    @property
    def synchronized(self):
        return self.t_star is not None

    def to_dict(self):
        return {
            "direction": self.direction,
            "start": self.start,
            "end": self.end,
            "t_star": self.t_star,
            "switch_times": list(self.switch_times),
            "entry_times_L": list(self.entry_times_L),
            "entry_times_U": list(self.entry_times_U),
            "pi_star": self.pi_star,
            "unit_multipliers": list(self.unit_multipliers),
            "cost": self.cost,
            "energy": self.energy,
            "initial_temps": list(self.initial_temps),
            "final_temps": list(self.final_temps),
            "u_bar": self.u_bar,
            "u_under": self.u_under,
            "units": [{"breakpoints": list(c.breakpoints), "levels": list(c.values)} for c in self.controls],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class _UnitPath:
    phases: list
    energy: float
    first_entry: Optional[float]
    second_entry: Optional[float]
    multiplier: float


def _unit_path(direction, t_sw, unit, ambient, x_start, start, end, price, u_bar, u_under) -> _UnitPath:
    if direction == INCREASING:
        lead, hold1, bound1 = 1.0, u_under, unit.lower
        tail, hold2, bound2 = 0.0, u_bar, unit.upper
    else:
        lead, hold1, bound1 = 0.0, u_bar, unit.upper
        tail, hold2, bound2 = 1.0, u_under, unit.lower
    t_in1 = start + dynamics.time_to_reach(x_start, bound1, lead, unit, ambient)
    a = min(t_in1, t_sw)
    x_sw = bound1 if t_sw >= t_in1 else dynamics.step(x_start, lead, t_sw - start, unit, ambient)
    t_in2 = t_sw + dynamics.time_to_reach(x_sw, bound2, tail, unit, ambient)
    # an entry within 1e-9 of the end counts as ending on the bound, not holding it
    b = t_in2 if t_in2 < end - 1e-9 else end
    phases = [(start, a, lead), (a, t_sw, hold1), (t_sw, b, tail), (b, end, hold2)]
    energy = lead * (a - start) + hold1 * (t_sw - a) + tail * (b - t_sw) + hold2 * (end - b)
    if t_in2 < end - 1e-9:
        mult = junction_multiplier(price, t_sw, t_in2 - t_sw, unit.alpha)
    else:
        mult = float(price.value(t_sw))
    return _UnitPath(phases, energy, t_in1 if t_in1 <= t_sw else None, t_in2 if t_in2 <= end else None, mult)


def junction_multiplier(price, t_switch, arc, alpha):
    """Budget multiplier that makes the switching function vanish at ``t_switch``
    when the following free arc of length ``arc`` ends on a comfort bound."""
    if arc < 1e-9:
        return float(price.value(t_switch) - price.derivative(t_switch) / alpha)
    growth = math.exp(alpha * arc)
    return float((price.value(t_switch + arc) - price.value(t_switch) * growth) / (1.0 - growth))


class _Segment:
    """Per-unit path construction bound to one problem."""

    def __init__(self, problem: SegmentProblem):
        self.p = problem
        self.units = problem.fleet.units
        self.u_bar, self.u_under = boundary_controls(self.units[0], problem.ambient)

    def path(self, i, t_sw) -> _UnitPath:
        p = self.p
        return _unit_path(p.direction, t_sw, self.units[i], p.ambient, p.initial_temps[i],
                          p.start, p.end, p.price, self.u_bar, self.u_under)

    def energy(self, t_sw):
        return math.fsum(self.path(i, t_sw).energy for i in range(len(self.units)))

    @property
    def rising(self):
        return self.p.direction == INCREASING


def _bisect(pred, lo, hi, tol=T_TOL, max_iter=200):
    """Largest ``t`` in ``[lo, hi]`` with ``pred(t)`` true, given ``pred`` true at ``lo``
    and monotone (true then false)."""
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi


def _check(problem: SegmentProblem, direction):
    if problem.direction != direction:
        raise NonMonotonePriceError(f"problem is {problem.direction}, solver expects {direction}")
    if not problem.fleet.homogeneous():
        raise HeterogeneousFleetError(
            "explicit segment solution requires equal unit parameters; use tcldispatch.oracle")
    problem.check_monotone()


def solve_increasing(problem: SegmentProblem) -> RelaxedPlan:
    _check(problem, INCREASING)
    return _solve(problem)


def solve_decreasing(problem: SegmentProblem) -> RelaxedPlan:
    _check(problem, DECREASING)
    return _solve(problem)


def solve_segment(problem: SegmentProblem) -> RelaxedPlan:
    if problem.direction == INCREASING:
        return solve_increasing(problem)
    return solve_decreasing(problem)


def _solve(problem: SegmentProblem) -> RelaxedPlan:
    seg = _Segment(problem)
    p = problem
    E = p.energy
    e_lo_end = seg.energy(p.start)
    e_hi_end = seg.energy(p.end)
    e_min, e_max = min(e_lo_end, e_hi_end), max(e_lo_end, e_hi_end)
    slack = 1e-9 * max(1.0, abs(E))
    if not (e_min - slack <= E <= e_max + slack):
        raise InfeasibleError(
            f"segment [{p.start:g}, {p.end:g}] cannot absorb energy {E:.6f}; feasible [{e_min:.6f}, {e_max:.6f}]")

    # energy rises with the switch time for a rising price and falls for a falling one
    if seg.rising:
        lo, hi = _bisect(lambda t: seg.energy(t) <= E, p.start, p.end)
    else:
        lo, hi = _bisect(lambda t: seg.energy(t) >= E, p.start, p.end)
    t_star = _interpolate_root(seg.energy, lo, hi, E)

    n = len(seg.units)
    paths = [seg.path(i, t_star) for i in range(n)]
    mults = [q.multiplier for q in paths]
    scale = max(1.0, max(abs(m) for m in mults))
    if max(mults) - min(mults) <= 1e-9 * scale:
        return _assemble(seg, [t_star] * n, paths, float(np.mean(mults)), t_star)

    log.debug("unit multipliers disagree at common switch time (spread %.3g); splitting switch times",
              max(mults) - min(mults))
    return _solve_desynchronized(seg)


def _interpolate_root(fn, lo, hi, target):
    if hi <= lo:
        return lo
    f_lo, f_hi = fn(lo), fn(hi)
    if f_hi == f_lo:
        return 0.5 * (lo + hi)
    t = lo + (target - f_lo) * (hi - lo) / (f_hi - f_lo)
    return min(max(t, lo), hi)


def _solve_desynchronized(seg: _Segment) -> RelaxedPlan:
    """Common multiplier, unit-specific switch times.

    Each unit's multiplier as a function of its own switch time is monotone in
    the same sense as its energy, so for a trial multiplier every unit's switch
    time follows by bisection, and the multiplier itself is bisected on the
    budget.  A final interpolation between the bracketing switch-time vectors
    meets the budget exactly.
    """
    p = seg.p
    n = len(seg.units)
    E = p.energy
    rising = seg.rising

    def switch_time(i, pi):
        mult = lambda t: seg.path(i, t).multiplier
        if rising:
            if mult(p.start) > pi:
                return p.start
            return _bisect(lambda t: mult(t) <= pi, p.start, p.end, tol=1e-13)[0]
        if mult(p.end) > pi:
            return p.end
        # multiplier falls with t: find the smallest t with mult(t) <= pi
        lo, hi = _bisect(lambda t: mult(t) > pi, p.start, p.end, tol=1e-13)
        return hi if mult(p.start) > pi else p.start

    def total(times):
        return math.fsum(seg.path(i, t).energy for i, t in enumerate(times))

    low_end, high_end = (p.start, p.end) if rising else (p.end, p.start)
    pi_lo = min(seg.path(i, low_end).multiplier for i in range(n)) - 1.0
    pi_hi = max(seg.path(i, high_end).multiplier for i in range(n)) + 1.0
    times_lo = [switch_time(i, pi_lo) for i in range(n)]
    times_hi = [switch_time(i, pi_hi) for i in range(n)]
    for _ in range(200):
        if pi_hi - pi_lo <= 1e-13 * max(1.0, abs(pi_hi)):
            break
        mid = 0.5 * (pi_lo + pi_hi)
        times = [switch_time(i, mid) for i in range(n)]
        if total(times) <= E:
            pi_lo, times_lo = mid, times
        else:
            pi_hi, times_hi = mid, times

    def blend(theta):
        return [a + theta * (b - a) for a, b in zip(times_lo, times_hi)]

    th_lo, th_hi = _bisect(lambda th: total(blend(th)) <= E, 0.0, 1.0, tol=1e-15)
    times = blend(_interpolate_root(lambda th: total(blend(th)), th_lo, th_hi, E))
    paths = [seg.path(i, t) for i, t in enumerate(times)]
    common = times[0] if max(times) - min(times) <= 1e-9 else None
    return _assemble(seg, times, paths, 0.5 * (pi_lo + pi_hi), common)


def _assemble(seg: _Segment, times, paths, pi_star, t_star) -> RelaxedPlan:
    p = seg.p
    controls = tuple(PiecewiseControl.from_phases(q.phases) for q in paths)
    finals = []
    for c, unit, x in zip(controls, seg.units, p.initial_temps):
        finals.append(float(dynamics.propagate(c, unit, p.ambient, x, [p.end])[0]))
    if p.direction == INCREASING:
        entry_L = tuple(q.first_entry for q in paths)
        entry_U = tuple(q.second_entry for q in paths)
    else:
        entry_U = tuple(q.first_entry for q in paths)
        entry_L = tuple(q.second_entry for q in paths)
    return RelaxedPlan(
        direction=p.direction,
        start=p.start,
        end=p.end,
        controls=controls,
        switch_times=tuple(float(t) for t in times),
        t_star=None if t_star is None else float(t_star),
        entry_times_L=entry_L,
        entry_times_U=entry_U,
        pi_star=float(pi_star),
        unit_multipliers=tuple(q.multiplier for q in paths),
        cost=dynamics.cost(controls, p.price),
        energy=math.fsum(c.energy() for c in controls),
        initial_temps=p.initial_temps,
        final_temps=tuple(finals),
        u_bar=seg.u_bar,
        u_under=seg.u_under,
    )


def isoperimetric_energy(problem: SegmentProblem, t_switch):
    """Energy consumed by the segment plan that switches every unit at ``t_switch``."""
    return _Segment(problem).energy(t_switch)


def plan_with_switch(problem: SegmentProblem, t_switch, pi_star=None) -> RelaxedPlan:
    """Segment plan with every unit forced to switch at ``t_switch``.

    The energy follows from the switch time rather than the problem's budget.
    ``pi_star`` defaults to the multiplier implied by the first unit.
    """
    seg = _Segment(problem)
    paths = [seg.path(i, t_switch) for i in range(len(seg.units))]
    if pi_star is None:
        pi_star = paths[0].multiplier
    return _assemble(seg, [t_switch] * len(paths), paths, pi_star, t_switch)


# -- optimality certificate --------------------------------------------------


@dataclass
class Condition:
    name: str
    unit: int
    value: float
    threshold: float
    passed: bool

    @property
    def margin(self):
        return self.threshold - self.value


@dataclass
class CertificateReport:
    conditions: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.conditions)

    @property
    def failures(self):
        return [c for c in self.conditions if not c.passed]

    def worst(self, name):
        cs = [c for c in self.conditions if c.name == name]
        return min(cs, key=lambda c: c.margin) if cs else None

    def summary(self):
        lines = []
        for name in dict.fromkeys(c.name for c in self.conditions):
            w = self.worst(name)
            lines.append(f"{name:<16} {'pass' if w.passed else 'FAIL'}  worst={w.value:.3e} limit={w.threshold:.1e}")
        return "\n".join(lines)


def _is_level(v, level):
    return abs(v - level) <= 1e-12


def _terminal_costate(pi, price, unit, a, b, level, ctrl, ambient, x0):
    """Costate at the horizon for a final free arc.

    It is zero unless the arc ends exactly on the bound it is heading for.  The
    active end constraint then allows a jump, ``q <= 0`` at the upper bound and
    ``q >= 0`` at the lower one, and the value matching the junction at ``a``
    is used when it has the admissible sign.
    """
    x_end = float(dynamics.propagate(ctrl, unit, ambient, x0, [b])[0])
    bound = unit.lower if _is_level(level, 1.0) else unit.upper
    if abs(x_end - bound) > BAND_SNAP:
        return 0.0
    q_b = (pi - float(price.value(a))) * math.exp(unit.alpha * (b - a)) / unit.beta
    admissible = q_b >= 0.0 if bound == unit.lower else q_b <= 0.0
    return q_b if admissible else 0.0


def verify_certificate(plan: RelaxedPlan, problem: SegmentProblem, tol=1e-6, samples=64, bound_tol=1e-6,
                       energy_tol=1e-8) -> CertificateReport:
    """Check the maximum-principle conditions of ``plan`` with its multiplier.

    The costate ``q`` of each unit is rebuilt backwards from ``q(end) = 0``:
    on bound-holding arcs it equals ``(pi_star - price)/beta``, on free arcs it
    grows like ``exp(alpha t)``.  The switching function
    ``pi_star - price - beta q`` must be non-negative where the unit is on,
    non-positive where it is off and zero at every junction.  ``bound_tol``
    and ``energy_tol`` can be loosened to check plans read off a time grid.
    """
    report = CertificateReport()
    price = problem.price
    pi = plan.pi_star
    u_bar, u_under = plan.u_bar, plan.u_under
    add = report.conditions.append
    energy_gap = abs(plan.energy - problem.energy)
    energy_limit = energy_tol * max(1.0, abs(problem.energy))
    add(Condition("energy", -1, energy_gap, energy_limit, energy_gap <= energy_limit))

    for i, (ctrl, unit, x0) in enumerate(zip(plan.controls, problem.fleet.units, problem.initial_temps)):
        pieces = ctrl.pieces()
        admissible = (0.0, 1.0, u_bar, u_under)
        odd = [v for _, _, v in pieces if not any(_is_level(v, lv) for lv in admissible)]
        add(Condition("levels", i, float(len(odd)), 0.5, not odd))

        # boundary arcs must sit on their bound
        worst_bound = 0.0
        for a, b, v in pieces:
            bound = unit.upper if _is_level(v, u_bar) else unit.lower if _is_level(v, u_under) else None
            if bound is None:
                continue
            ts = np.linspace(a, b, 5)
            xs = dynamics.propagate(ctrl, unit, problem.ambient, x0, ts)
            worst_bound = max(worst_bound, float(np.max(np.abs(xs - bound))))
        add(Condition("boundary_arcs", i, worst_bound, bound_tol, worst_bound <= bound_tol))

        # a hold shorter than the bound tolerance at the very end is the unit
        # arriving on the bound at the horizon, handled as an end constraint
        costate_pieces = list(pieces)
        a_last, b_last, v_last = costate_pieces[-1]
        if len(costate_pieces) > 1 and b_last - a_last < 1e-6 and \
                (_is_level(v_last, u_bar) or _is_level(v_last, u_under)):
            a_prev, _, v_prev = costate_pieces[-2]
            costate_pieces[-2:] = [(a_prev, b_last, v_prev)]
        pieces = costate_pieces
        worst_on, worst_off, worst_junction = -math.inf, -math.inf, 0.0
        q_left = 0.0  # costate at the left end of the arc processed last
        for k in range(len(pieces) - 1, -1, -1):
            a, b, v = pieces[k]
            if _is_level(v, u_bar) or _is_level(v, u_under):
                q_left = (pi - float(price.value(a))) / unit.beta
                continue
            q_b = 0.0 if k == len(pieces) - 1 else q_left
            if k == len(pieces) - 1 and k > 0:
                q_b = _terminal_costate(pi, price, unit, a, b, v, ctrl, problem.ambient, x0)
            ts = np.linspace(a, b, samples + 2)
            q = q_b * np.exp(-unit.alpha * (b - ts))
            phi = pi - price.value(ts) - unit.beta * q
            if _is_level(v, 1.0):
                worst_on = max(worst_on, float(np.max(-phi)))
            else:
                worst_off = max(worst_off, float(np.max(phi)))
            if k > 0:
                worst_junction = max(worst_junction, abs(float(phi[0])))
            q_left = float(q[0])
        if worst_on > -math.inf:
            add(Condition("switching_on", i, worst_on, tol, worst_on <= tol))
        if worst_off > -math.inf:
            add(Condition("switching_off", i, worst_off, tol, worst_off <= tol))
        add(Condition("complementarity", i, worst_junction, tol, worst_junction <= tol))
    return report

"""Budget allocation across the monotone stretches of a general price forecast.

The horizon is split where the price changes direction; each stretch is solved
explicitly for its energy share with the temperatures left by the previous
stretch, and the shares are moved towards stretches with a lower budget
multiplier until all multipliers agree.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError
from .model import Scenario, energy_range
from .monotone import DECREASING, INCREASING, SegmentProblem, solve_segment

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segmentation:
    boundaries: tuple
    directions: tuple

    def __post_init__(self):
        if len(self.boundaries) != len(self.directions) + 1 or not self.directions:
            raise ValueError("need M >= 1 directions and M + 1 boundaries")

    def __len__(self):
        return len(self.directions)

    @property
    def lengths(self):
        return tuple(b - a for a, b in zip(self.boundaries, self.boundaries[1:]))

    def intervals(self):
        return list(zip(self.boundaries[:-1], self.boundaries[1:], self.directions))

    def to_dict(self):
        return {"boundaries": list(self.boundaries), "directions": list(self.directions)}


def segment_price(price, horizon) -> Segmentation:
    """Cut ``[0, horizon]`` into maximal monotone pieces of ``price``."""
    cuts = [t for t in price.stationary_points() if 0.0 < t < horizon]
    bounds = [0.0] + cuts + [float(horizon)]
    dirs = []
    for a, b in zip(bounds, bounds[1:]):
        rise = float(price.value(b)) - float(price.value(a))
        dirs.append(INCREASING if rise >= 0 else DECREASING)
    # merge neighbours that ended up with the same direction (flat pieces)
    merged_b, merged_d = [bounds[0]], []
    for b, d in zip(bounds[1:], dirs):
        if merged_d and merged_d[-1] == d:
            merged_b[-1] = b
        else:
            merged_b.append(b)
            merged_d.append(d)
    return Segmentation(tuple(merged_b), tuple(merged_d))


def segment_energy_limits(segmentation: Segmentation, fleet, ambient):
    """Per-segment ``(min, max)`` energy for units entering on a comfort bound."""
    return [energy_range(fleet.units, ambient, length) if length > 0 else (0.0, 0.0)
            for length in segmentation.lengths]


@dataclass(frozen=True)
class Evaluation:
    plans: tuple
    multipliers: tuple
    total_cost: float


def _solve_chain(energies, scenario, intervals, temps):
    plans = []
    for (a, b, direction), e in zip(intervals, energies):
        problem = SegmentProblem(scenario.fleet, scenario.price, direction, scenario.ambient,
                                 float(e), a, b, temps)
        plan = solve_segment(problem)
        plans.append(plan)
        temps = plan.final_temps
    return plans


def evaluate_allocation(energies, scenario: Scenario, segmentation: Segmentation) -> Evaluation:
    """Solve the segments left to right for the given energy shares.

    Each segment starts from the temperatures its predecessor ends with.
    """
    plans = _solve_chain(energies, scenario, segmentation.intervals(), scenario.fleet.initial_temps())
    return Evaluation(tuple(plans), tuple(p.pi_star for p in plans), math.fsum(p.cost for p in plans))


def chained_multipliers(energies, scenario: Scenario, segmentation: Segmentation, evaluation=None, delta=1e-6):
    """Marginal cost of one more unit of energy in each segment, downstream effects included.

    A segment's own multiplier ignores that the temperatures it leaves behind
    change what the later segments pay; this forward difference does not.
    Segments that cannot take more energy are differenced backwards.
    """
    ev = evaluate_allocation(energies, scenario, segmentation) if evaluation is None else evaluation
    intervals = segmentation.intervals()
    costs = [p.cost for p in ev.plans]
    out = []
    for j in range(len(intervals)):
        temps = ev.plans[j - 1].final_temps if j else scenario.fleet.initial_temps()
        base = math.fsum(costs[j:])
        for h in (delta, -delta):
            shifted = np.array(energies[j:], dtype=float)
            shifted[0] += h
            try:
                plans = _solve_chain(shifted, scenario, intervals[j:], temps)
            except InfeasibleError:
                continue
            out.append((math.fsum(p.cost for p in plans) - base) / h)
            break
        else:
            out.append(ev.plans[j].pi_star)
    return tuple(out)


def project_allocation(energies, limits, total, tol=1e-9):
    """Clamp shares into their limits and rescale the free ones to sum to ``total``."""
    e = np.asarray(energies, dtype=float).copy()
    lo = np.array([l for l, _ in limits])
    hi = np.array([h for _, h in limits])
    if lo.sum() > total + tol or hi.sum() < total - tol:
        raise InfeasibleError(f"no allocation of {total} fits the segment limits")
    saturated = np.zeros(len(e), dtype=bool)
    for _ in range(2 * len(e) + 1):
        below, above = e < lo, e > hi
        e = np.clip(e, lo, hi)
        saturated |= below | above
        free = ~saturated
        remaining = total - e[saturated].sum()
        if not free.any():
            break
        if e[free].sum() > 0:
            e[free] *= remaining / e[free].sum()
        else:
            e[free] = remaining / free.sum()
        if np.all(e >= lo - tol) and np.all(e <= hi + tol):
            break
    e = np.clip(e, lo, hi)
    gap = total - e.sum()
    if abs(gap) > tol:
        # spread what rescaling could not place over the remaining room
        room = (hi - e) if gap > 0 else (e - lo)
        if room.sum() < abs(gap) - tol:
            raise InfeasibleError("all segments saturated and the budget does not match")
        e += np.sign(gap) * room * (abs(gap) / room.sum())
    return e


def initial_allocation(scenario: Scenario, segmentation: Segmentation):
    """Midpoints of the segment limits, scaled to the budget and projected."""
    if len(segmentation) == 1:
        return np.array([scenario.budget])
    limits = segment_energy_limits(segmentation, scenario.fleet, scenario.ambient)
    mid = np.array([0.5 * (l + h) for l, h in limits])
    if mid.sum() > 0:
        mid *= scenario.budget / mid.sum()
    return project_allocation(mid, limits, scenario.budget)


@dataclass
class Allocation:
    energies: tuple
    multipliers: tuple
    iteration: int
    converged: bool
    total_cost: float
    plans: tuple
    trace: list = field(default_factory=list)

    @property
    def segment_multipliers(self):
        """Each segment's own multiplier, for reporting."""
        return tuple(p.pi_star for p in self.plans)

    @property
    def spread(self):
        return max(self.multipliers) - min(self.multipliers)

    def write_trace(self, path):
        m = len(self.energies)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration"] + [f"E_{j + 1}" for j in range(m)] + [f"pi_{j + 1}" for j in range(m)]
                       + ["total_cost", "spread"])
            for row in self.trace:
                w.writerow([row["iteration"]] + [f"{v:.6f}" for v in (*row["energies"], *row["multipliers"],
                                                                        row["total_cost"], row["spread"])])


def default_eps_pi(scenario: Scenario, samples=2001):
    ts = np.linspace(0.0, scenario.horizon, samples)
    return 1e-3 * abs(float(np.mean(scenario.price.value(ts))))


def optimize_allocation(scenario: Scenario, segmentation: Segmentation = None, gamma=0.5, eps_pi=None,
                        max_iter=500, initial=None, multipliers="chained") -> Allocation:
    """Balance the segment multipliers by moving energy between segments.

    Every update subtracts ``gamma * (pi_j - mean_pi) / mean_pi * mean_E`` from
    share ``j`` and projects back into the admissible set.  A segment that
    cannot absorb its new share halves the step for that iteration.

    ``multipliers="chained"`` drives the update with the marginal cost of each
    share through the whole chain of segments.  ``"segment"`` uses each
    segment's own multiplier, which ignores the coupling through the
    temperatures and can stall short of agreement.
    """
    if multipliers not in ("chained", "segment"):
        raise ValueError("multipliers must be 'chained' or 'segment'")
    if segmentation is None:
        segmentation = segment_price(scenario.price, scenario.horizon)
    if eps_pi is None:
        eps_pi = default_eps_pi(scenario)
    limits = segment_energy_limits(segmentation, scenario.fleet, scenario.ambient)
    total = scenario.budget
    e = initial_allocation(scenario, segmentation) if initial is None else \
        project_allocation(initial, limits, total)
    ev = evaluate_allocation(e, scenario, segmentation)
    trace = []

    def marginals(e, ev):
        if multipliers == "segment" or len(segmentation) == 1:
            return ev.multipliers
        return chained_multipliers(e, scenario, segmentation, ev)

    def record(k, e, ev, pis):
        trace.append({"iteration": k, "energies": tuple(e), "multipliers": pis,
                      "total_cost": ev.total_cost, "spread": max(pis) - min(pis)})

    pis = marginals(e, ev)
    best = (ev.total_cost, e, ev, pis)
    record(0, e, ev, pis)
    if len(segmentation) == 1:
        return Allocation(tuple(e), pis, 0, True, ev.total_cost, ev.plans, trace)

    k = 0
    converged = False
    while True:
        pis = np.array(pis)
        if pis.max() - pis.min() < eps_pi:
            converged = True
            break
        if k >= max_iter:
            break
        k += 1
        pi_hat = pis.mean()
        e_hat = e.mean()
        scale = pi_hat if abs(pi_hat) > 1e-12 else 1.0
        step = gamma
        while True:
            cand = project_allocation(e - step * (pis - pi_hat) / abs(scale) * e_hat, limits, total)
            try:
                new_ev = evaluate_allocation(cand, scenario, segmentation)
                break
            except InfeasibleError as exc:
                log.info("iteration %d: limit mismatch (%s); halving step to %.3g", k, exc, step / 2)
                step /= 2
                if step < 1e-12:
                    raise
        e, ev = cand, new_ev
        assert abs(e.sum() - total) <= 1e-9 * max(1.0, total)
        pis = marginals(e, ev)
        record(k, e, ev, pis)
        if ev.total_cost < best[0]:
            best = (ev.total_cost, e, ev, pis)

    pis = tuple(float(p) for p in pis)
    if not converged:
        log.warning("allocation did not converge in %d iterations (spread %.3g)", max_iter,
                    max(pis) - min(pis))
        _, e, ev, pis = best
    return Allocation(tuple(float(x) for x in e), tuple(pis), k, converged, ev.total_cost, ev.plans, trace)


def concatenate_controls(plans):
    """Per-unit controls covering all segments back to back."""
    controls = list(plans[0].controls)
    for plan in plans[1:]:
        controls = [c.then(d) for c, d in zip(controls, plan.controls)]
    return tuple(controls)

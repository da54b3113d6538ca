"""Time-discretized reference solver for arbitrary scenarios.

Controls are held constant on a uniform grid and the thermal map is the exact
exponential step, so the problem is a linear program with sparse dynamics
rows; it is handed to HiGHS.  Comfort bounds are enforced at grid points.
The budget row's dual value estimates the multiplier of the continuous problem.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .dynamics import PiecewiseControl, Trajectory
from .errors import ConvergenceError, InfeasibleError
from .model import Scenario

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSolution:
    times: np.ndarray  # K+1 grid points
    controls: np.ndarray  # (N, K) control per unit per step
    temps: np.ndarray  # (N, K+1) temperatures at grid points
    cost: float
    pi_star: float

    @property
    def dt(self):
        return float(np.max(np.diff(self.times)))

    def piecewise_controls(self):
        return tuple(PiecewiseControl.from_phases(list(zip(self.times[:-1], self.times[1:], np.clip(u, 0.0, 1.0))),
                                                  min_length=0.0)
                     for u in self.controls)

    def trajectory(self) -> Trajectory:
        per_step = self.controls * np.diff(self.times)
        cum = np.concatenate([[0.0], np.cumsum(per_step.sum(axis=0))])
        levels = np.concatenate([self.controls, self.controls[:, -1:]], axis=1)
        return Trajectory(self.times.copy(), self.temps.T.copy(), levels.T.copy(), cum)

    def to_csv(self, path):
        self.trajectory().to_csv(path)


def time_grid(horizon, dt):
    k = max(1, int(math.ceil(horizon / dt - 1e-9)))
    return np.minimum(np.arange(k + 1) * dt, horizon)


def step_price_integrals(price, times):
    return np.array([price.integral(a, b) for a, b in zip(times[:-1], times[1:])])


def solve_grid(scenario: Scenario, dt=1e-2, tol=1e-9) -> GridSolution:
    """Minimum-cost piecewise-constant controls on a grid of step ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    units = scenario.fleet.units
    n = len(units)
    times = time_grid(scenario.horizon, dt)
    steps = np.diff(times)
    k = len(steps)
    c_step = step_price_integrals(scenario.price, times)

    # variable layout per unit i: u_i (k entries) then x_i at grid points 1..k
    nv = 2 * k
    c = np.zeros(n * nv)
    rows, cols, vals = [], [], []
    b_eq = np.zeros(n * k + 1)
    lower = np.zeros(n * nv)
    upper = np.zeros(n * nv)
    idx = np.arange(k)
    for i, unit in enumerate(units):
        off = i * nv
        c[off:off + k] = c_step
        lower[off:off + k], upper[off:off + k] = 0.0, 1.0
        lower[off + k:off + nv], upper[off + k:off + nv] = unit.lower, unit.upper
        decay = np.exp(-unit.alpha * steps)
        gain = (1.0 - decay) * unit.beta / unit.alpha
        r = i * k + idx
        # x_{j+1} - decay_j x_j + gain_j u_j = (1 - decay_j) ambient
        rows += [r, r, r[1:]]
        cols += [off + k + idx, off + idx, off + k + idx[:-1]]
        vals += [np.ones(k), gain, -decay[1:]]
        b_eq[i * k:(i + 1) * k] = (1.0 - decay) * scenario.ambient
        b_eq[i * k] += decay[0] * unit.x0
        # budget row
        rows.append(np.full(k, n * k))
        cols.append(off + idx)
        vals.append(steps)
    b_eq[-1] = scenario.budget
    a_eq = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n * k + 1, n * nv))
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=np.column_stack([lower, upper]), method="highs",
                  options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol})
    if res.status == 2:
        raise InfeasibleError("grid problem is infeasible")
    if res.status != 0:
        raise ConvergenceError(f"grid LP did not solve: {res.message}")
    z = res.x.reshape(n, nv)
    temps = np.column_stack([[u.x0 for u in units], z[:, k:]])
    pi_star = float(res.eqlin.marginals[-1])
    return GridSolution(times, z[:, :k].copy(), temps, float(res.fun), pi_star)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    gap: float
    tolerance: float

    @property
    def margin(self):
        return self.tolerance - self.gap

    def to_dict(self):
        return {"passed": self.passed, "gap": self.gap, "tolerance": self.tolerance, "margin": self.margin}


def compare_tolerance(oracle_cost, dt, max_price, n_units, abs_tol=None, rel_tol=1e-3):
    if abs_tol is None:
        abs_tol = 10.0 * dt * abs(max_price) * n_units
    return abs_tol + rel_tol * abs(oracle_cost)


def compare(plan_cost, oracle_cost, dt, max_price=1.0, n_units=1, abs_tol=None, rel_tol=1e-3) -> Verdict:
    """Accept ``plan_cost`` when it lies within the grid-error model of ``oracle_cost``."""
    tol = compare_tolerance(oracle_cost, dt, max_price, n_units, abs_tol, rel_tol)
    gap = abs(plan_cost - oracle_cost)
    return Verdict(gap <= tol, gap, tol)


def max_price(price, horizon, samples=2001):
    return float(np.max(np.abs(price.value(np.linspace(0.0, horizon, samples)))))


def write_grid_csv(solution: GridSolution, path):
    solution.to_csv(path)

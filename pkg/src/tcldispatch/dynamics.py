"""Exact propagation of the Newtonian thermal model under piecewise-constant control.

Each unit obeys ``dx/dt = -alpha (x - ambient) - beta u``.  For constant ``u``
over a piece the solution is an exponential relaxation towards
``ambient - (beta/alpha) u``, so nothing here integrates numerically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_GRID_DT = 0.01


def equilibrium(u, unit, ambient):
    """Temperature at which control ``u`` holds the unit still."""
    return ambient - unit.beta / unit.alpha * u


def step(x, u, dt, unit, ambient):
    """Temperature after holding control ``u`` for ``dt`` hours starting from ``x``."""
    decay = math.exp(-unit.alpha * dt)
    return decay * x + equilibrium(u, unit, ambient) * (1.0 - decay)


def time_to_reach(x, target, u, unit, ambient):
    """Time for the state to move from ``x`` to ``target`` under constant ``u``.

    Returns ``math.inf`` when the trajectory never gets there (the target lies
    beyond the equilibrium, or on the wrong side of ``x``).
    """
    if x == target:
        return 0.0
    eq = equilibrium(u, unit, ambient)
    num = x - eq
    den = target - eq
    if den == 0.0 or num / den <= 0.0:
        return math.inf
    ratio = num / den
    if ratio < 1.0:
        return math.inf
    return math.log(ratio) / unit.alpha


@dataclass(frozen=True)
class PiecewiseControl:
    """Control levels held on consecutive intervals ``[b_k, b_{k+1})``."""

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if len(bp) != len(vals) + 1 or not vals:
            raise ValueError("need len(breakpoints) == len(values) + 1 >= 2")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(v < 0.0 or v > 1.0 for v in vals):
            raise ValueError("control values must lie in [0, 1]")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_phases(cls, phases, min_length=1e-12):
        """Build from ``(start, end, level)`` triples, dropping empty phases
        and merging neighbours that share a level."""
        bp, vals = [phases[0][0]], []
        for start, end, level in phases:
            if end - start <= min_length:
                continue
            if vals and vals[-1] == level:
                bp[-1] = end
            else:
                bp.append(end)
                vals.append(level)
        if not vals:
            return cls((phases[0][0], phases[-1][1]), (phases[-1][2],))
        bp[-1] = phases[-1][1]
        return cls(tuple(bp), tuple(vals))

    @property
    def start(self):
        return self.breakpoints[0]

    @property
    def end(self):
        return self.breakpoints[-1]

    def pieces(self):
        return list(zip(self.breakpoints[:-1], self.breakpoints[1:], self.values))

    def value_at(self, t):
        """Level in force at time ``t`` (the last level at the right end)."""
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def energy(self):
        return math.fsum((b - a) * v for a, b, v in self.pieces())

    def scaled(self, factor):
        return PiecewiseControl(self.breakpoints, tuple(v * factor for v in self.values))

    def then(self, other: "PiecewiseControl") -> "PiecewiseControl":
        """Concatenate with a control that starts where this one ends."""
        if abs(other.start - self.end) > 1e-9:
            raise ValueError("controls are not contiguous")
        phases = self.pieces() + other.pieces()
        return PiecewiseControl.from_phases(phases, min_length=0.0)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    temps: np.ndarray  # shape (len(times), N)
    controls: np.ndarray  # level in force from each sample onwards, shape (len(times), N)
    cum_energy: np.ndarray

    @property
    def final_temps(self):
        return self.temps[-1].copy()

    def to_csv(self, path):
        n = self.temps.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)] + ["cum_energy"] + [f"u_{i + 1}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [t, *self.temps[k], self.cum_energy[k], *self.controls[k]]
                writer.writerow([f"{v:.6f}" for v in row])


def _sample_times(controls, t0, t1, grid_dt):
    grid = np.arange(t0, t1, grid_dt) if grid_dt else np.array([t0])
    parts = [grid, [t1]] + [c.breakpoints for c in controls]
    times = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in parts]))
    return times[(times >= t0 - 1e-12) & (times <= t1 + 1e-12)]


def propagate(control, unit, ambient, x_start, times):
    """Exact temperatures of one unit at the (sorted) sample ``times``."""
    out = np.empty(len(times))
    x, t = x_start, control.start
    pieces = control.pieces()
    j = 0
    for k, ts in enumerate(times):
        # advance whole pieces that end before ts
        while j < len(pieces) - 1 and pieces[j][1] <= ts:
            x = step(x, pieces[j][2], pieces[j][1] - t, unit, ambient)
            t = pieces[j][1]
            j += 1
        out[k] = step(x, pieces[j][2], ts - t, unit, ambient)
    return out


def simulate_units(controls: Sequence[PiecewiseControl], units, ambient, temps0, grid_dt=DEFAULT_GRID_DT):
    """Simulate every unit from ``temps0`` over the span covered by ``controls``."""
    t0, t1 = controls[0].start, controls[0].end
    for c in controls:
        if abs(c.start - t0) > 1e-9 or abs(c.end - t1) > 1e-9:
            raise ValueError("all unit controls must cover the same interval")
    times = _sample_times(controls, t0, t1, grid_dt)
    temps = np.column_stack([propagate(c, u, ambient, x, times) for c, u, x in zip(controls, units, temps0)])
    levels = np.column_stack([c.value_at(times) for c in controls])
    cum = np.zeros(len(times))
    for c in controls:
        cum += _cumulative_energy(c, times)
    return Trajectory(times, temps, levels, cum)


def _cumulative_energy(control, times):
    bp = np.asarray(control.breakpoints)
    vals = np.asarray(control.values)
    at_bp = np.concatenate([[0.0], np.cumsum(np.diff(bp) * vals)])
    idx = np.clip(np.searchsorted(bp, times, side="right") - 1, 0, len(vals) - 1)
    return at_bp[idx] + (times - bp[idx]) * vals[idx]


def simulate(controls, scenario, grid_dt=DEFAULT_GRID_DT):
    """Exact trajectory of a whole scenario under per-unit controls on ``[0, T]``."""
    if len(controls) != len(scenario.fleet.units):
        raise ValueError("one control per unit is required")
    for c in controls:
        if abs(c.start) > 1e-9 or abs(c.end - scenario.horizon) > 1e-9:
            raise ValueError(f"control spans [{c.start}, {c.end}], expected [0, {scenario.horizon}]")
    units = scenario.fleet.units
    return simulate_units(controls, units, scenario.ambient, [u.x0 for u in units], grid_dt)


def cost(controls, price):
    """Exact value of the integral of price times aggregate control."""
    return math.fsum(v * price.integral(a, b) for c in controls for a, b, v in c.pieces() if v != 0.0)

"""Fleet, price and scenario types plus the admissibility checks run before solving."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics
from .errors import DomainError, ScenarioParseError

TOL = 1e-9


@dataclass(frozen=True)
class AcUnit:
    """One air conditioner: loss rate ``alpha`` (1/h), cooling gain ``beta`` (degC/h),
    comfort band ``[lower, upper]`` and initial indoor temperature ``x0``."""

    alpha: float
    beta: float
    lower: float
    upper: float
    x0: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be strictly positive")
        if not self.lower < self.upper:
            raise ValueError("comfort band needs lower < upper")

    @property
    def params(self):
        return (self.alpha, self.beta, self.lower, self.upper)

    def with_x0(self, x0) -> "AcUnit":
        return AcUnit(self.alpha, self.beta, self.lower, self.upper, float(x0))


@dataclass(frozen=True)
class Fleet:
    units: tuple
    power: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if not self.units:
            raise ValueError("a fleet needs at least one unit")

    def __len__(self):
        return len(self.units)

    def homogeneous(self, tol=TOL):
        ref = self.units[0].params
        return all(all(abs(a - b) <= tol for a, b in zip(u.params, ref)) for u in self.units)

    def initial_temps(self):
        return tuple(u.x0 for u in self.units)

    def with_temps(self, temps) -> "Fleet":
        return Fleet(tuple(u.with_x0(x) for u, x in zip(self.units, temps)), self.power)


# -- price forecasts ---------------------------------------------------------


class PriceForecast:
    """Common interface of the price trajectory variants."""

    variant = ""
    horizon: float

    def value(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def integral(self, a, b):
        raise NotImplementedError

    def stationary_points(self):
        """Interior times in ``(0, horizon)`` where the trend may reverse."""
        raise NotImplementedError

    def exponential_coincidence(self, alpha, tol=TOL):
        """True when the price has the singular form ``A exp(alpha t) + B``."""
        return False

    def to_dict(self):
        raise NotImplementedError

    def __call__(self, t):
        return self.value(t)


@dataclass(frozen=True)
class AffinePrice(PriceForecast):
    a: float
    b: float
    horizon: float
    variant = "affine"

    def value(self, t):
        return self.a + self.b * np.asarray(t, dtype=float) if np.ndim(t) else self.a + self.b * t

    def derivative(self, t):
        return self.b + 0.0 * np.asarray(t, dtype=float) if np.ndim(t) else self.b

    def integral(self, a, b):
        return self.a * (b - a) + 0.5 * self.b * (b * b - a * a)

    def stationary_points(self):
        return ()

    def exponential_coincidence(self, alpha, tol=TOL):
        # a + b t == A exp(alpha t) + B only when A == 0 and b == 0
        return abs(self.b) <= tol

    def to_dict(self):
        return {"variant": self.variant, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class SinusoidPrice(PriceForecast):
    """``c + a sin(omega t + phi)``."""

    c: float
    a: float
    omega: float
    phi: float
    horizon: float
    variant = "sinusoid"

    def value(self, t):
        return self.c + self.a * np.sin(self.omega * np.asarray(t, dtype=float) + self.phi) if np.ndim(t) \
            else self.c + self.a * math.sin(self.omega * t + self.phi)

    def derivative(self, t):
        return self.a * self.omega * np.cos(self.omega * np.asarray(t, dtype=float) + self.phi)

    def integral(self, a, b):
        if self.omega == 0.0:
            return (self.c + self.a * math.sin(self.phi)) * (b - a)
        return self.c * (b - a) - self.a / self.omega * (
            math.cos(self.omega * b + self.phi) - math.cos(self.omega * a + self.phi))

    def stationary_points(self):
        if self.a == 0.0 or self.omega == 0.0:
            return ()
        w = abs(self.omega)
        phase = self.phi if self.omega > 0 else -self.phi
        # extrema where w t + phase = pi/2 + k pi
        k0 = math.ceil((phase - math.pi / 2) / math.pi - 1)
        pts = []
        k = k0
        while True:
            t = (math.pi / 2 + k * math.pi - phase) / w
            if t >= self.horizon - 1e-12:
                break
            if t > 1e-12:
                pts.append(t)
            k += 1
        return tuple(pts)

    def exponential_coincidence(self, alpha, tol=TOL):
        return abs(self.a * self.omega) <= tol

    def to_dict(self):
        return {"variant": self.variant, "c": self.c, "a": self.a, "omega": self.omega, "phi": self.phi}


@dataclass(frozen=True)
class SampledPrice(PriceForecast):
    """Piecewise-linear interpolation through ``(t, price)`` samples."""

    points: tuple
    horizon: float
    variant = "sampled"
    _t: np.ndarray = field(init=False, repr=False, compare=False)
    _p: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(t), float(p)) for t, p in self.points)
        object.__setattr__(self, "points", pts)
        arr = np.asarray(pts, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "_t", arr[:, 0])
        object.__setattr__(self, "_p", arr[:, 1])

    def value(self, t):
        out = np.interp(t, self._t, self._p)
        return out if np.ndim(t) else float(out)

    def derivative(self, t):
        slopes = np.diff(self._p) / np.diff(self._t)
        idx = np.clip(np.searchsorted(self._t, t, side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def integral(self, a, b):
        if b <= a:
            return 0.0
        inner = self._t[(self._t > a) & (self._t < b)]
        ts = np.concatenate([[a], inner, [b]])
        ps = np.interp(ts, self._t, self._p)
        return float(np.sum(0.5 * (ps[1:] + ps[:-1]) * np.diff(ts)))

    def stationary_points(self):
        t, p = self._t, self._p
        keep = (t > 1e-12) & (t < self.horizon - 1e-12)
        inner = np.concatenate([[0.0], t[keep], [self.horizon]])
        signs = np.sign(np.diff(np.interp(inner, t, p)))
        pts, last = [], 0.0
        for k, s in enumerate(signs):
            if s == 0.0:
                continue  # plateau joins the current run
            if last != 0.0 and s != last:
                # the run changed direction at the start of this piece; back up over plateaus
                j = k
                while j > 0 and signs[j - 1] == 0.0:
                    j -= 1
                pts.append(float(inner[j]))
            last = s
        return tuple(pts)

    def to_dict(self):
        return {"variant": self.variant, "points": [list(p) for p in self.points]}


def price_from_dict(d, horizon) -> PriceForecast:
    variant = d.get("variant")
    if variant == "affine":
        return AffinePrice(float(d["a"]), float(d["b"]), horizon)
    if variant == "sinusoid":
        omega = float(d["omega"]) if "omega" in d else 2 * math.pi / float(d["period"])
        return SinusoidPrice(float(d["c"]), float(d["a"]), omega, float(d.get("phi", 0.0)), horizon)
    if variant == "sampled":
        return SampledPrice(tuple(tuple(p) for p in d["points"]), horizon)
    raise ScenarioParseError(f"unknown price variant {variant!r}")


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    fleet: Fleet
    price: PriceForecast
    ambient: float
    budget: float
    horizon: float
    t_min_switch: float = 1.0 / 60.0

    def with_budget(self, budget) -> "Scenario":
        return Scenario(self.fleet, self.price, self.ambient, float(budget), self.horizon, self.t_min_switch)

    def to_dict(self):
        return {
            "fleet": {
                "units": [{"alpha": u.alpha, "beta": u.beta, "lower": u.lower, "upper": u.upper, "x0": u.x0}
                          for u in self.fleet.units],
                "power": self.fleet.power,
            },
            "price": self.price.to_dict(),
            "ambient": self.ambient,
            "budget": self.budget,
            "horizon": self.horizon,
            "t_min_switch": self.t_min_switch,
        }


def scenario_from_dict(d) -> Scenario:
    try:
        horizon = float(d["horizon"])
        units = tuple(
            AcUnit(float(u["alpha"]), float(u["beta"]), float(u["lower"]), float(u["upper"]), float(u["x0"]))
            for u in d["fleet"]["units"])
        fleet = Fleet(units, float(d["fleet"].get("power", 1.0)))
        ambient = d["ambient"]
        if not isinstance(ambient, (int, float)) or isinstance(ambient, bool):
            raise ScenarioParseError("ambient must be a single constant temperature")
        return Scenario(fleet, price_from_dict(d["price"], horizon), float(ambient), float(d["budget"]),
                        horizon, float(d.get("t_min_switch", 1.0 / 60.0)))
    except ScenarioParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"malformed scenario: {exc}") from exc


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioParseError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(scenario, path):
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2)
        fh.write("\n")


# -- closed-form quantities --------------------------------------------------


def boundary_controls(unit: AcUnit, ambient: float):
    """Levels that hold the state on the upper and lower comfort bounds.

    Returns ``(u_bar, u_under)``; raises :class:`DomainError` when either falls
    outside ``[0, 1]``, i.e. the unit cannot slide along its bounds.
    """
    k = unit.alpha / unit.beta
    u_bar = k * (ambient - unit.upper)
    u_under = k * (ambient - unit.lower)
    if not (0.0 <= u_bar <= 1.0 and 0.0 <= u_under <= 1.0):
        raise DomainError(f"boundary controls ({u_bar:.6g}, {u_under:.6g}) outside [0, 1]")
    return u_bar, u_under


def energy_range(units, ambient, duration, temps=None):
    """Smallest and largest energy the units can consume over ``duration``.

    With ``temps`` the limits are exact for those starting temperatures: the
    minimum coasts up to ``upper`` and holds, the maximum cools at full power to
    ``lower`` and holds.  Without ``temps`` each unit is assumed to start on the
    bound it leaves (``lower`` for the minimum, ``upper`` for the maximum).
    """
    e_min = e_max = 0.0
    for i, unit in enumerate(units):
        u_bar, u_under = boundary_controls(unit, ambient)
        start_min = unit.lower if temps is None else temps[i]
        start_max = unit.upper if temps is None else temps[i]
        coast = dynamics.time_to_reach(start_min, unit.upper, 0.0, unit, ambient)
        drain = dynamics.time_to_reach(start_max, unit.lower, 1.0, unit, ambient)
        e_min += u_bar * max(0.0, duration - coast)
        e_max += min(drain, duration) + u_under * max(0.0, duration - drain)
    return e_min, e_max


def feasible_energy_range(scenario: Scenario, from_state=True):
    """Budget interval the scenario can absorb while respecting comfort bands.

    ``from_state=False`` evaluates the bound-to-bound limits used for segment
    allocation instead of the limits reachable from the actual initial temperatures.
    """
    temps = scenario.fleet.initial_temps() if from_state else None
    return energy_range(scenario.fleet.units, scenario.ambient, scenario.horizon, temps)


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    severity: str = "error"

    def __str__(self):
        return f"[{self.code}] {self.message}"


def validate(scenario: Scenario):
    """Every broken admissibility condition of ``scenario`` as a :class:`Violation`.

    Singular price shapes are reported with severity ``"warning"``; everything
    else is an error.
    """
    out = []
    units = scenario.fleet.units
    amb = scenario.ambient
    T = scenario.horizon

    if not (T > 0 and math.isfinite(T)):
        out.append(Violation("horizon", f"horizon must be positive and finite, got {T}"))
    if abs(scenario.price.horizon - T) > TOL:
        out.append(Violation("horizon", "price horizon differs from scenario horizon"))
    if not scenario.t_min_switch > 0:
        out.append(Violation("t_min_switch", "minimum switching period must be positive"))
    if not math.isfinite(amb):
        out.append(Violation("ambient", "ambient temperature must be finite"))

    out.extend(_price_violations(scenario.price, T))

    for i, u in enumerate(units, start=1):
        if not (u.lower - TOL <= u.x0 <= u.upper + TOL):
            out.append(Violation("A1.1", f"unit {i}: x0={u.x0} outside [{u.lower}, {u.upper}]"))

    max_upper = max(u.upper for u in units)
    if not amb > max_upper:
        out.append(Violation("ambient", f"ambient {amb} must exceed every upper bound (max {max_upper})"))

    inward_ok = True
    for i, u in enumerate(units, start=1):
        rise_at_lower = -u.alpha * (u.lower - amb)
        fall_at_upper = -u.alpha * (u.upper - amb) - u.beta
        if not (rise_at_lower > 0 and fall_at_upper < 0):
            inward_ok = False
            out.append(Violation("A1.3", f"unit {i}: bounds not inward-pointing "
                                         f"(rate at L {rise_at_lower:.6g}, rate at U under full cooling {fall_at_upper:.6g})"))
        elif u.alpha / u.beta * (amb - u.lower) >= 1.0:
            inward_ok = False
            out.append(Violation("A1.3", f"unit {i}: full cooling cannot reach the lower bound"))

    if inward_ok and amb > max_upper and not any(v.code == "A1.1" for v in out):
        e_min, e_max = feasible_energy_range(scenario)
        E = scenario.budget
        if not (e_min - TOL <= E <= e_max + TOL):
            out.append(Violation("A1.2", f"budget {E} outside feasible range [{e_min:.6f}, {e_max:.6f}]"))

    for i, u in enumerate(units, start=1):
        if scenario.price.exponential_coincidence(u.alpha):
            out.append(Violation("A2", f"unit {i}: price has the singular form A exp(alpha t) + B", "warning"))
    return out


def _price_violations(price, T):
    out = []
    if isinstance(price, SampledPrice):
        t = price._t
        if len(t) < 2 or np.any(np.diff(t) <= 0):
            out.append(Violation("price", "sample times must be strictly increasing"))
        elif t[0] > TOL or t[-1] < T - TOL:
            out.append(Violation("price", f"samples cover [{t[0]}, {t[-1]}], not [0, {T}]"))
    grid = np.linspace(0.0, T, 257) if T > 0 and math.isfinite(T) else np.array([0.0])
    if not np.all(np.isfinite(price.value(grid))):
        out.append(Violation("price", "price is not finite on the horizon"))
    return out


def errors_only(violations):
    return [v for v in violations if v.severity == "error"]


def unit_times(unit: AcUnit, ambient: float, x: Optional[float] = None):
    """``(time to L under full cooling, time to U coasting)`` from ``x`` (default ``x0``)."""
    x = unit.x0 if x is None else x
    return (dynamics.time_to_reach(x, unit.lower, 1.0, unit, ambient),
            dynamics.time_to_reach(x, unit.upper, 0.0, unit, ambient))

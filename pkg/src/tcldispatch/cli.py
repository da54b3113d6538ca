"""Command-line entry point: ``tcldispatch <command> --scenario FILE --out DIR``.

Exit codes: 0 success, 1 failed comparison or unexpected error, 2 unreadable
scenario, 3 invalid scenario, 4 infeasible, 5 no convergence.  Errors are also
printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import dynamics, onoff, oracle
from .dynamics import PiecewiseControl
from .errors import ConvergenceError, TclError, ValidationError
from .monotone import SegmentProblem, verify_certificate
from .model import Scenario, errors_only, feasible_energy_range, load_scenario, validate
from .segments import concatenate_controls, optimize_allocation, segment_price

log = logging.getLogger("tcldispatch")

COMMANDS = ("validate", "segment", "plan", "synthesize", "oracle", "compare")
PLAN_FILE = "plan.json"


@dataclass
class RunConfig:
    command: str
    scenario_path: Path
    output_dir: Path
    overrides: dict = field(default_factory=dict)

    def get(self, key, default=None):
        value = self.overrides.get(key)
        return default if value is None else value


def write_json(data, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def controls_from_dict(units):
    return tuple(PiecewiseControl(tuple(u["breakpoints"]), tuple(u["levels"])) for u in units)


def load_plan_controls(path):
    with open(path) as fh:
        doc = json.load(fh)
    return doc, controls_from_dict(doc["units"])


# -- commands ----------------------------------------------------------------


def cmd_validate(scenario: Scenario, violations, cfg):
    e_min, e_max = feasible_energy_range(scenario) if not errors_only(violations) else (None, None)
    report = {
        "valid": not errors_only(violations),
        "violations": [{"code": v.code, "severity": v.severity, "message": v.message} for v in violations],
        "energy_range": [e_min, e_max],
    }
    for v in violations:
        print(f"{v.severity.upper():7s} {v}")
    if report["valid"]:
        print(f"OK      budget {scenario.budget} within [{e_min:.6f}, {e_max:.6f}]")
    write_json(report, cfg.output_dir / "validation.json")
    return 0


def cmd_segment(scenario, cfg):
    seg = segment_price(scenario.price, scenario.horizon)
    write_json(seg.to_dict(), cfg.output_dir / "segmentation.json")
    print(json.dumps(seg.to_dict()))
    return 0


def build_plan(scenario, cfg):
    seg = segment_price(scenario.price, scenario.horizon)
    kwargs = {"gamma": cfg.get("gamma", 0.5), "eps_pi": cfg.get("eps_pi"), "max_iter": cfg.get("max_iter", 500)}
    alloc = optimize_allocation(scenario, seg, **kwargs)
    plans = alloc.plans
    certified = []
    for p in plans:
        problem = SegmentProblem(scenario.fleet, scenario.price, p.direction, scenario.ambient, p.energy,
                                 p.start, p.end, p.initial_temps)
        certified.append(verify_certificate(p, problem).passed)
        if not certified[-1]:
            log.warning("segment [%g, %g] fails its optimality certificate; check the plan with `compare`",
                        p.start, p.end)
    controls = concatenate_controls(plans)
    single = len(plans) == 1
    doc = {
        "kind": "monotone" if single else "segmented",
        "t_star": plans[0].t_star if single else None,
        "pi_star": plans[0].pi_star if single else sum(alloc.multipliers) / len(alloc.multipliers),
        "total_cost": alloc.total_cost,
        "energy": sum(p.energy for p in plans),
        "energy_kwh": sum(p.energy for p in plans) * scenario.fleet.power,
        "segmentation": seg.to_dict(),
        "allocation": {
            "energies": list(alloc.energies),
            "multipliers": list(alloc.multipliers),
            "segment_multipliers": list(alloc.segment_multipliers),
            "iterations": alloc.iteration,
            "converged": alloc.converged,
        },
        "segments": [{**p.to_dict(), "certified": ok} for p, ok in zip(plans, certified)],
        "units": [{"breakpoints": list(c.breakpoints), "levels": list(c.values)} for c in controls],
    }
    return doc, controls, alloc


def cmd_plan(scenario, cfg):
    doc, controls, alloc = build_plan(scenario, cfg)
    write_json(doc, cfg.output_dir / PLAN_FILE)
    dynamics.simulate(controls, scenario).to_csv(cfg.output_dir / "trajectory.csv")
    alloc.write_trace(cfg.output_dir / "allocation_trace.csv")
    print(f"cost {doc['total_cost']:.6f}  pi* {doc['pi_star']:.6f}  energies "
          + " ".join(f"{e:.6f}" for e in doc["allocation"]["energies"]))
    if not alloc.converged:
        raise ConvergenceError(f"allocation did not converge in {alloc.iteration} iterations "
                               f"(spread {alloc.spread:.3g}); best iterate written")
    return 0


def _plan_for(scenario, cfg):
    path = cfg.output_dir / PLAN_FILE
    if path.exists():
        log.info("using existing %s", path)
        return load_plan_controls(path)
    doc, controls, _ = build_plan(scenario, cfg)
    return doc, controls


def cmd_synthesize(scenario, cfg):
    _, controls = _plan_for(scenario, cfg)
    t_m = cfg.get("t_m", scenario.t_min_switch)
    schedule = onoff.synthesize(controls, scenario, t_m)
    schedule.to_csv(cfg.output_dir / "schedule.csv")
    units = []
    for i, (c, unit) in enumerate(zip(controls, scenario.fleet.units), start=1):
        levels = sorted({v for _, _, v in c.pieces()})
        units.append({"unit": i, "overshoot": {repr(v): onoff.overshoot_bound(v, unit, t_m, scenario.ambient)
                                                for v in levels}})
    report = {"period": t_m, "energy_deviation": onoff.energy_deviation(schedule, controls), "units": units}
    write_json(report, cfg.output_dir / "synthesis.json")
    print(f"energy deviation {report['energy_deviation']:.6f} with period {t_m:.6f}")
    return 0


def cmd_oracle(scenario, cfg):
    dt = cfg.get("dt", 1e-2)
    sol = oracle.solve_grid(scenario, dt)
    sol.to_csv(cfg.output_dir / "oracle_trajectory.csv")
    write_json({"dt": dt, "cost": sol.cost, "pi_star": sol.pi_star}, cfg.output_dir / "oracle.json")
    print(f"oracle cost {sol.cost:.6f}  pi* {sol.pi_star:.6f}")
    return 0


def cmd_compare(scenario, cfg):
    doc, controls = _plan_for(scenario, cfg)
    dt = cfg.get("dt", 1e-2)
    plan_cost = dynamics.cost(controls, scenario.price)
    sol = oracle.solve_grid(scenario, dt)
    verdict = oracle.compare(plan_cost, sol.cost, dt, oracle.max_price(scenario.price, scenario.horizon),
                             len(scenario.fleet))
    report = {"plan_cost": plan_cost, "oracle_cost": sol.cost, "dt": dt, "plan_pi_star": doc.get("pi_star"),
              "oracle_pi_star": sol.pi_star, **verdict.to_dict()}
    write_json(report, cfg.output_dir / "verdict.json")
    print(f"{'PASS' if verdict.passed else 'FAIL'} plan {plan_cost:.6f} oracle {sol.cost:.6f} "
          f"gap {verdict.gap:.3g} tol {verdict.tolerance:.3g}")
    return 0 if verdict.passed else 1


HANDLERS = {"segment": cmd_segment, "plan": cmd_plan, "synthesize": cmd_synthesize, "oracle": cmd_oracle,
            "compare": cmd_compare}


def run(cfg: RunConfig) -> int:
    scenario = load_scenario(cfg.scenario_path)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    violations = validate(scenario)
    if cfg.command == "validate":
        cmd_validate(scenario, violations, cfg)
    for v in violations:
        if v.severity != "error":
            log.warning("%s", v)
    if errors_only(violations):
        raise ValidationError(errors_only(violations))
    if cfg.command == "validate":
        return 0
    return HANDLERS[cfg.command](scenario, cfg)


def build_parser():
    p = argparse.ArgumentParser(prog="tcldispatch", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eps-pi", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--tm", type=float)
    p.add_argument("--max-iter", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("TCLDISPATCH_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = RunConfig(args.command, args.scenario, args.out,
                    {"gamma": args.gamma, "eps_pi": args.eps_pi, "dt": args.dt, "t_m": args.tm,
                     "max_iter": args.max_iter})
    try:
        return run(cfg)
    except TclError as exc:
        print(json.dumps({"error": type(exc).__name__, "exit_code": exc.exit_code, "message": str(exc)}),
              file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

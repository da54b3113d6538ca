"""Minimum-cost energy plans for fleets of air conditioners under a price forecast."""

from .errors import (ConvergenceError, DomainError, HeterogeneousFleetError, InfeasibleError,
                     NonMonotonePriceError, ScenarioParseError, TclError, ValidationError)
from .model import (AcUnit, AffinePrice, Fleet, SampledPrice, Scenario, SinusoidPrice, load_scenario,
                    save_scenario, validate)
from .monotone import RelaxedPlan, SegmentProblem, solve_decreasing, solve_increasing, solve_segment, \
    verify_certificate
from .onoff import SwitchSchedule, duty_on_time, synthesize
from .oracle import compare, solve_grid
from .segments import optimize_allocation, segment_price

__version__ = "0.1.0"

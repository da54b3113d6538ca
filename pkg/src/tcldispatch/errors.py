"""Exception hierarchy shared by the solver modules and the CLI."""


class TclError(Exception):
    """Base class for all tcldispatch failures."""

    exit_code = 1


class ScenarioParseError(TclError, ValueError):
    exit_code = 2


class ValidationError(TclError, ValueError):
    exit_code = 3

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class DomainError(TclError, ValueError):
    """A closed-form quantity is undefined for the given parameters."""

    exit_code = 3


class InfeasibleError(TclError):
    exit_code = 4


class HeterogeneousFleetError(TclError, ValueError):
    """The explicit segment solution needs equal unit dynamics; use the oracle."""

    exit_code = 3


class NonMonotonePriceError(TclError, ValueError):
    exit_code = 3


class ConvergenceError(TclError):
    exit_code = 5

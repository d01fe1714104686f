"""Exception hierarchy shared by all flowcap modules."""


class FlowcapError(Exception):
    """Base class for library errors."""


class DimensionMismatch(FlowcapError, ValueError):
    pass


class EmptyBox(FlowcapError, ValueError):
    pass


class SingularMatrix(FlowcapError, ValueError):
    pass


class FlowError(FlowcapError, ArithmeticError):
    """A flow leg could not be evaluated.

    ``leg`` is the index of the failing leg inside a program, or ``None`` when
    the failure happened outside program evaluation.
    """

    def __init__(self, message, leg=None):
        super().__init__(message)
        self.leg = leg

    def with_leg(self, leg):
        err = type(self)(str(self), leg=leg)
        return err

    def __str__(self):
        msg = super().__str__()
        if self.leg is not None:
            return f"{msg} (leg {self.leg})"
        return msg


class BlowUpGuard(FlowError):
    """A trajectory left the guard radius (finite-time blow-up or divergence)."""


class PoleReached(BlowUpGuard):
    """The closed-form Möbius flow of x' = x**2 crosses its pole."""


class NonPositiveError(FlowcapError, ValueError):
    """Convergence fitting was handed a zero or negative error."""


class BudgetExceeded(FlowcapError):
    def __init__(self, message, best_residual):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class TailMassTooLarge(FlowcapError):
    def __init__(self, message, tail_mass):
        super().__init__(f"{message} (tail mass {tail_mass:.3e})")
        self.tail_mass = tail_mass


class DegenerateConfiguration(FlowcapError, ValueError):
    pass


class TargetOutsideRadius(FlowcapError, ValueError):
    pass


class SteeringFailed(FlowcapError):
    def __init__(self, message, configuration=None):
        super().__init__(message)
        self.configuration = configuration


class ToleranceNotMet(FlowcapError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class InvalidProblem(FlowcapError, ValueError):
    pass


class ConfigError(FlowcapError, ValueError):
    pass

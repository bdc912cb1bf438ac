"""Exception types raised across the package."""


class MDRelaxError(Exception):
    """Base class for all errors raised by mdrelax."""


# tableau construction
class SingularSystem(MDRelaxError):
    pass


class ConditioningError(MDRelaxError):
    pass


class UnknownTableau(MDRelaxError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown tableau"


# problems
class SingularState(MDRelaxError, ArithmeticError):
    pass


class ReferenceDivergence(MDRelaxError):
    pass


# nonlinear solvers
class NewtonDiverged(MDRelaxError):
    """Newton hit its iteration limit or the damping factor underflowed."""

    def __init__(self, msg, x=None, residual_norm=float("nan"), iterations=0):
        super().__init__(msg)
        self.x = x
        self.residual_norm = residual_norm
        self.iterations = iterations


class SingularJacobian(MDRelaxError):
    pass


class RelaxationRootNotFound(MDRelaxError):
    """No admissible relaxation parameter exists in the search bracket.

    When raised from ``integrate`` the attributes ``t`` (time of the failed
    step) and ``records`` (trajectory up to that point) are filled in.
    """

    t = None
    records = None


# integrator
class PredictorFailed(MDRelaxError):
    def __init__(self, stage, cause=None):
        super().__init__(f"predictor failed at stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


class CorrectorFailed(MDRelaxError):
    def __init__(self, stage, k, cause=None):
        super().__init__(f"corrector failed at stage {stage}, iterate {k}: {cause}")
        self.stage = stage
        self.k = k
        self.cause = cause


class BackgroundSolveFailed(MDRelaxError):
    pass


class StepFailed(MDRelaxError):
    def __init__(self, t, cause=None, records=None):
        super().__init__(f"step starting at t={t!r} failed: {cause}")
        self.t = t
        self.cause = cause
        self.records = records if records is not None else []


# harness
class InsufficientAsymptoticRange(MDRelaxError):
    pass


class MalformedCSV(MDRelaxError, ValueError):
    pass

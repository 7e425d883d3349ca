"""Exception hierarchy shared across the package."""


class PateError(Exception):
    """Base class for all package errors."""


class ValidationError(PateError):
    """Input data violates a structural requirement."""


class EmptyArm(ValidationError):
    pass


class InconsistentCovariates(ValidationError):
    pass


class BadPopulationSize(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class TermSpecError(ValidationError):
    """Malformed term specification text or term list."""


class UnknownCovariate(TermSpecError):
    pass


class SquareOnBinary(TermSpecError):
    pass


class NumericalError(PateError):
    """A numerical routine failed.

    ``nuisance`` names the nuisance model being fitted when the failure
    happened (``"sampling"``, ``"propensity"``, ``"outcome1"``, ``"outcome0"``),
    and ``estimator`` the estimator kind, when known.
    """

    def __init__(self, message, *, nuisance=None, estimator=None):
        super().__init__(message)
        self.nuisance = nuisance
        self.estimator = estimator

    def __str__(self):
        msg = super().__str__()
        tags = []
        if self.nuisance:
            tags.append(f"nuisance={self.nuisance}")
        if self.estimator:
            tags.append(f"estimator={self.estimator}")
        return f"{msg} [{', '.join(tags)}]" if tags else msg


class SingularSystem(NumericalError):
    pass


class NotConverged(NumericalError):
    def __init__(self, message, fit=None, **kw):
        super().__init__(message, **kw)
        self.fit = fit


class NonFiniteWeight(NumericalError):
    pass


class ZeroDenominator(NumericalError):
    pass


class SingularBread(NumericalError):
    pass


class ConstantCovariate(NumericalError):
    pass


class TrialTooSmall(PateError):
    pass


class SimulationFailure(PateError):
    """More replicates failed in some cell than the study tolerates."""

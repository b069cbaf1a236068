"""Exception hierarchy shared across the package."""


class SvarBandsError(Exception):
    """Base class for all package errors."""


class ConfigError(SvarBandsError, ValueError):
    """Invalid user configuration or contract violation on inputs."""


class NumericalError(SvarBandsError, ArithmeticError):
    """A numerical step could not be carried out."""


class SingularDesignError(NumericalError):
    """The VAR regressor matrix does not have full column rank."""


class DegenerateCovarianceError(NumericalError):
    """The innovation covariance is not positive definite."""


class StabilityError(NumericalError):
    """The VAR companion matrix has spectral radius at or above one."""


class RankDeficientCovarianceError(NumericalError):
    """The bootstrap covariance of the restricted responses is singular.

    Inference on the rotation vector needs a positive definite covariance of
    the reduced-form responses that enter the sign restrictions.
    """


class AcceptanceRateError(NumericalError):
    """The Bayesian acceptance sampler accepts (almost) no proposals."""

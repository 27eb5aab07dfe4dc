"""Exception hierarchy shared across the package."""


class CodagamError(Exception):
    """Base class for all errors raised by this package."""


# --- composition / geometry ---------------------------------------------


class NonPositivePart(CodagamError):
    """A composition part is zero or negative."""


class DimensionTooSmall(CodagamError):
    """Fewer than two parts were supplied."""


class DimensionMismatch(CodagamError):
    """Operands do not share the same number of parts or coordinates."""


class EmptySample(CodagamError):
    """A sample statistic was requested on an empty sample."""


class InsufficientSample(CodagamError):
    """Too few rows for the requested statistic (e.g. a variance)."""


# --- spline bases ---------------------------------------------------------


class OutOfDomain(CodagamError):
    """A covariate value falls outside the admissible domain."""


class InvalidSpec(CodagamError):
    """A smooth or model specification violates its own constraints."""


class RankError(CodagamError):
    """Numerical rank of a penalty disagrees with its stated null space."""


# --- model assembly -------------------------------------------------------


class UnknownColumn(CodagamError):
    """A model term references a column the dataset does not have."""


class SingleLevelFactor(CodagamError):
    """A factor term has fewer than two observed levels."""


class NonFiniteParameter(CodagamError):
    """A parameter vector contains NaN or infinite entries."""


# --- sampling -------------------------------------------------------------


class InitializationFailure(CodagamError):
    """No finite starting point could be found for a chain."""


class AllDivergent(CodagamError):
    """Every post-warmup transition of a chain diverged."""


class InsufficientDraws(CodagamError):
    """Too few draws or chains for the requested computation."""


# --- evaluation -----------------------------------------------------------


class NonFiniteLogLik(CodagamError):
    """The pointwise log-likelihood matrix contains non-finite entries."""


class ShapeMismatch(CodagamError):
    """Array arguments have inconsistent shapes."""


class NonPositiveVariance(CodagamError):
    """A modeled variance draw is zero or negative."""


class KindMismatch(CodagamError):
    """Two R-squared draw vectors of different kinds were compared."""


class EmptyDraws(CodagamError):
    """An empty draw vector was supplied."""


# --- simulation -----------------------------------------------------------


class InvalidCovariance(CodagamError):
    """A configured covariance matrix is not positive definite."""


# --- CLI ------------------------------------------------------------------


class InvalidComposition(CodagamError):
    """Percent shares do not describe a valid composition."""


class MissingCovariate(CodagamError):
    """A prediction grid lacks a covariate the model needs."""


class ConfigError(CodagamError):
    """A run configuration file is malformed or inconsistent."""

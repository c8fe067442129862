"""Exception and warning types shared across the package."""


class SubspaceLPError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SubspaceLPError, ValueError):
    """Shapes of supplied arrays are inconsistent."""


class DegenerateDesign(SubspaceLPError, ValueError):
    """Regressor matrix carries no usable variation."""


class InsufficientSample(SubspaceLPError, ValueError):
    """Too few usable observations for the requested estimation."""


class InvalidDimension(SubspaceLPError, ValueError):
    """A subset/grid dimension is outside its feasible range."""


class Infeasible(SubspaceLPError, ValueError):
    """No allocation satisfies the stated constraints."""


class EmptyGrid(SubspaceLPError, ValueError):
    """A selection grid contains no usable values."""


class ParseError(SubspaceLPError, ValueError):
    """Input file could not be parsed; message carries row/column location."""


class DuplicateName(SubspaceLPError, ValueError):
    """Panel variable names are not unique."""


class UnknownTcode(SubspaceLPError, ValueError):
    """Transform code outside the supported 1-7 range."""


class MissingVariable(SubspaceLPError, KeyError):
    """A referenced variable does not exist in the panel."""


class NonStationary(SubspaceLPError, ValueError):
    """Autoregressive dynamics have spectral radius at or above one."""


class ConfigError(SubspaceLPError, ValueError):
    """Command-line configuration is invalid; message names the offending key."""


class WeakFirstStage(UserWarning):
    """First-stage instrument t-statistic fell below the configured floor."""


class UndefinedBIC(UserWarning):
    """BIC undefined for a perfect fit; a -inf sentinel was substituted."""


class DegenerateColumn(UserWarning):
    """A zero-variance column was dropped before PCA."""

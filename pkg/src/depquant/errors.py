"""Semantic exception hierarchy shared across the package."""


class DepquantError(Exception):
    """Base class for all package errors."""


class ParameterError(DepquantError, ValueError):
    """Invalid parameter at model/schedule construction time."""


class DomainError(DepquantError, ValueError):
    """Input outside the mathematical domain of an evaluator (e.g. n < 16)."""


class DivergentTailError(DepquantError):
    """Requested coefficient tail series does not converge."""


class MissingLagsError(DepquantError):
    """Operation requires one-step-ahead lagged locations, sample has none."""


class DensityTooSmallError(DepquantError):
    """Oracle density at the quantile is below the reliability threshold."""


class DegenerateTrimError(DepquantError):
    """Trim fractions leave no order statistics to average."""


class NonFiniteError(DepquantError):
    """A recursion produced non-finite values (non-contractive dynamics)."""


class NonPositiveStatisticError(DepquantError):
    """Log-log fit requested on nonpositive statistic values."""


class BoundaryRefusalError(DepquantError):
    """Dichotomy branch selection refused too close to the regime boundary."""


class UnsupportedCombinationError(DepquantError):
    """No sound construction exists for this model combination."""


class ConfigError(DepquantError):
    """Configuration file failed validation.

    Carries the section/key that failed so the CLI can print a field-level
    diagnostic.
    """

    def __init__(self, message, section=None, key=None):
        self.section = section
        self.key = key
        loc = ""
        if section is not None:
            loc = f"[{section}]" + (f" {key}" if key else "")
            loc += ": "
        super().__init__(loc + message)

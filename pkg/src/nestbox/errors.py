"""Exception hierarchy shared across the toolkit.

The CLI maps these onto its documented exit codes: configuration and
usage problems exit 2, numeric/precision failures exit 3, verdict
failures exit 1.
"""

from __future__ import annotations


class NestboxError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(NestboxError):
    """Invalid configuration value; message names the offending field."""


class NumericError(NestboxError):
    """Numeric or precision failure (quadrature, overflow, budget)."""


class CoefficientRangeError(NumericError):
    """Centering coefficient overflows the floating range."""


class QuadratureError(NumericError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class CovarianceNotPSDError(NumericError):
    """Assembled covariance matrix is not PSD beyond jitter tolerance."""


class DegenerateScaleError(NumericError):
    """Limit scale a = 0 (zero-variance environment); caller must handle."""


class NoLimitTheoremError(NestboxError):
    """No limit theorem applies to the given fragmentation law."""


class PrefixCapError(NumericError):
    """Prefix length exceeded the hard cap (law/threshold mismatch)."""


class TailError(NestboxError):
    """Tail expansion requested on an empty or non-resumable tail."""


class PrefixMassError(NumericError):
    """Prefix masses violate the unit-mass invariant."""


class LawPrecisionError(NumericError):
    """Accumulated misallocation error budget exceeded the configured cap."""


class ExactnessError(NestboxError):
    """Requested count is not exact under the materialization threshold."""

"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class MoreauCCError(Exception):
    """Base class for all package errors."""


class NonFinite(MoreauCCError):
    """A function returned NaN or an infinite value at a probed point."""


class NoConvergence(MoreauCCError):
    """An iterative solver exhausted its budget without meeting its certificate."""


class DimensionMismatch(MoreauCCError, ValueError):
    """Array shapes do not agree with the declared dimensions."""


class EigenFailure(MoreauCCError):
    """The symmetric eigensolver failed to converge."""


class InvalidGenerator(MoreauCCError, ValueError):
    """A generator element lies outside the family's generator set."""


class SlaterViolation(MoreauCCError):
    """The constraint does not hold strictly at the Gaussian mean (z = 0)."""


class NonMonotoneBracket(MoreauCCError):
    """Radial bracketing produced a sign pattern incompatible with convexity."""


class DegenerateDenominator(MoreauCCError):
    """The radial derivative of the envelope is too small to divide by."""


class InfeasibleStart(MoreauCCError):
    """The starting point of a solve violates the Slater condition."""


class MaxPenaltyReached(MoreauCCError):
    """The penalty weight hit its ceiling before the iterate became feasible."""


class LineSearchFailure(MoreauCCError):
    """Backtracking could not find a step giving sufficient decrease."""


class NotFound(MoreauCCError):
    """A witness search finished without locating a witness."""


class ConfigError(MoreauCCError, ValueError):
    """A run configuration is malformed or refers to unknown entries."""

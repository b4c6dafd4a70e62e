"""Exception hierarchy for the initialization pipeline.

Everything raised on purpose derives from SfsmError so callers can catch
one base type at the CLI boundary.
"""


class SfsmError(Exception):
    """Base class for all package errors."""


class ParseError(SfsmError):
    """Malformed input file (bad magic, unknown header key, bad counts)."""


class ValidationError(SfsmError):
    """Structurally parseable data that violates a documented invariant."""


class DegenerateDepth(SfsmError):
    """Homogeneous normalization hit a near-zero or negative depth."""


class NonPositiveDepth(SfsmError):
    """Inverse-depth input to softplus_inverse was not strictly positive."""


class InsufficientCorrespondences(SfsmError):
    """Fewer correspondences than the minimal sample requires."""


class RansacFailure(SfsmError):
    """No hypothesis reached the minimum inlier count."""


class Step1Failure(SfsmError):
    """Linear small-motion stage failed."""


class Step2Failure(SfsmError):
    """Restricted refinement stage diverged."""


class Step3Failure(SfsmError):
    """Full refinement stage diverged."""


class NumericalFailure(SfsmError):
    """Non-finite residual or Jacobian at an accepted optimizer state."""


class GenerationError(SfsmError):
    """Synthetic scene generation produced an unusable sequence."""


class DegenerateScale(SfsmError):
    """Estimate cannot be scale-normalized (last-frame translation ~ 0)."""

"""Exception types shared across the package.

Plain misuse of an API (bad index, mismatched spaces, violated support
preconditions) raises ValueError; the classes here mark failures that
carry diagnostic state or that callers may want to handle specially.
"""


class CCFlowError(Exception):
    """Base class for package-specific failures."""


class ResourceLimitError(CCFlowError):
    """A determinant space or matrix exceeds the configured cap."""


class FCIDumpError(CCFlowError):
    """Malformed FCIDUMP input; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateReferenceError(CCFlowError):
    """Reference coefficient vanishes; intermediate normalization impossible."""


class DegenerateOrbitalError(CCFlowError):
    """A Moller-Plesset denominator is (numerically) zero."""


class IntruderStateError(CCFlowError):
    """Every candidate eigenvector has negligible reference overlap."""


class NonRealRootError(CCFlowError):
    """The selected eigenvalue of a non-Hermitian block is complex."""

    def __init__(self, message, roots=()):
        super().__init__(message)
        self.roots = tuple(roots)


class DivergenceError(CCFlowError):
    """Residual norm grew over too many consecutive iterations."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class ConvergenceError(CCFlowError):
    """An iterative procedure ran out of iterations."""

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class InstabilityError(CCFlowError):
    """Propagated amplitudes exceeded the configured norm bound."""

    def __init__(self, message, last_good=None, trajectory=()):
        super().__init__(message)
        self.last_good = last_good
        self.trajectory = list(trajectory)


class BlockError(CCFlowError):
    """A flow computational block failed; carries the block index."""

    def __init__(self, block_index, label, cause):
        super().__init__(f"block {block_index} ({label}): {cause}")
        self.block_index = block_index
        self.label = label

"""Exception hierarchy for blocktm."""


class BlockTMError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(BlockTMError, ValueError):
    pass


class NonHermitianBlock(BlockTMError, ValueError):
    pass


class SingularCoupling(BlockTMError, ValueError):
    pass


class ZeroTwist(BlockTMError, ValueError):
    pass


class SingularMatrix(BlockTMError, ArithmeticError):
    pass


class ResolventAtEigenvalue(BlockTMError, ArithmeticError):
    """E sits on (or numerically at) an eigenvalue of the Hamiltonian."""


class CornerSingular(BlockTMError, ArithmeticError):
    """The (1, N) corner block of the resolvent cannot be inverted."""


class TransferEigenvalueHit(BlockTMError, ArithmeticError):
    """z is (numerically) an eigenvalue of T(E)."""


class ConvergenceFailure(BlockTMError, ArithmeticError):
    pass


class QuadratureNotConverged(BlockTMError, ArithmeticError):
    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class AmbiguousPairing(BlockTMError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PositivityViolation(BlockTMError, ArithmeticError):
    pass


class ProductNotRepresentable(BlockTMError, OverflowError):
    """The plain transfer product overflowed; use the stabilized path."""

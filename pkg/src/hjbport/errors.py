"""Exception hierarchy shared by the solver modules."""


class SolverError(Exception):
    """Base class for all hjbport failures."""


class ConfigError(SolverError):
    """Invalid or inconsistent run configuration."""


class PhiOutOfDomain(SolverError):
    """Risk-aversion argument outside the admissible domain of alpha."""


class NonConvex(SolverError):
    """Covariance matrix fails the positive-definiteness check."""


class TableMonotonicityViolation(SolverError):
    """Tabulated alpha values are not strictly increasing (QP failure)."""


class NonIncreasingUtility(SolverError):
    """Terminal utility has non-positive slope at a mesh node."""


class NonpositiveB(SolverError):
    """Anchor derivative b(t) lost positivity; run aborted."""


class ZeroPivot(SolverError):
    """Tridiagonal elimination hit a zero pivot (should be unreachable)."""


class MonotonicityViolation(SolverError):
    """Reconstructed value function is not increasing in x."""


class SingularCovariance(SolverError):
    """Sample covariance is singular; consider the shrinkage flag."""


class NonpositiveError(SolverError):
    """Convergence-order computation needs strictly positive errors."""

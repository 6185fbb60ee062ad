"""Exception types.

Every error carries a short upper-case ``code`` so the command line can print
a single machine-parsable line for it.
"""


class ClmmError(Exception):
    code = "ERROR"


class NegativeEntry(ClmmError, ValueError):
    code = "NEGATIVE_ENTRY"


class RowSumViolation(ClmmError, ValueError):
    code = "ROW_SUM_VIOLATION"


class LengthMismatch(ClmmError, ValueError):
    code = "LENGTH_MISMATCH"


class DimensionMismatch(ClmmError, ValueError):
    code = "DIMENSION_MISMATCH"


class IndexOutOfRange(ClmmError, IndexError):
    code = "INDEX_OUT_OF_RANGE"


class NotConverged(ClmmError, RuntimeError):
    code = "NOT_CONVERGED"


class AmbiguousStationary(NotConverged):
    """More than one closed class: the chain has no unique stationary law."""

    code = "AMBIGUOUS_STATIONARY"


class TripTooLong(ClmmError, RuntimeError):
    code = "TRIP_TOO_LONG"


class JunctionMismatch(ClmmError, ValueError):
    code = "JUNCTION_MISMATCH"


class AdjacencyViolation(ClmmError, ValueError):
    code = "ADJACENCY_VIOLATION"


class TooLarge(ClmmError, ValueError):
    code = "TOO_LARGE"


class ZeroLikelihood(ClmmError, ValueError):
    code = "ZERO_LIKELIHOOD"


class UnreachedState(ClmmError, ValueError):
    code = "UNREACHED_STATE"


class TooManyLatentStates(ClmmError, ValueError):
    code = "TOO_MANY_LATENT_STATES"


class ConfigError(ClmmError, ValueError):
    code = "CONFIG_ERROR"

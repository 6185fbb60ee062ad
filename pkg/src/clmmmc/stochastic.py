"""Probability vectors, row-stochastic matrices, partitions and TV metrics.

Arrays are plain ``numpy`` float arrays; state indices are 0-based in the
Python API.  Random draws go through :class:`numpy.random.Generator`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    AmbiguousStationary,
    ConfigError,
    DimensionMismatch,
    IndexOutOfRange,
    LengthMismatch,
    NegativeEntry,
    NotConverged,
    RowSumViolation,
)

#: Tolerance for accepting rows read from files (then renormalised).
INGEST_TOL = 1e-8
#: Rows closer than this to unit sum are already valid and left bit-exact.
EXACT_TOL = 1e-13
#: Lower bound of the uniform draws behind random stochastic rows.
RANDOM_EPS = 1e-3


# ---------------------------------------------------------------------------
# random sources


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Return a PCG64 generator; equal seeds give identical draw sequences."""
    return np.random.Generator(np.random.PCG64(seed))


def child_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent seed for worker/instance ``index`` derived from ``seed``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))


# ---------------------------------------------------------------------------
# validation


def _check_rows(arr: np.ndarray, tol: float) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise RowSumViolation("non-finite entry")
    if np.any(arr < 0):
        idx = tuple(int(i) + 1 for i in np.argwhere(arr < 0)[0])
        raise NegativeEntry(f"negative entry at {idx}")
    sums = arr.sum(axis=-1)
    dev = np.abs(sums - 1.0)
    if np.any(dev > tol):
        idx = tuple(int(i) + 1 for i in np.argwhere(dev > tol)[0])
        raise RowSumViolation(
            f"row {idx} sums to {sums[tuple(i - 1 for i in idx)]!r} (tol {tol:g})"
        )
    fix = dev > EXACT_TOL
    if np.any(fix):
        arr = arr.copy()
        arr[fix] = arr[fix] / sums[fix][..., None]
    return arr


def validate_stochastic(matrix, tol: float = INGEST_TOL) -> np.ndarray:
    """Check a row-stochastic ``n x m`` matrix and return it as floats.

    Rows whose sum is within ``tol`` of one are renormalised; rows already
    within ``EXACT_TOL`` are returned bit-for-bit. Exact zeros stay zero.
    """
    arr = np.array(matrix, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"expected a non-empty 2-d grid, got shape {arr.shape}")
    return _check_rows(arr, tol)


def validate_prob_vector(vector, tol: float = INGEST_TOL) -> np.ndarray:
    arr = np.array(vector, dtype=float)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty vector, got shape {arr.shape}")
    return _check_rows(arr, tol)


def is_stochastic(matrix, tol: float = 1e-12) -> bool:
    arr = np.asarray(matrix, dtype=float)
    return bool(np.all(arr >= 0) and np.all(np.abs(arr.sum(axis=-1) - 1.0) <= tol))


# ---------------------------------------------------------------------------
# random construction and sampling


def random_stochastic_matrix(n: int, m: int, rng: np.random.Generator,
                             support=None) -> np.ndarray:
    """Random ``n x m`` row-stochastic matrix with strictly positive entries.

    Each row normalises independent ``uniform(RANDOM_EPS, 1)`` draws. With a
    boolean ``support`` mask, entries outside it are forced to zero (each row
    must keep at least one allowed entry).
    """
    if n < 1 or m < 1:
        raise DimensionMismatch(f"need n, m >= 1, got {n}, {m}")
    u = rng.uniform(RANDOM_EPS, 1.0, size=(n, m))
    if support is not None:
        support = np.asarray(support, dtype=bool)
        if support.shape != (n, m):
            raise DimensionMismatch(f"support shape {support.shape} != {(n, m)}")
        if not np.all(support.any(axis=1)):
            raise DimensionMismatch("support has an empty row")
        u = np.where(support, u, 0.0)
    return u / u.sum(axis=1, keepdims=True)


def random_prob_vector(n: int, rng: np.random.Generator) -> np.ndarray:
    return random_stochastic_matrix(1, n, rng)[0]


def sample_categorical(p, rng: np.random.Generator) -> int:
    """Draw index ``i`` with probability ``p[i]`` using one uniform variate."""
    return draw_from_cumulative(np.cumsum(p), rng.random())


def draw_from_cumulative(cum: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(cum, u, side="right"))
    if i >= cum.shape[0]:
        # u beyond a cumulative total rounded below one: last category with mass
        i = int(np.flatnonzero(np.diff(np.concatenate(([0.0], cum))) > 0)[-1])
    return i


# ---------------------------------------------------------------------------
# stationary distributions and distances


def _closed_classes(A) -> list[np.ndarray]:
    """Membership masks of the closed communicating classes of ``A``'s support graph."""
    adj = np.asarray(A) > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        if not adj[np.ix_(members, ~members)].any():
            closed.append(members)
    return closed


def closed_class_count(A) -> int:
    """Number of closed communicating classes of the support graph of ``A``."""
    return len(_closed_classes(A))


def stationary_distribution(A, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Stationary distribution of a square stochastic matrix by power iteration.

    Iterates ``psi <- psi A`` from the uniform vector until the L1 change is
    below ``tol``.

    Raises
    ------
    AmbiguousStationary
        If the chain has more than one closed class.
    NotConverged
        If the iteration does not settle within ``max_iter`` steps (periodic
        chains typically end up here).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"stationary distribution needs a square matrix, got {A.shape}")
    closed = _closed_classes(A)
    if len(closed) > 1:
        raise AmbiguousStationary("chain has several closed classes")
    recurrent = closed[0]
    psi = np.full(A.shape[0], 1.0 / A.shape[0])
    for _ in range(max_iter):
        nxt = psi @ A
        nxt /= nxt.sum()
        if np.abs(nxt - psi).sum() < tol:
            # transient states carry no stationary mass; drop the iteration residue
            nxt[~recurrent] = 0.0
            return nxt / nxt.sum()
        psi = nxt
    raise NotConverged(f"power iteration did not converge in {max_iter} steps")


def tv_distance(f, g) -> float:
    """Total variation distance ``0.5 * sum |f - g|``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise LengthMismatch(f"lengths differ: {f.shape} vs {g.shape}")
    return 0.5 * float(np.abs(f - g).sum())


def _same_square(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise DimensionMismatch(f"need equal square matrices, got {a.shape} and {b.shape}")


def dist_stat(A_est, A_true) -> float:
    """TV distance between the stationary distributions of two chains."""
    A_est = np.asarray(A_est, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    _same_square(A_est, A_true)
    return tv_distance(stationary_distribution(A_est), stationary_distribution(A_true))


def dist_exp(A_est, A_true, weights=None) -> float:
    """Row-wise TV distance averaged under the true stationary distribution.

    ``weights`` overrides the stationary weighting (used as a fallback when
    the true chain has none).
    """
    A_est = np.asarray(A_est, dtype=float)
    A_true = np.asarray(A_true, dtype=float)
    _same_square(A_est, A_true)
    if weights is None:
        weights = stationary_distribution(A_true)
    row_tv = 0.5 * np.abs(A_est - A_true).sum(axis=1)
    return float(np.dot(weights, row_tv))


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class Partition:
    """Partition of ``range(n)`` into ``p`` non-empty blocks.

    ``membership[i]`` is the index of the block containing ``i``.
    """

    blocks: tuple
    n: int

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        if not blocks or any(len(b) == 0 for b in blocks):
            raise DimensionMismatch("partition blocks must be non-empty")
        flat = [i for b in blocks for i in b]
        if any(i < 0 or i >= self.n for i in flat):
            raise IndexOutOfRange(f"partition element outside 1..{self.n}")
        if len(flat) != len(set(flat)) or len(flat) != self.n:
            raise DimensionMismatch(f"blocks do not cover 1..{self.n} exactly once")
        object.__setattr__(self, "blocks", blocks)
        member = np.empty(self.n, dtype=np.int64)
        for k, b in enumerate(blocks):
            member[list(b)] = k
        member.setflags(write=False)
        object.__setattr__(self, "_membership", member)

    @property
    def membership(self) -> np.ndarray:
        return self._membership

    @property
    def p(self) -> int:
        return len(self.blocks)

    def __call__(self, i: int) -> int:
        return int(self._membership[i])

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls((tuple(range(n)),), n)

    @classmethod
    def from_membership(cls, membership: Sequence[int]) -> "Partition":
        membership = [int(k) for k in membership]
        p = max(membership) + 1
        blocks = [[i for i, k in enumerate(membership) if k == b] for b in range(p)]
        return cls(tuple(tuple(b) for b in blocks), len(membership))

    @classmethod
    def from_lists(cls, lists: Iterable[Iterable[int]], n: int) -> "Partition":
        """Build from blocks of 1-based state labels."""
        return cls(tuple(tuple(int(i) - 1 for i in b) for b in lists), n)

    def to_lists(self) -> list[list[int]]:
        """Blocks as lists of 1-based labels."""
        return [[i + 1 for i in b] for b in self.blocks]

    @classmethod
    def parse(cls, spec: str, n: int) -> "Partition":
        """Parse ``"8,9|1-7"`` style text (1-based, ranges allowed)."""
        blocks = []
        for part in spec.split("|"):
            block = []
            for item in part.split(","):
                item = item.strip()
                if not item:
                    continue
                try:
                    if "-" in item:
                        lo, hi = (int(x) for x in item.split("-", 1))
                        block.extend(range(lo, hi + 1))
                    else:
                        block.append(int(item))
                except ValueError:
                    raise ConfigError(f"bad partition item {item!r} in {spec!r}") from None
            blocks.append(block)
        return cls.from_lists(blocks, n)

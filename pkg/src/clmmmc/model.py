"""The closed-loop Markov-modulated Markov chain and its HMM lift.

A model is the tuple ``(piR, piS, AR, AS, gamma)``:

* ``piR`` (R,)      initial law of the visible chain,
* ``piS`` (S,)      initial law of the latent chain,
* ``AR`` (S, R, R)  visible transition pages, one per latent state,
* ``AS`` (p, S, S)  latent transition pages, one per block of ``gamma``,
* ``gamma``         :class:`~clmmmc.stochastic.Partition` of the visible states.

One step of the joint chain ``(s, r) -> (s', r')`` has probability
``AR[s, r, r'] * AS[gamma(r), s, s']``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange
from .stochastic import (
    INGEST_TOL,
    Partition,
    random_prob_vector,
    random_stochastic_matrix,
    validate_prob_vector,
    validate_stochastic,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClMMMC:
    piR: np.ndarray
    piS: np.ndarray
    AR: np.ndarray
    AS: np.ndarray
    gamma: Partition
    tol: float = field(default=INGEST_TOL, repr=False)

    def __post_init__(self):
        tol = self.tol
        piR = validate_prob_vector(self.piR, tol)
        piS = validate_prob_vector(self.piS, tol)
        R, S = piR.shape[0], piS.shape[0]
        AR = np.array(self.AR, dtype=float)
        AS = np.array(self.AS, dtype=float)
        if AR.ndim != 3:
            raise DimensionMismatch(f"AR: expected a list of R x R pages, got shape {AR.shape}")
        if AR.shape[0] != S:
            raise DimensionMismatch(f"AR: {AR.shape[0]} pages but piS has S={S} states")
        if AR.shape[1:] != (R, R):
            raise DimensionMismatch(f"AR: pages are {AR.shape[1:]} but piR has R={R} states")
        gamma = self.gamma
        if not isinstance(gamma, Partition):
            gamma = Partition(tuple(gamma), R)
        if gamma.n != R:
            raise DimensionMismatch(f"gamma: partitions {gamma.n} states but R={R}")
        if AS.ndim != 3:
            raise DimensionMismatch(f"AS: expected a list of S x S pages, got shape {AS.shape}")
        if AS.shape[0] != gamma.p:
            raise DimensionMismatch(f"AS: {AS.shape[0]} pages but gamma has p={gamma.p} blocks")
        if AS.shape[1:] != (S, S):
            raise DimensionMismatch(f"AS: pages are {AS.shape[1:]} but piS has S={S} states")
        AR = np.stack([validate_stochastic(page, tol) for page in AR])
        AS = np.stack([validate_stochastic(page, tol) for page in AS])
        object.__setattr__(self, "piR", _frozen(piR))
        object.__setattr__(self, "piS", _frozen(piS))
        object.__setattr__(self, "AR", _frozen(AR))
        object.__setattr__(self, "AS", _frozen(AS))
        object.__setattr__(self, "gamma", gamma)

    @property
    def R(self) -> int:
        return self.piR.shape[0]

    @property
    def S(self) -> int:
        return self.piS.shape[0]

    @property
    def p(self) -> int:
        return self.gamma.p

    @property
    def is_open_loop(self) -> bool:
        return self.p == 1

    def replace(self, **changes) -> "ClMMMC":
        kw = dict(piR=self.piR, piS=self.piS, AR=self.AR, AS=self.AS, gamma=self.gamma)
        kw.update(changes)
        return ClMMMC(**kw)

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "S": self.S,
            "p": self.p,
            "piR": self.piR.tolist(),
            "piS": self.piS.tolist(),
            "AR": self.AR.tolist(),
            "AS": self.AS.tolist(),
            "gamma": self.gamma.to_lists(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClMMMC":
        missing = [k for k in ("piR", "piS", "AR", "AS", "gamma") if k not in d]
        if missing:
            raise DimensionMismatch(f"model document lacks fields {missing}")
        R = len(d["piR"])
        model = cls(d["piR"], d["piS"], d["AR"], d["AS"], Partition.from_lists(d["gamma"], R))
        for key, val in (("R", model.R), ("S", model.S), ("p", model.p)):
            if key in d and int(d[key]) != val:
                raise DimensionMismatch(f"{key}: declared {d[key]} but data implies {val}")
        return model

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClMMMC):
            return NotImplemented
        return (self.gamma == other.gamma
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("piR", "piS", "AR", "AS")))


def new_model(piR, piS, AR, AS, gamma=None) -> ClMMMC:
    """Validate and build a model; ``gamma=None`` means open loop."""
    if gamma is None:
        gamma = Partition.trivial(len(piR))
    return ClMMMC(piR, piS, AR, AS, gamma)


def save_model(model: ClMMMC, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> ClMMMC:
    return ClMMMC.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FreezeMask:
    """Pages excluded from re-estimation (0-based page indices)."""

    AR_pages: frozenset = frozenset()
    AS_pages: frozenset = frozenset()
    piS: bool = False

    def __post_init__(self):
        object.__setattr__(self, "AR_pages", frozenset(int(i) for i in self.AR_pages))
        object.__setattr__(self, "AS_pages", frozenset(int(i) for i in self.AS_pages))

    def check(self, model: ClMMMC) -> None:
        for i in self.AR_pages:
            if not 0 <= i < model.S:
                raise IndexOutOfRange(f"frozen AR page {i + 1} outside 1..{model.S}")
        for i in self.AS_pages:
            if not 0 <= i < model.p:
                raise IndexOutOfRange(f"frozen AS page {i + 1} outside 1..{model.p}")


# ---------------------------------------------------------------------------
# elementary quantities


def _check_index(name: str, v: int, n: int) -> None:
    if not 0 <= v < n:
        raise IndexOutOfRange(f"{name}={v + 1} outside 1..{n}")


def joint_transition_prob(model: ClMMMC, s: int, r: int, s_next: int, r_next: int) -> float:
    """Probability of the joint step ``(s, r) -> (s_next, r_next)``."""
    for name, v, n in (("s", s, model.S), ("r", r, model.R),
                       ("s_next", s_next, model.S), ("r_next", r_next, model.R)):
        _check_index(name, v, n)
    return float(model.AR[s, r, r_next] * model.AS[model.gamma(r), s, s_next])


def parameter_count(model: ClMMMC) -> tuple[int, int]:
    """Free parameters of the model and of its lifted HMM."""
    return parameter_count_for(model.R, model.S, model.p)


def parameter_count_for(R: int, S: int, p: int) -> tuple[int, int]:
    RS = R * S
    return (p * S - 1) * (S - 1) + (RS - 1) * (R - 1), RS * RS - RS + (RS - 1)


def state_index(s: int, r: int, R: int) -> int:
    """Lifted state of the pair ``(s, r)``; 1-based in and out: ``(s-1)R + r``."""
    if s < 1 or not 1 <= r <= R:
        raise IndexOutOfRange(f"(s={s}, r={r}) invalid for R={R}")
    return (s - 1) * R + r


def inverse_state_index(q: int, R: int) -> tuple[int, int]:
    """Inverse of :func:`state_index`: ``q -> (ceil(q/R), (q-1) mod R + 1)``."""
    if q < 1 or R < 1:
        raise IndexOutOfRange(f"q={q} invalid for R={R}")
    return -(-q // R), (q - 1) % R + 1


def permute_latent(model: ClMMMC, perm) -> ClMMMC:
    """Relabel latent states: new state ``k`` is old state ``perm[k]``."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(model.S)):
        raise DimensionMismatch(f"not a permutation of {model.S} latent states: {perm.tolist()}")
    return model.replace(piS=model.piS[perm], AR=model.AR[perm],
                         AS=model.AS[:, perm][:, :, perm])


# ---------------------------------------------------------------------------
# random models


def random_model(R: int, S: int, gamma: Partition | None, rng: np.random.Generator) -> ClMMMC:
    """Model with all vectors and pages drawn by :func:`random_stochastic_matrix`."""
    gamma = Partition.trivial(R) if gamma is None else gamma
    piR = random_prob_vector(R, rng)
    piS = random_prob_vector(S, rng)
    AR = np.stack([random_stochastic_matrix(R, R, rng) for _ in range(S)])
    AS = np.stack([random_stochastic_matrix(S, S, rng) for _ in range(gamma.p)])
    return ClMMMC(piR, piS, AR, AS, gamma)


def random_partition(R: int, p: int, rng: np.random.Generator) -> Partition:
    """Uniformly shuffled partition of ``range(R)`` into ``p`` non-empty blocks."""
    if not 1 <= p <= R:
        raise DimensionMismatch(f"cannot split {R} states into {p} blocks")
    order = rng.permutation(R)
    cuts = np.sort(rng.choice(np.arange(1, R), size=p - 1, replace=False)) if p > 1 else []
    return Partition(tuple(tuple(b.tolist()) for b in np.split(order, cuts)), R)


def random_initial(template: ClMMMC, rng: np.random.Generator,
                   freeze: FreezeMask | None = None) -> ClMMMC:
    """Random starting point on the support of ``template``.

    Entries that are zero in the template stay zero and frozen pages are
    copied verbatim; everything else is redrawn strictly positive.
    """
    freeze = freeze or FreezeMask()
    S, R = template.S, template.R
    piS = template.piS if freeze.piS else random_stochastic_matrix(
        1, S, rng, support=template.piS[None, :] > 0)[0]
    AR = np.stack([
        template.AR[i] if i in freeze.AR_pages
        else random_stochastic_matrix(R, R, rng, support=template.AR[i] > 0)
        for i in range(S)
    ])
    AS = np.stack([
        template.AS[l] if l in freeze.AS_pages
        else random_stochastic_matrix(S, S, rng, support=template.AS[l] > 0)
        for l in range(template.p)
    ])
    return template.replace(piS=piS, AR=AR, AS=AS)


# ---------------------------------------------------------------------------
# hidden Markov model lift


@dataclass(frozen=True, eq=False)
class HMMLift:
    """Equivalent HMM on ``R*S`` hidden states ``q = s*R + r`` (0-based).

    ``B`` is the 0/1 emission matrix that reveals ``r``. Output only: there
    is no way back to a model.
    """

    pi: np.ndarray
    W: np.ndarray
    B: np.ndarray

    def sequence_probability(self, traj) -> float:
        """Textbook HMM forward pass without scaling."""
        traj = np.asarray(traj, dtype=np.int64)
        a = self.pi * self.B[:, traj[0]]
        for r in traj[1:]:
            a = (a @ self.W) * self.B[:, r]
        return float(a.sum())

    def log_probability(self, traj) -> float:
        """Scaled forward pass; ``-inf`` for impossible sequences."""
        traj = np.asarray(traj, dtype=np.int64)
        a = self.pi * self.B[:, traj[0]]
        total = 0.0
        for k in range(traj.shape[0]):
            if k:
                a = (a @ self.W) * self.B[:, traj[k]]
            c = a.sum()
            if c <= 0:
                return -np.inf
            total += np.log(c)
            a = a / c
        return float(total)

    def to_dict(self) -> dict:
        return {"pi": self.pi.tolist(), "W": self.W.tolist(), "B": self.B.tolist()}


def lift_to_hmm(model: ClMMMC) -> HMMLift:
    """Lift to the HMM ``(pi, W, B)`` generating the same visible process."""
    R, S = model.R, model.S
    ASg = model.AS[model.gamma.membership]  # (R, S, S): page used when leaving r
    # W4[s, r, s2, r2] = AS[gamma(r)][s, s2] * AR[s][r, r2]
    W4 = ASg.transpose(1, 0, 2)[:, :, :, None] * model.AR[:, :, None, :]
    W = W4.reshape(S * R, S * R)
    pi = np.kron(model.piS, model.piR)
    B = np.tile(np.eye(R), (S, 1))
    return HMMLift(_frozen(pi), _frozen(W), _frozen(B))

"""Likelihoods, forward/backward recursions and EM re-estimation.

Trajectories are 0-based integer arrays ``r_0 .. r_T``.  The fast path is
the scaled recursion (:func:`forward_backward_scaled`); the unscaled
recursions and the latent-sequence enumeration are kept as reference
implementations for testing it.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, DimensionMismatch, IndexOutOfRange, TooLarge, UnreachedState, ZeroLikelihood
from .model import ClMMMC, FreezeMask, random_initial

log = logging.getLogger(__name__)

#: Upper bound on the number of latent sequences the brute-force paths enumerate.
ENUMERATION_LIMIT = 10_000_000

UNREACHED_POLICIES = ("error", "keep", "uniform")


# ---------------------------------------------------------------------------
# data handling


def as_trajectory(traj, R: int | None = None) -> np.ndarray:
    arr = np.asarray(traj)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise DimensionMismatch(f"trajectory must be a non-empty 1-d sequence, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DimensionMismatch("trajectory states must be integers")
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    if R is not None and (arr.min() < 0 or arr.max() >= R):
        bad = int(arr[(arr < 0) | (arr >= R)][0])
        raise IndexOutOfRange(f"trajectory state {bad + 1} outside 1..{R}")
    return arr


def as_dataset(data, R: int | None = None) -> tuple[list[np.ndarray], bool]:
    """Normalise one trajectory or a list of them; return ``(trajs, is_multi)``."""
    if isinstance(data, np.ndarray) and data.ndim == 1:
        return [as_trajectory(data, R)], False
    data = list(data)
    if data and np.ndim(data[0]) == 0:
        return [as_trajectory(data, R)], False
    if not data:
        raise DimensionMismatch("empty data set")
    return [as_trajectory(t, R) for t in data], True


# ---------------------------------------------------------------------------
# reference paths


def joint_sequence_probability(model: ClMMMC, latent, traj) -> float:
    """Probability of a latent sequence together with the visible one."""
    s = np.asarray(latent, dtype=np.int64)
    r = as_trajectory(traj, model.R)
    if s.shape != r.shape:
        raise DimensionMismatch("latent and visible sequences differ in length")
    prob = model.piR[r[0]] * model.piS[s[0]]
    member = model.gamma.membership
    for t in range(1, r.shape[0]):
        prob *= model.AS[member[r[t - 1]], s[t - 1], s[t]] * model.AR[s[t - 1], r[t - 1], r[t]]
    return float(prob)


def _latent_sequences(model: ClMMMC, n: int):
    if model.S ** n > ENUMERATION_LIMIT:
        raise TooLarge(f"{model.S}^{n} latent sequences exceed the enumeration limit")
    return itertools.product(range(model.S), repeat=n)


def brute_force_likelihood(model: ClMMMC, traj) -> float:
    """Likelihood by summing over every latent sequence."""
    r = as_trajectory(traj, model.R)
    return float(sum(joint_sequence_probability(model, s, r)
                     for s in _latent_sequences(model, r.shape[0])))


def _emission_slices(model: ClMMMC, r: np.ndarray) -> np.ndarray:
    # row t-1 holds AR[i, r_{t-1}, r_t] over latent states i
    return model.AR[:, r[:-1], r[1:]].T


def forward_unscaled(model: ClMMMC, traj) -> tuple[np.ndarray, float]:
    """Unscaled forward variables ``alpha[t, i]`` and the likelihood."""
    r = as_trajectory(traj, model.R)
    member = model.gamma.membership
    alpha = np.empty((r.shape[0], model.S))
    alpha[0] = model.piS * model.piR[r[0]]
    emis = _emission_slices(model, r)
    for t in range(1, r.shape[0]):
        alpha[t] = model.AS[member[r[t - 1]]].T @ (emis[t - 1] * alpha[t - 1])
    return alpha, float(alpha[-1].sum())


def backward_unscaled(model: ClMMMC, traj) -> np.ndarray:
    """Unscaled backward variables ``beta[t, i]``."""
    r = as_trajectory(traj, model.R)
    member = model.gamma.membership
    beta = np.empty((r.shape[0], model.S))
    beta[-1] = 1.0
    emis = _emission_slices(model, r)
    for t in range(r.shape[0] - 1, 0, -1):
        beta[t - 1] = (model.AS[member[r[t - 1]]] @ beta[t]) * emis[t - 1]
    return beta


# ---------------------------------------------------------------------------
# scaled forward/backward


@dataclass(frozen=True, eq=False)
class FBCache:
    """Scaled forward/backward pass over one trajectory.

    ``alpha_hat[t]`` sums to one; ``beta_hat[t]`` is the backward variable
    divided by the product of ``step_norms[t+1:]``, so that
    ``alpha_hat[t] @ beta_hat[t] == 1`` and ``beta_hat[T] == 1``.
    """

    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    step_norms: np.ndarray
    log_likelihood: float


def forward_backward_scaled(model: ClMMMC, traj) -> FBCache:
    r = as_trajectory(traj, model.R)
    member = model.gamma.membership
    alpha, norms, bad = _kernels.forward_scaled(model.piS, model.piR, model.AR, model.AS, member, r)
    if bad >= 0:
        if bad == 0:
            raise ZeroLikelihood(f"initial state {r[0] + 1} has probability 0")
        raise ZeroLikelihood(
            f"transition {r[bad - 1] + 1}->{r[bad] + 1} at step {bad} is impossible under the model")
    beta = _kernels.backward_scaled(model.AR, model.AS, member, r, norms)
    return FBCache(alpha, beta, norms, float(np.log(norms).sum()))


def compute_xi(cache: FBCache, model: ClMMMC, traj) -> np.ndarray:
    """Normalised ``xi[t-1, i, j] = P(S_{t-1}=i, S_t=j | r_0..r_T)`` for t = 1..T."""
    r = as_trajectory(traj, model.R)
    emis = _emission_slices(model, r)
    pages = model.AS[model.gamma.membership[r[:-1]]]
    xi = (cache.alpha_hat[:-1, :, None] * emis[:, :, None]) * pages * cache.beta_hat[1:, None, :]
    return xi / xi.sum(axis=(1, 2), keepdims=True)


def log_likelihood(model: ClMMMC, data) -> float:
    """Log-likelihood of one trajectory or the sum over several.

    Impossible data gives ``-inf`` instead of an exception.
    """
    trajs, _ = as_dataset(data, model.R)
    total = 0.0
    for r in trajs:
        try:
            total += forward_backward_scaled(model, r).log_likelihood
        except ZeroLikelihood:
            return -np.inf
    return total


# ---------------------------------------------------------------------------
# auxiliary function


def _weighted_log(w, x) -> float:
    """``sum w*log(x)`` with ``0 log 0 = 0`` and ``-inf`` if ``w > 0`` meets ``x = 0``."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    pos = w > 0
    if np.any(x[pos] <= 0):
        return -np.inf
    return float(np.sum(w[pos] * np.log(x[pos])))


def auxiliary_Q(mu: ClMMMC, mu_prime: ClMMMC, traj) -> float:
    """Expected complete-data log-likelihood of ``mu_prime`` under ``mu``,
    evaluated through the pairwise latent marginals of ``mu``."""
    _same_shape(mu, mu_prime)
    r = as_trajectory(traj, mu.R)
    try:
        cache = forward_backward_scaled(mu, r)
    except ZeroLikelihood:
        return 0.0
    ell = np.exp(cache.log_likelihood)
    first = cache.alpha_hat[0] * cache.beta_hat[0]
    first = ell * first / first.sum()
    parts = [_weighted_log(ell, mu_prime.piR[r[0]]), _weighted_log(first, mu_prime.piS)]
    if r.shape[0] > 1:
        xi = ell * compute_xi(cache, mu, r)
        as_prime = mu_prime.AS[mu_prime.gamma.membership[r[:-1]]]
        ar_prime = _emission_slices(mu_prime, r)[:, :, None]
        parts.append(_weighted_log(xi, as_prime))
        parts.append(_weighted_log(xi, np.broadcast_to(ar_prime, xi.shape)))
    return float(sum(parts))


def auxiliary_Q_enumerated(mu: ClMMMC, mu_prime: ClMMMC, traj) -> float:
    """Same quantity as :func:`auxiliary_Q`, summed over all latent sequences."""
    _same_shape(mu, mu_prime)
    r = as_trajectory(traj, mu.R)
    total = 0.0
    for s in _latent_sequences(mu, r.shape[0]):
        p = joint_sequence_probability(mu, s, r)
        if p == 0.0:
            continue
        q = joint_sequence_probability(mu_prime, s, r)
        if q == 0.0:
            return -np.inf
        total += p * np.log(q)
    return total


def _same_shape(a: ClMMMC, b: ClMMMC) -> None:
    if (a.R, a.S, a.p) != (b.R, b.S, b.p) or a.gamma != b.gamma:
        raise DimensionMismatch("models differ in R, S or gamma")


# ---------------------------------------------------------------------------
# E-step statistics and M-step


@dataclass
class Stats:
    """Expected counts accumulated over trajectories (each weighted by 1/likelihood)."""

    init: np.ndarray          # (S,) posterior of S_0
    ar: np.ndarray            # (S, R, R) expected transitions r->r' made from latent state i
    as_: np.ndarray           # (p, S, S) expected latent transitions per block
    starts: np.ndarray        # (R,) number of trajectories starting in r
    visits: np.ndarray        # (R,) number of transitions leaving r
    block_visits: np.ndarray  # (p,) number of transitions leaving a block
    n_traj: int = 0
    log_likelihood: float = 0.0

    @classmethod
    def zeros(cls, model: ClMMMC) -> "Stats":
        R, S, p = model.R, model.S, model.p
        return cls(np.zeros(S), np.zeros((S, R, R)), np.zeros((p, S, S)),
                   np.zeros(R), np.zeros(R), np.zeros(p))

    def add(self, other: "Stats") -> None:
        self.init += other.init
        self.ar += other.ar
        self.as_ += other.as_
        self.starts += other.starts
        self.visits += other.visits
        self.block_visits += other.block_visits
        self.n_traj += other.n_traj
        self.log_likelihood += other.log_likelihood


def trajectory_stats(model: ClMMMC, traj) -> Stats:
    """E-step for one trajectory."""
    r = as_trajectory(traj, model.R)
    R, S, p = model.R, model.S, model.p
    cache = forward_backward_scaled(model, r)
    st = Stats.zeros(model)
    st.n_traj = 1
    st.log_likelihood = cache.log_likelihood
    st.starts[r[0]] = 1.0
    if r.shape[0] == 1:
        first = cache.alpha_hat[0] * cache.beta_hat[0]
        st.init = first / first.sum()
        return st
    xi = compute_xi(cache, model, r)
    st.init = xi[0].sum(axis=1)
    prev, cur = r[:-1], r[1:]
    from_latent = xi.sum(axis=2)
    flat = prev * R + cur
    for i in range(S):
        st.ar[i] = np.bincount(flat, weights=from_latent[:, i], minlength=R * R).reshape(R, R)
    block = model.gamma.membership[prev]
    for l in range(p):
        sel = block == l
        if sel.any():
            st.as_[l] = xi[sel].sum(axis=0)
    st.visits = np.bincount(prev, minlength=R).astype(float)
    st.block_visits = np.bincount(block, minlength=p).astype(float)
    return st


def collect_stats(model: ClMMMC, trajs: Sequence[np.ndarray]) -> Stats:
    """E-step over several trajectories, reduced in list order."""
    total = Stats.zeros(model)
    for r in trajs:
        total.add(trajectory_stats(model, r))
    return total


def _fill_row(policy: str, current: np.ndarray, what: str) -> np.ndarray:
    if policy == "error":
        raise UnreachedState(what)
    if policy == "keep":
        return current
    if policy == "uniform":
        return np.full(current.shape[0], 1.0 / current.shape[0])
    raise ConfigError(f"unknown unreached policy {policy!r}")


def maximize(model: ClMMMC, st: Stats, freeze: FreezeMask | None = None,
             unreached_policy: str = "error") -> ClMMMC:
    """M-step: the re-estimated model from accumulated statistics."""
    freeze = freeze or FreezeMask()
    D = st.n_traj
    piR = st.starts / D
    piS = model.piS if freeze.piS else st.init / D

    unreached = np.flatnonzero(st.visits == 0)
    free_AR = [i for i in range(model.S) if i not in freeze.AR_pages]
    if unreached.size and free_AR and unreached_policy == "error":
        labels = ", ".join(str(m + 1) for m in unreached)
        raise UnreachedState(f"visible states never transitioned from: {labels}")
    AR = np.array(model.AR)
    for i in range(model.S):
        if i in freeze.AR_pages:
            continue
        num = st.ar[i]
        den = num.sum(axis=1)
        for m in range(model.R):
            if st.visits[m] == 0:
                AR[i, m] = _fill_row(unreached_policy, model.AR[i, m], f"visible state {m + 1}")
            elif den[m] > 0:
                AR[i, m] = num[m] / den[m]
            # den == 0 with visits: state i impossible there; keep the row

    AS = np.array(model.AS)
    for l in range(model.p):
        if l in freeze.AS_pages:
            continue
        num = st.as_[l]
        den = num.sum(axis=1)
        for i in range(model.S):
            if st.block_visits[l] == 0:
                AS[l, i] = _fill_row(unreached_policy, model.AS[l, i],
                                     f"no transition leaves block {l + 1} of gamma")
            elif den[i] > 0:
                AS[l, i] = num[i] / den[i]
    return model.replace(piR=piR, piS=piS, AR=AR, AS=AS)


def reestimate_single(model: ClMMMC, traj, freeze: FreezeMask | None = None,
                      unreached_policy: str = "error") -> ClMMMC:
    """One EM step on a single trajectory."""
    r = as_trajectory(traj, model.R)
    return maximize(model, trajectory_stats(model, r), freeze, unreached_policy)


def reestimate_multi(model: ClMMMC, trajs, freeze: FreezeMask | None = None,
                     unreached_policy: str = "keep") -> ClMMMC:
    """One EM step on independent trajectories (pooled expected counts)."""
    trajs = [as_trajectory(t, model.R) for t in trajs]
    if not trajs:
        raise DimensionMismatch("need at least one trajectory")
    return maximize(model, collect_stats(model, trajs), freeze, unreached_policy)


# ---------------------------------------------------------------------------
# EM driver


@dataclass(frozen=True)
class EMConfig:
    max_iters: int = 500
    loglik_tol: float = 1e-8
    freeze: FreezeMask = field(default_factory=FreezeMask)
    unreached_policy: str | None = None  # None: "error" for one trajectory, "keep" for several

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.loglik_tol > 0:
            raise ConfigError(f"loglik_tol must be > 0, got {self.loglik_tol}")
        if self.unreached_policy is not None and self.unreached_policy not in UNREACHED_POLICIES:
            raise ConfigError(f"unreached_policy must be one of {UNREACHED_POLICIES}")


@dataclass
class EMReport:
    model: ClMMMC
    loglik_trace: list
    converged: bool
    iterations: int

    @property
    def log_likelihood(self) -> float:
        return self.loglik_trace[-1]

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_log_likelihood": self.log_likelihood,
            "loglik_trace": list(self.loglik_trace),
        }


def em_run(initial: ClMMMC, data, config: EMConfig | None = None) -> EMReport:
    """Iterate E- and M-steps from ``initial`` until the log-likelihood gain
    drops below ``config.loglik_tol`` or ``config.max_iters`` steps are done.

    ``data`` is one trajectory or a list of trajectories; the trace holds
    the log-likelihood of every model visited, the last entry belonging to
    the returned model.
    """
    config = config or EMConfig()
    config.freeze.check(initial)
    trajs, multi = as_dataset(data, initial.R)
    policy = config.unreached_policy or ("keep" if multi else "error")
    if multi and config.unreached_policy is None:
        visited = np.zeros(initial.R, dtype=bool)
        for r in trajs:
            visited[r[:-1]] = True
        if not visited.all():
            warnings.warn(
                "states never transitioned from keep their current rows: "
                + ", ".join(str(m + 1) for m in np.flatnonzero(~visited)),
                RuntimeWarning, stacklevel=2)
    model = initial
    st = collect_stats(model, trajs)
    trace = [st.log_likelihood]
    converged = False
    it = 0
    for it in range(1, int(config.max_iters) + 1):
        model = maximize(model, st, config.freeze, policy)
        st = collect_stats(model, trajs)
        trace.append(st.log_likelihood)
        if trace[-1] - trace[-2] < config.loglik_tol:
            converged = True
            break
    log.debug("EM stopped after %d iterations, log-likelihood %.6f", it, trace[-1])
    return EMReport(model, trace, converged, it)


def em_multistart(template: ClMMMC, data, config: EMConfig | None, starts: int,
                  rng: np.random.Generator) -> tuple[EMReport, list[EMReport]]:
    """Run EM from ``starts`` random initial models and keep the best run.

    Initial models are drawn on the support of ``template`` with its frozen
    pages copied; ties go to the earliest start.
    """
    config = config or EMConfig()
    if starts < 1:
        raise ConfigError("need at least one start")
    reports = []
    for _ in range(starts):
        init = random_initial(template, rng, config.freeze)
        reports.append(em_run(init, data, config))
    best = max(range(starts), key=lambda k: (reports[k].log_likelihood, -k))
    return reports[best], reports

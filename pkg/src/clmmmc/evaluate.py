"""Comparing an estimated model with the one that generated the data."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotConverged, TooManyLatentStates
from .estimate import log_likelihood
from .model import ClMMMC, permute_latent
from .stochastic import dist_exp, dist_stat, stationary_distribution

MAX_ALIGN_STATES = 8


def _check_compatible(est: ClMMMC, truth: ClMMMC) -> None:
    for name in ("R", "S", "p"):
        if getattr(est, name) != getattr(truth, name):
            raise DimensionMismatch(
                f"{name}: estimate has {getattr(est, name)}, truth has {getattr(truth, name)}")
    if est.gamma != truth.gamma:
        raise DimensionMismatch("gamma: estimate and truth use different partitions")


def page_distances(A_est, A_true) -> dict:
    """Both TV metrics for one page, degrading gracefully.

    ``dist_stat`` is ``None`` when either chain lacks a unique stationary
    distribution; ``dist_exp`` then falls back to uniform row weights and
    sets ``uniform_weights``.
    """
    try:
        stat = dist_stat(A_est, A_true)
    except NotConverged:
        stat = None
    try:
        exp = dist_exp(A_est, A_true)
        uniform = False
    except NotConverged:
        n = np.asarray(A_true).shape[0]
        exp = dist_exp(A_est, A_true, weights=np.full(n, 1.0 / n))
        uniform = True
    return {"dist_stat": stat, "dist_exp": exp, "uniform_weights": uniform}


def _alignment_cost(est: ClMMMC, truth: ClMMMC, perm) -> float:
    return sum(page_distances(est.AR[perm[k]], truth.AR[k])["dist_exp"] for k in range(truth.S))


def align_latent_labels(est: ClMMMC, truth: ClMMMC) -> tuple[tuple, ClMMMC]:
    """Relabel the latent states of ``est`` to best match ``truth``.

    Searches all permutations (lexicographic order, first minimum wins) for
    the smallest summed ``dist_exp`` between matched AR pages. Returns the
    permutation (new label ``k`` is old label ``perm[k]``) and the relabelled
    estimate.
    """
    _check_compatible(est, truth)
    if est.S > MAX_ALIGN_STATES:
        raise TooManyLatentStates(f"S={est.S} exceeds {MAX_ALIGN_STATES} for exhaustive alignment")
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(est.S)):
        cost = _alignment_cost(est, truth, perm)
        if cost < best_cost:
            best, best_cost = perm, cost
    return best, permute_latent(est, best)


@dataclass
class EvalReport:
    permutation: tuple
    AR: list
    AS: list
    loglik_est: float | None = None
    loglik_true: float | None = None
    p_r: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def loglik_gap(self) -> float | None:
        if self.loglik_est is None or self.loglik_true is None:
            return None
        return self.loglik_est - self.loglik_true

    def to_dict(self) -> dict:
        return {
            "permutation": [k + 1 for k in self.permutation],
            "AR": self.AR,
            "AS": self.AS,
            "loglik_est": self.loglik_est,
            "loglik_true": self.loglik_true,
            "loglik_gap": self.loglik_gap,
            "p_r": self.p_r,
            **self.extra,
        }

    def to_json(self) -> str:
        # repr-based float output is the shortest exact round-trip (<= 17 digits)
        return json.dumps(self.to_dict(), indent=1, allow_nan=True)


def estimate_p_r(model: ClMMMC, source) -> float | None:
    """Recommender share from the latent chain.

    ``source`` is ``("stationary", l)`` for the second component of the
    stationary distribution of latent page ``l``, or ``"initial"`` for the
    second component of ``piS``.
    """
    if source is None:
        return None
    if source == "initial":
        return float(model.piS[1])
    kind, page = source
    if kind != "stationary":
        raise DimensionMismatch(f"unknown p_r source {source!r}")
    try:
        return float(stationary_distribution(model.AS[page])[1])
    except NotConverged:
        return None


def evaluate_estimate(est: ClMMMC, truth: ClMMMC, holdout=None, align: bool = True,
                      p_r_source=None) -> EvalReport:
    """Distances per page, log-likelihood gap on ``holdout`` and a ``p_r`` estimate.

    With ``align=False`` the latent labels of ``est`` are taken as given
    (appropriate when a frozen page pins them down).
    """
    _check_compatible(est, truth)
    if align:
        perm, est = align_latent_labels(est, truth)
    else:
        perm = tuple(range(est.S))
    AR = [page_distances(est.AR[k], truth.AR[k]) for k in range(est.S)]
    AS = [page_distances(est.AS[l], truth.AS[l]) for l in range(est.p)]
    report = EvalReport(perm, AR, AS, p_r=estimate_p_r(est, p_r_source))
    if holdout is not None:
        report.loglik_est = log_likelihood(est, holdout)
        report.loglik_true = log_likelihood(truth, holdout)
    return report

"""Compiled scaled forward/backward recursions.

The loop over time is inherently sequential, so it is compiled with numba;
everything else in the E-step is vectorised numpy.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def forward_scaled(piS, piR, AR, AS, member, traj):
    """Return ``(alpha_hat, norms, bad)``.

    ``norms[t]`` is the sum of the unnormalised forward vector at step ``t``;
    ``bad`` is the first step whose norm is zero, or -1.
    """
    n = traj.shape[0]
    S = piS.shape[0]
    alpha = np.zeros((n, S))
    norms = np.zeros(n)
    c = 0.0
    for i in range(S):
        alpha[0, i] = piS[i] * piR[traj[0]]
        c += alpha[0, i]
    norms[0] = c
    if c <= 0.0:
        return alpha, norms, 0
    for i in range(S):
        alpha[0, i] /= c
    for t in range(1, n):
        prev = traj[t - 1]
        cur = traj[t]
        page = member[prev]
        c = 0.0
        for j in range(S):
            acc = 0.0
            for i in range(S):
                acc += AS[page, i, j] * (AR[i, prev, cur] * alpha[t - 1, i])
            alpha[t, j] = acc
            c += acc
        norms[t] = c
        if c <= 0.0:
            return alpha, norms, t
        for j in range(S):
            alpha[t, j] /= c
    return alpha, norms, -1


@numba.njit(cache=True)
def backward_scaled(AR, AS, member, traj, norms):
    """Backward variables divided step by step by the forward norms."""
    n = traj.shape[0]
    S = AR.shape[0]
    beta = np.zeros((n, S))
    for i in range(S):
        beta[n - 1, i] = 1.0
    for t in range(n - 1, 0, -1):
        prev = traj[t - 1]
        cur = traj[t]
        page = member[prev]
        for i in range(S):
            acc = 0.0
            for j in range(S):
                acc += AS[page, i, j] * beta[t, j]
            beta[t - 1, i] = acc * AR[i, prev, cur] / norms[t]
    return beta

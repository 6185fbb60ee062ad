"""Sampling trajectories and the driver/recommender trip scenario."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AdjacencyViolation, DimensionMismatch, JunctionMismatch, TripTooLong
from .model import ClMMMC, FreezeMask
from .stochastic import Partition, draw_from_cumulative, random_stochastic_matrix, validate_stochastic


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    visible: np.ndarray
    latent: np.ndarray


def sample_joint_trajectory(model: ClMMMC, T: int, rng: np.random.Generator) -> JointTrajectory:
    """Draw ``(s_0..s_T, r_0..r_T)`` from the model.

    Per step, ``s_t`` is drawn before ``r_t``; both only see
    ``(s_{t-1}, r_{t-1})``.
    """
    if T < 0:
        raise DimensionMismatch(f"T must be >= 0, got {T}")
    cum_piR = np.cumsum(model.piR)
    cum_piS = np.cumsum(model.piS)
    cum_AR = np.cumsum(model.AR, axis=2)
    cum_AS = np.cumsum(model.AS, axis=2)
    member = model.gamma.membership
    u = rng.random((T + 1, 2))
    s = np.empty(T + 1, dtype=np.int64)
    r = np.empty(T + 1, dtype=np.int64)
    s[0] = draw_from_cumulative(cum_piS, u[0, 0])
    r[0] = draw_from_cumulative(cum_piR, u[0, 1])
    for t in range(1, T + 1):
        s[t] = draw_from_cumulative(cum_AS[member[r[t - 1]], s[t - 1]], u[t, 0])
        r[t] = draw_from_cumulative(cum_AR[s[t - 1], r[t - 1]], u[t, 1])
    return JointTrajectory(r, s)


def sample_trajectory(model: ClMMMC, T: int, rng: np.random.Generator) -> np.ndarray:
    return sample_joint_trajectory(model, T, rng).visible


# ---------------------------------------------------------------------------
# trips


@dataclass(frozen=True, eq=False)
class TripScenario:
    """Trips on a road graph, each planned wholly by the driver or the recommender.

    ``adjacency[i, j]`` allows the turn ``i -> j``; terminal states only
    carry the dummy arc back to ``origin``. ``driver_page`` and
    ``recommender_page`` index the AR pages of the generating model.
    """

    adjacency: np.ndarray
    origin: int
    terminals: tuple
    p_r: float
    driver_page: int = 0
    recommender_page: int = 1

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        R = adj.shape[0]
        if adj.shape != (R, R):
            raise DimensionMismatch(f"adjacency must be square, got {adj.shape}")
        if not 0 <= self.p_r <= 1:
            raise DimensionMismatch(f"p_r must lie in [0, 1], got {self.p_r}")
        terminals = tuple(sorted(int(t) for t in self.terminals))
        if not terminals:
            raise DimensionMismatch("need at least one terminal state")
        for t in terminals:
            adj[t] = False
            adj[t, self.origin] = True
        if not reachable(adj, self.origin)[list(terminals)].any():
            raise DimensionMismatch("no terminal state is reachable from the origin")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "terminals", terminals)

    @property
    def R(self) -> int:
        return self.adjacency.shape[0]

    def to_dict(self) -> dict:
        edges = [[int(i) + 1, int(j) + 1] for i, j in np.argwhere(self.adjacency)]
        return {"adjacency": edges, "origin": self.origin + 1,
                "terminals": [t + 1 for t in self.terminals], "p_r": self.p_r}

    @classmethod
    def from_dict(cls, d: dict, R: int | None = None) -> "TripScenario":
        edges = [(int(i) - 1, int(j) - 1) for i, j in d["adjacency"]]
        return cls(adjacency_matrix(edges, R), int(d["origin"]) - 1,
                   tuple(int(t) - 1 for t in d["terminals"]), float(d["p_r"]))


def reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    stack = [start]
    seen[start] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    return seen


def adjacency_matrix(edges, R: int | None = None) -> np.ndarray:
    """Boolean matrix from 0-based ``(i, j)`` edges, or pass a matrix through."""
    arr = np.asarray(edges)
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1] and arr.dtype == bool:
        return arr.copy()
    edges = [(int(i), int(j)) for i, j in edges]
    n = R if R is not None else 1 + max(max(e) for e in edges)
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = True
    return adj


def sample_trips(scenario: TripScenario, model: ClMMMC, n_trips: int,
                 rng: np.random.Generator, max_len: int | None = None,
                 return_pages: bool = False):
    """Simulate ``n_trips`` independent trips.

    Each trip picks the recommender page with probability ``p_r``, walks from
    the origin with that page until a terminal state, then takes the dummy
    arc back so that every trip ends at the origin. ``max_len`` (default
    ``10 * R``) bounds the number of steps before a terminal state.
    """
    if n_trips < 1:
        raise DimensionMismatch("need at least one trip")
    max_len = 10 * scenario.R if max_len is None else max_len
    cum_AR = np.cumsum(model.AR, axis=2)
    terminal = np.zeros(scenario.R, dtype=bool)
    terminal[list(scenario.terminals)] = True
    trips, pages = [], []
    for _ in range(n_trips):
        page = scenario.recommender_page if rng.random() < scenario.p_r else scenario.driver_page
        state = scenario.origin
        trip = [state]
        while True:
            state = draw_from_cumulative(cum_AR[page, state], rng.random())
            trip.append(state)
            if terminal[state]:
                break
            if len(trip) > max_len:
                raise TripTooLong(f"trip exceeded {max_len} steps without reaching a terminal state")
        trip.append(scenario.origin)
        trips.append(np.array(trip, dtype=np.int64))
        pages.append(page)
    if return_pages:
        return trips, np.array(pages)
    return trips


def concatenate_trips(trips: Sequence[np.ndarray]) -> np.ndarray:
    """Join trips end to start, keeping each shared junction state once."""
    if not trips:
        raise DimensionMismatch("no trips to concatenate")
    parts = [np.asarray(trips[0], dtype=np.int64)]
    for k in range(1, len(trips)):
        nxt = np.asarray(trips[k], dtype=np.int64)
        if parts[-1][-1] != nxt[0]:
            raise JunctionMismatch(
                f"trip {k} ends in {parts[-1][-1] + 1} but trip {k + 1} starts in {nxt[0] + 1}")
        parts.append(nxt[1:])
    return np.concatenate(parts)


def split_trips(traj, origin: int) -> list[np.ndarray]:
    """Cut a trajectory at every visit to ``origin`` (inverse of concatenation)."""
    traj = np.asarray(traj, dtype=np.int64)
    cuts = np.flatnonzero(traj == origin)
    cuts = cuts[(cuts > 0) & (cuts < traj.shape[0] - 1)]
    bounds = [0, *cuts.tolist(), traj.shape[0] - 1]
    return [traj[a:b + 1] for a, b in zip(bounds[:-1], bounds[1:])]


# ---------------------------------------------------------------------------
# the driver/recommender scenario

#: Nine road segments, 1-based; node 1 merges origin and destination and
#: segments 8 and 9 enter the destination.
DEFAULT_EDGES = [(1, 2), (1, 7), (2, 3), (2, 4), (3, 5), (4, 5), (4, 6),
                 (5, 8), (5, 9), (6, 9), (7, 4), (7, 6)]
DEFAULT_ORIGIN = 1
DEFAULT_TERMINALS = (8, 9)


def default_scenario(p_r: float = 0.3) -> TripScenario:
    edges = [(i - 1, j - 1) for i, j in DEFAULT_EDGES]
    return TripScenario(adjacency_matrix(edges, 9), DEFAULT_ORIGIN - 1,
                        tuple(t - 1 for t in DEFAULT_TERMINALS), p_r)


def random_scenario_matrix(scenario: TripScenario, rng: np.random.Generator) -> np.ndarray:
    """Random transition matrix supported exactly on the scenario's arcs."""
    return random_stochastic_matrix(scenario.R, scenario.R, rng, support=scenario.adjacency)


def build_driver_scenario(adjacency, driver_matrix, recommender_matrix, p_r: float,
                          origin: int = 0, terminals: Sequence[int] = (7, 8),
                          variant: str = "concat") -> tuple[TripScenario, ClMMMC]:
    """Scenario plus the generating model in the layout used for estimation.

    The partition separates the terminal states from the rest. For
    ``variant="concat"`` (trips joined into one trajectory) the latent page on
    the terminal block encodes the per-trip choice and the other page is the
    identity, so the engine can only switch when a trip ends. For
    ``variant="multi"`` (trips kept separate) both latent pages are the
    identity and ``p_r`` sits in ``piS``.
    """
    scenario = TripScenario(adjacency_matrix(adjacency), origin, tuple(terminals), p_r)
    R = scenario.R
    pages = []
    for name, mat in (("driver", driver_matrix), ("recommender", recommender_matrix)):
        mat = validate_stochastic(mat)
        if mat.shape != (R, R):
            raise DimensionMismatch(f"{name} matrix is {mat.shape}, graph has {R} nodes")
        off = (mat > 0) & ~scenario.adjacency
        if off.any():
            i, j = np.argwhere(off)[0]
            raise AdjacencyViolation(f"{name} matrix puts mass on non-edge {i + 1}->{j + 1}")
        pages.append(mat)
    terminal_block = tuple(scenario.terminals)
    rest = tuple(i for i in range(R) if i not in terminal_block)
    gamma = Partition((terminal_block, rest), R)
    piS = np.array([1.0 - p_r, p_r])
    switch = np.tile(piS, (2, 1))
    if variant == "concat":
        AS = np.stack([switch, np.eye(2)])
    elif variant == "multi":
        AS = np.stack([np.eye(2), np.eye(2)])
    else:
        raise DimensionMismatch(f"unknown variant {variant!r}")
    piR = np.zeros(R)
    piR[origin] = 1.0
    return scenario, ClMMMC(piR, piS, np.stack(pages), AS, gamma)


def driver_freeze_mask(variant: str = "concat") -> FreezeMask:
    """Known pieces: the recommender page, and the non-switching latent pages."""
    if variant == "concat":
        return FreezeMask(AR_pages={1}, AS_pages={1})
    return FreezeMask(AR_pages={1}, AS_pages={0, 1})


# ---------------------------------------------------------------------------
# files


def write_trajectories(path, trajs: Sequence[np.ndarray]) -> None:
    """One trajectory per line, whitespace separated, 1-based."""
    lines = [" ".join(str(int(x) + 1) for x in t) for t in trajs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectories(path) -> list[np.ndarray]:
    trajs = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            trajs.append(np.array([int(x) - 1 for x in line.split()], dtype=np.int64))
        except ValueError as exc:
            raise DimensionMismatch(f"line {n}: {exc}") from None
    if not trajs:
        raise DimensionMismatch(f"{path}: no trajectories")
    return trajs


def load_scenario(path) -> TripScenario:
    return TripScenario.from_dict(json.loads(Path(path).read_text()))

"""Seeded re-runs of the synthetic and driver experiments.

Every instance derives its own generator from ``(seed, index)``, so results
do not depend on how instances are spread over workers.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimate import EMConfig, em_multistart, log_likelihood
from .evaluate import estimate_p_r, evaluate_estimate, page_distances
from .model import ClMMMC, FreezeMask, random_model, random_partition
from .simulate import (
    build_driver_scenario,
    concatenate_trips,
    default_scenario,
    driver_freeze_mask,
    random_scenario_matrix,
    sample_trajectory,
    sample_trips,
)
from .stochastic import Partition, child_seed, make_rng, random_stochastic_matrix

EXPERIMENTS = ("synthetic-open", "synthetic-closed", "synthetic-known", "driver-concat", "driver-multi")

# desk-scale ceilings
MAX_INSTANCES = 1000
MAX_STEPS = 100_000
MAX_TRIPS = 10_000


@dataclass(frozen=True)
class ReproConfig:
    experiment: str
    instances: int = 20
    seed: int = 0
    steps: int = 5000
    R: int | None = None          # 6 for synthetic-open/closed, 8 for synthetic-known
    S: int = 2
    trips: int | None = None      # 200 for driver-concat, 80 for driver-multi
    p_r: float = 0.3
    loop: str = "closed"          # driver experiments: "closed" uses the trip structure
    starts: int = 1
    max_iters: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not 1 <= self.instances <= MAX_INSTANCES:
            raise ConfigError(f"instances must be in 1..{MAX_INSTANCES}")
        if not 1 <= self.steps <= MAX_STEPS:
            raise ConfigError(f"steps must be in 1..{MAX_STEPS}")
        if self.trips is not None and not 1 <= self.trips <= MAX_TRIPS:
            raise ConfigError(f"trips must be in 1..{MAX_TRIPS}")
        if self.loop not in ("open", "closed"):
            raise ConfigError("loop must be 'open' or 'closed'")
        if self.starts < 1:
            raise ConfigError("starts must be >= 1")

    @property
    def n_states(self) -> int:
        if self.R is not None:
            return self.R
        return 8 if self.experiment == "synthetic-known" else 6

    @property
    def n_trips(self) -> int:
        if self.trips is not None:
            return self.trips
        return 80 if self.experiment == "driver-multi" else 200

    def em_config(self, freeze: FreezeMask) -> EMConfig:
        return EMConfig(max_iters=self.max_iters, loglik_tol=self.tol, freeze=freeze)


def _page_columns(row: dict, prefix: str, dists: list) -> None:
    for k, d in enumerate(dists, 1):
        row[f"{prefix}{k}_dist_stat"] = d["dist_stat"]
        row[f"{prefix}{k}_dist_exp"] = d["dist_exp"]


def synthetic_truth(cfg: ReproConfig, rng: np.random.Generator) -> ClMMMC:
    """Random open-loop model; the closed-loop variant reuses it and adds a
    random two-block partition with an extra latent page."""
    R, S = cfg.n_states, cfg.S
    truth = random_model(R, S, None, rng)
    if cfg.experiment == "synthetic-closed":
        gamma = random_partition(R, 2, rng)
        extra = random_stochastic_matrix(S, S, rng)
        truth = truth.replace(AS=np.stack([truth.AS[0], extra]), gamma=gamma)
    return truth


def run_synthetic(cfg: ReproConfig, index: int) -> dict:
    rng = make_rng(child_seed(cfg.seed, index))
    truth = synthetic_truth(cfg, rng)
    traj = sample_trajectory(truth, cfg.steps, rng)
    known = cfg.experiment == "synthetic-known"
    freeze = FreezeMask(AR_pages={1}) if known else FreezeMask()
    best, _ = em_multistart(truth, traj, cfg.em_config(freeze), cfg.starts, rng)
    report = evaluate_estimate(best.model, truth, traj, align=not known)
    row = {"instance": index, "seed": cfg.seed, "iterations": best.iterations,
           "converged": int(best.converged), "loglik_true": report.loglik_true,
           "loglik_est": report.loglik_est, "loglik_gap": report.loglik_gap,
           "permutation": "".join(str(k + 1) for k in report.permutation)}
    _page_columns(row, "AR", report.AR)
    _page_columns(row, "AS", report.AS)
    return row


def driver_setup(cfg: ReproConfig, rng: np.random.Generator):
    """Scenario, generating model, estimation template, freeze mask and data."""
    variant = "multi" if cfg.experiment == "driver-multi" else "concat"
    scenario = default_scenario(cfg.p_r)
    driver = random_scenario_matrix(scenario, rng)
    recommender = random_scenario_matrix(scenario, rng)
    scenario, truth = build_driver_scenario(scenario.adjacency, driver, recommender, cfg.p_r,
                                            scenario.origin, scenario.terminals, variant)
    trips = sample_trips(scenario, truth, cfg.n_trips, rng)
    data = concatenate_trips(trips) if variant == "concat" else trips
    if cfg.loop == "closed":
        template, freeze = truth, driver_freeze_mask(variant)
    else:
        # latent chain free to switch anywhere: one free latent page
        template = truth.replace(AS=np.full((1, 2, 2), 0.5), gamma=Partition.trivial(truth.R))
        freeze = FreezeMask(AR_pages={1})
    source = ("stationary", 0) if variant == "concat" else "initial"
    return scenario, truth, template, freeze, data, source


def run_driver(cfg: ReproConfig, index: int) -> dict:
    rng = make_rng(child_seed(cfg.seed, index))
    _, truth, template, freeze, data, source = driver_setup(cfg, rng)
    best, _ = em_multistart(template, data, cfg.em_config(freeze), cfg.starts, rng)
    est = best.model
    ll_true = log_likelihood(truth, data)
    row = {"instance": index, "seed": cfg.seed, "iterations": best.iterations,
           "converged": int(best.converged), "loglik_true": ll_true,
           "loglik_est": best.log_likelihood, "loglik_gap": best.log_likelihood - ll_true,
           "p_r_est": estimate_p_r(est, source)}
    _page_columns(row, "AR", [page_distances(est.AR[0], truth.AR[0])])
    return row


def run_instance(cfg: ReproConfig, index: int) -> dict:
    if cfg.experiment.startswith("synthetic"):
        return run_synthetic(cfg, index)
    return run_driver(cfg, index)


def worker_count() -> int:
    env = os.environ.get("CLMM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(cfg: ReproConfig, workers: int | None = None) -> list[dict]:
    """All instances of one experiment, in instance order."""
    workers = worker_count() if workers is None else workers
    indices = range(cfg.instances)
    if workers <= 1 or cfg.instances == 1:
        return [run_instance(cfg, i) for i in indices]
    with ProcessPoolExecutor(max_workers=min(workers, cfg.instances)) as pool:
        return list(pool.map(run_instance, [cfg] * cfg.instances, indices))


# ---------------------------------------------------------------------------
# summaries and files


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def numeric_columns(rows: list[dict]) -> list[str]:
    skip = {"instance", "seed", "permutation", "converged"}
    return [k for k in rows[0] if k not in skip
            and any(isinstance(r[k], (float, int, np.floating)) for r in rows)]


def summarize(rows: list[dict]) -> dict:
    """Quartiles, mean and standard deviation of every numeric column."""
    out = {}
    for col in numeric_columns(rows):
        vals = np.array([r[col] for r in rows if r[col] is not None and np.isfinite(r[col])],
                        dtype=float)
        if vals.size == 0:
            continue
        q25, q50, q75 = np.quantile(vals, [0.25, 0.5, 0.75])
        out[col] = {"n": int(vals.size), "q25": float(q25), "median": float(q50),
                    "q75": float(q75), "mean": float(vals.mean()), "std": float(vals.std(ddof=0))}
    return out


def histogram(rows: list[dict], col: str, bins: int = 20, value_range=(0.0, 1.0)):
    vals = np.array([r[col] for r in rows if r[col] is not None], dtype=float)
    counts, edges = np.histogram(vals, bins=bins, range=value_range)
    return counts, edges


def write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for r in rows:
            writer.writerow([fmt(v) for v in r.values()])


def write_outputs(out_dir, cfg: ReproConfig, rows: list[dict]) -> list[Path]:
    """Per-instance table, quantile summary and histogram data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    runs = out_dir / "runs.csv"
    write_rows(runs, rows)
    written.append(runs)

    summary = summarize(rows)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "n", "q25", "median", "q75", "mean", "std"])
        for col, s in summary.items():
            w.writerow([col, s["n"], *(fmt(s[k]) for k in ("q25", "median", "q75", "mean", "std"))])
    written.append(out_dir / "summary.csv")
    (out_dir / "summary.json").write_text(
        json.dumps({"config": asdict(cfg), "columns": summary}, indent=1) + "\n")
    written.append(out_dir / "summary.json")

    hist_cols = [c for c in numeric_columns(rows) if c.endswith(("_dist_stat", "_dist_exp", "p_r_est"))]
    if hist_cols:
        with open(out_dir / "histograms.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["column", "bin_lo", "bin_hi", "count"])
            for col in hist_cols:
                counts, edges = histogram(rows, col)
                for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                    w.writerow([col, fmt(lo), fmt(hi), int(c)])
        written.append(out_dir / "histograms.csv")
    gaps = [r["loglik_gap"] for r in rows if r.get("loglik_gap") is not None]
    if gaps:
        lo, hi = float(np.floor(min(gaps))), float(np.ceil(max(gaps)))
        counts, edges = np.histogram(gaps, bins=20, range=(lo, hi if hi > lo else lo + 1))
        with open(out_dir / "loglik_gap_histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for c, a, b in zip(counts, edges[:-1], edges[1:]):
                w.writerow([fmt(a), fmt(b), int(c)])
        written.append(out_dir / "loglik_gap_histogram.csv")
    return written

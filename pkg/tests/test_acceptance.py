"""Acceptance suite: one PASS/FAIL line per criterion.

The lines are collected in ``RESULTS`` and printed in the pytest terminal
summary (see ``conftest.py``); running this file as a script prints them too.
"""
import json
import os

import numpy as np
import pytest

from clmmmc.cli import main as cli_main
from clmmmc.estimate import (
    EMConfig,
    auxiliary_Q,
    auxiliary_Q_enumerated,
    backward_unscaled,
    brute_force_likelihood,
    compute_xi,
    em_run,
    forward_backward_scaled,
    forward_unscaled,
    log_likelihood,
    reestimate_multi,
    reestimate_single,
)
from clmmmc.model import lift_to_hmm, permute_latent, random_initial, random_model, random_partition, save_model
from clmmmc.repro import ReproConfig, run_experiment, summarize
from clmmmc.simulate import sample_trajectory
from clmmmc.stochastic import Partition, make_rng

from conftest import small_instance

RESULTS = {}


def record(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}: {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def rel_gap(a, b):
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def test_01_likelihood_paths_agree():
    rng = make_rng(1001)
    worst = 0.0
    for _ in range(200):
        m, traj = small_instance(rng, R_max=4, S_max=3, T_max=8)
        values = [
            brute_force_likelihood(m, traj),
            forward_unscaled(m, traj)[1],
            np.exp(forward_backward_scaled(m, traj).log_likelihood),
            lift_to_hmm(m).sequence_probability(traj),
        ]
        worst = max(worst, max(rel_gap(a, b) for a in values for b in values))
    record(1, "likelihood oracle equivalence", worst <= 1e-10, f"max pairwise rel. gap {worst:.2e} (200 instances)")


def test_02_forward_backward_identities():
    rng = make_rng(1002)
    worst_ab, worst_xi = 0.0, 0.0
    for _ in range(100):
        m, traj = small_instance(rng, R_max=4, S_max=3, T_max=12, T_min=1)
        alpha, ell = forward_unscaled(m, traj)
        beta = backward_unscaled(m, traj)
        worst_ab = max(worst_ab, float(np.max(np.abs((alpha * beta).sum(axis=1) - ell)) / ell))
        xi = compute_xi(forward_backward_scaled(m, traj), m, traj)
        worst_xi = max(worst_xi, float(np.max(np.abs(xi.sum(axis=(1, 2)) - 1.0))))
    ok = worst_ab <= 1e-10 and worst_xi <= 1e-12
    record(2, "forward-backward identities", ok,
           f"max rel. |sum alpha*beta - l| {worst_ab:.2e}, max |sum xi - 1| {worst_xi:.2e} (100 instances)")


def test_03_em_monotone_and_fixed_point():
    rng = make_rng(1003)
    worst = np.inf
    for _ in range(50):
        truth = random_model(6, 2, random_partition(6, 2, rng), rng)
        traj = sample_trajectory(truth, 500, rng)
        rep = em_run(random_initial(truth, rng), traj, EMConfig())
        worst = min(worst, float(np.min(np.diff(rep.loglik_trace))))
    traj = sample_trajectory(random_model(6, 1, None, rng), 500, rng)
    counts = np.zeros((6, 6))
    np.add.at(counts, (traj[:-1], traj[1:]), 1.0)
    piR = np.eye(6)[traj[0]]
    fixed = random_model(6, 1, None, rng).replace(piR=piR, AR=[counts / counts.sum(axis=1, keepdims=True)])
    rep = em_run(fixed, traj)
    gain = rep.loglik_trace[-1] - rep.loglik_trace[0]
    ok = worst >= -1e-9 and rep.iterations == 1 and abs(gain) < 1e-12
    record(3, "EM monotonicity and fixed point", ok,
           f"smallest step {worst:.2e} over 50 runs; count model stops after {rep.iterations} "
           f"iteration(s), gain {gain:.1e}")


def zeroed(model, rng, frac=0.2):
    pages = {}
    for name in ("AR", "AS"):
        arr = np.array(getattr(model, name))
        mask = rng.random(arr.shape) < frac
        keep = rng.integers(arr.shape[-1], size=arr.shape[:-1])
        np.put_along_axis(mask, keep[..., None], False, axis=-1)
        arr[mask] = 0.0
        pages[name] = arr / arr.sum(axis=-1, keepdims=True)
    return model.replace(**pages)


def test_04_zero_structure_absorbed():
    rng = make_rng(1004)
    violations, zeros, runs = 0, 0, 0
    for _ in range(20):
        truth = zeroed(random_model(5, 3, random_partition(5, 2, rng), rng), rng)
        traj = sample_trajectory(truth, 400, rng)
        start = random_initial(truth, rng)
        rep = em_run(start, traj, EMConfig(max_iters=50, loglik_tol=1e-300, unreached_policy="keep"))
        for name in ("AR", "AS"):
            mask = getattr(start, name) == 0
            zeros += int(mask.sum())
            violations += int(np.count_nonzero(getattr(rep.model, name)[mask]))
        runs += rep.iterations
    record(4, "zero-structure absorption", violations == 0 and zeros > 0,
           f"{violations} of {zeros} zero entries became nonzero ({runs} EM iterations over 20 models)")


def test_05_multi_reduces_to_single():
    rng = make_rng(1005)
    worst = 0.0
    for _ in range(50):
        m, traj = small_instance(rng, R_max=5, S_max=3, T_max=60, T_min=1)
        a = reestimate_single(m, traj, unreached_policy="keep")
        b = reestimate_multi(m, [traj], unreached_policy="keep")
        worst = max(worst, max(float(np.max(np.abs(getattr(a, k) - getattr(b, k))))
                               for k in ("piR", "piS", "AR", "AS")))
    record(5, "multi-trajectory reduction", worst <= 1e-14, f"max entry difference {worst:.1e} (50 instances)")


@pytest.mark.slow
def test_06_known_recommender_recovery():
    rows = run_experiment(ReproConfig("synthetic-known", instances=20, seed=0, steps=5000), workers=1)
    s = summarize(rows)
    med_exp, med_stat = s["AR1_dist_exp"]["median"], s["AR1_dist_stat"]["median"]
    record(6, "known-recommender recovery (R=8, S=2, T=5000, 20 instances)",
           med_exp <= 0.15 and med_stat <= 0.15,
           f"median dist_exp {med_exp:.4f}, median dist_stat {med_stat:.4f} (bound 0.15)")


@pytest.mark.slow
def test_07_likelihood_dominance():
    rows = run_experiment(ReproConfig("synthetic-open", instances=20, seed=0, steps=5000), workers=1)
    s = summarize(rows)["loglik_gap"]
    record(7, "likelihood dominance (open loop, R=6, S=2, T=5000, 20 instances)", s["median"] > 0,
           f"median gap {s['median']:.2f}, IQR [{s['q25']:.2f}, {s['q75']:.2f}]")


@pytest.mark.slow
def test_08_driver_scenario():
    means = {}
    for experiment in ("driver-multi", "driver-concat"):
        rows = run_experiment(ReproConfig(experiment, instances=20, seed=0, trips=80, p_r=0.3), workers=1)
        vals = [r["p_r_est"] for r in rows if r["p_r_est"] is not None]
        means[experiment] = (float(np.mean(vals)), float(np.std(vals)), len(vals))
    ok = all(0.2 <= m <= 0.4 for m, _, _ in means.values())
    detail = "; ".join(f"{k}: mean p_r {m:.3f} (sd {sd:.3f}, n={n})" for k, (m, sd, n) in means.items())
    record(8, "driver scenario (20 datasets x 80 trips, p_r=0.3)", ok, detail + " (band [0.20, 0.40])")


def test_09_permutation_covariance():
    rng = make_rng(1009)
    worst_ll, worst_m = 0.0, 0.0
    for S in (2, 3):
        for _ in range(50):
            R = int(rng.integers(2, 6))
            m = random_model(R, S, random_partition(R, int(rng.integers(1, R + 1)), rng), rng)
            traj = sample_trajectory(m, int(rng.integers(20, 200)), rng)
            perm = rng.permutation(S)
            pm = permute_latent(m, perm)
            worst_ll = max(worst_ll, abs(log_likelihood(pm, traj) - log_likelihood(m, traj)))
            a = permute_latent(reestimate_single(m, traj, unreached_policy="keep"), perm)
            b = reestimate_single(pm, traj, unreached_policy="keep")
            worst_m = max(worst_m, max(float(np.max(np.abs(getattr(a, k) - getattr(b, k))))
                                       for k in ("piR", "piS", "AR", "AS")))
    ok = worst_ll <= 1e-12 and worst_m <= 1e-12
    record(9, "permutation covariance", ok,
           f"max log-lik change {worst_ll:.1e}, max M-step entry difference {worst_m:.1e} (50 each at S=2, 3)")


def test_10_lower_bound_on_improvement():
    rng = make_rng(1010)
    worst_slack, worst_q = np.inf, 0.0
    for _ in range(100):
        mu, traj = small_instance(rng, R_max=3, S_max=2, T_max=6)
        mu_p = random_model(mu.R, mu.S, mu.gamma, rng)
        ll, ll_p = log_likelihood(mu, traj), log_likelihood(mu_p, traj)
        q_pp, q_p = auxiliary_Q(mu, mu_p, traj), auxiliary_Q(mu, mu, traj)
        worst_slack = min(worst_slack, np.exp(ll) * (ll_p - ll) - (q_pp - q_p))
        for other in (mu, mu_p):
            worst_q = max(worst_q, rel_gap(auxiliary_Q(mu, other, traj), auxiliary_Q_enumerated(mu, other, traj)))
    ok = worst_slack >= -1e-9 and worst_q <= 1e-10
    record(10, "log-likelihood improvement lower bound", ok,
           f"smallest slack {worst_slack:.2e}, max rel. gap between Q forms {worst_q:.1e} (100 pairs)")


def _numeric_outputs(manifest_path):
    doc = json.loads(manifest_path.read_text())
    return {p: open(p, "rb").read() for p in doc["outputs"]}


def test_11_cli_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    save_model(random_model(4, 2, Partition.parse("1,2|3,4", 4), make_rng(11)), "m.json")
    commands = [
        ["simulate", "--model", "m.json", "--steps", "800", "--seed", "7", "-o", "traj.txt"],
        ["simulate", "--scenario", "default", "--trips", "60", "--seed", "7", "-o", "trips.txt"],
        ["estimate", "--data", "traj.txt", "--R", "4", "--S", "2", "--gamma", "1,2|3,4", "--starts", "3",
         "--max-iters", "60", "--seed", "3", "-o", "est.json"],
        ["estimate", "--data", "trips.txt", "--R", "9", "--S", "2", "--gamma", "8,9|1-7",
         "--known", "AR:2=trips.truth.json", "--known", "AS:1=trips.truth.json",
         "--known", "AS:2=trips.truth.json", "--starts", "2", "--max-iters", "60", "-o", "drv.json"],
        ["evaluate", "--est", "est.json", "--truth", "m.json", "--holdout", "traj.txt", "-o", "eval.json"],
        ["lift", "--model", "est.json", "--verify", "traj.txt", "-o", "hmm.json"],
        ["repro", "synthetic-closed", "--instances", "4", "--steps", "400", "--max-iters", "30", "-o", "rep"],
        ["repro", "driver-multi", "--instances", "3", "--trips", "20", "--max-iters", "30", "-o", "drep"],
    ]
    manifests, first = [], {}
    monkeypatch.setenv("CLMM_THREADS", "1")
    for argv in commands:
        assert cli_main(argv) == 0, argv
    for argv in commands:
        out = argv[-1]
        manifests.append(tmp_path / out / "manifest.json" if argv[0] == "repro"
                         else tmp_path / (os.path.splitext(out)[0] + ".manifest.json"))
        first.update(_numeric_outputs(manifests[-1]))
    mismatched = []
    for threads in ("2", "4"):
        monkeypatch.setenv("CLMM_THREADS", threads)
        for manifest in manifests:
            if cli_main(["rerun", str(manifest)]) != 0:
                mismatched.append(f"{manifest.name}@{threads}")
            for path, blob in _numeric_outputs(manifest).items():
                if blob != first[path]:
                    mismatched.append(f"{path}@{threads}")
    record(11, "CLI determinism", not mismatched,
           f"{len(first)} output files from {len(commands)} commands byte-identical under CLMM_THREADS=1,2,4"
           if not mismatched else f"differences: {sorted(set(mismatched))}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

"""Command line: simulate, estimate, evaluate, lift, repro and rerun.

Every command writes a ``*.manifest.json`` next to its outputs recording the
argument vector, the resolved configuration and SHA-256 digests of inputs and
outputs; ``clmmmc rerun`` replays a manifest and checks the digests.

Failures print one line ``error: CODE: message`` to stderr and exit with 1.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ClmmError, ConfigError, DimensionMismatch, IndexOutOfRange
from .estimate import EMConfig, UNREACHED_POLICIES, em_multistart, forward_backward_scaled
from .evaluate import evaluate_estimate
from .model import ClMMMC, FreezeMask, lift_to_hmm, load_model, save_model
from .repro import EXPERIMENTS, ReproConfig, run_experiment, write_outputs
from .simulate import (
    TripScenario,
    build_driver_scenario,
    concatenate_trips,
    load_scenario,
    random_scenario_matrix,
    read_trajectories,
    sample_trajectory,
    sample_trips,
    write_trajectories,
)
from .stochastic import Partition, make_rng, validate_prob_vector, validate_stochastic

VERIFY_TOL = 1e-10


class VerifyFailed(ClmmError):
    code = "VERIFY_FAILED"


class Nondeterministic(ClmmError):
    code = "NONDETERMINISTIC"


# ---------------------------------------------------------------------------
# manifests


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int | None
    cwd: str = field(default_factory=os.getcwd)
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def add_inputs(self, *paths) -> None:
        for p in paths:
            if p is not None and Path(p).is_file():
                self.inputs[str(p)] = sha256(p)

    def finish(self, outputs, path) -> None:
        self.outputs = {str(p): sha256(p) for p in outputs}
        self.finished = _now()
        Path(path).write_text(json.dumps(asdict(self), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _sibling(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------
# input helpers


def load_data(path):
    """One trajectory, or a list when the file has several lines."""
    trajs = read_trajectories(path)
    return trajs[0] if len(trajs) == 1 else trajs


def default_scenario_path():
    return resources.files("clmmmc") / "data" / "driver.json"


def resolve_scenario(name: str) -> tuple[TripScenario, str | None]:
    if name == "default":
        return TripScenario.from_dict(json.loads(default_scenario_path().read_text())), None
    return load_scenario(name), name


def _read_known_value(path: str, kind: str, page: int | None):
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        # a whole model file: take the same page from it
        raw = raw[kind] if page is None else raw[kind][page]
    return raw


def parse_known(specs, R: int, S: int, p: int) -> dict:
    """``AR:k=file``, ``AS:l=file`` or ``piS=file`` (1-based pages)."""
    known = {"AR": {}, "AS": {}, "piS": None}
    for spec in specs or []:
        target, sep, path = spec.partition("=")
        if not sep or not path:
            raise ConfigError(f"--known {spec!r}: expected TARGET=FILE")
        if target == "piS":
            vec = validate_prob_vector(_read_known_value(path, "piS", None))
            if vec.shape != (S,):
                raise DimensionMismatch(f"known piS has {vec.shape[0]} entries, S={S}")
            known["piS"] = vec
            continue
        kind, _, idx = target.partition(":")
        if kind not in ("AR", "AS") or not idx.isdigit():
            raise ConfigError(f"--known {spec!r}: target must be AR:k, AS:l or piS")
        page, limit = int(idx) - 1, (S if kind == "AR" else p)
        if not 0 <= page < limit:
            raise IndexOutOfRange(f"known {kind} page {page + 1} outside 1..{limit}")
        mat = validate_stochastic(_read_known_value(path, kind, page))
        shape = (R, R) if kind == "AR" else (S, S)
        if mat.shape != shape:
            raise DimensionMismatch(f"known {kind} page {page + 1} is {mat.shape}, expected {shape}")
        known[kind][page] = mat
    return known


def estimation_template(R: int, S: int, gamma: Partition, known: dict) -> tuple[ClMMMC, FreezeMask]:
    AR = np.full((S, R, R), 1.0 / R)
    AS = np.full((gamma.p, S, S), 1.0 / S)
    for k, mat in known["AR"].items():
        AR[k] = mat
    for l, mat in known["AS"].items():
        AS[l] = mat
    piS = known["piS"] if known["piS"] is not None else np.full(S, 1.0 / S)
    template = ClMMMC(np.full(R, 1.0 / R), piS, AR, AS, gamma)
    freeze = FreezeMask(known["AR"].keys(), known["AS"].keys(), known["piS"] is not None)
    return template, freeze


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> list[Path]:
    rng = make_rng(args.seed)
    out = Path(args.output)
    written = [out]
    if args.scenario is None:
        if args.model is None or args.steps is None:
            raise ConfigError("simulate needs --model with --steps, or --scenario with --trips")
        model = load_model(args.model)
        trajs = [sample_trajectory(model, args.steps, rng) for _ in range(args.count)]
        write_trajectories(out, trajs)
        return written
    if args.trips is None:
        raise ConfigError("--scenario needs --trips")
    scenario, _ = resolve_scenario(args.scenario)
    p_r = scenario.p_r if args.p_r is None else args.p_r
    if args.model is not None:
        given = load_model(args.model)
        if given.S != 2:
            raise DimensionMismatch(f"scenario model needs S=2 driver/recommender pages, got S={given.S}")
        driver, recommender = given.AR[0], given.AR[1]
    else:
        driver = random_scenario_matrix(scenario, rng)
        recommender = random_scenario_matrix(scenario, rng)
    scenario, truth = build_driver_scenario(scenario.adjacency, driver, recommender, p_r,
                                            scenario.origin, scenario.terminals, args.variant)
    trips = sample_trips(scenario, truth, args.trips, rng)
    write_trajectories(out, [concatenate_trips(trips)] if args.variant == "concat" else trips)
    truth_path = _sibling(out, ".truth.json")
    save_model(truth, truth_path)
    written.append(truth_path)
    return written


def cmd_estimate(args) -> list[Path]:
    data = load_data(args.data)
    gamma = Partition.parse(args.gamma, args.R) if args.gamma else Partition.trivial(args.R)
    known = parse_known(args.known, args.R, args.S, gamma.p)
    template, freeze = estimation_template(args.R, args.S, gamma, known)
    config = EMConfig(max_iters=args.max_iters, loglik_tol=args.tol, freeze=freeze,
                      unreached_policy=args.unreached)
    best, reports = em_multistart(template, data, config, args.starts, make_rng(args.seed))
    out = Path(args.output)
    save_model(best.model, out)
    chosen = next(k for k, r in enumerate(reports) if r is best)
    report = {
        "mode": "multi" if isinstance(data, list) else "single",
        "starts": args.starts,
        "chosen_start": chosen + 1,
        **best.to_dict(),
        "runs": [r.to_dict() for r in reports],
    }
    report_path = _sibling(out, ".report.json")
    report_path.write_text(json.dumps(report, indent=1) + "\n")
    return [out, report_path]


def _p_r_source(text):
    if text is None:
        return None
    if text == "initial":
        return "initial"
    kind, _, page = text.partition(":")
    if kind != "stationary" or not page.isdigit():
        raise ConfigError(f"--p-r-source {text!r}: use 'initial' or 'stationary:l'")
    return ("stationary", int(page) - 1)


def cmd_evaluate(args) -> list[Path]:
    est, truth = load_model(args.est), load_model(args.truth)
    holdout = load_data(args.holdout) if args.holdout else None
    report = evaluate_estimate(est, truth, holdout, align=not args.no_align,
                               p_r_source=_p_r_source(args.p_r_source))
    out = Path(args.output)
    out.write_text(report.to_json() + "\n")
    return [out]


def cmd_lift(args) -> list[Path]:
    model = load_model(args.model)
    hmm = lift_to_hmm(model)
    if args.verify:
        trajs = read_trajectories(args.verify)
        ll_model = sum(forward_backward_scaled(model, t).log_likelihood for t in trajs)
        ll_hmm = sum(hmm.log_probability(t) for t in trajs)
        gap = abs(ll_model - ll_hmm) / max(abs(ll_model), abs(ll_hmm), np.finfo(float).tiny)
        print(f"clmmmc_loglik={ll_model!r} hmm_loglik={ll_hmm!r} rel_gap={gap:.3e}")
        if not gap <= VERIFY_TOL:
            raise VerifyFailed(f"relative gap {gap:.3e} exceeds {VERIFY_TOL:g}")
    out = Path(args.output)
    doc = {"R": model.R, "S": model.S, "hidden_states": model.R * model.S,
           "state_order": "q = (s - 1) * R + r", **hmm.to_dict()}
    out.write_text(json.dumps(doc, indent=1) + "\n")
    return [out]


def cmd_repro(args) -> list[Path]:
    cfg = ReproConfig(args.experiment, instances=args.instances, seed=args.seed, steps=args.steps,
                      R=args.R, S=args.S, trips=args.trips, p_r=args.p_r, loop=args.loop,
                      starts=args.starts, max_iters=args.max_iters, tol=args.tol)
    rows = run_experiment(cfg)
    return write_outputs(args.output, cfg, rows)


def cmd_rerun(args) -> list[Path]:
    manifest = RunManifest.load(args.manifest)
    here = os.getcwd()
    os.chdir(manifest.cwd)
    try:
        code = main(manifest.argv)
        changed = [p for p, digest in manifest.outputs.items()
                   if not Path(p).is_file() or sha256(p) != digest]
    finally:
        os.chdir(here)
    if code:
        raise ConfigError(f"replayed command exited with {code}")
    if changed:
        raise Nondeterministic("outputs differ from the manifest: " + ", ".join(changed))
    print(f"reproduced {len(manifest.outputs)} output files")
    return []


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clmmmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample trajectories from a model or a trip scenario")
    p.add_argument("--model", help="model JSON")
    p.add_argument("--steps", type=int, help="trajectory length T (T + 1 states per line)")
    p.add_argument("--count", type=int, default=1, help="independent trajectories with --steps")
    p.add_argument("--scenario", help="scenario JSON, or 'default' for the bundled road graph")
    p.add_argument("--trips", type=int, help="number of trips with --scenario")
    p.add_argument("--p-r", type=float, help="override the scenario's recommender probability")
    p.add_argument("--variant", choices=("multi", "concat"), default="multi",
                   help="one trip per line, or all trips joined into one line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit a model with EM")
    p.add_argument("--data", required=True, help="trajectory file; several lines select multi mode")
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--S", type=int, required=True)
    p.add_argument("--gamma", help="partition such as '8,9|1-7' (default: one block)")
    p.add_argument("--known", action="append", metavar="TARGET=FILE",
                   help="frozen piece: AR:k=FILE, AS:l=FILE or piS=FILE (repeatable)")
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unreached", choices=UNREACHED_POLICIES,
                   help="rows of states never left (default: error, or keep with several trajectories)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="compare an estimate with the true model")
    p.add_argument("--est", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--holdout", help="trajectory file for the log-likelihood gap")
    p.add_argument("--no-align", action="store_true", help="keep the estimate's latent labels")
    p.add_argument("--p-r-source", help="'initial' or 'stationary:l'")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("lift", help="write the equivalent hidden Markov model")
    p.add_argument("--model", required=True)
    p.add_argument("--verify", metavar="TRAJ", help="compare both log-likelihoods on a trajectory file")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("repro", help="re-run one of the synthetic or driver experiments")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--R", type=int)
    p.add_argument("--S", type=int, default=2)
    p.add_argument("--trips", type=int)
    p.add_argument("--p-r", type=float, default=0.3)
    p.add_argument("--loop", choices=("closed", "open"), default="closed")
    p.add_argument("--starts", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("rerun", help="replay a manifest and check its output digests")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def _manifest_path(args) -> Path:
    if args.command == "repro":
        return Path(args.output) / "manifest.json"
    return _sibling(args.output, ".manifest.json")


def _input_paths(args) -> list:
    keys = ("model", "scenario", "data", "est", "truth", "holdout", "verify")
    paths = [getattr(args, k, None) for k in keys]
    for spec in getattr(args, "known", None) or []:
        paths.append(spec.partition("=")[2])
    return [p for p in paths if p not in (None, "default")]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            args.func(args)
            return 0
        manifest = RunManifest(args.command, argv, _config(args), getattr(args, "seed", None))
        manifest.add_inputs(*_input_paths(args))
        outputs = args.func(args)
        manifest.finish(outputs, _manifest_path(args))
    except ClmmError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        code = "IO_ERROR" if isinstance(exc, OSError) else "PARSE_ERROR"
        print(f"error: {code}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

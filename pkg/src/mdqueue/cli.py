"""Batch front-end: config parsing, subcommand dispatch, artifact output.

Subcommands: solve-game, simulate, estimate, convergence, validate.  All
randomness flows from one master seed in the config (or --seed); identical
config plus seed reproduces byte-identical CSV artifacts.  The only
timestamped output is summary.json.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import estimator as est
from . import game as gm
from . import queue_sim as qs
from .paths import GridPath, ModelParams, TimeGrid

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3

COMMANDS = ("solve-game", "simulate", "estimate", "convergence", "validate")


class ConfigError(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    command: str
    seed: int
    out_dir: str
    threads: int
    raw: dict
    params: ModelParams | None = None
    horizon: float | None = None
    cost: gm.CostSpec | None = None
    schemes: list = field(default_factory=list)
    dists: qs.PrimitiveDistributions | None = None
    policies: list = field(default_factory=list)  # (name, PolicySpec)
    solve_opts: gm.SolveOptions = gm.SolveOptions()
    replications: object = 64
    grid_steps: int = 512
    export_traces: bool = True
    final_gap_frac: float = 0.20

    @property
    def config_hash(self) -> str:
        payload = dict(self.raw)
        payload["seed"] = self.seed
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()


def _policy_from_config(doc: dict, horizon: float) -> qs.PolicySpec:
    kind = doc.get("kind")
    if kind == "cmu_priority":
        return qs.cmu_policy(doc.get("permutation", list(range(doc.get("I", 0)))))
    if kind == "tracking":
        v = doc.get("v", horizon / 20.0)
        m = doc.get("M", 5.0)
        return qs.tracking_policy(v, m, horizon)
    if kind == "static_rho":
        return qs.static_rho_policy()
    if kind == "zero":
        return qs.zero_policy()
    raise ValueError(f"unknown policy kind {kind!r}")


def parse_config(doc: dict, command: str) -> ExperimentConfig:
    """Validate a config document for a command, aggregating every violation."""
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])

    seed = doc.get("seed")
    if seed is None:
        errors.append("seed is required (no implicit entropy)")
        seed = 0
    elif not isinstance(seed, int) or seed < 0:
        errors.append(f"seed must be a nonnegative integer, got {seed!r}")
        seed = 0

    cfg = ExperimentConfig(
        command=command,
        seed=seed,
        out_dir=str(doc.get("output_dir", "out")),
        threads=int(doc.get("threads", 0) or 0),
        raw=doc,
    )

    needs_model = command != "validate"
    params = None
    horizon = None
    if "model" in doc:
        try:
            params, horizon = ModelParams.from_dict(doc["model"])
            cfg.params, cfg.horizon = params, horizon
        except (ValueError, TypeError) as e:
            errors.append(f"model: {e}")
    elif needs_model:
        errors.append("model section is required")

    if "cost" in doc:
        if params is not None:
            try:
                cfg.cost = gm.cost_from_config(params, doc["cost"])
            except (ValueError, TypeError) as e:
                errors.append(f"cost: {e}")
    elif command in ("solve-game", "estimate", "convergence"):
        errors.append("cost section is required for this command")

    if "scaling" in doc:
        sc = doc["scaling"]
        try:
            cfg.schemes = qs.scaling_sequence(
                sc.get("n_list", []), beta=sc.get("beta"), b_n_list=sc.get("b_n_list"))
        except (ValueError, TypeError) as e:
            errors.append(f"scaling: {e}")
    elif command in ("simulate", "estimate", "convergence"):
        errors.append("scaling section is required for this command")

    if params is not None:
        families = doc.get("distributions", {})
        try:
            cfg.dists = qs.PrimitiveDistributions.from_model(
                params,
                families.get("ia", "exponential"),
                families.get("st", "exponential"),
            )
        except (ValueError, TypeError) as e:
            errors.append(f"distributions: {e}")

    if horizon is not None:
        pol_docs = []
        if "policy" in doc:
            pol_docs.append(doc["policy"])
        pol_docs.extend(doc.get("baseline_policies", []))
        for k, pd in enumerate(pol_docs):
            try:
                name = pd.get("name", pd.get("kind", f"policy{k}"))
                cfg.policies.append((name, _policy_from_config(pd, horizon)))
            except (ValueError, TypeError) as e:
                errors.append(f"policy[{k}]: {e}")
        if not pol_docs and command in ("simulate", "convergence"):
            errors.append("policy section is required for this command")

    opt = doc.get("optimizer", {})
    try:
        cfg.solve_opts = gm.SolveOptions(
            grid_steps=int(opt.get("grid_N", 32)),
            starts=int(opt.get("starts", 20)),
            seed=seed,
            slope_box=opt.get("slope_box"),
        )
    except (ValueError, TypeError) as e:
        errors.append(f"optimizer: {e}")

    est_sec = doc.get("estimator", {})
    reps = doc.get("replications", est_sec.get("replications", 64))
    cfg.replications = reps
    if isinstance(reps, list):
        if not all(isinstance(r, int) and r >= 2 for r in reps):
            errors.append("replications list entries must be integers >= 2")
    elif not (isinstance(reps, int) and reps >= 2):
        errors.append(f"replications must be an integer >= 2, got {reps!r}")
    cfg.grid_steps = int(doc.get("output_grid_N", est_sec.get("output_grid_N", 512)))
    cfg.export_traces = bool(doc.get("export_traces", command == "simulate"))
    cfg.final_gap_frac = float(doc.get("convergence", {}).get("final_gap_frac", 0.20))

    if errors:
        raise ConfigError(errors)
    return cfg


# ---------------------------------------------------------------------------
# artifact helpers


def _write_csv(path, header: str, rows, config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_summary(cfg: ExperimentConfig, payload: dict) -> None:
    payload = dict(payload)
    payload["config_hash"] = cfg.config_hash
    payload["config"] = cfg.raw
    payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def _cmd_solve_game(cfg: ExperimentConfig) -> int:
    grid = TimeGrid(cfg.horizon, cfg.solve_opts.grid_steps)
    inst = gm.GameInstance(cfg.params, cfg.cost, grid)
    result = gm.solve_value(inst, cfg.solve_opts)
    psi_path = os.path.join(cfg.out_dir, "psi_star.csv")
    result.psi_star.to_csv(psi_path)
    doc = {
        "value": result.value,
        "converged": result.converged,
        "grid_N": cfg.solve_opts.grid_steps,
        "psi_star_csv_path": psi_path,
        "refined_value": result.refined_value,
        "refinement_change": result.refinement_change,
        "config_hash": cfg.config_hash,
    }
    with open(os.path.join(cfg.out_dir, "value.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _write_summary(cfg, {"command": "solve-game", "value": result.value,
                         "converged": result.converged})
    return EXIT_OK if result.converged else EXIT_ASSERTION


def _cmd_simulate(cfg: ExperimentConfig) -> int:
    scheme = cfg.schemes[0]
    name, policy = cfg.policies[0]
    grid = TimeGrid(cfg.horizon, cfg.grid_steps)
    reps = cfg.replications if isinstance(cfg.replications, int) else cfg.replications[0]
    residuals = []
    for r in range(reps):
        rng = qs.replication_rng(cfg.seed, r)
        streams = qs.sample_primitives(cfg.dists, scheme, cfg.params, cfg.horizon, rng)
        trace = qs.run(cfg.params, scheme, streams, policy, cfg.horizon, cost=cfg.cost)
        scaled = qs.scale_trace(trace, grid)
        residuals.append(scaled.identity_residual)
        if cfg.export_traces:
            rows = []
            for j, t in enumerate(grid.t):
                row = [float(t)]
                for block in (scaled.a_tilde, scaled.st_tilde, scaled.x_tilde, scaled.z):
                    row.extend(float(v) for v in block.values[j])
                rows.append(row)
            I = cfg.params.I
            header = "t," + ",".join(
                f"{nm}{i + 1}" for nm in ("a_tilde", "st_tilde", "x_tilde", "z")
                for i in range(I)
            )
            _write_csv(os.path.join(cfg.out_dir, f"trace_{r:04d}.csv"),
                       header, rows, cfg.config_hash)
    _write_summary(cfg, {
        "command": "simulate", "policy": name, "n": scheme.n, "b_n": scheme.b_n,
        "replications": reps, "max_identity_residual": max(residuals),
    })
    return EXIT_OK


def _estimates_rows(cfg: ExperimentConfig, value: float | None):
    name, policy = cfg.policies[0] if cfg.policies else ("cmu_priority", qs.cmu_policy(range(cfg.params.I)))
    rows = []
    reps = cfg.replications
    reps_list = reps if isinstance(reps, list) else [reps] * len(cfg.schemes)
    for scheme, r in zip(cfg.schemes, reps_list):
        e = est.estimate_J(cfg.params, cfg.cost, scheme, cfg.dists, policy,
                           cfg.horizon, r, cfg.seed, cfg.grid_steps,
                           n_jobs=cfg.threads or 1)
        gap = abs(e.J - value) if value is not None else float("nan")
        rows.append([scheme.n, scheme.b_n, name, e.J, e.stderr, e.ess, gap])
    return rows


def _cmd_estimate(cfg: ExperimentConfig) -> int:
    rows = _estimates_rows(cfg, value=None)
    _write_csv(os.path.join(cfg.out_dir, "estimates.csv"),
               "n,b_n,policy,J,stderr,ess,gap", rows, cfg.config_hash)
    _write_summary(cfg, {"command": "estimate", "rows": len(rows)})
    return EXIT_OK


def _cmd_convergence(cfg: ExperimentConfig) -> int:
    grid = TimeGrid(cfg.horizon, cfg.solve_opts.grid_steps)
    inst = gm.GameInstance(cfg.params, cfg.cost, grid)
    solved = gm.solve_value(inst, cfg.solve_opts)
    report = est.convergence_suite(
        cfg.params, cfg.cost, cfg.dists, cfg.policies, cfg.schemes, cfg.horizon,
        cfg.replications, cfg.seed, solved.value, cfg.grid_steps,
        final_gap_frac=cfg.final_gap_frac, n_jobs=cfg.threads or 1)
    rows = [[r.n, r.b_n, r.policy, r.J, r.stderr, r.ess, r.gap] for r in report.rows]
    _write_csv(os.path.join(cfg.out_dir, "convergence.csv"),
               "n,b_n,policy,J,stderr,ess,gap", rows, cfg.config_hash)
    trend = {
        "value": solved.value,
        "gap_nonincreasing": report.gap_nonincreasing,
        "final_gap_ok": report.final_gap_ok,
        "paired_ordering": report.paired_ordering,
        "insufficient_points": report.insufficient_points,
    }
    _write_summary(cfg, {"command": "convergence", **trend})
    if report.insufficient_points:
        print("trend assertions: insufficient points (need >= 2 scaling levels)")
        return EXIT_OK
    return EXIT_OK if report.passed else EXIT_ASSERTION


def _cmd_validate(cfg: ExperimentConfig) -> int:
    from .validate import run_validation_suite

    results = run_validation_suite(seed=cfg.seed)
    rows = [[name, "PASS" if ok else "FAIL"] for name, ok in results]
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    _write_csv(os.path.join(cfg.out_dir, "validate.csv"), "check,result",
               rows, cfg.config_hash)
    _write_summary(cfg, {"command": "validate",
                         "passed": all(ok for _, ok in results)})
    return EXIT_OK if all(ok for _, ok in results) else EXIT_ASSERTION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdqueue",
        description="Solve the moderate-deviation scheduling game and simulate "
                    "the prelimit queueing system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: machine parallelism)")
        p.add_argument("--out", type=str, default=None,
                       help="output directory (default: config output_dir)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            if args.command != "validate":
                print("error: --config is required", file=sys.stderr)
                return EXIT_CONFIG
            doc = {"seed": 0}
        else:
            with open(args.config) as fh:
                doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        cfg = parse_config(doc, args.command)
    except ConfigError as e:
        print("config errors:", file=sys.stderr)
        for msg in e.errors:
            print(f"  - {msg}", file=sys.stderr)
        return EXIT_CONFIG

    if args.out is not None:
        cfg.out_dir = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    elif not cfg.threads:
        cfg.threads = os.cpu_count() or 1
    os.makedirs(cfg.out_dir, exist_ok=True)

    handlers = {
        "solve-game": _cmd_solve_game,
        "simulate": _cmd_simulate,
        "estimate": _cmd_estimate,
        "convergence": _cmd_convergence,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](cfg)
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ASSERTION
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

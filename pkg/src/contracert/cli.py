"""Command-line front end: train / verify / falsify / simulate / export-plots.

Exit codes form the scripting contract:

    0  success (train: certified; verify: consistent; falsify: clean)
    2  configuration or argument errors
    3  training budget exhausted without a certificate
    4  verification mismatch against the stored certificate
    5  falsification found a contraction violation
    6  infeasible reference trajectory

All randomness flows from the single seed in the config, intra-op
threading is pinned to one thread, and timing is left out of logs unless
requested, so identical runs produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .boundprop import Region
from .certify import certify_region, falsify_by_sampling
from .checkpoint import (
    load_certificate,
    load_checkpoint,
    save_certificate,
    save_checkpoint,
)
from .config import ConfigError, RunConfig
from .intervals import set_outward_rounding
from .tracking import (
    FLAT_SHAPES,
    InfeasibleReferenceError,
    ReferenceTrajectory,
    ball_tube_check,
    flat_reference,
    simulate,
)
from .train import train_curriculum

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_VERIFY_MISMATCH = 4
EXIT_FALSIFIED = 5
EXIT_INFEASIBLE = 6

LOG_COLUMNS = (
    "step",
    "stage",
    "loss",
    "log_norm_bound",
    "metric_eig_lo",
    "metric_eig_hi",
    "wall_time_s",
)


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def _write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    try:
        config = RunConfig.from_toml(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_outward_rounding(config.outward_rounding)

    rng = np.random.default_rng(config.seed)
    problem = config.build_problem(rng)
    rng_state = json.loads(json.dumps(rng.bit_generator.state))
    region = config.build_region()

    log_rows: list[dict] = []

    def checkpoint_stage(stage: int, snapshot) -> None:
        save_checkpoint(
            out_dir / "checkpoints" / f"stage_{stage:03d}.json",
            snapshot,
            config=config.to_dict(),
            region_lo=region.lo,
            region_hi=region.hi,
            partitions=region.partitions,
            stage=stage,
            seed=config.seed,
            rng_state=rng_state,
        )

    result = train_curriculum(
        problem,
        region,
        config.optimizer,
        config.curriculum,
        log_fn=log_rows.append,
        checkpoint_fn=checkpoint_stage,
        record_timing=config.log_timing,
    )

    _write_csv(
        out_dir / "train_log.csv",
        LOG_COLUMNS,
        [[row[c] for c in LOG_COLUMNS] for row in log_rows],
    )
    save_checkpoint(
        out_dir / "checkpoint.json",
        result.problem,
        config=config.to_dict(),
        region_lo=region.lo,
        region_hi=region.hi,
        partitions=region.partitions,
        stage=result.state.stage,
        seed=config.seed,
        rng_state=rng_state,
    )
    if result.certificate is not None:
        save_certificate(out_dir / "certificate.json", result.certificate)

    status = "certified" if result.state.certified else "not certified"
    print(
        f"{status}: stage {result.state.stage}/{config.curriculum.target}, "
        f"{result.state.step} optimizer steps, best loss {result.state.best_loss!r}"
    )
    print(f"artifacts in {out_dir}")
    return EXIT_OK if result.state.certified else EXIT_BUDGET


# ---------------------------------------------------------------------------
# verify


def _region_for_check(args, data) -> Region | None:
    if args.config:
        config = RunConfig.from_toml(args.config)
        scale = config.curriculum.target / config.curriculum.denominator
        return config.build_region().scaled(scale)
    if data.region_lo is not None and data.config is not None:
        cur = data.config.get("curriculum", {})
        scale = cur.get("target", 100) / cur.get("denominator", 100)
        region = Region(data.region_lo, data.region_hi, data.partitions or (1,) * data.region_lo.size)
        return region.scaled(scale)
    return None


def cmd_verify(args) -> int:
    try:
        data = load_checkpoint(args.ckpt)
        cert_path = args.cert or Path(args.ckpt).parent / "certificate.json"
        stored = load_certificate(cert_path)
        region = Region(stored.region_lo, stored.region_hi, stored.partitions)
        expected = _region_for_check(args, data)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if expected is not None and (
        not np.allclose(expected.lo, region.lo, atol=1e-12)
        or not np.allclose(expected.hi, region.hi, atol=1e-12)
        or expected.partitions != region.partitions
    ):
        print(
            "grid-mismatch: certificate region/partitions do not match the "
            "configured region",
            file=sys.stderr,
        )
        return EXIT_VERIFY_MISMATCH

    fresh = certify_region(data.problem, region, propagator_tag=stored.propagator_tag)
    if fresh.problem_hash != stored.problem_hash:
        print("mismatch: certificate was issued for different parameters", file=sys.stderr)
        return EXIT_VERIFY_MISMATCH
    if fresh.certified != stored.certified:
        print(
            f"mismatch: recomputed verdict {fresh.certified} != stored {stored.certified}",
            file=sys.stderr,
        )
        return EXIT_VERIFY_MISMATCH
    if fresh.cell_bounds.shape != stored.cell_bounds.shape:
        print("mismatch: certificate cell count differs", file=sys.stderr)
        return EXIT_VERIFY_MISMATCH
    deltas = np.abs(fresh.cell_bounds - stored.cell_bounds)
    if np.any(deltas > 1e-9):
        cell = int(np.argmax(deltas > 1e-9))
        print(
            f"mismatch: cell {cell} bound {stored.cell_bounds[cell]!r} vs "
            f"recomputed {fresh.cell_bounds[cell]!r}",
            file=sys.stderr,
        )
        return EXIT_VERIFY_MISMATCH
    if (
        abs(fresh.metric_eig_lo - stored.metric_eig_lo) > 1e-9
        or abs(fresh.metric_eig_hi - stored.metric_eig_hi) > 1e-9
    ):
        print("mismatch: metric eigenvalue bounds differ", file=sys.stderr)
        return EXIT_VERIFY_MISMATCH
    verdict = "certified" if fresh.certified else "not certified"
    print(f"verified: certificate is consistent and {verdict}")
    return EXIT_OK if fresh.certified else EXIT_VERIFY_MISMATCH


# ---------------------------------------------------------------------------
# falsify


def cmd_falsify(args) -> int:
    try:
        data = load_checkpoint(args.ckpt)
        region = _region_for_check(args, data)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if region is None:
        print("error: no region available (pass --config)", file=sys.stderr)
        return EXIT_CONFIG
    if args.samples == 0:
        print("warning: zero samples requested; vacuous pass")
        return EXIT_OK
    report = falsify_by_sampling(data.problem, region, samples=args.samples, seed=args.seed)
    print(
        f"sampled {report.samples} states: worst log-norm {report.worst_value!r}, "
        f"{report.violations} violation(s)"
    )
    if report.violations:
        print(f"counterexample state: {report.worst_state.tolist()}")
        return EXIT_FALSIFIED
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _equilibrium_reference(system, duration: float, dt: float) -> ReferenceTrajectory:
    steps = int(round(duration / dt))
    times = np.arange(steps + 1) * dt
    states = np.tile(system.x_eq, (steps + 1, 1))
    inputs = np.tile(system.u_eq, (steps + 1, 1))
    return ReferenceTrajectory(
        times=times,
        states=states,
        inputs=inputs,
        flat_outputs=np.zeros((steps + 1, 0)),
        feasibility_residual=0.0,
        shape="hover",
    )


def cmd_simulate(args) -> int:
    try:
        data = load_checkpoint(args.ckpt)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problem = data.problem
    system = problem.system
    shape_params = {}
    if args.shape_params:
        try:
            shape_params = json.loads(args.shape_params)
        except json.JSONDecodeError as exc:
            print(f"error: --shape-params is not valid JSON: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        if system.name == "quadrotor10":
            reference = flat_reference(
                args.shape, duration=args.duration, dt=args.dt, params=shape_params
            )
        elif args.shape == "hover":
            reference = _equilibrium_reference(system, args.duration, args.dt)
        else:
            print(
                f"error: shape {args.shape!r} needs the quadrotor; "
                f"{system.name} only supports 'hover'",
                file=sys.stderr,
            )
            return EXIT_CONFIG
    except InfeasibleReferenceError as exc:
        print(f"infeasible reference: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        region = _region_for_check(args, data)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rng = np.random.default_rng(args.seed)
    if region is not None:
        starts = region.scaled(args.start_scale).sample(rng, args.starts)
    else:
        starts = system.x_eq + 0.1 * rng.normal(size=(args.starts, system.n))

    result = simulate(problem, reference, starts, dt=args.dt)
    out_dir = Path(args.out or (Path(args.ckpt).parent / "simulation"))
    out_dir.mkdir(parents=True, exist_ok=True)

    state_cols = [f"x{i}" for i in range(system.n)]
    input_cols = [f"u{i}" for i in range(system.m)]
    _write_csv(
        out_dir / "reference.csv",
        ["time_s", *state_cols, *input_cols],
        [
            [t, *xs, *us]
            for t, xs, us in zip(reference.times, reference.states, reference.inputs)
        ],
    )
    traj_rows = []
    err_rows = []
    for idx, (xs, dhat) in enumerate(zip(result.trajectories, result.errors)):
        for k in range(xs.shape[0]):
            traj_rows.append([idx, result.times[k], *xs[k]])
            err_rows.append([idx, result.times[k], dhat[k]])
    _write_csv(out_dir / "trajectories.csv", ["trajectory", "time_s", *state_cols], traj_rows)
    _write_csv(out_dir / "errors.csv", ["trajectory", "time_s", "weighted_error"], err_rows)
    _write_csv(
        out_dir / "rates.csv",
        ["trajectory", "fitted_rate_per_s", "diverged"],
        [
            [idx, rate, int(flag)]
            for idx, (rate, flag) in enumerate(zip(result.fitted_rates, result.diverged))
        ],
    )
    if region is not None:
        tube = ball_tube_check(
            region, reference, radius=0.0, metric_lower=problem.metric_lower,
            metric_upper=problem.metric_upper,
        )
        tube_payload = {
            "max_ball_radius": tube.max_ball_radius,
            "geodesic_radius": tube.geodesic_radius,
            "initial_radius": tube.initial_radius,
            "reference_stays_inside": tube.first_violation_time is None,
        }
    else:
        tube_payload = None
    manifest = {
        "shape": reference.shape,
        "dt": args.dt,
        "duration": args.duration,
        "seed": args.seed,
        "trajectories": len(result.trajectories),
        "fitted_rates": result.fitted_rates,
        "diverged": [bool(f) for f in result.diverged],
        "tube": tube_payload,
        "files": {
            "reference": "reference.csv",
            "trajectories": "trajectories.csv",
            "errors": "errors.csv",
            "rates": "rates.csv",
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    print(f"simulated {len(result.trajectories)} trajectories; outputs in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-plots


def cmd_export_plots(args) -> int:
    run_dir = Path(args.run)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"error: {manifest_path} not found (run simulate first)", file=sys.stderr)
        return EXIT_CONFIG
    manifest = json.loads(manifest_path.read_text())

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    def read_csv(name):
        with open(run_dir / manifest["files"][name]) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader])
        return header, rows

    _, ref = read_csv("reference")
    _, traj = read_csv("trajectories")
    _, err = read_csv("errors")

    plots_dir = run_dir / "plots"
    plots_dir.mkdir(exist_ok=True)

    planar = traj.shape[1] >= 4  # trajectory, time, x0, x1, ...
    fig, ax = plt.subplots(figsize=(6, 6))
    ids = np.unique(traj[:, 0]).astype(int)
    for tid in ids:
        rows = traj[traj[:, 0] == tid]
        xs, ys = (rows[:, 2], rows[:, 3]) if planar else (rows[:, 1], rows[:, 2])
        ax.plot(xs, ys, lw=0.8, alpha=0.7)
        ax.plot(xs[0], ys[0], "x", color="k", ms=5)
    if planar:
        ax.plot(ref[:, 1], ref[:, 2], "r-", lw=2, label="reference")
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
    else:
        ax.plot(ref[:, 0], ref[:, 1], "r-", lw=2, label="reference")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("x0")
    ax.legend()
    fig.savefig(plots_dir / "paths.png", dpi=150, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    for tid in ids:
        rows = err[err[:, 0] == tid]
        positive = rows[rows[:, 2] > 0]
        if positive.size:
            ax.semilogy(positive[:, 1], positive[:, 2], lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("weighted tracking error")
    fig.savefig(plots_dir / "errors.png", dpi=150, bbox_inches="tight")
    plt.close(fig)

    payload = {"plots": ["plots/paths.png", "plots/errors.png"]}
    (run_dir / "plots_manifest.json").write_text(json.dumps(payload, indent=1) + "\n")
    print(f"wrote {len(payload['plots'])} plots to {plots_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contracert",
        description="Train and check contraction-region certificates for neural policies.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy/metric pair and certify")
    p_train.add_argument("--config", required=True, help="TOML run configuration")
    p_train.add_argument("--out", help="output directory (default: config run.out_dir)")
    p_train.set_defaults(fn=cmd_train)

    p_verify = sub.add_parser("verify", help="recompute and compare a certificate")
    p_verify.add_argument("--ckpt", required=True, help="checkpoint JSON")
    p_verify.add_argument("--config", help="TOML config to cross-check the region")
    p_verify.add_argument("--cert", help="certificate path (default: sibling certificate.json)")
    p_verify.set_defaults(fn=cmd_verify)

    p_falsify = sub.add_parser("falsify", help="random-sampling counterexample search")
    p_falsify.add_argument("--ckpt", required=True)
    p_falsify.add_argument("--samples", type=int, default=10000)
    p_falsify.add_argument("--seed", type=int, default=0)
    p_falsify.add_argument("--config", help="TOML config providing the region")
    p_falsify.set_defaults(fn=cmd_falsify)

    p_sim = sub.add_parser("simulate", help="closed-loop tracking simulation")
    p_sim.add_argument("--ckpt", required=True)
    p_sim.add_argument("--shape", choices=sorted(FLAT_SHAPES), default="hover")
    p_sim.add_argument("--duration", type=float, default=10.0)
    p_sim.add_argument("--dt", type=float, default=1e-3)
    p_sim.add_argument("--starts", type=int, default=10)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--start-scale", type=float, default=1.0,
                       help="sample initial conditions from the region scaled by this factor")
    p_sim.add_argument("--shape-params", help="JSON object of shape parameters")
    p_sim.add_argument("--config", help="TOML config providing the region")
    p_sim.add_argument("--out", help="output directory (default: <ckpt dir>/simulation)")
    p_sim.set_defaults(fn=cmd_simulate)

    p_plots = sub.add_parser("export-plots", help="render plot files from a simulation")
    p_plots.add_argument("--run", required=True, help="simulation output directory")
    p_plots.set_defaults(fn=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

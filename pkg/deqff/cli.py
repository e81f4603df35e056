"""
Command-line entry point:

    deqff gen-data --frames 2000 --out data/
    deqff train --config configs/desk.cfg --data data/ --out runs/desk/
    deqff eval --checkpoint runs/desk/model.ckpt --data data/ --report runs/desk/eval.csv
    deqff md --checkpoint runs/desk/model.ckpt --steps 1000 --reuse on --out runs/md/
    deqff relax --checkpoint runs/desk/model.ckpt --ablation --out runs/relax/
    deqff bench-fpreuse --checkpoint runs/desk/model.ckpt --traj data/data.xyz --out runs/bench/
    deqff sweep-tol --checkpoint runs/desk/model.ckpt --data data/ --out runs/sweep.csv
    deqff compare --reports a.csv b.csv --out runs/compare.csv
"""

import argparse
import sys
from dataclasses import asdict, replace
from logging import getLogger
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import ConfigError, RunConfig, load_config, save_config
from .deq import SolverConfig, SolverDivergenceError
from .eqnet import ForceField
from .grad import AdjointNotConvergedError
from .lib.utils import configure_threads, read_csv, setup_logging, write_csv
from .metrics import aggregate, evaluate, normalize_table, step_histogram, tolerance_sweep
from .sim import (
    Frame,
    ModelCalculator,
    Trajectory,
    gen_dataset,
    markov_deviation,
    maxwell_boltzmann,
    perturb,
    read_manifest,
    read_xyz,
    relax,
    relax_ablation,
    run_md,
    toy_molecule,
    toy_potential,
    write_manifest,
    write_xyz,
)
from .train import CheckpointError, TrainingAbortedError, read_checkpoint, restore_model, train_loop, write_checkpoint

logger = getLogger(__name__)

DATA_FILE = "data.xyz"
MANIFEST_FILE = "manifest.json"
DEFAULT_TOLS = "1e-4,1e-3,1e-2,1e-1,1"


def _data_path(path: str) -> Path:
    p = Path(path)
    return p / DATA_FILE if p.is_dir() else p


def _load_data(path: str) -> Trajectory:
    p = _data_path(path)
    if not p.exists():
        raise ValueError(f"No trajectory at {p}")
    return read_xyz(p)


def _load_model(args, cfg: RunConfig) -> Tuple[ForceField, SolverConfig]:
    """Model from ``--checkpoint``; solver settings from ``--config`` if given, else from the checkpoint."""
    ckpt = read_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    model.eval()
    solver = cfg.solver
    if args.config is None and "solver" in ckpt.metadata:
        try:
            solver = SolverConfig(**ckpt.metadata["solver"])
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"Checkpoint holds invalid solver settings: {e}") from None
    return model, solver


def _initial_system(args, cfg: RunConfig):
    if args.init:
        return read_xyz(args.init)[-1].system.with_default_masses()
    return toy_molecule()


def cmd_gen_data(args, cfg: RunConfig) -> None:
    manifest = read_manifest(args.potential) if args.potential else {}
    potential = manifest.get("potential") or toy_potential()
    system0 = manifest.get("system") or toy_molecule()
    frames = args.frames or cfg.sim.frames
    dt = args.dt or cfg.sim.dt
    temp = args.temp if args.temp is not None else cfg.sim.temperature
    seed = cfg.sim.seed if args.seed is None else args.seed
    trajectory = gen_dataset(potential, system0, frames, dt, temp, seed)
    out = Path(args.out)
    write_xyz(out / DATA_FILE, trajectory)
    write_manifest(out / MANIFEST_FILE, potential, system0, frames=frames, dt=dt, temperature=temp, seed=seed)
    logger.info("wrote %d frames to %s", len(trajectory), out / DATA_FILE)


def cmd_train(args, cfg: RunConfig) -> None:
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed), model=replace(cfg.model, seed=args.seed))
    data = _load_data(args.data)
    model = ForceField(cfg.model, cfg.graph)
    out = Path(args.out)
    logger.info("training %s model with %d parameters on %d frames", cfg.model.kind, model.num_parameters(), len(data))
    result = train_loop(data, model, cfg.train, cfg.solver, metrics_path=out / "metrics.csv")
    write_checkpoint(out / "model.ckpt", result.checkpoint({"solver": asdict(cfg.solver)}))
    save_config(out / "run.cfg", cfg)


def cmd_eval(args, cfg: RunConfig) -> None:
    model, solver = _load_model(args, cfg)
    system = args.system or Path(args.data).stem
    name = args.name or Path(args.checkpoint).parent.name or Path(args.checkpoint).stem
    report, samples = evaluate(model, _load_data(args.data), solver, system=system, name=name)
    path = Path(args.report)
    write_csv(pd.DataFrame([report.to_row()]), path, comment="evaluation report")
    write_csv(samples, path.with_name(path.stem + "_samples.csv"), comment="per-sample errors")


def _trace_table(calculator: ModelCalculator) -> pd.DataFrame:
    rows = [
        {"frame": frame, "step": step, "residual": residual}
        for frame, stats in enumerate(calculator.history)
        for step, residual in enumerate(stats.trace)
    ]
    return pd.DataFrame(rows, columns=["frame", "step", "residual"])


def cmd_md(args, cfg: RunConfig) -> None:
    model, solver = _load_model(args, cfg)
    if args.eps_reuse is not None:
        solver = replace(solver, eps_reuse=args.eps_reuse)
    seed = cfg.sim.seed if args.seed is None else args.seed
    system = _initial_system(args, cfg)
    if system.velocities is None:
        system = maxwell_boltzmann(system, cfg.sim.temperature, np.random.default_rng(seed))
    calculator = ModelCalculator(model, solver, reuse=args.reuse == "on")
    trajectory = run_md(calculator, system, args.steps or cfg.sim.md_steps, args.dt or cfg.sim.dt)
    out = Path(args.out)
    write_xyz(out / "trajectory.xyz", trajectory)
    write_csv(pd.DataFrame(trajectory.stats), out / "solver_stats.csv", comment=f"reuse={args.reuse}")
    write_csv(_trace_table(calculator), out / "solver_trace.csv", comment="residual per iteration")
    if "truncated_at" in trajectory.metadata:
        raise SolverDivergenceError(int(trajectory.metadata["truncated_at"]), float("nan"))


def cmd_relax(args, cfg: RunConfig) -> None:
    model, solver = _load_model(args, cfg)
    rng = np.random.default_rng(cfg.sim.seed if args.seed is None else args.seed)
    base = _initial_system(args, cfg)
    steps = args.steps or cfg.sim.relax_steps
    out = Path(args.out)
    if args.ablation:
        systems = [perturb(base, cfg.sim.perturbation, rng) for _ in range(args.systems or cfg.sim.relax_systems)]
        table = relax_ablation(model, systems, solver, steps, cfg.sim.relax_step_size, cfg.sim.relax_f_max)
        write_csv(table, out / "ablation.csv", comment="relaxation ablation")
        return
    calculator = ModelCalculator(model, solver, reuse=True)
    result = relax(calculator, perturb(base, cfg.sim.perturbation, rng), steps, cfg.sim.relax_step_size, cfg.sim.relax_f_max)
    write_xyz(out / "relaxed.xyz", Trajectory(frames=[Frame(system=result.system)]))
    write_csv(
        pd.DataFrame({"iteration": range(result.iterations), "energy": result.energies,
                      "steps": result.solver_steps or [0] * result.iterations}),
        out / "relax.csv",
        comment="relaxation",
    )


def cmd_bench_fpreuse(args, cfg: RunConfig) -> None:
    model, solver = _load_model(args, cfg)
    trajectory = read_xyz(_data_path(args.traj))
    report = markov_deviation(model, trajectory, solver)
    out = Path(args.out)
    tables = []
    for label, column in (("no", "steps"), ("yes", "steps_reuse")):
        hist = step_histogram(report.per_frame[column])
        tables.append(hist.table.assign(fp_reuse=label))
        logger.info("fp_reuse=%s: mean %.2f median %.1f steps", label, hist.mean, hist.median)
    write_csv(pd.concat(tables, ignore_index=True), out / "step_histogram.csv", comment="solver steps")
    write_csv(report.per_frame, out / "markov_deviation.csv", comment=f"delta_f_rel={report.delta_f_rel:.6g}")
    logger.info("relative force deviation %.4g (%d atoms excluded)", report.delta_f_rel, report.excluded)


def cmd_sweep_tol(args, cfg: RunConfig) -> None:
    model, solver = _load_model(args, cfg)
    data = _load_data(args.data)
    try:
        tols = [float(t) for t in args.tols.split(",")]
    except ValueError:
        raise ValueError(f"--tols must be comma-separated numbers, got {args.tols!r}") from None
    write_csv(tolerance_sweep(model, data, solver, tols), args.out, comment="tolerance sweep")


def cmd_compare(args, cfg: RunConfig) -> None:
    reports = pd.concat([read_csv(p) for p in args.reports], ignore_index=True)
    missing = {"system", "model", args.metric} - set(reports.columns)
    if missing:
        raise ValueError(f"Reports lack columns {sorted(missing)}")
    errors = reports.pivot_table(index="system", columns="model", values=args.metric, aggfunc="mean")
    normalized = normalize_table(errors)
    table = normalized.reset_index()
    summary = aggregate(normalized).rename("avg").to_frame().T.reset_index(drop=True)
    summary.insert(0, "system", "avg")
    write_csv(pd.concat([table, summary], ignore_index=True), args.out, comment=f"minmax {args.metric}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deqff", description="Deep-equilibrium equivariant force field")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", default=None, help="dotted-key config file")
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, help="oracle-labelled MD trajectory")
    p.add_argument("--potential", default=None, help="manifest with oracle parameters and initial geometry (default: toy molecule)")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--temp", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--name", default=None, help="model label in the report (default: checkpoint directory)")
    p.add_argument("--system", default=None, help="system label in the report (default: data file stem)")

    p = add("md", cmd_md, help="model-driven molecular dynamics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--init", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--reuse", choices=["on", "off"], default="on")
    p.add_argument("--eps-reuse", dest="eps_reuse", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("relax", cmd_relax, help="structure relaxation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--init", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--systems", type=int, default=None)
    p.add_argument("--ablation", action="store_true")
    p.add_argument("--out", required=True)

    p = add("bench-fpreuse", cmd_bench_fpreuse, help="fixed-point reuse benchmark")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)

    p = add("sweep-tol", cmd_sweep_tol, help="solver tolerance sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tols", default=DEFAULT_TOLS)
    p.add_argument("--out", required=True)

    p = add("compare", cmd_compare, help="minmax-normalized comparison of eval reports")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--metric", default="force_mae")
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(-1 if args.quiet else args.verbose)
    try:
        configure_threads()
        cfg = load_config(args.config)
        args.func(args, cfg)
    except ConfigError as e:
        logger.error("config error: %s", e)
        return 2
    except (SolverDivergenceError, AdjointNotConvergedError, TrainingAbortedError) as e:
        logger.error("solver failure: %s", e)
        return 3
    except (CheckpointError, ValueError, OSError) as e:
        logger.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

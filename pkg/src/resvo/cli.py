"""Command-line entry points: train, eval, analyze-ipd, aggregate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import analyzer, config
from .envs import EnvConfig, write_ppm
from .envs.base import atomic_write_text
from .policy import load_checkpoint, save_checkpoint
from .trainer import IterationReport, Learner, TrainConfig, evaluate, train

log = logging.getLogger("resvo")

METRICS_HEADER = [
    "iteration", "seed", "agent_id", "extrinsic_reward_mean", "shaped_reward_mean", "reward_given_mean",
    "reward_received_mean", "svo_rank_mean", "mi_loss", "steps_per_episode", "levers_pulled",
    "waste_cleaned", "apples_collected",
]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_metrics(path: Path, reports: list[IterationReport], seed: int) -> None:
    rows = [row for rep in reports for row in rep.rows(seed)]
    atomic_write_text(path, csv_text(METRICS_HEADER, rows))


# ---- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = config.load(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    cfg = cfg.for_seed(seed)
    sharing = args.baseline or cfg.sharing
    cfg = config.ExperimentConfig(cfg.env, cfg.train, cfg.out_dir, cfg.seeds, cfg.checkpoint_interval, sharing)
    out = Path(args.out if args.out else Path(cfg.out_dir) / f"seed_{seed}")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.resolved.toml", cfg.to_toml())
    metrics = out / "metrics.csv"
    reports: list[IterationReport] = []
    write_metrics(metrics, reports, seed)

    def on_iteration(learner: Learner, rep: IterationReport) -> None:
        reports.append(rep)
        write_metrics(metrics, reports, seed)
        it = rep.iteration + 1
        if cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
            save_checkpoint(out / "checkpoints" / f"iter_{it:06d}.ckpt", learner.state_tensors(), learner.metadata(it))

    try:
        if cfg.train.total_iterations == 0:
            learner = Learner(cfg.env, cfg.train, sharing)
        else:
            learner = train(cfg.env, cfg.train, sharing=sharing, callback=on_iteration).learner
    except Exception as exc:  # partial metrics are already on disk
        log.error("training failed after %d iterations: %s", len(reports), exc)
        write_metrics(metrics, reports, seed)
        return 1
    save_checkpoint(out / "final.ckpt", learner.state_tensors(), learner.metadata(len(reports)))
    print(f"wrote {metrics} ({len(reports)} iterations)")
    return 0


# ---- eval --------------------------------------------------------------------

def learner_from_checkpoint(path: str | Path) -> Learner:
    p = Path(path)
    if not p.is_file():
        raise config.ConfigError(f"checkpoint not found: {p}")
    try:
        tensors, meta = load_checkpoint(p)
        env = EnvConfig(**meta["env"])
        cfg = TrainConfig(**meta["train"])
        learner = Learner(env, cfg, meta.get("sharing", "learned"))
        learner.load_tensors(tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise config.ConfigError(f"incompatible checkpoint {p}: {exc}") from exc
    return learner


def cmd_eval(args) -> int:
    learner = learner_from_checkpoint(args.checkpoint)
    if args.episodes < 0:
        raise UsageError("--episodes must be nonnegative")
    render_dir = Path(args.render) if args.render else None
    if render_dir is not None:
        render_dir.mkdir(parents=True, exist_ok=True)

    def write_frame(b, t, state):
        write_ppm(render_dir / f"ep{b:04d}_t{t:04d}.ppm", learner.env.render(state))

    batch = evaluate(learner, args.episodes, observer=write_frame if render_dir is not None else None)
    print(f"episodes {max(args.episodes, 0)}")
    if batch is None:
        return 0
    rewards = batch.rewards.numpy().sum(1).mean(0)
    shaped = batch.shaped.numpy().sum(1).mean(0)
    for i in range(learner.N):
        print(f"agent {i} extrinsic {fmt(rewards[i])} shaped {fmt(shaped[i])}")
    print(f"steps_per_episode {fmt(float(batch.lengths.mean()))}")
    return 0


# ---- analyze-ipd -------------------------------------------------------------

def cmd_analyze_ipd(args) -> int:
    if not 0.0 < args.gamma < 1.0:
        raise UsageError(f"--gamma must lie in (0, 1), got {args.gamma}")
    state = analyzer.AnalyzerState(args.theta1, args.theta2, tuple(args.w1), tuple(args.w2),
                                   args.zeta, args.beta, args.gamma)
    states = analyzer.run_dynamics(state, args.rounds, args.policy_steps)
    grid = analyzer.emit_vector_field(args.w1, args.w2, args.grid, args.zeta, args.gamma)
    analyzer.write_field_csv(args.field_out, grid)
    analyzer.write_trajectory_csv(args.traj_out, states)
    last = states[-1]
    print(f"rounds {args.rounds} theta1 {fmt(last.theta1)} theta2 {fmt(last.theta2)} "
          f"cooperation {analyzer.converged_to_cooperation(states)}")
    return 0


# ---- aggregate ---------------------------------------------------------------

def cmd_aggregate(args) -> int:
    groups: dict[tuple[int, int], list[list[float]]] = defaultdict(list)
    for path in args.inputs:
        p = Path(path)
        if not p.is_file():
            raise config.ConfigError(f"metrics file not found: {p}")
        with p.open() as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != METRICS_HEADER:
                raise config.ConfigError(f"{p} does not have the metrics header")
            for row in reader:
                groups[(int(row[0]), int(row[2]))].append([float(v) for v in row[3:]])
    names = METRICS_HEADER[3:]
    header = ["iteration", "agent_id", "num_seeds"] + [f"{n}_{s}" for n in names for s in ("mean", "std")]
    rows = []
    for (it, agent), vals in sorted(groups.items()):
        arr = np.asarray(vals)
        stats = [float(x) for pair in zip(arr.mean(0), arr.std(0)) for x in pair]
        rows.append([it, agent, len(vals), *stats])
    atomic_write_text(Path(args.out), csv_text(header, rows))
    print(f"wrote {args.out} ({len(rows)} rows from {len(args.inputs)} files)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resvo", description="Reward-sharing role emergence experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train agents from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--baseline", choices=["no_sharing", "fixed_prosocial"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--render", help="directory for one PPM frame per step")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-ipd", help="closed-form prisoner's dilemma dynamics")
    p.add_argument("--theta1", type=float, default=0.5)
    p.add_argument("--theta2", type=float, default=0.5)
    p.add_argument("--w1", type=float, nargs=4, default=[1.0, 0.0, 1.0, 0.0])
    p.add_argument("--w2", type=float, nargs=4, default=[0.0, 1.0, 0.0, 1.0])
    p.add_argument("--rounds", type=int, default=500)
    p.add_argument("--policy-steps", type=int, default=10)
    p.add_argument("--zeta", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--field-out", default="field.csv")
    p.add_argument("--traj-out", default="trajectory.csv")
    p.set_defaults(func=cmd_analyze_ipd)

    p = sub.add_parser("aggregate", help="mean and std of metrics across seeds")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, config.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

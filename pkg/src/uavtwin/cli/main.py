"""``uavtwin`` command-line front end.

Exit codes: 0 success, 2 configuration error, 3 runtime error,
4 ledger invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path
from typing import Sequence, TextIO

from .. import __version__
from ..env import EnvError
from ..ledger import (
    TIMELINE_COLUMNS,
    EnvHooks,
    InvariantViolation,
    LedgerError,
    TaskSpec,
    simulate,
)
from ..ppo import PPOError, greedy_rollout, train
from ..ppo.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ..scaling import VARIABLES, run_probe
from ..scene import SceneError, save_scene
from ..sweep import lattice, sweep
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .plots import render_training_plots

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INVARIANT = 0, 2, 3, 4


def episode_columns(n_receivers: int) -> list[str]:
    return (
        ["episode", "return"]
        + [f"sinr_db_r{i + 1}" for i in range(n_receivers)]
        + [f"capacity_r{i + 1}" for i in range(n_receivers)]
        + ["capacity_sum", "policy_loss", "value_loss", "entropy"]
    )


def sweep_columns(n_receivers: int) -> list[str]:
    return ["ix", "iy", "iz", "x", "y", "z", "reward"] + [f"sinr_db_r{i + 1}" for i in range(n_receivers)]


def _num(v: float) -> str:
    return repr(float(v))


def parse_grid(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"grid must look like NXxNYxNZ, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigError(f"grid needs three dimensions >= 1, got {text!r}")
    return dims  # type: ignore[return-value]


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_reports(reward: float, position, reports, stream: TextIO) -> None:
    print(f"position: {position.x:.2f} {position.y:.2f} {position.z:.2f}", file=stream)
    for r in reports:
        print(f"receiver {r.receiver + 1}: sinr_db={r.sinr_db:.4f} capacity_bps={r.capacity:.1f}", file=stream)
    print(f"total_reward: {reward!r}", file=stream)


# -- subcommands ----------------------------------------------------------


def cmd_scene_gen(cfg: RunConfig, args, stream: TextIO) -> int:
    scene = cfg.build_scene()
    path = Path(args.path) if args.path else _out_dir(cfg) / "scene.txt"
    save_scene(scene, path)
    print(f"scene: {path}", file=stream)
    print(f"buildings: {len(scene.buildings)}", file=stream)
    print(f"receivers: {scene.n_receivers}", file=stream)
    print(f"complexity_L: {scene.complexity}", file=stream)
    return EXIT_OK


def cmd_train(cfg: RunConfig, args, stream: TextIO) -> int:
    env = cfg.build_env()
    out = _out_dir(cfg)
    n_rx = env.scene.n_receivers
    columns = episode_columns(n_rx)
    rows: list[dict] = []
    with open(out / "episodes.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        fh.flush()

        def record(m) -> None:
            values = [m.episode, _num(m.episode_return)]
            values += [_num(v) for v in m.sinr_db] + [_num(v) for v in m.capacity]
            values += [_num(m.capacity_sum), _num(m.policy_loss), _num(m.value_loss), _num(m.entropy)]
            writer.writerow(values)
            fh.flush()
            rows.append(dict(zip(columns, values)))

        result = train(env, cfg.hyperparams(), cfg.shape(), on_episode=record)
    save_checkpoint(result.network, out / "policy.ckpt")
    print(f"episodes: {len(rows)}", file=stream)
    print(f"episodes_csv: {out / 'episodes.csv'}", file=stream)
    print(f"checkpoint: {out / 'policy.ckpt'}", file=stream)
    if cfg.output.plots:
        for p in render_training_plots(rows, n_rx, out):
            print(f"plot: {p}", file=stream)
    g = greedy_rollout(result.network, env)
    _print_reports(g.best_reward, g.best_position, g.best_reports, stream)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args, stream: TextIO) -> int:
    path = Path(args.checkpoint) if args.checkpoint else Path(cfg.output.dir) / "policy.ckpt"
    net = load_checkpoint(path)
    want = cfg.shape()
    diffs = [
        f"{name}: checkpoint {getattr(net.shape, name)}, config {getattr(want, name)}"
        for name in ("input_dim", "hidden_layers", "width", "action_dim")
        if getattr(net.shape, name) != getattr(want, name)
    ]
    if diffs:
        raise ConfigError("checkpoint shape mismatch: " + "; ".join(diffs))
    env = cfg.build_env()
    g = greedy_rollout(net, env)
    _print_reports(g.best_reward, g.best_position, g.best_reports, stream)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args, stream: TextIO) -> int:
    nx, ny, nz = parse_grid(args.grid)
    env = cfg.build_env()
    result = sweep(env, nx, ny, nz)
    out = _out_dir(cfg)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(sweep_columns(env.scene.n_receivers))
        for r in result.rows:
            writer.writerow(
                [r.ix, r.iy, r.iz, _num(r.position.x), _num(r.position.y), _num(r.position.z), _num(r.reward)]
                + [_num(rep.sinr_db) for rep in r.reports]
            )
    best = result.best
    print(f"lattice: {nx}x{ny}x{nz} ({len(result.rows)} points)", file=stream)
    print(f"sweep_csv: {out / 'sweep.csv'}", file=stream)
    print(f"argmax_index: {best.ix} {best.iy} {best.iz}", file=stream)
    _print_reports(best.reward, best.position, best.reports, stream)
    return EXIT_OK


def ledger_workload(cfg: RunConfig, scene) -> list[TaskSpec]:
    """Task specs made of consecutive batches of an 11x11x5 lattice."""
    pts = [tuple(p) for *_, p in lattice(scene.bounds, 11, 11, 5)]
    k = cfg.ledger.positions_per_task
    return [TaskSpec("scene", "radio", tuple(pts[i : i + k])) for i in range(0, len(pts), k)]


def cmd_ledger_sim(cfg: RunConfig, args, stream: TextIO) -> int:
    scene = cfg.build_scene()
    e = cfg.env
    hooks = EnvHooks({"scene": scene}, {"radio": cfg.radio}, step_size=e.step_size, reward_scale=e.reward_scale)
    out = _out_dir(cfg)
    result = simulate(cfg.sim_config(), cfg.ledger_config(), hooks, ledger_workload(cfg, scene), cfg.seed)
    (out / "events.log").write_bytes(result.ledger.event_log())
    with open(out / "timeline.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMELINE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(result.timeline())
    lines = result.audit.lines() + [
        f"rejected_submissions: {result.rejected_submissions}",
        f"notifications: {len(result.notifications)}",
        f"state_hash: {result.ledger.state_hash()}",
    ]
    (out / "audit.txt").write_text("\n".join(lines) + "\n")
    print(f"event_log: {out / 'events.log'}", file=stream)
    print(f"timeline_csv: {out / 'timeline.csv'}", file=stream)
    for line in lines:
        print(line, file=stream)
    return EXIT_OK


def cmd_probe(cfg: RunConfig, args, stream: TextIO) -> int:
    try:
        values = [int(v) for v in args.values.split(",")]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if len(values) < 3:
        raise ConfigError(f"--values needs at least 3 sample values, got {len(values)}")
    if min(values) < 1:
        raise ConfigError(f"--values must all be >= 1, got {values}")
    scene_cfg = cfg.scene

    def env_for(r):
        if r is None:
            return cfg.build_env()
        return dataclasses.replace(cfg, scene=dataclasses.replace(scene_cfg, n_receivers=r)).build_env()

    report = run_probe(args.var, values, env_for, cfg.hyperparams(), cfg.shape())
    out = _out_dir(cfg)
    keys = list(report.points[0].counters)
    with open(out / "probe.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([args.var] + keys)
        for p in report.points:
            writer.writerow([p.value] + [p.counters[k] for k in keys])
    print(f"variable: {report.variable}", file=stream)
    print(f"counter: {report.counter}", file=stream)
    for p in report.points:
        print(f"{report.variable}={p.value}: {report.counter}={p.counters[report.counter]}", file=stream)
    print(f"loglog_slope: {report.slope:.4f}", file=stream)
    print(f"probe_csv: {out / 'probe.csv'}", file=stream)
    return EXIT_OK


COMMANDS = {
    "scene-gen": cmd_scene_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ledger-sim": cmd_ledger_sim,
    "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (overrides the file)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (overrides the file)")
    common.add_argument(
        "--set", action="append", default=argparse.SUPPRESS, metavar="SECTION.KEY=VALUE",
        help="override one config value; repeatable",
    )
    parser = argparse.ArgumentParser(prog="uavtwin", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("scene-gen", parents=[common], help="generate a scene file")
    p.add_argument("--path", help="scene file to write (default: <out>/scene.txt)")
    sub.add_parser("train", parents=[common], help="train the PPO agent")
    p = sub.add_parser("eval", parents=[common], help="greedy rollout of a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path (default: <out>/policy.ckpt)")
    p = sub.add_parser("sweep", parents=[common], help="brute-force lattice search")
    p.add_argument("--grid", default="11x11x5", help="lattice size NXxNYxNZ (default 11x11x5)")
    sub.add_parser("ledger-sim", parents=[common], help="simulate the compute marketplace ledger")
    p = sub.add_parser("probe", parents=[common], help="fit cost-model scaling slopes")
    p.add_argument("--var", choices=VARIABLES, required=True, help="variable to sweep")
    p.add_argument("--values", required=True, help="comma-separated values, at least 3")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    cfg = apply_overrides(cfg, getattr(args, "set", []) or [])
    if hasattr(args, "seed"):
        cfg = apply_overrides(cfg, [f"seed={args.seed}"])
    if hasattr(args, "out"):
        cfg = dataclasses.replace(cfg, output=dataclasses.replace(cfg.output, dir=args.out))
    return cfg.validate()


def main(argv: Sequence[str] | None = None, stream: TextIO | None = None) -> int:
    stream = stream if stream is not None else sys.stdout
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args, stream)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (PPOError, EnvError, SceneError, CheckpointError, LedgerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

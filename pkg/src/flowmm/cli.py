"""Operator surface: the five pipeline commands.

    flowmm gen-data   build the scenario grid, run expert tournaments, collect
                      demonstrations, persist the dataset
    flowmm train      imitation pre-training of the flow chunk policy
    flowmm finetune   noise-space PPO against the frozen expert
                      (--direct trains the per-step PPO baseline instead)
    flowmm eval       four-mode benchmark table (closed-form experts, random,
                      optional learned policies)
    flowmm bench-latency   inference cost per executed action

Every command resolves its settings (defaults, optional keyed-text config
file, command-line overrides), echoes them into the output directory, and is
byte-reproducible for a fixed seed; timing output is excluded.
``FINFLOW_THREADS`` caps worker processes where a command can parallelize.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import evaluation as ev
from . import meanflow as mf
from . import rl
from .env import ScenarioConfig, config_from_text, config_to_text, with_overrides
from .errors import FlowMMError, InputError
from .experts import (
    ASStrategy,
    GLFTDriftStrategy,
    GLFTStrategy,
    RandomStrategy,
    calibrated_params,
)
from .seeding import make_rng

DEFAULT_RANDOM_RANGE = 10.0


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FINFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _load_base_config(path) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return config_from_text(Path(path).read_text())


def _echo_config(out_dir: Path, command: str, settings: dict) -> None:
    lines = [f"command = {command}"]
    for key in sorted(settings):
        lines.append(f"{key} = {settings[key]!r}")
    (out_dir / "config_resolved.txt").write_text("\n".join(lines) + "\n")


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    base = _load_base_config(args.config)
    workers = worker_count()
    _echo_config(out, "gen-data", {
        "seed": args.seed, "episodes": args.episodes,
        "tournament_episodes": args.tournament_episodes, "workers": workers,
        "base_config": config_to_text(base).strip().replace("\n", "; "),
    })
    grid = ds_mod.build_scenario_grid(base)
    dataset, outcomes = ds_mod.generate_dataset(
        collect_episodes=args.episodes,
        tournament_episodes=args.tournament_episodes,
        seed=args.seed,
        grid=grid,
        workers=workers,
    )
    ds_mod.save_dataset(out / "dataset.bin", dataset)
    (out / "winners.csv").write_text(ds_mod.winners_csv_text(outcomes, grid))
    print(
        f"gen-data: {len(grid)} scenarios, {len(dataset)} records -> {out / 'dataset.bin'}"
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    out = _out_dir(args)
    data_path = Path(args.data)
    if not data_path.exists():
        raise InputError(f"dataset not found: {data_path}")
    _echo_config(out, "train", {
        "seed": args.seed, "data": str(data_path), "steps": args.steps,
        "batch_size": args.batch_size, "learning_rate": args.lr,
        "hidden": args.hidden, "cond_hidden": args.cond_hidden, "t_exec": args.t_exec,
    })
    dataset = ds_mod.load_dataset(data_path)
    model, log = mf.train_flow_model(
        dataset,
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        hidden=args.hidden,
        cond_hidden=args.cond_hidden,
        t_exec=args.t_exec,
    )
    ckpt = out / "meanflow.ckpt"
    mf.save_flow_model(ckpt, model)
    lines = ["step,smoothed_loss"] + [f"{s},{loss!r}" for s, loss in log]
    (out / "train_log.csv").write_text("\n".join(lines) + "\n")
    print(f"train: {args.steps} steps, final smoothed loss {log[-1][1]:.6g} -> {ckpt}")
    return 0


# ---------------------------------------------------------------------------
# finetune
# ---------------------------------------------------------------------------

def cmd_finetune(args) -> int:
    out = _out_dir(args)
    base = _load_base_config(args.config)
    if args.mode != "custom":
        config = ev.mode_config(args.mode)
    else:
        config = base
    hyper = rl.PPOHyper(learning_rate=args.lr, entropy_coeff=args.entropy_coeff)
    settings = {
        "seed": args.seed, "mode": args.mode, "updates": args.updates,
        "envs": args.envs, "chunks_per_env": args.chunks, "learning_rate": args.lr,
        "entropy_coeff": args.entropy_coeff, "direct": args.direct,
        "expert": args.expert,
    }
    _echo_config(out, "finetune", settings)
    if args.direct:
        policy, value, transform, rows = rl.train_direct_ppo(
            config, hyper, updates=args.updates, n_envs=args.envs,
            steps_per_env=args.chunks, seed=args.seed,
        )
        ckpt = out / "direct.ckpt"
        rl.save_direct_bundle(ckpt, policy, value, transform.scaler)
    else:
        if args.expert is None:
            raise InputError("finetune requires --expert (meanflow checkpoint)")
        model = mf.load_flow_model(args.expert)
        expert_hash = _file_hash(args.expert)
        policy, value, rows = rl.finetune(
            config, model, hyper, updates=args.updates, n_envs=args.envs,
            chunks_per_env=args.chunks, seed=args.seed,
        )
        ckpt = out / "finetune.ckpt"
        rl.save_finetune_bundle(ckpt, policy, value, expert_hash, model)
    (out / "finetune_log.csv").write_text(rl.train_log_csv_text(rows))
    print(
        f"finetune: {args.updates} updates, mean chunk reward "
        f"{rows[-1].mean_chunk_reward:.4f} -> {ckpt}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    out = _out_dir(args)
    modes = ev.MODE_NAMES if args.mode == "all" else (args.mode,)
    settings = {
        "seed": args.seed, "mode": args.mode, "episodes": args.episodes,
        "random_range": args.random_range, "expert": args.expert,
        "policy": args.policy, "direct": args.direct, "plot_data": args.plot_data,
    }
    _echo_config(out, "eval", settings)

    model = mf.load_flow_model(args.expert) if args.expert else None
    ft = None
    if args.policy:
        if model is None:
            raise InputError("--policy needs --expert for the frozen generator")
        policy, _, meta = rl.load_finetune_bundle(args.policy)
        if meta["expert_hash"] != _file_hash(args.expert):
            raise InputError("finetune bundle was trained against a different expert checkpoint")
        ft = policy
    direct = rl.load_direct_bundle(args.direct) if args.direct else None

    all_cells = []
    paths_rows = []
    for m, mode in enumerate(modes):
        config = ev.mode_config(mode)
        as_p, glft_p = calibrated_params(config)
        strategies = [
            RandomStrategy(args.random_range),
            ASStrategy(as_p),
            GLFTStrategy(glft_p),
            GLFTDriftStrategy(glft_p),
        ]
        if model is not None:
            strategies.append(rl.FlowPolicyStrategy(model, "sample"))
        if ft is not None:
            strategies.append(rl.FlowPolicyStrategy(model, "policy", policy=ft))
        if direct is not None:
            d_policy, d_transform = direct
            strategies.append(rl.DirectPolicyStrategy(d_policy, d_transform))
        report = ev.run_benchmark(
            strategies, modes=(mode,), episodes=args.episodes, seed=args.seed,
            keep_wealth=args.plot_data,
        )
        all_cells.extend(report.cells)
        if args.plot_data:
            for (mode_name, strat), wp in report.wealth_paths.items():
                for e in range(wp.shape[0]):
                    paths_rows.append(
                        mode_name + "," + strat + "," + str(e) + ","
                        + ",".join(repr(x) for x in wp[e])
                    )
    merged = ev.BenchmarkReport(cells=all_cells, episodes=args.episodes, seed=args.seed)
    (out / "report.csv").write_text(merged.to_csv_text())
    (out / "report.json").write_text(merged.to_json_text())
    if args.plot_data:
        (out / "wealth_paths.csv").write_text(
            "mode,strategy,episode,wealth...\n" + "\n".join(paths_rows) + "\n"
        )
    print(merged.to_csv_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# bench-latency
# ---------------------------------------------------------------------------

def bench_latency(policy, model, iterations, seed=0, warmup=200):
    """Time deterministic chunk inference. Returns a dict of microseconds.

    Cost per executed action is the per-call cost divided by the number of
    actions each call commits to (t_exec).
    """
    rng = make_rng(seed, 7)
    stats = model.stats
    pool = stats.obs_mean + stats.obs_std * rng.standard_normal((256, model.t_obs, 5))
    for i in range(warmup):
        rl.infer_chunk(policy, model, pool[i % 256])
    times = np.empty(iterations)
    clock = time.perf_counter_ns
    for i in range(iterations):
        w = pool[i % 256]
        t0 = clock()
        rl.infer_chunk(policy, model, w)
        times[i] = clock() - t0
    per_call_us = times / 1000.0
    mean_call = float(per_call_us.mean())
    p99_call = float(np.percentile(per_call_us, 99))
    return {
        "iterations": iterations,
        "t_exec": model.t_exec,
        "mean_us_per_call": mean_call,
        "p99_us_per_call": p99_call,
        "mean_us_per_action": mean_call / model.t_exec,
        "p99_us_per_action": p99_call / model.t_exec,
    }


def cmd_bench_latency(args) -> int:
    out = _out_dir(args)
    if args.expert is None or args.policy is None:
        raise InputError("bench-latency requires --expert and --policy checkpoints")
    model = mf.load_flow_model(args.expert)
    policy, _, _ = rl.load_finetune_bundle(args.policy)
    _echo_config(out, "bench-latency", {
        "seed": args.seed, "iterations": args.iterations,
        "expert": args.expert, "policy": args.policy,
    })
    result = bench_latency(policy, model, args.iterations, seed=args.seed)
    text = (
        f"iterations = {result['iterations']}\n"
        f"t_exec = {result['t_exec']}\n"
        f"mean_us_per_call = {result['mean_us_per_call']:.3f}\n"
        f"p99_us_per_call = {result['p99_us_per_call']:.3f}\n"
        f"mean_us_per_action = {result['mean_us_per_action']:.3f}\n"
        f"p99_us_per_action = {result['p99_us_per_action']:.3f}\n"
    )
    (out / "latency.txt").write_text(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=str, default="out")

    p = sub.add_parser("gen-data", help="build grid, run tournaments, collect dataset")
    common(p)
    p.add_argument("--config", type=str, default=None, help="keyed-text base scenario overrides")
    p.add_argument("--episodes", type=int, default=100, help="collection episodes per scenario")
    p.add_argument("--tournament-episodes", type=int, default=16)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="imitation pre-training")
    common(p)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--cond-hidden", type=int, default=64)
    p.add_argument("--t-exec", type=int, default=ds_mod.T_EXEC)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="noise-space PPO (or --direct baseline)")
    common(p)
    p.add_argument("--expert", type=str, default=None, help="meanflow checkpoint")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--mode", type=str, default="LL",
                   choices=("HH", "HL", "LH", "LL", "custom"))
    p.add_argument("--updates", type=int, default=300)
    p.add_argument("--envs", type=int, default=16)
    p.add_argument("--chunks", type=int, default=13, help="chunks (or steps) per env per update")
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--entropy-coeff", type=float, default=0.01)
    p.add_argument("--direct", action="store_true", help="train the direct-action baseline")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="four-mode benchmark table")
    common(p)
    p.add_argument("--mode", type=str, default="all", choices=("HH", "HL", "LH", "LL", "all"))
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--random-range", type=float, default=DEFAULT_RANDOM_RANGE)
    p.add_argument("--expert", type=str, default=None)
    p.add_argument("--policy", type=str, default=None)
    p.add_argument("--direct", type=str, default=None)
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-latency", help="inference microseconds per executed action")
    common(p)
    p.add_argument("--expert", type=str, required=True)
    p.add_argument("--policy", type=str, required=True)
    p.add_argument("--iterations", type=int, default=1_000_000)
    p.set_defaults(func=cmd_bench_latency)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FlowMMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands:
  simulate      run baseline schedulers on a scenario (no training)
  train         train the vote-based scheduler, then evaluate it
  evaluate      evaluate any scheduler (the trained one needs a checkpoint)
  sweep         repeat an evaluation across values of M, N, L, K, or z
  transfer      perturb a scenario and retrain from a warm start
  action-space  tabulate combinatorial vs linear action counts

Every run writes a manifest.json recording the resolved scenario and seeds,
plus CSV outputs (results.csv / training_log.csv / trace.csv) into --out.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from relaysched.config import ConfigError, MODES
from relaysched.env import AoiEnv
from relaysched.harness import (
    PERTURB_KINDS,
    SCHEDULERS,
    ExperimentSpec,
    analyze_action_space,
    make_decider,
    run_eval,
    run_stack_study,
    run_sweep,
    run_trace,
    run_transfer,
    scenario_payload,
    spec_from_config,
    topology_for,
    training_env_factory,
    write_manifest,
    write_results_csv,
    write_trace_csv,
    write_training_log,
)
from relaysched.vppo import TRANSFER_MODES, TrainConfig, load_policy, save_policy, train

__all__ = ["main"]

BASELINES = tuple(s for s in SCHEDULERS if s != "vppo")


class CliError(Exception):
    """Usage-level failure: bad flags, missing files, infeasible requests."""


def _parse_int_list(text: str, flag: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise CliError(f"{flag} expects comma-separated integers, got {text!r}") from exc
    if not values:
        raise CliError(f"{flag} expects at least one value")
    return values


def _parse_points(text: str) -> list[tuple[int, int, int, int]]:
    points = []
    for chunk in text.split(","):
        parts = chunk.split(":")
        if len(parts) != 4:
            raise CliError(
                f"--points expects M:N:L:K tuples separated by commas, got {chunk!r}"
            )
        try:
            points.append(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise CliError(f"non-integer entry in --points: {chunk!r}") from exc
    return points


def _out_dir(args, command: str) -> str:
    out = args.out or os.path.join("runs", command)
    os.makedirs(out, exist_ok=True)
    return out


def _spec(args, scheduler: str, **extra) -> ExperimentSpec:
    if args.config is None:
        raise CliError("--config is required")
    seeds = _parse_int_list(args.seed, "--seed")
    try:
        return spec_from_config(
            args.config,
            args.env_mode,
            scheduler=scheduler,
            seeds=seeds,
            episodes=args.episodes,
            z=args.z,
            **extra,
        )
    except FileNotFoundError as exc:
        raise CliError(f"scenario file not found: {args.config}") from exc
    except ConfigError as exc:
        raise CliError(f"bad scenario: {exc}") from exc


def _train_cfg(args, seed: int) -> TrainConfig:
    return TrainConfig(
        gamma=args.gamma,
        clip_eps=args.clip_eps,
        learning_rate=args.lr,
        epochs=args.epochs,
        minibatch_size=args.minibatch,
        buffer_size=args.buffer,
        value_coef=args.value_coef,
        entropy_coef=args.entropy_coef,
        total_episodes=args.train_episodes,
        z=args.z,
        seed=seed,
        checkpoint_every=args.checkpoint_every,
    )


def _print_rows(rows) -> None:
    for row in rows:
        label = (
            f" {row.sweep_var}={row.sweep_value}" if row.sweep_var else ""
        )
        print(
            f"{row.scheduler:>8}{label} seed={row.seed} "
            f"mean_aoi_tbs={row.mean_aoi_tbs:.4f} "
            f"mean_aoi_relay={row.mean_aoi_relay:.4f} "
            f"episodes={row.episodes}"
        )


def _write_first_episode_trace(path, spec, topo, scheduler, policy=None) -> None:
    env = AoiEnv(
        topo,
        z=spec.z,
        horizon=spec.horizon,
        seed=np.random.SeedSequence((spec.seeds[0], 0)),
    )
    decider = make_decider(scheduler, topo, spec.seeds[0], policy=policy)
    write_trace_csv(path, run_trace(env, decider))


def _load_checkpoint_arg(args, scenario_M: int):
    if not getattr(args, "checkpoint", None):
        return None
    try:
        policy = load_policy(args.checkpoint)
    except FileNotFoundError as exc:
        raise CliError(f"checkpoint not found: {args.checkpoint}") from exc
    if policy.n_devices != scenario_M:
        raise CliError(
            f"checkpoint was trained for {policy.n_devices} devices, "
            f"scenario has {scenario_M}"
        )
    return policy


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    if args.scheduler == "vppo":
        raise CliError("simulate runs baselines only; use train/evaluate for vppo")
    schedulers = BASELINES if args.scheduler == "all" else (args.scheduler,)
    spec = _spec(args, schedulers[0])
    out = _out_dir(args, "simulate")
    topo = topology_for(spec.scenario)
    rows = []
    for scheduler in schedulers:
        rows.extend(run_eval(spec, scheduler=scheduler, topo=topo))
    write_results_csv(os.path.join(out, "results.csv"), rows)
    _write_first_episode_trace(
        os.path.join(out, "trace.csv"), spec, topo, schedulers[0]
    )
    write_manifest(
        os.path.join(out, "manifest.json"),
        {
            "command": "simulate",
            "config_path": spec.config_path,
            "mode": spec.mode,
            "schedulers": list(schedulers),
            "seeds": list(spec.seeds),
            "episodes": spec.episodes,
            "scenario": scenario_payload(spec.scenario, topo),
            "outputs": ["results.csv", "trace.csv", "manifest.json"],
        },
    )
    _print_rows(rows)
    print(f"wrote {out}/results.csv")
    return 0


def _cmd_train(args) -> int:
    if args.scheduler not in (None, "vppo"):
        raise CliError("train only fits the vppo scheduler")
    spec = _spec(args, "vppo")
    out = _out_dir(args, "train")
    topo = topology_for(spec.scenario)
    train_seed = args.train_seed if args.train_seed is not None else spec.seeds[0]
    cfg = _train_cfg(args, train_seed)
    policy, log_rows = train(
        training_env_factory(topo, cfg.z, spec.horizon, cfg.seed),
        cfg,
        checkpoint_dir=out,
        progress=(
            (lambda row: print(
                f"iter {row['iteration']:>4} episodes {row['episodes_seen']:>6} "
                f"aoi_tbs {row['mean_aoi_tbs']:.4f}", flush=True
            ))
            if args.verbose
            else None
        ),
    )
    write_training_log(os.path.join(out, "training_log.csv"), log_rows)
    rows = run_eval(spec, policy=policy, topo=topo)
    write_results_csv(os.path.join(out, "results.csv"), rows)
    _write_first_episode_trace(
        os.path.join(out, "trace.csv"), spec, topo, "vppo", policy=policy
    )
    write_manifest(
        os.path.join(out, "manifest.json"),
        {
            "command": "train",
            "config_path": spec.config_path,
            "mode": spec.mode,
            "seeds": list(spec.seeds),
            "episodes": spec.episodes,
            "train_config": dataclasses.asdict(cfg),
            "scenario": scenario_payload(spec.scenario, topo),
            "outputs": [
                "checkpoint_final.npz",
                "training_log.csv",
                "results.csv",
                "trace.csv",
                "manifest.json",
            ],
        },
    )
    _print_rows(rows)
    print(f"wrote {out}/checkpoint_final.npz")
    return 0


def _cmd_evaluate(args) -> int:
    scheduler = args.scheduler or "vppo"
    spec = _spec(args, scheduler)
    policy = _load_checkpoint_arg(args, spec.scenario.M)
    if scheduler == "vppo" and policy is None:
        raise CliError("evaluating the trained scheduler needs --checkpoint")
    out = _out_dir(args, "evaluate")
    topo = topology_for(spec.scenario)
    rows = run_eval(spec, policy=policy, topo=topo)
    write_results_csv(os.path.join(out, "results.csv"), rows)
    _write_first_episode_trace(
        os.path.join(out, "trace.csv"), spec, topo, scheduler, policy=policy
    )
    write_manifest(
        os.path.join(out, "manifest.json"),
        {
            "command": "evaluate",
            "config_path": spec.config_path,
            "mode": spec.mode,
            "scheduler": scheduler,
            "checkpoint": args.checkpoint,
            "seeds": list(spec.seeds),
            "episodes": spec.episodes,
            "scenario": scenario_payload(spec.scenario, topo),
            "outputs": ["results.csv", "trace.csv", "manifest.json"],
        },
    )
    _print_rows(rows)
    print(f"wrote {out}/results.csv")
    return 0


def _cmd_sweep(args) -> int:
    scheduler = args.scheduler or "maf_mad"
    values = _parse_int_list(args.values, "--values")
    out = _out_dir(args, "sweep")
    if args.var == "z":
        if scheduler != "vppo":
            raise CliError("a z sweep retrains the policy; it requires --scheduler vppo")
        spec = _spec(args, scheduler)
        cfg = _train_cfg(args, args.train_seed if args.train_seed is not None else spec.seeds[0])
        studies = run_stack_study(spec.scenario, values, cfg)
        topo = topology_for(spec.scenario)
        rows = []
        for z, (policy, log_rows) in studies.items():
            write_training_log(os.path.join(out, f"training_log_z{z}.csv"), log_rows)
            save_policy(os.path.join(out, f"checkpoint_z{z}.npz"), policy)
            spec_z = dataclasses.replace(spec, z=z)
            rows.extend(
                run_eval(spec_z, policy=policy, topo=topo, sweep_var="z", sweep_value=str(z))
            )
        write_results_csv(os.path.join(out, "results.csv"), rows)
        outputs = ["results.csv"] + [f"training_log_z{z}.csv" for z in studies]
    else:
        spec = _spec(args, scheduler, sweep_var=args.var, sweep_values=values)
        policy = _load_checkpoint_arg(args, spec.scenario.M)
        if scheduler == "vppo" and policy is None:
            raise CliError("sweeping the trained scheduler needs --checkpoint")
        try:
            rows = run_sweep(spec, policy=policy)
        except (ValueError, ConfigError) as exc:
            raise CliError(str(exc)) from exc
        write_results_csv(os.path.join(out, "results.csv"), rows)
        outputs = ["results.csv"]
    write_manifest(
        os.path.join(out, "manifest.json"),
        {
            "command": "sweep",
            "config_path": args.config,
            "mode": args.env_mode,
            "scheduler": scheduler,
            "var": args.var,
            "values": list(values),
            "seeds": list(_parse_int_list(args.seed, "--seed")),
            "episodes": args.episodes,
            "scenario": scenario_payload(spec.scenario),
            "outputs": outputs + ["manifest.json"],
        },
    )
    _print_rows(rows)
    print(f"wrote {out}/results.csv")
    return 0


def _cmd_transfer(args) -> int:
    spec = _spec(args, "vppo")
    out = _out_dir(args, "transfer")
    pretrained = _load_checkpoint_arg(args, spec.scenario.M)
    if args.mode != "uninitialized" and pretrained is None:
        raise CliError(f"transfer mode {args.mode!r} needs --checkpoint")
    cfg = _train_cfg(args, args.train_seed if args.train_seed is not None else spec.seeds[0])
    try:
        policy, log_rows, topo_new, changed = run_transfer(
            spec, pretrained, args.mode, args.perturb, cfg
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    write_training_log(os.path.join(out, "training_log.csv"), log_rows)
    save_policy(os.path.join(out, "checkpoint_final.npz"), policy)
    rows = run_eval(spec, policy=policy, topo=topo_new,
                    sweep_var="transfer_mode", sweep_value=args.mode)
    write_results_csv(os.path.join(out, "results.csv"), rows)
    write_manifest(
        os.path.join(out, "manifest.json"),
        {
            "command": "transfer",
            "config_path": spec.config_path,
            "mode": spec.mode,
            "transfer_mode": args.mode,
            "perturb": args.perturb,
            "changed_devices": list(changed),
            "checkpoint": args.checkpoint,
            "seeds": list(spec.seeds),
            "train_config": dataclasses.asdict(cfg),
            "scenario": scenario_payload(spec.scenario, topo_new),
            "outputs": [
                "training_log.csv",
                "checkpoint_final.npz",
                "results.csv",
                "manifest.json",
            ],
        },
    )
    _print_rows(rows)
    print(f"wrote {out}/training_log.csv")
    return 0


def _cmd_action_space(args) -> int:
    points = _parse_points(args.points)
    rows = analyze_action_space(points)
    out = _out_dir(args, "action-space")
    path = os.path.join(out, "action_space.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["M", "N", "L", "K", "combinatorial", "linear"])
        for row in rows:
            writer.writerow(
                [row["M"], row["N"], row["L"], row["K"],
                 row["combinatorial"], row["linear"]]
            )
    write_manifest(
        os.path.join(out, "manifest.json"),
        {
            "command": "action-space",
            "points": [list(p) for p in points],
            "outputs": ["action_space.csv", "manifest.json"],
        },
    )
    print(f"{'M':>4} {'N':>3} {'L':>3} {'K':>3} {'combinatorial':>20} {'linear':>7}")
    for row in rows:
        print(
            f"{row['M']:>4} {row['N']:>3} {row['L']:>3} {row['K']:>3} "
            f"{row['combinatorial']:>20} {row['linear']:>7}"
        )
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser, env_mode_flag: str = "--mode") -> None:
    parser.add_argument("--config", help="scenario file (key = value lines)")
    parser.add_argument("--seed", default="0", help="comma-separated seed list")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        env_mode_flag,
        dest="env_mode",
        choices=MODES,
        default="practical",
        help="environment mode: ideal (lossless, generate-at-will) or "
        "practical (lossy, periodic)",
    )
    parser.add_argument("--episodes", type=int, default=200,
                        help="evaluation episodes per seed")
    parser.add_argument("--z", type=int, default=4,
                        help="observation stack depth")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--train-episodes", type=int, default=20_000)
    parser.add_argument("--buffer", type=int, default=2048)
    parser.add_argument("--minibatch", type=int, default=512)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--lr", type=float, default=2.5e-4)
    parser.add_argument("--gamma", type=float, default=0.99)
    parser.add_argument("--clip-eps", type=float, default=0.2)
    parser.add_argument("--value-coef", type=float, default=0.5)
    parser.add_argument("--entropy-coef", type=float, default=0.01)
    parser.add_argument("--train-seed", type=int, default=None,
                        help="training seed (default: first --seed)")
    parser.add_argument("--checkpoint-every", type=int, default=0,
                        help="iterations between checkpoints (0 = final only)")
    parser.add_argument("--verbose", action="store_true",
                        help="print per-iteration training progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaysched",
        description="Two-hop relay network age-of-information scheduling: "
        "baselines, a trainable vote-based scheduler, and experiment tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run baseline schedulers")
    _add_common(p)
    p.add_argument("--scheduler", default="all",
                   choices=BASELINES + ("all",))
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train the vote-based scheduler")
    _add_common(p)
    p.add_argument("--scheduler", default="vppo", choices=("vppo",))
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a scheduler")
    _add_common(p)
    p.add_argument("--scheduler", default="vppo", choices=SCHEDULERS)
    p.add_argument("--checkpoint", default=None,
                   help="policy file (required for vppo)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate across M, N, L, K, or z")
    _add_common(p)
    p.add_argument("--scheduler", default="maf_mad", choices=SCHEDULERS)
    p.add_argument("--var", required=True, choices=("M", "N", "L", "K", "z"))
    p.add_argument("--values", required=True,
                   help="comma-separated sweep values")
    p.add_argument("--checkpoint", default=None)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser(
        "transfer",
        help="perturb a scenario and retrain from a warm start "
        "(always runs in the practical environment)",
    )
    # here --mode selects the warm-start rule; the environment is practical
    p.add_argument("--config", help="scenario file (key = value lines)")
    p.add_argument("--seed", default="0", help="comma-separated seed list")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--z", type=int, default=4)
    p.add_argument("--mode", required=True, choices=TRANSFER_MODES,
                   help="warm-start rule for the retrain")
    p.add_argument("--perturb", required=True, choices=PERTURB_KINDS)
    p.add_argument("--checkpoint", default=None,
                   help="pretrained policy (required for explore/adapt)")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_transfer, env_mode="practical")

    p = sub.add_parser("action-space",
                       help="combinatorial vs linear action counts")
    p.add_argument("--points", required=True,
                   help="comma-separated M:N:L:K tuples")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_action_space)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: train, evaluate, replay.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
The output directory comes from the config file unless the
QUADRACE_OUTPUT_DIR environment variable overrides it. Every artifact
embeds the resolved config hash (provenance) and the compat hash
(environment/model contract); artifacts whose compat hashes disagree are
rejected rather than silently mixed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import (
    ConfigError,
    ExperimentConfig,
    build_env_factory,
    build_gae_config,
    build_obs_config,
    build_stages,
    build_track,
    compat_hash,
    config_hash,
    load_config,
    observation_scales,
    save_config,
)
from .evaluation import (
    EvalConfig,
    format_report,
    make_policy,
    records_to_csv,
    report_to_dict,
    run_evaluation,
)
from .learner import init_policy, save_policy
from .selfplay import CheckpointPool, run_stage
from .trajlog import TrajectoryLogError, TrajectoryWriter, export_plot_data

OUTPUT_DIR_ENV = "QUADRACE_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _output_dir(cfg: ExperimentConfig) -> Path:
    override = os.environ.get(OUTPUT_DIR_ENV)
    return Path(override) if override else Path(cfg.output_dir)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    full_hash = config_hash(cfg)
    chash = compat_hash(cfg)
    out = _output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.resolved.yaml")

    pool_dir = out / "pool"
    if args.resume:
        if not (pool_dir / "manifest.json").exists():
            raise ConfigError(f"--resume: no pool manifest under {pool_dir}")
        pool = CheckpointPool.load(pool_dir)
        if pool.config_hash and pool.config_hash != full_hash:
            raise ConfigError(
                f"--resume: pool was written under config {pool.config_hash}, "
                f"current config is {full_hash}"
            )
    else:
        pool = CheckpointPool(
            pool_dir, config_hash=full_hash, compat_hash=chash, scales=observation_scales(cfg)
        )
        pool.persist()

    env_factory = build_env_factory(cfg)
    obs_cfg = build_obs_config(cfg)
    gae_cfg = build_gae_config(cfg)
    stages = build_stages(cfg)
    if args.stage is not None:
        stages = [s for s in stages if s.stage == args.stage]
        if not stages:
            raise ConfigError(f"--stage {args.stage}: not in the configured schedule")

    if args.resume and len(pool) > 0:
        params = pool.best().params.copy()
    else:
        params = init_policy(
            obs_cfg.total_dim,
            hidden=tuple(cfg.learner.hidden),
            seed=cfg.seed,
            log_std_init=cfg.learner.log_std_init,
        )

    selfplay_on = cfg.selfplay.enabled and not args.no_selfplay
    logs_dir = out / "logs"
    logs_dir.mkdir(exist_ok=True)
    for stage in stages:
        progress = pool.stage_progress.get(str(stage.stage), {})
        if args.resume and progress.get("complete"):
            print(f"stage {stage.stage}: already complete, skipping")
            continue
        print(
            f"stage {stage.stage}: {stage.n_agents} agent(s), budget {stage.budget} steps, "
            f"self-play {'on' if selfplay_on else 'off'}"
        )
        params, pool, log = run_stage(
            stage,
            pool,
            params,
            gae_cfg,
            env_factory,
            seed=cfg.seed + stage.stage,
            n_envs=cfg.learner.n_envs,
            selfplay=selfplay_on,
            training_laps=cfg.selfplay.training_laps,
        )
        _write_stage_logs(logs_dir, stage.stage, log)
        pool.record_stage_progress(stage.stage, stage.budget, complete=True)
        last_gate = log.gates[-1] if log.gates else {}
        print(
            f"stage {stage.stage} done: pool size {len(pool)}, "
            f"last gate win_rate {last_gate.get('win_rate', float('nan')):.3f}"
        )

    final_path = out / "policy_final.npz"
    save_policy(
        final_path, params,
        config_hash=full_hash, compat_hash=chash, scales=observation_scales(cfg),
    )
    print(f"final policy: {final_path}")
    print(f"pool: {pool_dir} ({len(pool)} versions, best v{pool.best_version})")
    return 0


def _write_stage_logs(logs_dir: Path, stage: int, log) -> None:
    curve = logs_dir / f"stage{stage}_curve.csv"
    with open(curve, "w") as f:
        f.write("step,mean_episode_reward,loss,value_loss,entropy,clip_fraction,"
                "gate_win_rate,gate_success_ratio,gate_improved,pool_size\n")
        gates = {g["step"]: g for g in log.gates}
        for row in log.updates:
            g = gates.get(row["step"], {})
            f.write(
                f"{row['step']},{row.get('mean_episode_reward', float('nan'))},"
                f"{row.get('loss', '')},{row.get('value_loss', '')},"
                f"{row.get('entropy', '')},{row.get('clip_fraction', '')},"
                f"{g.get('win_rate', '')},{g.get('success_ratio', '')},"
                f"{'' if not g else int(g.get('improved', False))},{g.get('pool_size', '')}\n"
            )
    episodes = logs_dir / f"stage{stage}_episodes.csv"
    with open(episodes, "w") as f:
        f.write("step,env,return,length,laps,crashed,success\n")
        for ep in log.episodes:
            f.write(
                f"{ep['step']},{ep['env']},{ep['return']:.6f},{ep['length']},"
                f"{ep['laps']},{int(ep['crashed'])},{int(ep['success'])}\n"
            )


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    full_hash = config_hash(cfg)
    chash = compat_hash(cfg)
    ev = cfg.evaluation
    scenario = args.scenario or ev.scenario
    slots = args.slots.split(",") if args.slots else list(ev.slots)
    eval_cfg = EvalConfig(
        scenario=scenario,
        slots=tuple(slots),
        n_runs=args.runs if args.runs is not None else ev.n_runs,
        base_seed=args.seed if args.seed is not None else ev.base_seed,
        laps=ev.laps,
    )

    env_factory = build_env_factory(cfg)
    env = env_factory(
        n_agents=len(eval_cfg.slots), episode_laps=eval_cfg.laps, collect_infos=bool(args.trajlog)
    )
    track = build_track(cfg)
    obs_cfg = build_obs_config(cfg)
    policies = [
        make_policy(src, track, obs_cfg, env.policy_dt, cfg.controller.max_offset,
                    expected_compat_hash=chash)
        for src in eval_cfg.slots
    ]

    out = _output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    writer = None
    hook = None
    if args.trajlog:
        writer = TrajectoryWriter(out / "evaluation.trajlog.csv",
                                  config_hash=full_hash, compat_hash=chash)
        hook = writer.record_step
    try:
        records, report = run_evaluation(eval_cfg, env, policies,
                                         config_hash=full_hash, step_hook=hook)
    finally:
        if writer is not None:
            writer.close()

    text = format_report(report)
    (out / "report.txt").write_text(text)
    (out / "report.json").write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True))
    (out / "records.csv").write_text(records_to_csv(records))
    print(text, end="")
    print(f"wrote {out / 'report.txt'}, report.json, records.csv")
    return 0


def cmd_replay(args) -> int:
    log_path = Path(args.log)
    if not log_path.exists():
        raise ConfigError(f"trajectory log not found: {log_path}")
    out_dir = Path(args.export_plots) if args.export_plots else log_path.parent / "plots"
    written = export_plot_data(log_path, out_dir)
    for p in written:
        print(p)
    if not written:
        print("log holds no rows; nothing to export")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quadrace", description="Multi-drone gate racing: train, evaluate, replay.")
    p.add_argument("--version", action="version", version=f"quadrace {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the staged self-play training schedule")
    t.add_argument("config", help="path to the experiment config YAML")
    t.add_argument("--stage", type=int, default=None, help="run only this stage")
    t.add_argument("--resume", action="store_true", help="continue from the existing pool")
    t.add_argument("--no-selfplay", action="store_true",
                   help="baseline arm: fixed random opponent instead of the pool")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="run seeded evaluation episodes and write reports")
    e.add_argument("config", help="path to the experiment config YAML")
    e.add_argument("--scenario", choices=["solo", "1v1", "2v2"], default=None)
    e.add_argument("--slots", default=None,
                   help="comma-separated policy sources, one per drone slot")
    e.add_argument("--runs", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--trajlog", action="store_true", help="also write a trajectory log")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("replay", help="validate a trajectory log and export plot data")
    r.add_argument("log", help="path to a trajectory log")
    r.add_argument("--export-plots", default=None, metavar="DIR",
                   help="directory for the plot-data files (default: <log dir>/plots)")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrajectoryLogError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

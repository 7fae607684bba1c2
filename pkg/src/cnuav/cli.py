"""Command line interface: train / run / sweep / oracle / report.

Exit codes: 0 on success, 2 on configuration errors, 3 on runtime failures.
``CNUAV_LOG_LEVEL`` controls logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("cnuav")


def _setup_logging():
    level = os.environ.get("CNUAV_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_cfg(args):
    from cnuav.harness import ExperimentConfig, load_config
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "episodes", None) is not None:
        cfg.episodes = args.episodes
    if getattr(args, "preset", None):
        cfg.preset = args.preset
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def cmd_train(args) -> int:
    from cnuav.harness import build_environment, config_hash, save_model, train_model
    cfg = _load_cfg(args)
    streams = np.random.SeedSequence(cfg.seed).spawn(2)
    env = build_environment(cfg, cfg.num_multiplexed,
                            np.random.default_rng(streams[0]))
    model = train_model(cfg, env, np.random.default_rng(streams[1]))
    path = Path(args.model or Path(cfg.out_dir) / "model.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path, config_hash(cfg))
    print(f"model written to {path}")
    return 0


def cmd_run(args) -> int:
    from cnuav.harness import (load_model, run_active_inference, write_run_csv)
    cfg = _load_cfg(args)
    model = None
    if args.model:
        model = load_model(args.model, expect_subchannels=cfg.num_subchannels)
    record = run_active_inference(cfg, cfg.seed, cfg.num_multiplexed,
                                  model=model)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"run_m{cfg.num_multiplexed}_seed{cfg.seed}.csv"
    write_run_csv(record, path)
    print(f"run written to {path} "
          f"(final sum rate {record.sum_rate_bps[-1]:.6g} bits/s)")
    return 0


def cmd_sweep(args) -> int:
    from cnuav.harness import run_experiment
    cfg = _load_cfg(args)
    if not cfg.preset:
        from cnuav.harness import ConfigError
        raise ConfigError("sweep requires --preset or a preset key in the config")
    records = run_experiment(cfg)
    print(f"{len(records)} runs written to {cfg.out_dir}")
    return 0


def cmd_oracle(args) -> int:
    from cnuav.baselines import PowerGrid, exhaustive_oracle
    from cnuav.harness import build_environment
    cfg = _load_cfg(args)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    env = build_environment(cfg, cfg.num_multiplexed, rng)
    gains = env.new_episode(rng)
    free = [c for c in range(cfg.num_subchannels) if not env.pu_model.occupancy[c]]
    grid = PowerGrid.linear(min(cfg.p_max_w, cfg.per_channel_cap_w),
                            cfg.power_grid_levels)
    alloc, best = exhaustive_oracle(
        gains, free, cfg.num_subchannels, cfg.num_multiplexed, grid,
        cfg.p_max_w, cfg.delta_y, cfg.p_th, env.noise_power, env.subchannels)
    result = {
        "optimal_sum_rate_bps": best,
        "membership": {str(k): m for k, m in enumerate(alloc.membership) if m},
        "powers_w": {str(u): alloc.powers[u].tolist()
                     for u in range(cfg.num_sus) if alloc.powers[u].any()},
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "oracle.json").write_text(json.dumps(result, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from cnuav.harness import CSV_HEADER, RunRecord, emit_report
    out_dir = Path(args.out or ".")
    records = []
    for path in sorted(out_dir.glob("*.csv")):
        text = path.read_text().strip().splitlines()
        if not text or text[0] != CSV_HEADER:
            continue
        rows = [line.split(",") for line in text[1:]]
        if not rows:
            continue
        records.append(RunRecord(
            label=path.stem, seed=int(rows[0][5]), config_hash="",
            episodes=np.array([int(r[0]) for r in rows]),
            sum_rate_bps=np.array([float(r[1]) for r in rows]),
            cum_sum_rate_bps=np.array([float(r[2]) for r in rows]),
            cum_abnormality=np.array([float(r[3]) for r in rows]),
            mean_inphase_error=np.array([float(r[4]) for r in rows])))
    if not records:
        print(f"no run CSVs found under {out_dir}", file=sys.stderr)
        return 3
    report = emit_report(records)
    (out_dir / "report.csv").write_text(report)
    print(report, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnuav",
        description="UAV-assisted cognitive NOMA allocation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=False):
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--episodes", type=int, default=None)
        p.add_argument("--out", type=str, default=None, help="output directory")
        if model:
            p.add_argument("--model", type=str, default=None, help="model file path")

    p = sub.add_parser("train", help="offline perception -> model file")
    common(p, model=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="online episodes from a model")
    common(p, model=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a figure-reproduction preset")
    common(p)
    p.add_argument("--preset", type=str, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="small-instance exact solve")
    common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="summarise run CSVs from a directory")
    p.add_argument("--out", type=str, default=".")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    from cnuav.harness import ConfigError, ModelFormatError
    try:
        return args.func(args)
    except (ConfigError, ModelFormatError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("runtime failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

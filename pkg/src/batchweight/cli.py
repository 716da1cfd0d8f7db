"""Command line interface: reproducible experiment runs and exports.

Subcommands
-----------
train    run the configured algorithm, writing run log, checkpoints,
         resolved config and a final evaluation report into --out
eval     evaluate a checkpoint against a config without mutating it
oracle   print the exact density-ratio and midpoint oracles for a preset
         or a categorical table file
export   emit tidy long-format CSVs (weight trajectories, losses, or a
         fixed-noise sweep grid) from a finished run directory

Exit codes: 0 success, 2 usage/config/artifact errors, 3 non-finite loss.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import training
from .config import (
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    config_to_json,
    load_config,
    save_config,
)
from .domains import CategoricalPair, density_ratio_oracle, make_preset, midpoint_oracle
from .errors import ConfigError, ShapeError, SupportError, TrainingAborted
from .evaluation import evaluate_state, fixed_noise_sweep, weight_trajectories
from .rng import RngStreams

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NAN = 3

SUMMARY_FILENAME = "runs_summary.csv"
SUMMARY_COLUMNS = (
    "run,algorithm,preset,seed,steps,transfer_accuracy_xy,transfer_accuracy_yx,"
    "cycle_mode_consistency,midpoint_error\n"
)


def _resolve_config(args):
    config = load_config(args.config) if args.config else ExperimentConfig().validate()
    if getattr(args, "set", None):
        config = apply_overrides(config, args.set)
    if getattr(args, "seed", None) is not None:
        config = apply_overrides(config, [f"seed={args.seed}"])
    return config


def _append_summary(directory, run_name, config, report):
    path = os.path.join(directory, SUMMARY_FILENAME)
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        if fresh:
            fh.write(SUMMARY_COLUMNS)
        fh.write(
            f"{run_name},{config.algorithm},{config.preset},{config.seed},"
            f"{config.train.n_steps},{report.transfer_accuracy_xy!r},"
            f"{report.transfer_accuracy_yx!r},{report.cycle_mode_consistency!r},"
            f"{report.midpoint_error!r}\n"
        )


def _run_single(config, out_dir, force):
    marker = os.path.join(out_dir, "config.json")
    if os.path.exists(marker) and not force:
        raise ConfigError(
            f"{out_dir} already holds a run (config.json present); use --force"
        )
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, marker)
    state, log = training.train(config, out_dir=out_dir)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(99,))))
    report = evaluate_state(
        state, n_eval=config.eval.n_eval, rng=rng,
        log=log if log.n_rows else None, smoothing=config.eval.smoothing,
    )
    with open(os.path.join(out_dir, "eval.json"), "w") as fh:
        fh.write(report.to_json())
    _append_summary(out_dir, os.path.basename(out_dir.rstrip("/")), config, report)
    return report


def _parse_seed_range(text):
    if ".." not in text:
        raise ConfigError(f"--seeds expects A..B, got {text!r}")
    first, last = text.split("..", 1)
    return range(int(first), int(last) + 1)


def cmd_train(args):
    config = _resolve_config(args)
    out = args.out or config.out
    if out is None:
        raise ConfigError("an output directory is required (--out or config key 'out')")
    if args.seeds:
        os.makedirs(out, exist_ok=True)
        for seed in _parse_seed_range(args.seeds):
            seeded = apply_overrides(config, [f"seed={seed}"])
            sub = os.path.join(out, f"seed_{seed}")
            report = _run_single(seeded, sub, args.force)
            _append_summary(out, f"seed_{seed}", seeded, report)
        return EXIT_OK
    _run_single(config, out, args.force)
    return EXIT_OK


def cmd_eval(args):
    config = _resolve_config(args)
    state = training.build_state(config)
    training.load_state(state, args.checkpoint)
    run_dir = os.path.dirname(os.path.dirname(os.path.abspath(args.checkpoint)))
    log = None
    log_path = os.path.join(run_dir, training.RUNLOG_FILENAME)
    if os.path.exists(log_path):
        log = training.RunLog.read_csv(log_path)
        if log.n_rows == 0 or not log.src_labels:
            log = None
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(99,))))
    report = evaluate_state(
        state, n_eval=config.eval.n_eval, rng=rng, log=log,
        smoothing=config.eval.smoothing,
    )
    out_path = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.checkpoint)), "eval.json"
    )
    with open(out_path, "w") as fh:
        fh.write(report.to_json())
    sys.stdout.write(report.to_json())
    return EXIT_OK


def _load_table(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "p" not in data or "q" not in data:
        raise ConfigError(f"{path} must be a JSON object with 'p' and 'q' mass lists")
    return CategoricalPair(np.asarray(data["p"], float), np.asarray(data["q"], float))


def cmd_oracle(args):
    from .domains import PRESET_NAMES
    if args.source in PRESET_NAMES:
        pair = make_preset(args.source).categorical()
    elif os.path.exists(args.source):
        pair = _load_table(args.source)
    else:
        raise ConfigError(
            f"{args.source!r} is neither a preset ({PRESET_NAMES}) nor a readable file"
        )
    ratio = density_ratio_oracle(pair)
    mid = midpoint_oracle(pair)
    residual = float(np.abs(pair.p_joint * 0.5 * (1.0 + ratio) - mid).max())
    print("cell,p,q,ratio,inverse_ratio,midpoint")
    for i in range(pair.support_size):
        print(
            f"{i},{pair.p_joint[i]!r},{pair.q_joint[i]!r},{ratio[i]!r},"
            f"{(1.0 / ratio[i])!r},{mid[i]!r}"
        )
    print(f"max_midpoint_residual,{residual!r}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write("cell,p,q,ratio,inverse_ratio,midpoint\n")
            for i in range(pair.support_size):
                fh.write(
                    f"{i},{pair.p_joint[i]!r},{pair.q_joint[i]!r},{ratio[i]!r},"
                    f"{(1.0 / ratio[i])!r},{mid[i]!r}\n"
                )
    return EXIT_OK


def _export_weights(run_dir, out_path):
    log_path = os.path.join(run_dir, training.RUNLOG_FILENAME)
    if not os.path.exists(log_path):
        raise ConfigError(f"{run_dir} has no {training.RUNLOG_FILENAME}")
    log = training.RunLog.read_csv(log_path)
    if log.n_rows == 0:
        raise ConfigError(f"{log_path} has no logged steps to export")
    config = load_config(os.path.join(run_dir, "config.json"))
    steps, series = weight_trajectories(log, config.eval.smoothing)
    with open(out_path, "w", newline="") as fh:
        fh.write("step,series,value\n")
        for name in sorted(series):
            for step, value in zip(steps, series[name]):
                fh.write(f"{step},{name},{value!r}\n")


def _export_losses(run_dir, out_path):
    log_path = os.path.join(run_dir, training.RUNLOG_FILENAME)
    if not os.path.exists(log_path):
        raise ConfigError(f"{run_dir} has no {training.RUNLOG_FILENAME}")
    log = training.RunLog.read_csv(log_path)
    steps = log.steps()
    with open(out_path, "w", newline="") as fh:
        fh.write("step,series,value\n")
        for name in ("loss_minus", "loss_plus", "disc_gap"):
            for step, value in zip(steps, log.column(name)):
                fh.write(f"{step},{name},{value!r}\n")


def _export_sweep(run_dir, out_path):
    ckpt = os.path.join(run_dir, training.CHECKPOINT_DIRNAME, "final.ckpt")
    if not os.path.exists(ckpt):
        raise ConfigError(f"{run_dir} has no final checkpoint")
    config = load_config(os.path.join(run_dir, "config.json"))
    state = training.build_state(config)
    training.load_state(state, ckpt)
    rng = RngStreams(config.seed).get("eval")
    grid, points, labels = fixed_noise_sweep(state, state.pair.source, 8, 8, rng)
    with open(out_path, "w", newline="") as fh:
        fh.write("source_id,noise_id,source_label," +
                 ",".join(f"coord_{d}" for d in range(grid.shape[2])) + "\n")
        for i in range(grid.shape[0]):
            for j in range(grid.shape[1]):
                coords = ",".join(repr(float(v)) for v in grid[i, j])
                fh.write(f"{i},{j},{int(labels[i])},{coords}\n")


def cmd_export(args):
    exporters = {
        "weights": _export_weights,
        "losses": _export_losses,
        "sweep": _export_sweep,
    }
    out_path = args.out or os.path.join(args.run_dir, f"export_{args.what}.csv")
    exporters[args.what](args.run_dir, out_path)
    print(out_path)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="batchweight",
        description="Batch-weighted domain transfer experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train_p = sub.add_parser("train", help="run a training experiment")
    train_p.add_argument("--config", help="JSON experiment config")
    train_p.add_argument("--set", action="append", default=[],
                         metavar="KEY=VALUE", help="override a config key")
    train_p.add_argument("--seed", type=int, help="override config.seed")
    train_p.add_argument("--out", help="run output directory")
    train_p.add_argument("--force", action="store_true",
                         help="allow writing into an existing run directory")
    train_p.add_argument("--seeds", help="A..B inclusive seed sweep")
    train_p.set_defaults(func=cmd_train)

    eval_p = sub.add_parser("eval", help="evaluate a checkpoint")
    eval_p.add_argument("checkpoint")
    eval_p.add_argument("--config", help="JSON experiment config")
    eval_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    eval_p.add_argument("--seed", type=int)
    eval_p.add_argument("--out", help="report path (default: beside checkpoint)")
    eval_p.set_defaults(func=cmd_eval)

    oracle_p = sub.add_parser("oracle", help="print exact reweighting oracles")
    oracle_p.add_argument("source", help="preset name or categorical table file")
    oracle_p.add_argument("--csv", help="also write the table to this path")
    oracle_p.set_defaults(func=cmd_oracle)

    export_p = sub.add_parser("export", help="emit tidy CSVs from a run directory")
    export_p.add_argument("run_dir")
    export_p.add_argument("--what", choices=("weights", "losses", "sweep"),
                          required=True)
    export_p.add_argument("--out")
    export_p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, SupportError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

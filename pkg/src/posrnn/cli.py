"""Command-line interface.

Subcommands: train, eval, probe-gradients, sweep, plot, gen-data.  Flags
mirror config-file keys and take precedence over the file.  Exit codes:
0 success, 1 configuration error, 2 numerics error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness, metrics, models, optim, tasks
from .errors import NumericsError, PosrnnError, ConfigError


def _add_config_flags(sub):
    sub.add_argument("--config", help="experiment config file")
    sub.add_argument("--task", choices=tasks.TASK_NAMES)
    sub.add_argument("--model", choices=models.CORES)
    sub.add_argument("--encoder", choices=("none", "sinusoidal",
                                           "random-fixed", "learnable",
                                           "double-vanilla"))
    sub.add_argument("--vocab", type=int, nargs="+")
    sub.add_argument("--length", type=str,
                     help="sequence length, N or LO..HI")
    sub.add_argument("--hidden", type=int)
    sub.add_argument("--dtype", choices=("real64", "real32"))
    sub.add_argument("--seeds", type=int, nargs="+")
    sub.add_argument("--iterations", type=int)
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--output", type=str)


def _load_config(args) -> harness.ExperimentConfig:
    if args.config:
        config = harness.parse_config(args.config)
    else:
        config = harness.ExperimentConfig()
    for key in ("task", "model", "encoder", "vocab", "hidden", "dtype",
                "seeds", "output"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    if getattr(args, "length", None) is not None:
        config.length = harness._convert("length", args.length, 0, "length")
    if getattr(args, "iterations", None) is not None:
        config.train.iterations = args.iterations
    if getattr(args, "batch_size", None) is not None:
        config.train.batch_size = args.batch_size
    config.__post_init__()
    return config


def cmd_train(args) -> int:
    config = _load_config(args)
    vocab = config.vocab[0]
    seed = config.seeds[0]
    cell_dir = os.path.join(harness.resolve_output(config.output),
                            f"K{vocab}_s{seed}")
    summary = harness.run_cell(config, vocab, seed, cell_dir)
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    model = models.load_params(args.checkpoint)
    if args.data:
        instances = tasks.read_instances(args.data)
    else:
        instances = harness._held_out_instances(config,
                                                model.config.vocab_size)
    result = metrics.evaluate_instances(model, instances)
    rows = metrics.eval_result_rows(os.path.basename(args.checkpoint), result)
    out = args.out or "eval_metrics.csv"
    metrics.write_metrics_csv(out, rows, metrics.EVAL_FIELDS)
    print(json.dumps({"token_accuracy": result.token_accuracy,
                      "mean_distance": result.mean_distance,
                      "csv": out}))
    return 0


def cmd_probe(args) -> int:
    config = _load_config(args)
    out = args.out or "stability.csv"
    report = harness.probe_gradients(config, args.checkpoints, out_path=out)
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(json.dumps({"rows": len(report.rows), "csv": out}))
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    out_dir = harness.run_experiment(config)
    print(json.dumps({"artifact_dir": out_dir}))
    return 0


def cmd_plot(args) -> int:
    svg, csv_twin = harness.emit_plots(args.aggregate, args.kind, args.out)
    print(json.dumps({"svg": svg, "csv": csv_twin}))
    return 0


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    rng = np.random.default_rng(config.seeds[0])
    tcfg = config.task_config(config.vocab[0])
    instances = []
    for _ in range(args.n):
        length = tcfg.draw_length(rng)
        if config.task == "reverse":
            instances.append(tasks.gen_reverse_ordering(
                config.vocab[0], length, rng))
        elif config.task == "dual_freq":
            instances.append(tasks.gen_dual_frequency(
                tcfg.dual_freq_spec(), length, rng))
        elif config.task == "sorting":
            instances.append(tasks.gen_sorting(config.vocab[0], length, rng))
        elif config.task == "delayed_add":
            instances.append(tasks.gen_delayed_addition(
                config.vocab[0], length, rng))
        else:
            instances.append(tasks.gen_predecessor_query(
                config.vocab[0], length, rng))
    tasks.write_instances(args.out, instances)
    print(json.dumps({"instances": len(instances), "path": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posrnn", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("train", help="train one (vocab, seed) cell")
    _add_config_flags(sub)
    sub.set_defaults(func=cmd_train)

    sub = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(sub)
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--data", help="instance file from gen-data")
    sub.add_argument("--out", help="metrics CSV path")
    sub.set_defaults(func=cmd_eval)

    sub = subs.add_parser("probe-gradients",
                          help="stability sweep over checkpoints")
    _add_config_flags(sub)
    sub.add_argument("--checkpoints", required=True,
                     help="glob over checkpoint directories (it<N> names)")
    sub.add_argument("--out", help="report CSV path")
    sub.set_defaults(func=cmd_probe)

    sub = subs.add_parser("sweep", help="full vocab x seed sweep + aggregate")
    _add_config_flags(sub)
    sub.set_defaults(func=cmd_sweep)

    sub = subs.add_parser("plot", help="render SVG + CSV twin from aggregate")
    sub.add_argument("--aggregate", required=True)
    sub.add_argument("--kind", required=True, choices=harness.PLOT_KINDS)
    sub.add_argument("--out", required=True, help="output basename")
    sub.set_defaults(func=cmd_plot)

    sub = subs.add_parser("gen-data", help="write task instances to a file")
    _add_config_flags(sub)
    sub.add_argument("--n", type=int, default=1024)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return 2
    except PosrnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

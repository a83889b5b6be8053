"""Command-line interface.

Subcommands:
  run        execute an experiment sweep from a config file and/or preset
  gridcheck  validate a config and print the expanded run list
  partition  build a population and emit its manifest only
  eval       evaluate a checkpoint against a partition manifest

Progress goes to stderr; data only to files, keeping stdout scriptable.
"""

import argparse
import sys

from . import metrics, seeds
from .data import get_datasets
from .experiment import (
    ConfigError,
    ExperimentConfig,
    config_from_file,
    config_from_preset,
    expand_grid,
    run_experiment,
)
from .nn import evaluate, load_checkpoint
from .partition import PartitionPlan, attach_train_labels, build_population, load_manifest


def _add_config_args(parser):
    parser.add_argument("config", nargs="?", help="YAML config file")
    parser.add_argument("--preset", choices=["paper", "desk"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--out")
    parser.add_argument("--precision", choices=["f32", "f64"])
    parser.add_argument("--dataset", choices=["mnist", "synthetic"])
    parser.add_argument("--model")
    parser.add_argument("--K", type=int)
    parser.add_argument("--C", type=float, nargs="+")
    parser.add_argument("--G", type=int, nargs="+")
    parser.add_argument("--alpha", type=float, nargs="+")
    parser.add_argument("--eta", type=float, nargs="+")
    parser.add_argument("--B", type=int)
    parser.add_argument("--E", type=int)
    parser.add_argument("--T", type=int)
    parser.add_argument("--s", type=int)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--reps", type=int)
    parser.add_argument("--eval-every", dest="eval_every", type=int)
    parser.add_argument("--holdout-size", dest="holdout_size", type=int)
    parser.add_argument("--regime", choices=["auto", "iid", "shards"])


_CONFIG_KEYS = (
    "seed", "jobs", "data_dir", "out", "precision", "dataset", "model", "K",
    "C", "G", "alpha", "eta", "B", "E", "T", "s", "beta", "reps",
    "eval_every", "holdout_size", "regime",
)


def _build_config(args):
    overrides = {
        key: getattr(args, key)
        for key in _CONFIG_KEYS
        if getattr(args, key, None) is not None
    }
    if args.config:
        return config_from_file(args.config, overrides)
    if args.preset:
        return config_from_preset(args.preset, overrides)
    return ExperimentConfig(**overrides)


def _cmd_run(args):
    config = _build_config(args)
    return run_experiment(config)


def _cmd_gridcheck(args):
    config = _build_config(args)
    runs = expand_grid(config)
    print(f"config valid: {len(runs)} runs")
    for spec in runs:
        print(spec.run_id)
    return 0


def _cmd_partition(args):
    from .partition import save_manifest

    config = _build_config(args)
    synth_seed = seeds.seed_int(config.seed, "dataset")
    train, test = get_datasets(
        config.dataset, data_dir=config.data_dir,
        synth_train_per_class=config.synth_train_per_class,
        synth_test_per_class=config.synth_test_per_class,
        synth_seed=synth_seed,
    )
    g = args.blocks
    regime = "block" if g > 1 else ("iid" if config.regime == "iid" else "shards")
    plan = PartitionPlan(regime=regime, K=config.K, s=config.s, G=g,
                         alpha=args.block_alpha, seed=config.seed)
    population = build_population(train, test, plan,
                                  holdout_size=config.holdout_size)
    save_manifest(population, args.manifest_out,
                  extra={"synth_seed": synth_seed,
                         "synth_train_per_class": config.synth_train_per_class,
                         "synth_test_per_class": config.synth_test_per_class})
    print(f"wrote {args.manifest_out}", file=sys.stderr)
    return 0


def _cmd_eval(args):
    population, meta = load_manifest(args.manifest)
    dataset = args.dataset or meta.get("dataset", "mnist")
    train, test = get_datasets(
        dataset, data_dir=args.data_dir,
        synth_train_per_class=int(meta.get("synth_train_per_class", 200)),
        synth_test_per_class=int(meta.get("synth_test_per_class", 100)),
        synth_seed=int(meta.get("synth_seed", 0)),
    )
    attach_train_labels(population, train)
    model = load_checkpoint(args.checkpoint)
    union = population.union_holdout()
    result = evaluate(model, test.images[union], test.labels[union])
    report = metrics.fairness_report(model, population, test)
    if args.out_fairness:
        metrics.write_fairness_csv(report, args.out_fairness)
    if args.out_confusion:
        metrics.write_confusion_csv(result.confusion, args.out_confusion)
    print(f"consensus_accuracy={result.accuracy:.6f}")
    print(f"mean_loss={result.mean_loss:.6f}")
    print(f"fairness_variance={report.variance:.8f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cyclefed",
        description="Deterministic FedAvg simulator for block-cyclic sampling studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment sweep")
    _add_config_args(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_check = sub.add_parser("gridcheck", help="validate a config and list runs")
    _add_config_args(p_check)
    p_check.set_defaults(func=_cmd_gridcheck)

    p_part = sub.add_parser("partition", help="emit a partition manifest only")
    _add_config_args(p_part)
    p_part.add_argument("--blocks", type=int, default=1, help="block count G")
    p_part.add_argument("--block-alpha", type=float, default=1.0)
    p_part.add_argument("--manifest-out", default="manifest.txt")
    p_part.set_defaults(func=_cmd_partition)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--dataset", choices=["mnist", "synthetic"])
    p_eval.add_argument("--data-dir", dest="data_dir")
    p_eval.add_argument("--out-fairness")
    p_eval.add_argument("--out-confusion")
    p_eval.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: build, gen-data, train, eval-anytime, eval-budget, calibrate,
ablate. Config files are versioned JSON with a required "network" section
and an optional "train" section; unknown keys are rejected. Checkpoints are
bound to their architecture through the config hash. MSDNET_OUT_DIR sets
the default output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import plots
from .cost import classifier_costs, write_classifier_costs_csv, write_node_costs_csv
from .data import generate_mixture_dataset, load_dataset, save_dataset, split_dataset
from .errors import ConfigurationError, InputError
from .exit_policy import make_plan
from .graph import NetworkConfig, build, config_hash
from .harness import (
    default_budget_grid,
    run_ablation_suite,
    run_anytime_curve,
    run_budgeted_curve,
    write_rows_csv,
)
from .runtime import confidence_profile, evaluate_budgeted, traces_to_csv
from .trainer import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)

CONFIG_FILE_VERSION = 1


def load_config_file(path):
    """Parse a versioned JSON config into (NetworkConfig, TrainConfig)."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}")
    unknown = sorted(set(raw) - {"version", "network", "train"})
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(unknown)}")
    if raw.get("version", CONFIG_FILE_VERSION) != CONFIG_FILE_VERSION:
        raise ConfigurationError(f"unsupported config file version {raw.get('version')}")
    if "network" not in raw:
        raise ConfigurationError("missing config field(s): network")
    net = NetworkConfig.from_dict(raw["network"])
    train_raw = dict(raw.get("train", {}))
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(train_raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown train field(s): {', '.join(unknown)}")
    for key in ("lr_drop_epochs", "loss_weights"):
        if isinstance(train_raw.get(key), list):
            train_raw[key] = tuple(train_raw[key])
    tcfg = TrainConfig(**train_raw)
    tcfg.validate()
    return net, tcfg


def _out_dir(args) -> str:
    out = args.out_dir or os.environ.get("MSDNET_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_graph(args):
    net_cfg, train_cfg = load_config_file(args.config)
    graph = build(net_cfg, seed=getattr(args, "seed", None) or 0)
    if getattr(args, "checkpoint", None):
        if not os.path.exists(args.checkpoint):
            raise InputError(f"checkpoint not found: {args.checkpoint}")
        load_checkpoint(args.checkpoint, graph)
    return graph, net_cfg, train_cfg


def _budget_grid(args, costs):
    if getattr(args, "budget_grid", None):
        return [float(b) for b in args.budget_grid.split(",")]
    return default_budget_grid(costs)


def cmd_build(args):
    net_cfg, _ = load_config_file(args.config)
    graph = build(net_cfg, seed=args.seed)
    table = classifier_costs(graph)
    if args.format == "csv":
        w = sys.stdout
        w.write("classifier,layer,cumulative_flops\n")
        for k, cid in enumerate(graph.classifier_ids, start=1):
            w.write(f"{k},{graph.nodes[cid].layer},{table.cumulative[k - 1]}\n")
    else:
        print(graph.summary_text())
        print("cumulative classifier costs (FLOPs/sample):")
        for k, c in enumerate(table.cumulative, start=1):
            print(f"  C_{k} = {c}")
    if args.out_dir:
        out = _out_dir(args)
        with open(os.path.join(out, "summary.json"), "w") as f:
            json.dump(graph.summary_dict(), f, indent=2)
        write_node_costs_csv(os.path.join(out, "node_costs.csv"), graph, table)
        write_classifier_costs_csv(
            os.path.join(out, "classifier_costs.csv"), graph, table
        )
    return 0


def cmd_gen_data(args):
    out = _out_dir(args)
    total = args.n_train + args.n_val + args.n_test
    ds = generate_mixture_dataset(
        total, image_size=args.image_size, hard_fraction=args.hard_fraction,
        seed=args.seed,
    )
    for split, part in zip(
        ("train", "val", "test"), split_dataset(ds, args.n_train, args.n_val, args.n_test)
    ):
        save_dataset(out, part, split)
    print(f"wrote {total} samples ({args.n_train}/{args.n_val}/{args.n_test}) to {out}")
    return 0


def cmd_train(args):
    net_cfg, train_cfg = load_config_file(args.config)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    graph = build(net_cfg, seed=train_cfg.seed)
    train_set = load_dataset(args.data_dir, "train")
    val_set = load_dataset(args.data_dir, "val")
    history = train(graph, train_set, train_cfg, val_set=val_set, log=print)
    out = _out_dir(args)
    save_checkpoint(os.path.join(out, "checkpoint.bin"), graph)
    write_metrics_csv(
        os.path.join(out, "metrics.csv"), history, graph.num_classifiers,
        hash_line=config_hash(net_cfg),
    )
    plots.training_curves_figure(
        history, graph.num_classifiers, os.path.join(out, "training_curves.png")
    )
    print(f"checkpoint and metrics written to {out}")
    return 0


def cmd_eval_anytime(args):
    graph, net_cfg, _ = _load_graph(args)
    test_set = load_dataset(args.data_dir, "test")
    costs = classifier_costs(graph).cumulative
    rows = run_anytime_curve(graph, test_set, _budget_grid(args, costs))
    out = _out_dir(args)
    csv_path = os.path.join(out, "anytime_curve.csv")
    write_rows_csv(csv_path, rows, hash_line=config_hash(net_cfg))
    plots.anytime_curve_figure(rows, os.path.join(out, "anytime_curve.png"))
    print(f"anytime curve written to {csv_path}")
    return 0


def cmd_eval_budget(args):
    graph, net_cfg, _ = _load_graph(args)
    val_set = load_dataset(args.data_dir, "val")
    test_set = load_dataset(args.data_dir, "test")
    out = _out_dir(args)
    if args.budget is not None:
        costs = classifier_costs(graph).cumulative
        profile = confidence_profile(graph, val_set.images, val_set.labels)
        plan = make_plan(costs, len(test_set), args.budget * len(test_set), profile)
        traces = evaluate_budgeted(graph, test_set.images, plan)
        with open(os.path.join(out, "exit_plan.json"), "w") as f:
            f.write(plan.to_json())
        traces_to_csv(os.path.join(out, "traces.csv"), traces, labels=test_set.labels)
        correct = sum(t.prediction == test_set.labels[t.sample_id] for t in traces)
        print(f"accuracy {correct / len(traces):.4f}, plan and traces written to {out}")
        return 0
    costs = classifier_costs(graph).cumulative
    rows = run_budgeted_curve(graph, val_set, test_set, _budget_grid(args, costs))
    csv_path = os.path.join(out, "budgeted_curve.csv")
    write_rows_csv(csv_path, rows, hash_line=config_hash(net_cfg))
    plots.budgeted_curve_figure(rows, os.path.join(out, "budgeted_curve.png"))
    print(f"budgeted curve written to {csv_path}")
    return 0


def cmd_calibrate(args):
    graph, net_cfg, _ = _load_graph(args)
    val_set = load_dataset(args.data_dir, "val")
    try:
        batch_size = args.batch_size or len(load_dataset(args.data_dir, "test"))
    except InputError:
        batch_size = len(val_set)
    costs = classifier_costs(graph).cumulative
    profile = confidence_profile(graph, val_set.images, val_set.labels)
    plan = make_plan(costs, batch_size, args.budget, profile)
    out = _out_dir(args)
    with open(os.path.join(out, "exit_plan.json"), "w") as f:
        f.write(plan.to_json())
    profile.write_csv(os.path.join(out, "confidence_profile.csv"))
    print(plan.to_json())
    return 0


def cmd_ablate(args):
    net_cfg, train_cfg = load_config_file(args.config)
    if args.epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    train_set = load_dataset(args.data_dir, "train")
    test_set = load_dataset(args.data_dir, "test")
    rows = run_ablation_suite(
        net_cfg, train_set, test_set, train_cfg,
        seeds=tuple(range(args.seeds)), log=print,
    )
    out = _out_dir(args)
    csv_path = os.path.join(out, "ablation.csv")
    write_rows_csv(csv_path, rows, hash_line=config_hash(net_cfg))
    plots.ablation_figure(rows, os.path.join(out, "ablation.png"))
    print(f"ablation table written to {csv_path}")
    return 0


def make_parser():
    p = argparse.ArgumentParser(
        prog="msdnet",
        description="Early-exit multi-scale dense network engine",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, checkpoint=False, data=False):
        if config:
            sp.add_argument("--config", required=True, help="JSON config file")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="checkpoint file")
        if data:
            sp.add_argument("--data-dir", required=True, help="dataset directory")
        sp.add_argument("--out-dir", default=None, help="output directory "
                        "(default $MSDNET_OUT_DIR or .)")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("build", help="build a network and print its cost table")
    common(sp)
    sp.add_argument("--format", choices=("text", "csv"), default="text")
    sp.set_defaults(func=cmd_build, seed=0)

    sp = sub.add_parser("gen-data", help="generate the synthetic mixture dataset")
    common(sp, config=False)
    sp.add_argument("--n-train", type=int, default=2000)
    sp.add_argument("--n-val", type=int, default=500)
    sp.add_argument("--n-test", type=int, default=500)
    sp.add_argument("--image-size", type=int, default=16)
    sp.add_argument("--hard-fraction", type=float, default=0.4)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a network on a dataset directory")
    common(sp, data=True)
    sp.add_argument("--epochs", type=int, default=None, help="override config epochs")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval-anytime", help="accuracy vs anytime budget curve")
    common(sp, checkpoint=True, data=True)
    sp.add_argument("--budget-grid", default=None,
                    help="comma-separated per-sample FLOP budgets")
    sp.set_defaults(func=cmd_eval_anytime)

    sp = sub.add_parser("eval-budget", help="budgeted-batch dynamic evaluation")
    common(sp, checkpoint=True, data=True)
    sp.add_argument("--budget", type=float, default=None,
                    help="single per-sample budget: writes plan + traces")
    sp.add_argument("--budget-grid", default=None,
                    help="comma-separated per-sample FLOP budgets")
    sp.set_defaults(func=cmd_eval_budget)

    sp = sub.add_parser("calibrate", help="solve a budget and calibrate thresholds")
    common(sp, checkpoint=True, data=True)
    sp.add_argument("--budget", type=float, required=True,
                    help="total batch budget in FLOPs")
    sp.add_argument("--batch-size", type=int, default=None,
                    help="deployment batch size M (default: test split size)")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("ablate", help="train and compare ablation variants")
    common(sp, data=True)
    sp.add_argument("--seeds", type=int, default=2, help="number of seeds")
    sp.add_argument("--epochs", type=int, default=None, help="override config epochs")
    sp.set_defaults(func=cmd_ablate)

    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

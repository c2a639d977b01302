"""Evaluation protocols: anytime curves, budgeted curves, ablation suite.

Budgets in curve rows are per-sample FLOPs (the batch budget handed to the
solver is budget * batch size). Every row is a pure function of (config,
seed, checkpoint), so repeated runs are byte-identical; CSV files start
with a `# config_hash=` comment binding them to the architecture.
"""

from __future__ import annotations

import csv
import dataclasses

import numpy as np

from . import tensor as T
from .cost import classifier_costs
from .data import Dataset
from .errors import ConfigurationError
from .exit_policy import Q_MIN, make_plan
from .graph import INPUT_ID, NetworkConfig, NetworkGraph, build
from .runtime import (
    average_flops,
    confidence_profile,
    evaluate_budgeted,
    forward_full,
    softmax_probs,
)
from .trainer import TrainConfig, train


def default_budget_grid(costs, points: int = 20):
    """Log-spaced per-sample budgets spanning [C_1, 1.2 * C_K]."""
    return np.geomspace(costs[0], 1.2 * costs[-1], points)


def _forward_to_classifier(graph: NetworkGraph, images, k: int, chunk_size=256):
    """Logits of classifier k (1-based) via the lazy batches 1..k."""
    batches = graph.classifier_batches()
    needed = sorted(set().union(*batches[:k]))
    out = []
    for start in range(0, len(images), chunk_size):
        values = {INPUT_ID: T.Tensor(images[start : start + chunk_size])}
        for nid in needed:
            node = graph.nodes[nid]
            values[nid] = node.run([values[i] for i in node.inputs], training=False)
        out.append(values[graph.classifier_ids[k - 1]].data)
    return np.concatenate(out, axis=0)


def run_anytime_curve(graph: NetworkGraph, test_set: Dataset, budget_grid=None):
    """Accuracy at each anytime budget; rows below C_1 carry a no-prediction
    marker. The accuracy column is a step function of the budget, changing
    only where another classifier becomes affordable."""
    table = classifier_costs(graph)
    costs = table.cumulative
    if budget_grid is None:
        budget_grid = default_budget_grid(costs)
    labels = test_set.labels
    acc_cache: dict[int, float] = {}
    rows = []
    for budget in budget_grid:
        budget = float(budget)
        affordable = [k for k, c in enumerate(costs, start=1) if c <= budget]
        if not affordable:
            rows.append(
                {
                    "budget": budget,
                    "classifier": "",
                    "flops": "",
                    "accuracy": "",
                    "status": "no-prediction",
                }
            )
            continue
        k = affordable[-1]
        if k not in acc_cache:
            logits = _forward_to_classifier(graph, test_set.images, k)
            preds = softmax_probs(logits).argmax(axis=1)
            acc_cache[k] = float((preds == labels).mean())
        rows.append(
            {
                "budget": budget,
                "classifier": k,
                "flops": costs[k - 1],
                "accuracy": acc_cache[k],
                "status": "ok",
            }
        )
    return rows


def run_budgeted_curve(graph: NetworkGraph, val_set: Dataset, test_set: Dataset,
                       budget_grid=None):
    """Dynamic early-exit evaluation across a grid of per-sample budgets.

    For each budget: solve for the exit probability, calibrate thresholds on
    the validation set, then early-exit the test set. Infeasible budgets are
    clamped by the solver and flagged."""
    table = classifier_costs(graph)
    costs = table.cumulative
    if budget_grid is None:
        budget_grid = default_budget_grid(costs)
    m = len(test_set)
    profile = confidence_profile(graph, val_set.images, val_set.labels)
    rows = []
    for budget in budget_grid:
        budget = float(budget)
        plan = make_plan(costs, m, budget * m, profile)
        traces = evaluate_budgeted(graph, test_set.images, plan)
        preds = np.array([t.prediction for t in traces])
        acc = float((preds == test_set.labels).mean())
        clamp = ""
        if budget * m <= m * costs[0]:
            clamp = "low"
        elif plan.q <= Q_MIN:
            clamp = "high"
        row = {
            "budget": budget,
            "q": plan.q,
            "realized_avg_flops": average_flops(traces),
            "accuracy": acc,
            "clamp": clamp,
        }
        counts = np.bincount(
            [t.exit_index for t in traces], minlength=len(costs) + 1
        )[1:]
        for k, c in enumerate(counts, start=1):
            row[f"exit_frac_clf{k}"] = c / m
        rows.append(row)
    return rows


ABLATION_VARIANTS = ("full", "no-dense", "no-multiscale", "no-intermediate")


def ablation_config(base: NetworkConfig, variant: str) -> NetworkConfig:
    if variant == "full":
        return base
    if variant == "no-dense":
        return dataclasses.replace(base, dense_connectivity=False)
    if variant == "no-multiscale":
        return dataclasses.replace(base, multi_scale=False)
    if variant == "no-intermediate":
        return dataclasses.replace(base, intermediate_classifiers=False)
    raise ConfigurationError(f"unknown ablation variant {variant!r}")


def match_final_cost(cfg: NetworkConfig, target: int, tol: float = 0.10) -> NetworkConfig:
    """Adjust network width so the final cumulative cost lands within tol of
    the target. Growth rates scale in even steps (coarse); for each growth
    the classifier head width is bisected in single channels (the final cost
    is monotone in it)."""

    def final_cost(candidate):
        return classifier_costs(build(candidate, seed=0)).cumulative[-1]

    best_cfg, best_err = None, np.inf
    tried = set()
    for f in np.geomspace(0.3, 6.0, 41):
        growth = tuple(max(2, 2 * round(k * f / 2)) for k in cfg.growth_rates)
        if growth in tried:
            continue
        tried.add(growth)
        lo, hi = 4, max(8 * cfg.classifier_channels, 16)
        candidates = []
        while lo <= hi:
            channels = (lo + hi) // 2
            candidate = dataclasses.replace(
                cfg, growth_rates=growth, classifier_channels=channels
            )
            try:
                ck = final_cost(candidate)
            except ConfigurationError:
                break
            candidates.append((abs(ck - target) / target, candidate))
            if ck < target:
                lo = channels + 1
            elif ck > target:
                hi = channels - 1
            else:
                break
        for err, candidate in candidates:
            if err < best_err:
                best_cfg, best_err = candidate, err
    if best_cfg is None or best_err > tol:
        raise ConfigurationError(
            f"could not match final cost within {tol:.0%} (best {best_err:.1%})"
        )
    return best_cfg


def run_ablation_suite(base_config: NetworkConfig, train_set: Dataset,
                       test_set: Dataset, train_cfg: TrainConfig,
                       seeds=(0,), log=None):
    """Train every ablation variant at matched final cost and tabulate
    per-classifier test accuracy."""
    target = classifier_costs(build(base_config, seed=0)).cumulative[-1]
    rows = []
    for variant in ABLATION_VARIANTS:
        cfg = ablation_config(base_config, variant)
        if variant != "full":
            cfg = match_final_cost(cfg, target)
        for seed in seeds:
            graph = build(cfg, seed=seed)
            table = classifier_costs(graph)
            t_cfg = dataclasses.replace(train_cfg, seed=seed)
            train(graph, train_set, t_cfg)
            logits = forward_full(graph, test_set.images)
            for k, lg in enumerate(logits, start=1):
                preds = softmax_probs(lg.data).argmax(axis=1)
                rows.append(
                    {
                        "variant": variant,
                        "seed": seed,
                        "classifier": k,
                        "layer": graph.nodes[graph.classifier_ids[k - 1]].layer,
                        "flops": table.cumulative[k - 1],
                        "accuracy": float((preds == test_set.labels).mean()),
                        "final_cost_ratio": table.cumulative[-1] / target,
                    }
                )
            if log:
                log(f"ablation {variant} seed {seed}: done")
    return rows


def write_rows_csv(path, rows, hash_line: str | None = None):
    """Write homogeneous row dicts; floats via repr for byte-stable output."""
    if not rows:
        raise ConfigurationError("no rows to write")
    with open(path, "w", newline="") as f:
        if hash_line:
            f.write(f"# config_hash={hash_line}\n")
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_rows_csv(path):
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))

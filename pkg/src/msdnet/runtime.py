"""Network execution: eager forward, lazy diagonal batches, early exits.

Lazy evaluation groups nodes into per-classifier "diagonal" batches (the
dependency closure of each classifier minus what earlier classifiers already
forced) so a sample only pays for the paths the next classifier actually
needs. The anytime evaluator runs whole batches while they fit in a FLOP
budget; the budgeted evaluator stops each sample once its softmax confidence
clears the calibrated threshold. Inference always runs batch norm in eval
mode, which makes per-sample results independent of batch composition and
lets early exits mask samples out of later batches exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import cost as cost_model
from . import tensor as T
from .errors import BudgetTooSmallError, ConfigurationError, InputError
from .exit_policy import ConfidenceProfile, ExitPlan
from .graph import INPUT_ID, NetworkGraph


@dataclass
class EvalTrace:
    """Outcome of evaluating one sample."""

    sample_id: int
    exit_index: int  # 1-based classifier index
    confidence: float
    prediction: int
    flops: int
    logits: np.ndarray | None = field(default=None, repr=False)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row softmax on raw arrays; shared by profiling and exit decisions."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(graph: NetworkGraph, batch) -> T.Tensor:
    t = batch if isinstance(batch, T.Tensor) else T.Tensor(batch)
    if t.data.ndim == 3:
        t = T.Tensor(t.data[None])
    if t.data.ndim != 4:
        raise InputError(f"expected a [B,C,H,W] batch, got shape {t.shape}")
    c, h, w = graph.config.input_shape
    if t.shape[1:] != (c, h, w):
        raise InputError(
            f"batch shape {tuple(t.shape[1:])} does not match input shape {(c, h, w)}"
        )
    return t


def _ensure_costs(graph: NetworkGraph) -> list[int]:
    return cost_model.classifier_costs(graph).cumulative


def forward_full(graph: NetworkGraph, batch, training: bool = False) -> list[T.Tensor]:
    """Evaluate every node once in topological order; logits per classifier."""
    x = _as_batch(graph, batch)
    values: dict[int, T.Tensor] = {INPUT_ID: x}
    for node in graph.nodes:
        values[node.node_id] = node.run([values[i] for i in node.inputs], training)
    return [values[cid] for cid in graph.classifier_ids]


def lazy_closures(graph: NetworkGraph) -> list[list[int]]:
    """Ordered node batches per classifier; batches 1..k form a valid
    topological prefix and their FLOPs sum to the cumulative cost C_k."""
    return graph.classifier_batches()


def _run_batch(graph: NetworkGraph, values: dict, node_ids) -> None:
    for nid in node_ids:
        node = graph.nodes[nid]
        values[nid] = node.run([values[i] for i in node.inputs], training=False)


def evaluate_anytime(graph: NetworkGraph, sample, budget_flops: int,
                     sample_id: int = 0) -> EvalTrace:
    """Deepest prediction whose lazy evaluation fits in the FLOP budget.

    Whole diagonal batches only: a partially evaluated classifier yields no
    prediction, so execution stops before any batch that would overrun.
    """
    x = _as_batch(graph, sample)
    if x.shape[0] != 1:
        raise InputError("evaluate_anytime takes a single sample")
    batches = graph.classifier_batches()
    cumulative = _ensure_costs(graph)
    if budget_flops < cumulative[0]:
        raise BudgetTooSmallError(
            f"budget {budget_flops} is below the first classifier cost {cumulative[0]}"
        )
    values: dict[int, T.Tensor] = {INPUT_ID: x}
    spent = 0
    deepest = -1
    for k, node_ids in enumerate(batches):
        batch_cost = cumulative[k] - (cumulative[k - 1] if k else 0)
        if spent + batch_cost > budget_flops:
            break
        _run_batch(graph, values, node_ids)
        spent += batch_cost
        deepest = k
    logits = values[graph.classifier_ids[deepest]].data
    probs = softmax_probs(logits)
    return EvalTrace(
        sample_id=sample_id,
        exit_index=deepest + 1,
        confidence=float(probs[0].max()),
        prediction=int(probs[0].argmax()),
        flops=spent,
        logits=logits[0].copy(),
    )


def evaluate_budgeted(graph: NetworkGraph, batch, plan: ExitPlan,
                      sample_ids=None) -> list[EvalTrace]:
    """Early-exit evaluation of a batch under a calibrated plan.

    Samples whose confidence clears the threshold at classifier k stop
    there (metered at the cumulative cost C_k); the rest are masked out of
    the cached activations and continue. The final classifier takes
    everything left.
    """
    x = _as_batch(graph, batch)
    if plan.num_classifiers != graph.num_classifiers:
        raise ConfigurationError(
            f"plan has {plan.num_classifiers} classifiers, graph has "
            f"{graph.num_classifiers}"
        )
    batches = graph.classifier_batches()
    cumulative = _ensure_costs(graph)
    n = x.shape[0]
    sample_ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    traces: list[EvalTrace | None] = [None] * n
    alive_pos = np.arange(n)  # positions in the original batch still running
    values: dict[int, T.Tensor] = {INPUT_ID: x}
    for k, node_ids in enumerate(batches):
        _run_batch(graph, values, node_ids)
        logits = values[graph.classifier_ids[k]].data
        probs = softmax_probs(logits)
        conf = probs.max(axis=1)
        pred = probs.argmax(axis=1)
        last = k == len(batches) - 1
        exits = np.ones(len(alive_pos), dtype=bool) if last else conf >= plan.thresholds[k]
        for i in np.nonzero(exits)[0]:
            pos = int(alive_pos[i])
            traces[pos] = EvalTrace(
                sample_id=int(sample_ids[pos]),
                exit_index=k + 1,
                confidence=float(conf[i]),
                prediction=int(pred[i]),
                flops=cumulative[k],
                logits=logits[i].copy(),
            )
        keep = ~exits
        if not keep.any():
            break
        alive_pos = alive_pos[keep]
        values = {nid: T.Tensor(v.data[keep]) for nid, v in values.items()}
    return traces


def confidence_profile(graph: NetworkGraph, images, labels,
                       chunk_size: int = 256) -> ConfidenceProfile:
    """Full-depth confidences and correctness per sample and classifier."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    K = graph.num_classifiers
    conf = np.zeros((n, K))
    correct = np.zeros((n, K), dtype=bool)
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        logits = forward_full(graph, images[start:stop], training=False)
        for k in range(K):
            probs = softmax_probs(logits[k].data)
            conf[start:stop, k] = probs.max(axis=1)
            correct[start:stop, k] = probs.argmax(axis=1) == labels[start:stop]
    return ConfidenceProfile(np.arange(n), conf, correct)


def average_flops(traces: list[EvalTrace]) -> float:
    return sum(t.flops for t in traces) / len(traces)


def traces_to_csv(path, traces: list[EvalTrace], labels=None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "exit", "confidence", "prediction", "label", "flops"])
        for t in traces:
            label = "" if labels is None else int(labels[t.sample_id])
            w.writerow(
                [t.sample_id, t.exit_index, repr(t.confidence), t.prediction, label, t.flops]
            )

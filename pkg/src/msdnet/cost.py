"""Per-node FLOP accounting and cumulative classifier costs.

Conventions: a multiply-accumulate counts as 2 FLOPs; batch norm costs 4 ops
per element (subtract, scale, affine pair); ReLU 1 per element; average
pooling k*k per output element; concatenation is free. All figures are per
sample (batch dimension excluded) and exact integers.

The cumulative cost of classifier k is the total over the union of the
dependency closures of classifiers 1..k: exactly the node set a lazy
evaluator has executed once classifier k has produced logits (earlier
heads included, since their confidences gate the exits).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .errors import ConfigurationError
from .graph import (
    KIND_CLASSIFIER,
    KIND_CONCAT,
    KIND_DIAGONAL,
    KIND_HORIZONTAL,
    KIND_SEED,
    KIND_TRANSITION,
    GraphNode,
    NetworkGraph,
)


def conv_flops(cin, cout, kh, kw, out_h, out_w):
    return 2 * kh * kw * cin * cout * out_h * out_w


def bn_flops(c, h, w):
    return 4 * c * h * w


def relu_flops(c, h, w):
    return c * h * w


def pool_flops(c, out_h, out_w, k):
    return c * out_h * out_w * k * k


def linear_flops(n_in, n_out):
    return 2 * n_in * n_out


def node_flops(node: GraphNode) -> int:
    """FLOPs to evaluate one node for one sample."""
    ih, iw = node.in_hw
    oh, ow = node.out_hw
    if node.kind == KIND_CONCAT:
        return 0
    if node.kind == KIND_SEED:
        return (
            conv_flops(node.in_channels, node.out_channels, 3, 3, oh, ow)
            + bn_flops(node.out_channels, oh, ow)
            + relu_flops(node.out_channels, oh, ow)
        )
    if node.kind in (KIND_HORIZONTAL, KIND_DIAGONAL):
        mid = node.interior_channels
        return (
            conv_flops(node.in_channels, mid, 1, 1, ih, iw)
            + bn_flops(mid, ih, iw)
            + relu_flops(mid, ih, iw)
            + conv_flops(mid, node.out_channels, 3, 3, oh, ow)
            + bn_flops(node.out_channels, oh, ow)
            + relu_flops(node.out_channels, oh, ow)
        )
    if node.kind == KIND_TRANSITION:
        k = 1 if node.op == "pointwise" else 3
        return (
            conv_flops(node.in_channels, node.out_channels, k, k, oh, ow)
            + bn_flops(node.out_channels, oh, ow)
            + relu_flops(node.out_channels, oh, ow)
        )
    if node.kind == KIND_CLASSIFIER:
        ch = node.interior_channels
        h1, w1 = (ih + 1) // 2, (iw + 1) // 2
        h2, w2 = (h1 + 1) // 2, (w1 + 1) // 2
        k = node.pool_k
        ph, pw = h2 // k, w2 // k
        return (
            conv_flops(node.in_channels, ch, 3, 3, h1, w1)
            + bn_flops(ch, h1, w1)
            + relu_flops(ch, h1, w1)
            + conv_flops(ch, ch, 3, 3, h2, w2)
            + bn_flops(ch, h2, w2)
            + relu_flops(ch, h2, w2)
            + pool_flops(ch, ph, pw, k)
            + linear_flops(ch * ph * pw, node.out_channels)
        )
    raise ConfigurationError(f"unknown node kind {node.kind!r}")


@dataclass
class CostTable:
    """Per-node FLOPs plus cumulative per-classifier costs."""

    per_node: dict  # node id -> int
    cumulative: list  # C_k for k = 1..K, nondecreasing

    @property
    def num_classifiers(self) -> int:
        return len(self.cumulative)


def classifier_costs(graph: NetworkGraph) -> CostTable:
    """Compute node FLOPs and cumulative classifier costs; annotates the graph."""
    per_node = {n.node_id: node_flops(n) for n in graph.nodes}
    cumulative = []
    total = 0
    for batch in graph.classifier_batches():
        total += sum(per_node[nid] for nid in batch)
        cumulative.append(total)
    graph.node_flops = per_node
    return CostTable(per_node=per_node, cumulative=cumulative)


def write_node_costs_csv(path, graph: NetworkGraph, table: CostTable):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "kind", "layer", "scale", "flops"])
        for n in graph.nodes:
            kind = n.kind + (f":{n.op}" if n.op else "")
            w.writerow([n.node_id, kind, n.layer, n.scale, table.per_node[n.node_id]])


def write_classifier_costs_csv(path, graph: NetworkGraph, table: CostTable):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["classifier", "layer", "cumulative_flops"])
        for k, cid in enumerate(graph.classifier_ids, start=1):
            w.writerow([k, graph.nodes[cid].layer, table.cumulative[k - 1]])

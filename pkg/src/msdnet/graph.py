"""Construction of the multi-scale dense early-exit network DAG.

A network is a two-dimensional grid of feature maps: layers run horizontally,
spatial scales vertically (scale 1 is the finest resolution, scale S the
coarsest, each coarser scale at half resolution). Layer 1 seeds every scale
with a cascade of convolutions; every later layer appends new features to a
per-scale dense history by concatenating a same-scale ("horizontal")
transform with a strided finer-to-coarser ("diagonal") transform. Classifier
heads hang off the coarsest-scale history at configurable layers.

Optional network reduction splits the depth into one block per scale,
dropping the finest surviving scale at each block boundary through a
channel-halving transition. Ablation switches disable dense connectivity,
the multi-scale grid, or the intermediate classifiers independently.

Conventions the architecture recipe leaves open, fixed here:
  - layer-1 transforms are Conv(3x3)-BN-ReLU (stride 2 when descending a
    scale); later transforms are Conv(1x1)-BN-ReLU-Conv(3x3)-BN-ReLU with
    the 1x1 producing 4x the transform's output channels;
  - per layer and scale, the horizontal and diagonal halves each contribute
    half the growth rate (the finest alive scale takes the whole growth
    through its horizontal transform);
  - transitions emit exactly floor(c/2) channels per surviving scale; the
    dropped scale's history is forwarded to the new finest scale through a
    stride-2 convolution, also halving its channels;
  - dense histories reset to the transition outputs at block boundaries.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .errors import ConfigurationError

INPUT_ID = -1

KIND_SEED = "seed-conv"
KIND_HORIZONTAL = "horizontal"
KIND_DIAGONAL = "diagonal"
KIND_CONCAT = "concat"
KIND_TRANSITION = "transition"
KIND_CLASSIFIER = "classifier"

PLACEMENT_ANYTIME = "anytime"
PLACEMENT_BUDGETED = "budgeted"

CONFIG_VERSION = 1
BOTTLENECK_FACTOR = 4
DEFAULT_CLASSIFIER_CHANNELS = 128


@dataclass(frozen=True)
class NetworkConfig:
    """Complete architecture recipe for one network."""

    num_scales: int
    num_layers: int
    growth_rates: tuple[int, ...]
    num_classes: int
    input_shape: tuple[int, int, int]  # channels, height, width
    seed_multiplier: int = 2
    classifier_placement: str | tuple[int, ...] = PLACEMENT_ANYTIME
    reduction: bool = True
    dense_connectivity: bool = True
    multi_scale: bool = True
    intermediate_classifiers: bool = True
    densenet_star: bool = False
    classifier_channels: int = DEFAULT_CLASSIFIER_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "growth_rates", tuple(self.growth_rates))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        if isinstance(self.classifier_placement, (list, tuple)):
            object.__setattr__(
                self, "classifier_placement", tuple(self.classifier_placement)
            )

    def validate(self):
        if self.num_scales < 1:
            raise ConfigurationError("num_scales must be >= 1")
        if self.num_layers < 1:
            raise ConfigurationError("num_layers must be >= 1")
        if len(self.growth_rates) != self.num_scales:
            raise ConfigurationError(
                f"growth_rates has {len(self.growth_rates)} entries for "
                f"{self.num_scales} scales"
            )
        for k in self.growth_rates:
            if k < 2 or k % 2 != 0:
                raise ConfigurationError(
                    f"growth rates must be positive even integers, got {k}"
                )
        if self.seed_multiplier < 1:
            raise ConfigurationError("seed_multiplier must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ConfigurationError("input_shape must be (channels, height, width)")
        if self.classifier_channels < 1:
            raise ConfigurationError("classifier_channels must be >= 1")
        if isinstance(self.classifier_placement, str):
            if self.classifier_placement not in (PLACEMENT_ANYTIME, PLACEMENT_BUDGETED):
                raise ConfigurationError(
                    f"unknown classifier_placement {self.classifier_placement!r}"
                )
        else:
            layers = self.classifier_placement
            if not layers:
                raise ConfigurationError("explicit classifier_placement is empty")
            if list(layers) != sorted(set(layers)):
                raise ConfigurationError(
                    "explicit classifier layers must be strictly increasing"
                )
            if layers[0] < 1 or layers[-1] > self.num_layers:
                raise ConfigurationError(
                    f"classifier layers must lie in [1, {self.num_layers}]"
                )
            if layers[-1] != self.num_layers:
                raise ConfigurationError(
                    "explicit classifier placement must include the final layer"
                )
        if self.reduction and self.effective_scales() > 1:
            if self.num_layers < self.effective_scales():
                raise ConfigurationError(
                    "network reduction needs num_layers >= num_scales"
                )

    def effective_scales(self) -> int:
        return 1 if not self.multi_scale else self.num_scales

    def effective_growth(self) -> tuple[int, ...]:
        if not self.multi_scale:
            return (self.growth_rates[0],)
        return self.growth_rates

    def placement_layers(self) -> tuple[int, ...]:
        if not self.intermediate_classifiers:
            return (self.num_layers,)
        if isinstance(self.classifier_placement, str):
            return tuple(
                classifier_placement(self.classifier_placement, self.num_layers)
            )
        return self.classifier_placement

    def to_dict(self) -> dict:
        d = {"version": CONFIG_VERSION}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigurationError(f"unsupported config version {version}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config field(s): {', '.join(unknown)}")
        required = {"num_scales", "num_layers", "growth_rates", "num_classes", "input_shape"}
        missing = sorted(required - set(d))
        if missing:
            raise ConfigurationError(f"missing config field(s): {', '.join(missing)}")
        if isinstance(d.get("classifier_placement"), list):
            d["classifier_placement"] = tuple(d["classifier_placement"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def config_hash(config: NetworkConfig) -> str:
    """Stable hex digest of the architecture; binds checkpoints to configs."""
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def classifier_placement(kind: str, num_layers: int, num_classifiers: int | None = None):
    """Layer indices that receive classifier heads.

    anytime: every second layer starting at 4 (final layer appended if the
    stride misses it). budgeted: the k-th head sits at the k-th triangular
    number, truncated at the depth with a head forced onto the final layer.
    """
    if kind == PLACEMENT_ANYTIME:
        layers = list(range(4, num_layers + 1, 2))
        if not layers:
            raise ConfigurationError(
                f"anytime placement needs num_layers >= 4, got {num_layers}"
            )
    elif kind == PLACEMENT_BUDGETED:
        layers, k = [], 1
        while k * (k + 1) // 2 <= num_layers:
            layers.append(k * (k + 1) // 2)
            k += 1
    else:
        raise ConfigurationError(f"unknown placement kind {kind!r}")
    if num_classifiers is not None:
        if num_classifiers < 1 or num_classifiers > len(layers):
            raise ConfigurationError(
                f"cannot place {num_classifiers} classifiers within {num_layers} layers"
            )
        return layers[:num_classifiers]
    if layers[-1] != num_layers:
        layers.append(num_layers)
    return layers


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------


@dataclass
class GraphNode:
    """One typed operation of the network DAG.

    Transform kinds are composites (convolutions with their batch norms and
    activations); `params` maps parameter names to tensors and `bn_states`
    holds the running statistics. `op` distinguishes the two transition
    flavors ("pointwise" channel halving vs "downsample" scale feed).
    """

    node_id: int
    kind: str
    scale: int
    layer: int
    inputs: tuple[int, ...]
    in_channels: int
    out_channels: int
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]
    op: str = ""
    interior_channels: int = 0
    pool_k: int = 0
    params: dict = field(default_factory=dict)
    bn_states: dict = field(default_factory=dict)

    def run(self, inputs: list[T.Tensor], training: bool = False) -> T.Tensor:
        """Apply this node's composite op to its input tensors."""
        p, s = self.params, self.bn_states
        if self.kind == KIND_CONCAT:
            return T.concat_channels(inputs)
        x = inputs[0]
        if self.kind == KIND_SEED:
            stride = 1 if self.op == "same" else 2
            x = T.conv2d(x, p["conv_w"], stride=stride, padding=1, fold_batch=training)
            return T.relu(T.batch_norm(x, p["bn_g"], p["bn_b"], s["bn"], training))
        if self.kind in (KIND_HORIZONTAL, KIND_DIAGONAL):
            x = T.conv2d(x, p["conv1_w"], stride=1, padding=0, fold_batch=training)
            x = T.relu(T.batch_norm(x, p["bn1_g"], p["bn1_b"], s["bn1"], training))
            stride = 2 if self.kind == KIND_DIAGONAL else 1
            x = T.conv2d(x, p["conv2_w"], stride=stride, padding=1, fold_batch=training)
            return T.relu(T.batch_norm(x, p["bn2_g"], p["bn2_b"], s["bn2"], training))
        if self.kind == KIND_TRANSITION:
            if self.op == "pointwise":
                x = T.conv2d(x, p["conv_w"], stride=1, padding=0, fold_batch=training)
            else:
                x = T.conv2d(x, p["conv_w"], stride=2, padding=1, fold_batch=training)
            return T.relu(T.batch_norm(x, p["bn_g"], p["bn_b"], s["bn"], training))
        if self.kind == KIND_CLASSIFIER:
            x = T.conv2d(x, p["conv1_w"], stride=2, padding=1, fold_batch=training)
            x = T.relu(T.batch_norm(x, p["bn1_g"], p["bn1_b"], s["bn1"], training))
            x = T.conv2d(x, p["conv2_w"], stride=2, padding=1, fold_batch=training)
            x = T.relu(T.batch_norm(x, p["bn2_g"], p["bn2_b"], s["bn2"], training))
            x = T.avg_pool(x, self.pool_k)
            return T.linear(T.flatten(x), p["fc_w"], p["fc_b"])
        raise ConfigurationError(f"unknown node kind {self.kind!r}")


@dataclass
class NetworkGraph:
    """Topologically ordered DAG plus classifier bookkeeping."""

    config: NetworkConfig
    build_seed: int
    nodes: list[GraphNode]
    classifier_ids: list[int]
    # (layer, scale) -> dense-history channels after that layer (and any
    # transition preceding the next block), for summaries and tests
    history_channels: dict = field(default_factory=dict)
    blocks: list = field(default_factory=list)  # (first_layer, last_layer, finest_scale)
    node_flops: dict = field(default_factory=dict)  # filled by the cost model

    @property
    def num_classifiers(self) -> int:
        return len(self.classifier_ids)

    def node(self, node_id: int) -> GraphNode:
        return self.nodes[node_id]

    def parameters(self):
        """Yield (name, tensor) in a stable order."""
        for n in self.nodes:
            for key in sorted(n.params):
                yield f"node{n.node_id}.{key}", n.params[key]

    def batch_norm_states(self):
        for n in self.nodes:
            for key in sorted(n.bn_states):
                yield f"node{n.node_id}.{key}", n.bn_states[key]

    def num_parameters(self) -> int:
        return sum(t.data.size for _, t in self.parameters())

    def zero_grad(self):
        for _, t in self.parameters():
            t.zero_grad()

    def ancestors(self, node_id: int) -> set[int]:
        """All node ids the given node depends on, itself included."""
        seen: set[int] = set()
        stack = [node_id]
        while stack:
            nid = stack.pop()
            if nid in seen or nid == INPUT_ID:
                continue
            seen.add(nid)
            stack.extend(self.nodes[nid].inputs)
        return seen

    def classifier_batches(self) -> list[list[int]]:
        """Diagonal execution batches: batch k holds the nodes classifier k
        needs beyond what earlier classifiers already forced."""
        covered: set[int] = set()
        batches = []
        for cid in self.classifier_ids:
            closure = self.ancestors(cid)
            batches.append(sorted(closure - covered))
            covered |= closure
        return batches

    def summary_dict(self) -> dict:
        d = {
            "config": self.config.to_dict(),
            "config_hash": config_hash(self.config),
            "build_seed": self.build_seed,
            "num_parameters": self.num_parameters(),
            "classifier_layers": [self.nodes[c].layer for c in self.classifier_ids],
            "blocks": [list(b) for b in self.blocks],
            "history_channels": {
                f"layer{l}/scale{s}": c for (l, s), c in sorted(self.history_channels.items())
            },
            "nodes": [
                {
                    "id": n.node_id,
                    "kind": n.kind + (f":{n.op}" if n.op else ""),
                    "layer": n.layer,
                    "scale": n.scale,
                    "in_channels": n.in_channels,
                    "out_channels": n.out_channels,
                    "out_hw": list(n.out_hw),
                    "flops": self.node_flops.get(n.node_id),
                }
                for n in self.nodes
            ],
        }
        return d

    def summary_text(self) -> str:
        lines = [
            f"scales={self.config.effective_scales()} layers={self.config.num_layers} "
            f"classifiers={self.num_classifiers} params={self.num_parameters()}",
            f"config_hash={config_hash(self.config)}",
            f"classifier layers: {[self.nodes[c].layer for c in self.classifier_ids]}",
            "blocks (first, last, finest scale): " + str(self.blocks),
            f"{'id':>4} {'kind':<22} {'layer':>5} {'scale':>5} "
            f"{'in_ch':>6} {'out_ch':>6} {'out_hw':>9} {'flops':>12}",
        ]
        for n in self.nodes:
            kind = n.kind + (f":{n.op}" if n.op else "")
            fl = self.node_flops.get(n.node_id)
            lines.append(
                f"{n.node_id:>4} {kind:<22} {n.layer:>5} {n.scale:>5} "
                f"{n.in_channels:>6} {n.out_channels:>6} "
                f"{n.out_hw[0]:>4}x{n.out_hw[1]:<4} {fl if fl is not None else '-':>12}"
            )
        lines.append("history channels per (layer, scale):")
        for (l, s), c in sorted(self.history_channels.items()):
            lines.append(f"  layer {l:>3} scale {s}: {c}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------


def _halve(hw):
    return ((hw[0] + 1) // 2, (hw[1] + 1) // 2)


def _block_sizes(num_layers: int, num_blocks: int) -> list[int]:
    base, rem = divmod(num_layers, num_blocks)
    sizes = [base] * num_blocks
    for i in range(rem):  # remainder goes to the later blocks
        sizes[num_blocks - 1 - i] += 1
    return sizes


class _Builder:
    def __init__(self, config: NetworkConfig, seed: int):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.nodes: list[GraphNode] = []
        self.concat_cache: dict[tuple[int, ...], int] = {}

    def _conv_weight(self, cout, cin, kh, kw):
        std = math.sqrt(2.0 / (cin * kh * kw))
        return T.Tensor(self.rng.normal(0.0, std, (cout, cin, kh, kw)), requires_grad=True)

    def _linear_weight(self, fin, fout):
        std = math.sqrt(2.0 / fin)
        return T.Tensor(self.rng.normal(0.0, std, (fin, fout)), requires_grad=True)

    def _bn_params(self, channels):
        return (
            T.Tensor(np.ones(channels), requires_grad=True),
            T.Tensor(np.zeros(channels), requires_grad=True),
            T.BatchNormState.for_channels(channels),
        )

    def _add(self, node: GraphNode) -> int:
        self.nodes.append(node)
        return node.node_id

    def _new_id(self) -> int:
        return len(self.nodes)

    def seed_node(self, input_id, in_ch, out_ch, in_hw, scale, same_scale):
        g, b, st = self._bn_params(out_ch)
        node = GraphNode(
            node_id=self._new_id(),
            kind=KIND_SEED,
            scale=scale,
            layer=1,
            inputs=(input_id,),
            in_channels=in_ch,
            out_channels=out_ch,
            in_hw=in_hw,
            out_hw=in_hw if same_scale else _halve(in_hw),
            op="same" if same_scale else "down",
            params={"conv_w": self._conv_weight(out_ch, in_ch, 3, 3), "bn_g": g, "bn_b": b},
            bn_states={"bn": st},
        )
        return self._add(node)

    def transform_node(self, kind, input_id, in_ch, out_ch, in_hw, scale, layer):
        interior = BOTTLENECK_FACTOR * out_ch
        g1, b1, st1 = self._bn_params(interior)
        g2, b2, st2 = self._bn_params(out_ch)
        node = GraphNode(
            node_id=self._new_id(),
            kind=kind,
            scale=scale,
            layer=layer,
            inputs=(input_id,),
            in_channels=in_ch,
            out_channels=out_ch,
            in_hw=in_hw,
            out_hw=in_hw if kind == KIND_HORIZONTAL else _halve(in_hw),
            interior_channels=interior,
            params={
                "conv1_w": self._conv_weight(interior, in_ch, 1, 1),
                "bn1_g": g1,
                "bn1_b": b1,
                "conv2_w": self._conv_weight(out_ch, interior, 3, 3),
                "bn2_g": g2,
                "bn2_b": b2,
            },
            bn_states={"bn1": st1, "bn2": st2},
        )
        return self._add(node)

    def transition_node(self, op, input_id, in_ch, out_ch, in_hw, scale, layer):
        g, b, st = self._bn_params(out_ch)
        kh = 1 if op == "pointwise" else 3
        node = GraphNode(
            node_id=self._new_id(),
            kind=KIND_TRANSITION,
            scale=scale,
            layer=layer,
            inputs=(input_id,),
            in_channels=in_ch,
            out_channels=out_ch,
            in_hw=in_hw,
            out_hw=in_hw if op == "pointwise" else _halve(in_hw),
            op=op,
            params={"conv_w": self._conv_weight(out_ch, in_ch, kh, kh), "bn_g": g, "bn_b": b},
            bn_states={"bn": st},
        )
        return self._add(node)

    def concat_node(self, input_ids: list[int], scale) -> int:
        if len(input_ids) == 1:
            return input_ids[0]
        key = tuple(input_ids)
        hit = self.concat_cache.get(key)
        if hit is not None:
            return hit
        members = [self.nodes[i] for i in input_ids]
        hw = members[0].out_hw
        if any(m.out_hw != hw for m in members):
            raise ConfigurationError("concat inputs disagree on spatial size")
        node = GraphNode(
            node_id=self._new_id(),
            kind=KIND_CONCAT,
            scale=scale,
            layer=max(m.layer for m in members),
            inputs=key,
            in_channels=sum(m.out_channels for m in members),
            out_channels=sum(m.out_channels for m in members),
            in_hw=hw,
            out_hw=hw,
        )
        self.concat_cache[key] = node.node_id
        return self._add(node)

    def classifier_node(self, input_id, in_ch, in_hw, scale, layer, num_classes):
        ch = self.config.classifier_channels
        if in_ch < 1:
            raise ConfigurationError(
                f"classifier at layer {layer} has no input channels"
            )
        if min(in_hw) < 1:
            raise ConfigurationError(
                f"classifier at layer {layer} input map {in_hw} is empty"
            )
        hw1 = _halve(in_hw)
        hw2 = _halve(hw1)
        pool_k = 2 if min(hw2) >= 2 else 1  # fall back to trivial pool on tiny maps
        pooled = (hw2[0] // pool_k, hw2[1] // pool_k)
        fc_in = ch * pooled[0] * pooled[1]
        g1, b1, st1 = self._bn_params(ch)
        g2, b2, st2 = self._bn_params(ch)
        node = GraphNode(
            node_id=self._new_id(),
            kind=KIND_CLASSIFIER,
            scale=scale,
            layer=layer,
            inputs=(input_id,),
            in_channels=in_ch,
            out_channels=num_classes,
            in_hw=in_hw,
            out_hw=(1, 1),
            pool_k=pool_k,
            interior_channels=ch,
            params={
                "conv1_w": self._conv_weight(ch, in_ch, 3, 3),
                "bn1_g": g1,
                "bn1_b": b1,
                "conv2_w": self._conv_weight(ch, ch, 3, 3),
                "bn2_g": g2,
                "bn2_b": b2,
                "fc_w": self._linear_weight(fc_in, num_classes),
                "fc_b": T.Tensor(np.zeros(num_classes), requires_grad=True),
            },
            bn_states={"bn1": st1, "bn2": st2},
        )
        return self._add(node)


def build(config: NetworkConfig, seed: int = 0) -> NetworkGraph:
    """Construct the network DAG (with freshly initialized parameters).

    Node ids are assigned in creation order, which is topological. Building
    twice with the same config and seed yields identical graphs.
    """
    config.validate()
    S = config.effective_scales()
    growth = list(config.effective_growth())
    L = config.num_layers
    placement = config.placement_layers()
    in_ch, in_h, in_w = config.input_shape

    b = _Builder(config, seed)
    hist: dict[int, list[int]] = {}
    classifier_ids: list[int] = []
    history_channels: dict = {}

    if config.reduction and S > 1:
        sizes = _block_sizes(L, S)
    else:
        sizes = [L]
    blocks = []
    first = 1
    for i, size in enumerate(sizes):
        finest = (i + 1) if len(sizes) > 1 else 1
        blocks.append((first, first + size - 1, finest))
        first += size

    def hist_channels(s):
        return sum(b.nodes[i].out_channels for i in hist[s])

    def hist_hw(s):
        return b.nodes[hist[s][0]].out_hw

    def record_history(layer):
        for s in sorted(hist):
            history_channels[(layer, s)] = hist_channels(s)

    # Layer 1: seed all scales with a cascade of convolutions.
    prev_id, prev_ch, prev_hw = INPUT_ID, in_ch, (in_h, in_w)
    for s in range(1, S + 1):
        out_ch = config.seed_multiplier * growth[s - 1]
        nid = b.seed_node(prev_id, prev_ch, out_ch, prev_hw, s, same_scale=(s == 1))
        hist[s] = [nid]
        prev_id, prev_ch, prev_hw = nid, out_ch, b.nodes[nid].out_hw
        if min(prev_hw) < 1:
            raise ConfigurationError(
                f"input {in_h}x{in_w} is too small for {S} scales"
            )
    record_history(1)
    if 1 in placement:
        src = b.concat_node(hist[S], S)
        classifier_ids.append(
            b.classifier_node(src, hist_channels(S), hist_hw(S), S, 1, config.num_classes)
        )

    block_idx = 0
    for layer in range(2, L + 1):
        if block_idx + 1 < len(blocks) and layer == blocks[block_idx + 1][0]:
            # Transition: drop the finest scale, halve channels everywhere.
            end_layer = blocks[block_idx][1]
            old_finest = blocks[block_idx][2]
            new_finest = blocks[block_idx + 1][2]
            trans: dict[int, int] = {}
            for s in range(new_finest, S + 1):
                c = hist_channels(s)
                trans[s] = b.transition_node(
                    "pointwise", b.concat_node(hist[s], s), c, c // 2,
                    hist_hw(s), s, end_layer,
                )
            c_drop = hist_channels(old_finest)
            down = b.transition_node(
                "downsample", b.concat_node(hist[old_finest], old_finest),
                c_drop, c_drop // 2, hist_hw(old_finest), new_finest, end_layer,
            )
            hist = {s: [trans[s]] for s in range(new_finest + 1, S + 1)}
            hist[new_finest] = [b.concat_node([trans[new_finest], down], new_finest)]
            if config.densenet_star:
                growth = [g * 2 for g in growth]
            block_idx += 1

        finest = blocks[block_idx][2]
        new_outputs: dict[int, int] = {}
        for s in range(finest, S + 1):
            k = growth[s - 1]
            h_in = b.concat_node(hist[s], s)
            if s == finest:
                new_outputs[s] = b.transform_node(
                    KIND_HORIZONTAL, h_in, hist_channels(s), k, hist_hw(s), s, layer
                )
            else:
                h_id = b.transform_node(
                    KIND_HORIZONTAL, h_in, hist_channels(s), k // 2, hist_hw(s), s, layer
                )
                d_in = b.concat_node(hist[s - 1], s - 1)
                d_id = b.transform_node(
                    KIND_DIAGONAL, d_in, hist_channels(s - 1), k // 2,
                    hist_hw(s - 1), s, layer,
                )
                new_outputs[s] = b.concat_node([h_id, d_id], s)
        for s, nid in new_outputs.items():
            if config.dense_connectivity:
                hist[s].append(nid)
            else:
                hist[s] = [nid]
        record_history(layer)
        if layer in placement:
            src = b.concat_node(hist[S], S)
            classifier_ids.append(
                b.classifier_node(
                    src, hist_channels(S), hist_hw(S), S, layer, config.num_classes
                )
            )

    graph = NetworkGraph(
        config=config,
        build_seed=seed,
        nodes=b.nodes,
        classifier_ids=classifier_ids,
        history_channels=history_channels,
        blocks=blocks,
    )
    return graph

"""Training loop: weighted cumulative loss, Nesterov SGD, step schedule.

The optimizer update, per parameter w with gradient g, velocity v, momentum
mu, weight decay wd and learning rate lr:

    g' = g + wd * w
    v  = mu * v + g'
    w  = w - lr * (g' + mu * v)

The reference loop is single-threaded and fully seeded (init, shuffling,
data); repeated runs reproduce identical loss curves bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import binio
from . import tensor as T
from .data import Dataset
from .errors import ConfigurationError, InputError, TrainingDivergedError
from .graph import NetworkGraph, config_hash
from .runtime import forward_full, softmax_probs


@dataclass
class TrainConfig:
    """Desk-scale defaults: a proportional shrink of the usual 300-epoch
    recipe (drops at half and three quarters of the run)."""

    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    lr_drop_epochs: tuple = (15, 23)
    lr_drop_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    loss_weights: tuple | None = None  # None means w_k = 1 for every head
    seed: int = 0

    def validate(self):
        if self.lr < 0:
            raise ConfigurationError("learning rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.loss_weights is not None and any(w < 0 for w in self.loss_weights):
            raise ConfigurationError("loss weights must be nonnegative")
        if list(self.lr_drop_epochs) != sorted(self.lr_drop_epochs):
            raise ConfigurationError("lr drop epochs must be sorted")


def cumulative_loss(all_logits, labels, weights=None) -> T.Tensor:
    """Batch-mean cross entropy summed over classifiers with weights w_k."""
    if weights is None:
        weights = [1.0] * len(all_logits)
    if len(weights) != len(all_logits):
        raise ConfigurationError(
            f"got {len(weights)} loss weights for {len(all_logits)} classifiers"
        )
    total = None
    for logits, w in zip(all_logits, weights):
        term = T.mul_scalar(T.cross_entropy(logits, labels), float(w))
        total = term if total is None else T.add(total, term)
    return total


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    drops = sum(1 for d in cfg.lr_drop_epochs if d <= epoch)
    return cfg.lr * cfg.lr_drop_factor**drops


def sgd_nesterov_step(params, velocities: dict, lr: float, momentum: float,
                      weight_decay: float):
    """One Nesterov momentum update over (name, tensor) parameter pairs."""
    for name, p in params:
        g = p.grad + weight_decay * p.data
        v = velocities.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = momentum * v + g
        velocities[name] = v
        p.data -= lr * (g + momentum * v)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: list = field(default_factory=list)  # per classifier


def _accuracy_per_classifier(graph, images, labels, chunk_size=256):
    labels = np.asarray(labels)
    hits = np.zeros(graph.num_classifiers)
    for start in range(0, len(labels), chunk_size):
        stop = min(start + chunk_size, len(labels))
        logits = forward_full(graph, images[start:stop], training=False)
        for k, lg in enumerate(logits):
            hits[k] += (softmax_probs(lg.data).argmax(axis=1) == labels[start:stop]).sum()
    return (hits / len(labels)).tolist()


def train(graph: NetworkGraph, train_set: Dataset, cfg: TrainConfig,
          val_set: Dataset | None = None, log=None) -> list[EpochMetrics]:
    """Shuffled minibatch SGD on the weighted cumulative loss.

    Records per-epoch train loss and per-classifier validation accuracy.
    Raises TrainingDivergedError if the loss leaves the finite range.
    """
    cfg.validate()
    if cfg.loss_weights is not None and len(cfg.loss_weights) != graph.num_classifiers:
        raise ConfigurationError(
            f"loss_weights has {len(cfg.loss_weights)} entries for "
            f"{graph.num_classifiers} classifiers"
        )
    rng = np.random.default_rng(cfg.seed)
    params = list(graph.parameters())
    velocities: dict = {}
    history: list[EpochMetrics] = []
    n = len(train_set)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                logits = forward_full(graph, train_set.images[idx], training=True)
                loss = cumulative_loss(logits, train_set.labels[idx], cfg.loss_weights)
            except InputError as e:
                raise TrainingDivergedError(
                    f"non-finite values at epoch {epoch}, step {start // cfg.batch_size}: {e}"
                ) from e
            graph.zero_grad()
            T.backward(loss)
            sgd_nesterov_step(params, velocities, lr, cfg.momentum, cfg.weight_decay)
            losses.append(float(loss.data))
        metrics = EpochMetrics(epoch=epoch, lr=lr, train_loss=float(np.mean(losses)))
        if val_set is not None:
            metrics.val_accuracy = _accuracy_per_classifier(
                graph, val_set.images, val_set.labels
            )
        history.append(metrics)
        if log:
            acc = " ".join(f"{a:.3f}" for a in metrics.val_accuracy)
            log(f"epoch {epoch:3d} lr {lr:.4f} loss {metrics.train_loss:.4f} val [{acc}]")
    return history


def write_metrics_csv(path, history: list[EpochMetrics], num_classifiers: int,
                      hash_line: str | None = None):
    with open(path, "w", newline="") as f:
        if hash_line:
            f.write(f"# config_hash={hash_line}\n")
        w = csv.writer(f)
        w.writerow(
            ["epoch", "lr", "train_loss"]
            + [f"val_acc_clf{k + 1}" for k in range(num_classifiers)]
        )
        for m in history:
            accs = [repr(a) for a in m.val_accuracy] or [""] * num_classifiers
            w.writerow([m.epoch, repr(m.lr), repr(m.train_loss)] + accs)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, graph: NetworkGraph):
    """Parameters plus batch-norm running stats, keyed by the config hash."""
    arrays = {name: t.data for name, t in graph.parameters()}
    for name, state in graph.batch_norm_states():
        arrays[f"{name}.running_mean"] = state.mean
        arrays[f"{name}.running_var"] = state.var
    binio.write_bundle(path, arrays, meta=config_hash(graph.config))


def load_checkpoint(path, graph: NetworkGraph):
    """Restore a checkpoint into a freshly built graph of the same config."""
    arrays, meta = binio.read_bundle(path)
    expected = config_hash(graph.config)
    if meta != expected:
        raise ConfigurationError(
            f"checkpoint config hash {meta[:12]}... does not match graph "
            f"config {expected[:12]}..."
        )
    for name, t in graph.parameters():
        if name not in arrays:
            raise InputError(f"checkpoint is missing parameter {name}")
        if arrays[name].shape != t.data.shape:
            raise InputError(f"checkpoint parameter {name} has wrong shape")
        t.data = arrays[name]
    for name, state in graph.batch_norm_states():
        state.mean = arrays[f"{name}.running_mean"]
        state.var = arrays[f"{name}.running_var"]

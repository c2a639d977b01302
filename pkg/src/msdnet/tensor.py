"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is deliberately minimal: exactly the primitives needed to express
a multi-scale dense network with early-exit classifier heads and its weighted
cross-entropy training loss (2-D convolution, channel concatenation, batch
normalization, ReLU, average pooling, linear, softmax, cross entropy, plus a
little scalar glue).

Every op records an `OpRecord` on its output; `backward(loss)` replays the
tape in reverse topological order exactly once. Tensors are immutable after
creation except for parameter updates between tapes; a tape must stay
confined to one thread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError, UsageError


class OpRecord:
    """Backward-pass bookkeeping for one recorded op.

    `backward_fn` maps the output gradient to one gradient per input (None
    for inputs that do not need one). A record may be replayed only once.
    """

    __slots__ = ("kind", "inputs", "backward_fn", "consumed")

    def __init__(self, kind, inputs, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """A dense float64 array, optionally carrying a gradient buffer.

    Parameters (requires_grad=True leaves) allocate a zero gradient buffer
    eagerly so that "unreached parameter has zero gradient" holds literally
    after a backward pass. Non-finite values are rejected at construction.
    """

    __slots__ = ("data", "grad", "requires_grad", "record")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise InputError("tensor contains non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.record = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm op, updated in training mode."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def for_channels(cls, channels: int) -> "BatchNormState":
        return cls(mean=np.zeros(channels), var=np.ones(channels))


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _result(data, kind, inputs, backward_fn):
    out = Tensor(data)
    if any(t.requires_grad or t.record is not None for t in inputs):
        out.record = OpRecord(kind, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _patches(padded, kh, kw, stride, batch_first):
    b, c, hp, wp = padded.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sb, sc, sh, sw = padded.strides
    if batch_first:
        shape = (b, c, kh, kw, ho, wo)
        strides = (sb, sc, sh, sw, stride * sh, stride * sw)
    else:
        shape = (c, kh, kw, b, ho, wo)
        strides = (sc, sh, sw, sb, stride * sh, stride * sw)
    view = np.lib.stride_tricks.as_strided(
        padded, shape=shape, strides=strides, writeable=False
    )
    return np.ascontiguousarray(view)


def _scatter_cols(cols6, padded_shape, kh, kw, stride):
    """Scatter-add (B,C,kh,kw,Ho,Wo) gradients back onto the padded input."""
    b, c, hp, wp = padded_shape
    ho, wo = cols6.shape[4], cols6.shape[5]
    out = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols6[
                :, :, i, j
            ]
    return out


def _pad_input(x, padding):
    if not padding:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
    out[:, :, padding : padding + h, padding : padding + w] = x
    return out


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0,
           fold_batch: bool = False) -> Tensor:
    """Cross-correlate x[B,Cin,H,W] with weight[Cout,Cin,Kh,Kw].

    Output spatial dims follow the usual floor rule
    H' = (H + 2*padding - Kh)//stride + 1 and must be positive.

    fold_batch=False runs one GEMM per sample, which keeps every sample's
    result bitwise independent of which other samples share the batch (the
    inference paths rely on that for exact early-exit masking).
    fold_batch=True folds the whole batch into single GEMMs instead; it is
    faster and is what the training loop uses, where batch composition is
    fixed anyway.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ConfigurationError("conv2d expects 4-d input and weight")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin_w != cin:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {cin}, weight expects {cin_w}"
        )
    if stride < 1:
        raise ConfigurationError("conv2d stride must be >= 1")
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"conv2d output size would be {ho}x{wo} for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )

    ckk = cin * kh * kw
    wmat = weight.data.reshape(cout, ckk)

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        # pointwise convolution: pure channel mixing, no patch extraction
        n = h * w
        if fold_batch:
            cols = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(cin, b * n)
            out = np.ascontiguousarray(
                (wmat @ cols).reshape(cout, b, h, w).transpose(1, 0, 2, 3)
            )
        else:
            cols = x.data.reshape(b, cin, n)
            out = np.matmul(wmat, cols).reshape(b, cout, h, w)

        def backward_pointwise(go):
            if fold_batch:
                go2 = np.ascontiguousarray(go.transpose(1, 0, 2, 3)).reshape(cout, -1)
                gw = (go2 @ cols.T).reshape(weight.shape)
                gx = np.ascontiguousarray(
                    (wmat.T @ go2).reshape(cin, b, h, w).transpose(1, 0, 2, 3)
                )
            else:
                go2 = go.reshape(b, cout, n)
                go_flat = np.ascontiguousarray(go2.transpose(1, 0, 2)).reshape(cout, -1)
                cols_flat = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(cin, -1)
                gw = (go_flat @ cols_flat.T).reshape(weight.shape)
                gx = np.matmul(wmat.T, go2).reshape(b, cin, h, w)
            return gx, gw

        return _result(out, "conv2d", (x, weight), backward_pointwise)

    padded = _pad_input(x.data, padding)
    if fold_batch:
        cols = _patches(padded, kh, kw, stride, batch_first=False).reshape(ckk, b * ho * wo)
        out = np.ascontiguousarray(
            (wmat @ cols).reshape(cout, b, ho, wo).transpose(1, 0, 2, 3)
        )
    else:
        cols = _patches(padded, kh, kw, stride, batch_first=True).reshape(b, ckk, ho * wo)
        out = np.matmul(wmat, cols).reshape(b, cout, ho, wo)

    def backward(go):
        if fold_batch:
            go2 = np.ascontiguousarray(go.transpose(1, 0, 2, 3)).reshape(cout, -1)
            gw = (go2 @ cols.T).reshape(weight.shape)
            gcols = (wmat.T @ go2).reshape(cin, kh, kw, b, ho, wo)
            gcols = np.ascontiguousarray(gcols.transpose(3, 0, 1, 2, 4, 5))
        else:
            go2 = go.reshape(b, cout, ho * wo)
            go_flat = np.ascontiguousarray(go2.transpose(1, 0, 2)).reshape(cout, -1)
            cols_flat = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(ckk, -1)
            gw = (go_flat @ cols_flat.T).reshape(weight.shape)
            gcols = (wmat.T @ go_flat).reshape(ckk, b, ho * wo).transpose(1, 0, 2)
            gcols = gcols.reshape(b, cin, kh, kw, ho, wo)
        gx = _scatter_cols(gcols, (b, cin, hp, wp), kh, kw, stride)
        if padding:
            gx = gx[:, :, padding : padding + h, padding : padding + w]
        return gx, gw

    return _result(out, "conv2d", (x, weight), backward)


def strided_downsample_conv(x: Tensor, weight: Tensor) -> Tensor:
    """3x3 stride-2 pad-1 convolution; halves spatial dims (ceil)."""
    if weight.data.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ConfigurationError("strided downsample expects a 3x3 kernel")
    return conv2d(x, weight, stride=2, padding=1)


# ---------------------------------------------------------------------------
# channel concatenation
# ---------------------------------------------------------------------------


def concat_channels(inputs: list[Tensor]) -> Tensor:
    """Concatenate feature maps along the channel axis, in input order."""
    if not inputs:
        raise ConfigurationError("concat_channels needs at least one input")
    if len(inputs) == 1:
        return inputs[0]
    first = inputs[0].shape
    for t in inputs[1:]:
        if t.data.ndim != 4 or t.shape[0] != first[0] or t.shape[2:] != first[2:]:
            raise ConfigurationError(
                f"concat_channels shape mismatch: {t.shape} vs {first}"
            )
    out = np.concatenate([t.data for t in inputs], axis=1)
    sizes = [t.shape[1] for t in inputs]
    offsets = np.cumsum([0] + sizes)

    def backward(go):
        return tuple(go[:, offsets[i] : offsets[i + 1]] for i in range(len(sizes)))

    return _result(out, "concat", tuple(inputs), backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch norm over (batch, height, width).

    Training mode normalizes with biased batch statistics and folds them
    into the running stats with exponential moving average; eval mode uses
    the running stats. Epsilon keeps zero-variance channels finite.
    """
    if x.data.ndim != 4:
        raise ConfigurationError("batch_norm expects a 4-d feature map")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError("batch_norm gamma/beta must be per-channel vectors")

    g = gamma.data.reshape(1, c, 1, 1)
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        state.mean *= 1.0 - momentum
        state.mean += momentum * mean
        state.var *= 1.0 - momentum
        state.var += momentum * var
    else:
        mean = state.mean
        var = state.var
        centered = x.data - mean.reshape(1, c, 1, 1)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std.reshape(1, c, 1, 1)
    out = g * xhat + beta.data.reshape(1, c, 1, 1)

    n = x.shape[0] * x.shape[2] * x.shape[3]

    def backward(go):
        gbeta = go.sum(axis=(0, 2, 3))
        ggamma = (go * xhat).sum(axis=(0, 2, 3))
        gxhat = go * g
        if training:
            # Batch statistics depend on x, so the gradient couples elements.
            gx = (
                inv_std.reshape(1, c, 1, 1)
                * (
                    gxhat
                    - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / n
                )
            )
        else:
            gx = gxhat * inv_std.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return _result(out, "batch_norm", (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# elementwise / pooling / linear
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(go):
        return (go * mask,)

    return _result(np.where(mask, x.data, 0.0), "relu", (x,), backward)


def avg_pool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling; trailing rows/cols are dropped."""
    if x.data.ndim != 4:
        raise ConfigurationError("avg_pool expects a 4-d feature map")
    b, c, h, w = x.shape
    if k < 1 or h < k or w < k:
        raise ConfigurationError(f"avg_pool window {k} too large for {h}x{w} map")
    ho, wo = h // k, w // k
    cropped = x.data[:, :, : ho * k, : wo * k]
    out = cropped.reshape(b, c, ho, k, wo, k).mean(axis=(3, 5))

    def backward(go):
        gx = np.zeros_like(x.data)
        gx[:, :, : ho * k, : wo * k] = np.repeat(
            np.repeat(go, k, axis=2), k, axis=3
        ) / (k * k)
        return (gx,)

    return _result(out, "avg_pool", (x,), backward)


def flatten(x: Tensor) -> Tensor:
    b = x.shape[0]
    out = x.data.reshape(b, -1)

    def backward(go):
        return (go.reshape(x.shape),)

    return _result(out, "flatten", (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[B,F] @ weight[F,O] + bias[O]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ConfigurationError("linear expects 2-d input and weight")
    if x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ConfigurationError(
            f"linear shape mismatch: x {x.shape}, w {weight.shape}, b {bias.shape}"
        )
    # einsum keeps each row's reduction order independent of batch size.
    out = np.einsum("bf,fo->bo", x.data, weight.data) + bias.data

    def backward(go):
        return go @ weight.data.T, x.data.T @ go, go.sum(axis=0)

    return _result(out, "linear", (x, weight, bias), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax of logits [B,C]; rows sum to one and stay positive."""
    if x.data.ndim != 2:
        raise ConfigurationError("softmax expects 2-d logits")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(go):
        dot = (go * p).sum(axis=1, keepdims=True)
        return (p * (go - dot),)

    return _result(p, "softmax", (x,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.data.ndim != 2:
        raise ConfigurationError("cross_entropy expects 2-d logits")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if y.shape[0] != b:
        raise InputError(f"cross_entropy got {y.shape[0]} labels for batch of {b}")
    if y.min() < 0 or y.max() >= c:
        raise InputError(f"label out of range [0, {c})")
    m = logits.data.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits.data - m).sum(axis=1))
    losses = lse - logits.data[np.arange(b), y]
    out = np.array(losses.mean())

    def backward(go):
        p = np.exp(logits.data - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), y] -= 1.0
        return (go * p / b,)

    return _result(out, "cross_entropy", (logits,), backward)


# ---------------------------------------------------------------------------
# scalar glue for losses and tests
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(go):
        return go, go.copy()  # distinct buffers: accumulators may be mutated

    return _result(a.data + b.data, "add", (a, b), backward)


def mul_scalar(x: Tensor, s: float) -> Tensor:
    def backward(go):
        return (go * s,)

    return _result(x.data * s, "mul_scalar", (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    def backward(go):
        return (np.broadcast_to(go, x.shape).copy(),)

    return _result(np.array(x.data.sum()), "sum", (x,), backward)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad of every parameter the loss depends on.

    The loss must be scalar and produced by a recorded tape; replaying the
    same tape a second time raises UsageError. Parameters not reachable
    from the loss keep their (zeroed) gradient buffers untouched.
    """
    if loss.data.size != 1:
        raise UsageError("backward expects a scalar loss tensor")
    if loss.record is None:
        if loss.requires_grad:
            loss.grad += 1.0
            return
        raise UsageError("loss tensor is not attached to a tape")
    if loss.record.consumed:
        raise UsageError("backward was already run on this tape")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.record is not None:
            for parent in node.record.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        rec = node.record
        if rec is None:
            continue
        go = grads.pop(id(node), None)
        if go is None:
            continue
        if rec.consumed:
            raise UsageError("op record replayed twice in one tape")
        rec.consumed = True
        for parent, g in zip(rec.inputs, rec.backward_fn(go)):
            if g is None:
                continue
            if parent.requires_grad:
                parent.grad += g
            elif parent.record is not None:
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = g.copy() if g.base is not None else g
                else:
                    acc += g
        rec.backward_fn = None  # free saved intermediates

import math

import numpy as np
import pytest

from msdnet import tensor as T
from msdnet.errors import ConfigurationError, InputError, UsageError

from gradcheck import max_rel_err, random_tensor


def scalar_loss(t):
    return T.tensor_sum(t)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def test_conv2d_all_ones_sums_kernel():
    x = T.Tensor(np.ones((1, 1, 3, 3)))
    w = T.Tensor(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, w)
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 9.0


def test_conv2d_1x1_kernel_scales():
    x = T.Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
    w = T.Tensor([[[[2.0]]]])
    out = T.conv2d(x, w)
    assert np.array_equal(out.data[0, 0], [[2.0, 4.0], [6.0, 8.0]])


def test_conv2d_matches_direct_convolution():
    # brute-force cross-correlation as an independent oracle
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    stride, pad = 2, 1
    out = T.conv2d(T.Tensor(x), T.Tensor(w), stride=stride, padding=pad).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (xp.shape[2] - 3) // stride + 1
    wo = (xp.shape[3] - 3) // stride + 1
    expect = np.zeros((2, 4, ho, wo))
    for b in range(2):
        for co in range(4):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride : i * stride + 3, j * stride : j * stride + 3]
                    expect[b, co, i, j] = (patch * w[co]).sum()
    assert np.allclose(out, expect, atol=1e-12)


def test_conv2d_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    x = random_tensor(rng, (2, 3, 8, 8))
    w = random_tensor(rng, (4, 3, 3, 3))
    err = max_rel_err(lambda: scalar_loss(T.conv2d(x, w, stride=1, padding=1)), [x, w])
    assert err <= 1e-4


def test_conv2d_shape_errors():
    x = T.Tensor(np.ones((1, 2, 4, 4)))
    w = T.Tensor(np.ones((1, 3, 3, 3)))
    with pytest.raises(ConfigurationError):
        T.conv2d(x, w)
    with pytest.raises(ConfigurationError):
        T.conv2d(x, T.Tensor(np.ones((1, 2, 6, 6))))  # kernel larger than input


def test_strided_downsample_shapes():
    w = T.Tensor(np.ones((1, 1, 3, 3)))
    assert T.strided_downsample_conv(T.Tensor(np.ones((1, 1, 8, 8))), w).shape == (1, 1, 4, 4)
    assert T.strided_downsample_conv(T.Tensor(np.ones((1, 1, 7, 7))), w).shape == (1, 1, 4, 4)


def test_strided_downsample_gradients():
    rng = np.random.default_rng(1)
    x = random_tensor(rng, (1, 2, 7, 7))
    w = random_tensor(rng, (3, 2, 3, 3))
    err = max_rel_err(lambda: scalar_loss(T.strided_downsample_conv(x, w)), [x, w])
    assert err <= 1e-4


# ---------------------------------------------------------------------------
# concat
# ---------------------------------------------------------------------------


def test_concat_single_input_is_identity():
    x = T.Tensor(np.arange(8.0).reshape(1, 2, 2, 2))
    assert T.concat_channels([x]) is x


def test_concat_channel_order():
    a = T.Tensor(np.ones((1, 2, 3, 3)))
    b = T.Tensor(2 * np.ones((1, 3, 3, 3)))
    out = T.concat_channels([a, b])
    assert out.shape == (1, 5, 3, 3)
    assert np.all(out.data[:, :2] == 1.0)
    assert np.all(out.data[:, 2:] == 2.0)


def test_concat_backward_is_split():
    rng = np.random.default_rng(2)
    a = random_tensor(rng, (2, 2, 3, 3))
    b = random_tensor(rng, (2, 1, 3, 3))
    loss = scalar_loss(T.concat_channels([a, b]))
    T.backward(loss)
    assert np.array_equal(a.grad, np.ones(a.shape))
    assert np.array_equal(b.grad, np.ones(b.shape))


def test_concat_then_split_roundtrip():
    rng = np.random.default_rng(7)
    parts = [T.Tensor(rng.normal(size=(2, c, 4, 4))) for c in (1, 3, 2)]
    out = T.concat_channels(parts).data
    offsets = np.cumsum([0, 1, 3, 2])
    for i, part in enumerate(parts):
        assert np.array_equal(out[:, offsets[i] : offsets[i + 1]], part.data)


def test_concat_rejects_mismatched_inputs():
    with pytest.raises(ConfigurationError):
        T.concat_channels([T.Tensor(np.ones((1, 1, 2, 2))), T.Tensor(np.ones((2, 1, 2, 2)))])


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------


def test_batch_norm_zero_centers_constant_channel():
    x = T.Tensor(np.full((4, 1, 2, 2), 3.7))
    g = T.Tensor(np.ones(1))
    b = T.Tensor(np.zeros(1))
    state = T.BatchNormState.for_channels(1)
    out = T.batch_norm(x, g, b, state, training=True)
    assert np.allclose(out.data, 0.0, atol=1e-9)


def test_batch_norm_gamma_zero_gives_beta():
    rng = np.random.default_rng(4)
    x = T.Tensor(rng.normal(size=(3, 2, 2, 2)))
    g = T.Tensor(np.zeros(2))
    b = T.Tensor(np.array([1.5, -0.5]))
    out = T.batch_norm(x, g, b, T.BatchNormState.for_channels(2), training=True)
    assert np.allclose(out.data[:, 0], 1.5)
    assert np.allclose(out.data[:, 1], -0.5)


def test_batch_norm_updates_running_stats():
    rng = np.random.default_rng(5)
    x = T.Tensor(rng.normal(2.0, 1.0, size=(8, 1, 4, 4)))
    state = T.BatchNormState.for_channels(1)
    T.batch_norm(x, T.Tensor(np.ones(1)), T.Tensor(np.zeros(1)), state, training=True)
    batch_mean = x.data.mean()
    assert np.allclose(state.mean, 0.1 * batch_mean)
    # eval mode must not touch the stats
    before = state.mean.copy()
    T.batch_norm(x, T.Tensor(np.ones(1)), T.Tensor(np.zeros(1)), state, training=False)
    assert np.array_equal(state.mean, before)


def test_batch_norm_gradients_train_mode():
    rng = np.random.default_rng(6)
    x = random_tensor(rng, (4, 2, 3, 3))
    g = T.Tensor(rng.uniform(0.5, 1.5, 2), requires_grad=True)
    b = random_tensor(rng, (2,))
    state = T.BatchNormState.for_channels(2)

    def loss():
        out = T.batch_norm(x, g, b, state, training=True)
        return T.tensor_sum(T.relu(out))

    assert max_rel_err(loss, [x, g, b]) <= 1e-4


def test_batch_norm_eval_mode_gradients():
    rng = np.random.default_rng(16)
    x = random_tensor(rng, (2, 2, 2, 2))
    g = random_tensor(rng, (2,))
    b = random_tensor(rng, (2,))
    state = T.BatchNormState(mean=rng.normal(size=2), var=rng.uniform(0.5, 2.0, 2))
    err = max_rel_err(
        lambda: scalar_loss(T.batch_norm(x, g, b, state, training=False)), [x, g, b]
    )
    assert err <= 1e-4


def test_batch_norm_single_sample_zero_variance():
    x = T.Tensor(np.full((1, 1, 1, 1), 5.0))
    out = T.batch_norm(
        x, T.Tensor(np.ones(1)), T.Tensor(np.zeros(1)),
        T.BatchNormState.for_channels(1), training=True,
    )
    assert np.isfinite(out.data).all()


# ---------------------------------------------------------------------------
# relu / pool / linear / softmax / cross entropy
# ---------------------------------------------------------------------------


def test_relu_derivative_values():
    for v, expect in ((2.0, 1.0), (-2.0, 0.0)):
        x = T.Tensor(np.array([[v]]).reshape(1, 1, 1, 1), requires_grad=True)
        T.backward(scalar_loss(T.relu(x)))
        assert x.grad.reshape(()) == expect


def test_avg_pool_values_and_gradient():
    x = T.Tensor(np.arange(16.0).reshape(1, 1, 4, 4), requires_grad=True)
    out = T.avg_pool(x, 2)
    assert np.array_equal(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    T.backward(scalar_loss(out))
    assert np.allclose(x.grad, 0.25)


def test_avg_pool_crops_trailing_edge():
    x = T.Tensor(np.ones((1, 1, 3, 3)), requires_grad=True)
    out = T.avg_pool(x, 2)
    assert out.shape == (1, 1, 1, 1)
    T.backward(scalar_loss(out))
    assert x.grad[0, 0, 2, 2] == 0.0  # cropped pixels get no gradient


def test_linear_gradients():
    rng = np.random.default_rng(8)
    x = random_tensor(rng, (3, 4))
    w = random_tensor(rng, (4, 2))
    b = random_tensor(rng, (2,))
    assert max_rel_err(lambda: scalar_loss(T.linear(x, w, b)), [x, w, b]) <= 1e-4


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(9)
    for _ in range(20):
        p = T.softmax(T.Tensor(rng.uniform(-30, 30, size=(4, 6)))).data
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p > 0)


def test_softmax_gradient():
    # route a non-trivial upstream gradient through softmax's backward by
    # composing it with cross entropy (probabilities fed back in as logits)
    rng = np.random.default_rng(10)
    x = random_tensor(rng, (2, 5))
    labels = rng.integers(0, 5, size=2)
    err = max_rel_err(lambda: T.cross_entropy(T.softmax(x), labels), [x])
    assert err <= 1e-4


def test_uniform_logits_cross_entropy_is_log_classes():
    logits = T.Tensor(np.zeros((1, 4)))
    loss = T.cross_entropy(logits, [2])
    assert math.isclose(float(loss.data), math.log(4.0), rel_tol=1e-12)


def test_cross_entropy_gradient_closed_form():
    rng = np.random.default_rng(11)
    logits = T.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    labels = rng.integers(0, 3, size=5)
    T.backward(T.cross_entropy(logits, labels))
    p = T.softmax(T.Tensor(logits.data)).data
    onehot = np.zeros((5, 3))
    onehot[np.arange(5), labels] = 1.0
    assert np.allclose(logits.grad, (p - onehot) / 5, atol=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(InputError):
        T.cross_entropy(T.Tensor(np.zeros((1, 3))), [3])


# ---------------------------------------------------------------------------
# backward mechanics
# ---------------------------------------------------------------------------


def test_sum_gradient_is_ones():
    w = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.backward(T.tensor_sum(w))
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_zero_scaled_loss_gives_zero_grads():
    w = T.Tensor(np.ones((2, 2)), requires_grad=True)
    T.backward(T.mul_scalar(T.tensor_sum(w), 0.0))
    assert np.array_equal(w.grad, np.zeros((2, 2)))


def test_unreachable_parameter_keeps_zero_grad():
    a = T.Tensor(np.ones(3), requires_grad=True)
    b = T.Tensor(np.ones(3), requires_grad=True)
    T.backward(T.tensor_sum(a))
    assert np.array_equal(b.grad, np.zeros(3))


def test_second_backward_raises():
    w = T.Tensor(np.ones(2), requires_grad=True)
    loss = T.tensor_sum(w)
    T.backward(loss)
    with pytest.raises(UsageError):
        T.backward(loss)


def test_gradient_accumulates_over_shared_subexpression():
    w = T.Tensor(np.ones(2), requires_grad=True)
    s = T.mul_scalar(w, 2.0)
    loss = T.tensor_sum(T.add(s, s))
    T.backward(loss)
    assert np.array_equal(w.grad, np.full(2, 4.0))


def test_non_finite_values_rejected():
    with pytest.raises(InputError):
        T.Tensor(np.array([1.0, np.nan]))


def test_forward_deterministic_bit_for_bit():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    a = T.conv2d(T.Tensor(x), T.Tensor(w), padding=1).data
    b = T.conv2d(T.Tensor(x), T.Tensor(w), padding=1).data
    assert np.array_equal(a, b)

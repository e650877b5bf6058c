"""Layer forward/backward checks against hand oracles and finite differences."""

import numpy as np
import pytest

from filter_triage.errors import ConfigurationError, InputError, UsageError
from filter_triage.nn import functional as F
from filter_triage.nn.gradcheck import max_relative_error, numerical_gradient

from oracles import conv2d_naive

TOL = 1e-4
H = 1e-5


def _loss_weights(shape, rng):
    # random projection turns any output tensor into a scalar loss
    return rng.normal(size=shape)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_scaling_identity():
    x = np.ones((1, 1, 3, 3))
    w = np.full((1, 1, 1, 1), 2.0)
    out, _ = F.conv2d_forward(x, w, np.zeros(1), 1, 0)
    assert out.shape == (1, 1, 3, 3)
    assert np.allclose(out, 2.0)


def test_conv_bias_only():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 5))
    w = np.zeros((4, 3, 3, 3))
    out, _ = F.conv2d_forward(x, w, np.array([0.0, 1.5, -2.0, 7.0]), 1, 1)
    for f, c in enumerate([0.0, 1.5, -2.0, 7.0]):
        assert np.allclose(out[:, f], c)


def test_conv_averaging_kernel_on_ramp():
    # 4x4 ramp 0..15; 3x3 mean kernel picks out the window means
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    w = np.full((1, 1, 3, 3), 1.0 / 9.0)
    out, _ = F.conv2d_forward(x, w, np.zeros(1), 1, 0)
    assert np.allclose(out[0, 0], [[5.0, 6.0], [9.0, 10.0]])


@pytest.mark.parametrize("geometry", [
    (2, 3, 8, 8, 4, 3, 1, 1),
    (2, 3, 9, 7, 4, 3, 1, 0),
    (1, 2, 8, 8, 3, 3, 2, 1),
    (2, 4, 6, 6, 5, 1, 1, 0),
    (2, 2, 7, 7, 3, 2, 1, 2),
])
def test_conv_forward_matches_naive(geometry):
    b, c, h, w, f, k, s, p = geometry
    rng = np.random.default_rng(hash(geometry) % 2 ** 31)
    x = rng.normal(size=(b, c, h, w))
    weights = rng.normal(size=(f, c, k, k))
    bias = rng.normal(size=f)
    out, _ = F.conv2d_forward(x, weights, bias, s, p)
    assert np.allclose(out, conv2d_naive(x, weights, bias, s, p), atol=1e-10)


def test_conv_backward_zero_grad_out():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    out, cache = F.conv2d_forward(x, w, np.zeros(3), 1, 1)
    gx, gw, gb = F.conv2d_backward(cache, np.zeros_like(out))
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_grad_bias_is_channel_sum():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    out, cache = F.conv2d_forward(x, w, np.zeros(3), 1, 1)
    go = rng.normal(size=out.shape)
    _, _, gb = F.conv2d_backward(cache, go)
    assert np.allclose(gb, go.sum(axis=(0, 2, 3)), atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 1), (1, 0), (2, 1)])
def test_conv_gradients_match_finite_differences(stride, padding):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out, cache = F.conv2d_forward(x, w, b, stride, padding)
    r = _loss_weights(out.shape, rng)
    gx, gw, gb = F.conv2d_backward(cache, r)

    assert max_relative_error(gx, numerical_gradient(
        lambda v: (F.conv2d_forward(v, w, b, stride, padding)[0] * r).sum(), x, H)) < TOL
    assert max_relative_error(gw, numerical_gradient(
        lambda v: (F.conv2d_forward(x, v, b, stride, padding)[0] * r).sum(), w, H)) < TOL
    assert max_relative_error(gb, numerical_gradient(
        lambda v: (F.conv2d_forward(x, w, v, stride, padding)[0] * r).sum(), b, H)) < TOL


def test_conv_shape_mismatch_raises():
    with pytest.raises(ConfigurationError):
        F.conv2d_forward(np.zeros((1, 3, 8, 8)), np.zeros((2, 4, 3, 3)), np.zeros(2))
    with pytest.raises(ConfigurationError):
        F.conv2d_forward(np.zeros((1, 3, 2, 2)), np.zeros((2, 3, 5, 5)), np.zeros(2))


def test_conv_backward_without_cache_raises():
    with pytest.raises(UsageError):
        F.conv2d_backward(None, np.zeros((1, 1, 1, 1)))


# ---------------------------------------------------------------------------
# relu / maxpool
# ---------------------------------------------------------------------------

def test_relu_example():
    out, cache = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
    assert np.allclose(out, [0.0, 0.0, 2.0])
    assert np.allclose(F.relu_backward(cache, np.ones(3)), [0.0, 0.0, 1.0])


def test_maxpool_simple_window():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out, cache = F.maxpool_forward(x, 2)
    assert out.reshape(()) == 4.0
    g = F.maxpool_backward(cache, np.full((1, 1, 1, 1), 3.5))
    assert g[0, 0, 1, 1] == 3.5 and g.sum() == 3.5


def test_maxpool_tie_goes_first_row_major():
    x = np.full((1, 1, 2, 2), 7.0)
    out, cache = F.maxpool_forward(x, 2)
    g = F.maxpool_backward(cache, np.ones((1, 1, 1, 1)))
    assert g[0, 0, 0, 0] == 1.0 and g.sum() == 1.0


@pytest.mark.parametrize("k,s,shape", [(2, 2, (2, 3, 8, 8)), (3, 2, (1, 2, 7, 7)),
                                       (2, 1, (1, 2, 5, 5))])
def test_maxpool_gradcheck(k, s, shape):
    rng = np.random.default_rng(4)
    # spread values so finite differences never straddle an argmax switch
    x = rng.permutation(np.arange(np.prod(shape), dtype=np.float64)).reshape(shape)
    out, cache = F.maxpool_forward(x, k, s)
    r = _loss_weights(out.shape, rng)
    gx = F.maxpool_backward(cache, r)
    num = numerical_gradient(lambda v: (F.maxpool_forward(v, k, s)[0] * r).sum(), x, H)
    assert max_relative_error(gx, num) < TOL


def test_maxpool_fast_and_general_paths_agree():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 6, 6))
    out_fast, cache_fast = F.maxpool_forward(x, 2, 2)
    windows = np.lib.stride_tricks.sliding_window_view(x, (2, 2), axis=(2, 3))
    ref = windows[:, :, ::2, ::2].reshape(2, 3, 3, 3, 4).max(axis=-1)
    assert np.allclose(out_fast, ref)
    go = rng.normal(size=out_fast.shape)
    g_fast = F.maxpool_backward(cache_fast, go)
    # general path on the same input (odd spatial size forces it)
    out_gen, cache_gen = F.maxpool_forward(x[:, :, :5, :5], 2, 2)
    assert out_gen.shape == (2, 3, 2, 2)


# ---------------------------------------------------------------------------
# batchnorm
# ---------------------------------------------------------------------------

def test_batchnorm_train_normalizes_channels():
    rng = np.random.default_rng(6)
    x = rng.normal(loc=3.0, scale=2.5, size=(8, 4, 5, 5))
    gamma, beta = np.ones(4), np.zeros(4)
    rm, rv = np.zeros(4), np.ones(4)
    out, _, new_m, new_v = F.batchnorm_forward(x, gamma, beta, rm, rv, "train")
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-7)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    # running stats moved toward the batch statistics
    assert np.allclose(new_m, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-7)


def test_batchnorm_eval_uses_running_stats_and_is_pure():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 3, 4, 4))
    gamma, beta = np.array([1.0, 2.0, 0.5]), np.array([0.0, -1.0, 3.0])
    rm, rv = np.array([0.1, -0.2, 0.3]), np.array([1.5, 0.7, 2.0])
    out, _, m2, v2 = F.batchnorm_forward(x, gamma, beta, rm, rv, "eval")
    expected = gamma.reshape(1, 3, 1, 1) * (x - rm.reshape(1, 3, 1, 1)) \
        / np.sqrt(rv.reshape(1, 3, 1, 1) + 1e-5) + beta.reshape(1, 3, 1, 1)
    assert np.allclose(out, expected, atol=1e-6)
    assert m2 is rm and v2 is rv


def test_batchnorm_gradcheck_4d():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 4, 3, 3))
    gamma = rng.normal(size=4) + 1.5
    beta = rng.normal(size=4)
    rm, rv = np.zeros(4), np.ones(4)

    def fwd(xx, gg, bb):
        out, _, _, _ = F.batchnorm_forward(xx, gg, bb, rm.copy(), rv.copy(), "train")
        return out

    out, cache, _, _ = F.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), "train")
    r = _loss_weights(out.shape, rng)
    gx, ggamma, gbeta = F.batchnorm_backward(cache, r)
    assert max_relative_error(gx, numerical_gradient(
        lambda v: (fwd(v, gamma, beta) * r).sum(), x, H)) < TOL
    assert max_relative_error(ggamma, numerical_gradient(
        lambda v: (fwd(x, v, beta) * r).sum(), gamma, H)) < TOL
    assert max_relative_error(gbeta, numerical_gradient(
        lambda v: (fwd(x, gamma, v) * r).sum(), beta, H)) < TOL


def test_batchnorm_gradcheck_2d():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(6, 5))
    gamma = rng.normal(size=5) + 1.5
    beta = rng.normal(size=5)
    rm, rv = np.zeros(5), np.ones(5)
    out, cache, _, _ = F.batchnorm_forward(x, gamma, beta, rm, rv, "train")
    r = _loss_weights(out.shape, rng)
    gx, _, _ = F.batchnorm_backward(cache, r)
    num = numerical_gradient(lambda v: (F.batchnorm_forward(
        v, gamma, beta, rm.copy(), rv.copy(), "train")[0] * r).sum(), x, H)
    assert max_relative_error(gx, num) < TOL


def test_batchnorm_frozen_stats_do_not_move():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(4, 3, 4, 4))
    rm, rv = np.full(3, 0.25), np.full(3, 4.0)
    _, _, m2, v2 = F.batchnorm_forward(x, np.ones(3), np.zeros(3), rm, rv,
                                       "train", update_stats=False)
    assert m2 is rm and v2 is rv


# ---------------------------------------------------------------------------
# dense / dropout / global average pool
# ---------------------------------------------------------------------------

def test_dense_gradcheck():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 7))
    w = rng.normal(size=(7, 4))
    b = rng.normal(size=4)
    out, cache = F.dense_forward(x, w, b)
    r = _loss_weights(out.shape, rng)
    gx, gw, gb = F.dense_backward(cache, r)
    assert max_relative_error(gx, numerical_gradient(
        lambda v: (F.dense_forward(v, w, b)[0] * r).sum(), x, H)) < TOL
    assert max_relative_error(gw, numerical_gradient(
        lambda v: (F.dense_forward(x, v, b)[0] * r).sum(), w, H)) < TOL
    assert max_relative_error(gb, numerical_gradient(
        lambda v: (F.dense_forward(x, w, v)[0] * r).sum(), b, H)) < TOL


def test_dropout_eval_identity_train_scales():
    rng = np.random.default_rng(12)
    x = np.ones((64, 64))
    out_eval, cache = F.dropout_forward(x, 0.5, "eval", rng)
    assert out_eval is x and cache is None
    out_train, keep = F.dropout_forward(x, 0.5, "train", rng)
    kept = out_train != 0
    assert np.allclose(out_train[kept], 2.0)
    assert 0.35 < kept.mean() < 0.65
    g = F.dropout_backward(keep, np.ones_like(x))
    assert np.allclose(g, keep)


def test_global_avg_pool_gradcheck():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 3, 4, 4))
    out, cache = F.global_avg_pool_forward(x)
    assert out.shape == (2, 3)
    r = _loss_weights(out.shape, rng)
    gx = F.global_avg_pool_backward(cache, r)
    num = numerical_gradient(lambda v: (F.global_avg_pool_forward(v)[0] * r).sum(), x, H)
    assert max_relative_error(gx, num) < TOL


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def test_softmax_xent_uniform_logits():
    logits = np.zeros((4, 10))
    loss, _ = F.softmax_xent(logits, np.array([0, 3, 5, 9]))
    assert abs(loss - np.log(10.0)) < 1e-12


def test_softmax_xent_confident_correct_limit():
    logits = np.zeros((1, 5))
    logits[0, 2] = 1e4
    loss, _ = F.softmax_xent(logits, np.array([2]))
    assert loss < 1e-8


def test_softmax_xent_gradcheck():
    rng = np.random.default_rng(14)
    logits = rng.normal(size=(4, 10))
    labels = rng.integers(0, 10, size=4)
    _, grad = F.softmax_xent(logits, labels)
    num = numerical_gradient(lambda v: F.softmax_xent(v, labels)[0], logits, H)
    assert max_relative_error(grad, num) < 1e-5


def test_softmax_xent_label_out_of_range():
    with pytest.raises(InputError):
        F.softmax_xent(np.zeros((2, 3)), np.array([0, 3]))


def test_softmax_stability_with_huge_logits():
    logits = np.array([[1e30, 1e30 - 1.0]], dtype=np.float64)
    p = F.softmax(logits)
    assert np.isfinite(p).all() and abs(p.sum() - 1) < 1e-9

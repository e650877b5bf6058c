"""Forward/backward primitives for the layer kinds the two architectures need.

Every forward returns ``(output, cache)`` where the cache carries exactly what
the matching backward needs.  Convolution uses cross-correlation semantics
(no kernel flip), lowered tap-by-tap into a single GEMM per pass; the patch
matrix lives in [C*k*k, B*H'*W'] layout because that keeps every copy running
along contiguous W-sized rows.  All functions are pure: they never mutate
their inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, InputError, NumericError, UsageError


def assert_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def _conv_geometry(x_shape, w_shape, stride, padding):
    b, c, h, w = x_shape
    f, cw, k, k2 = w_shape
    if k != k2:
        raise ConfigurationError("conv2d kernels must be square")
    if c != cw:
        raise ConfigurationError(f"conv2d channel mismatch: input has {c}, weights expect {cw}")
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ConfigurationError(
            f"conv2d output would be empty for input {h}x{w}, k={k}, s={stride}, p={padding}")
    return b, c, h, w, f, k, h_out, w_out


def _im2col_strided(x: np.ndarray, k: int, stride: int, padding: int,
                    h_out: int, w_out: int) -> np.ndarray:
    """Patch matrix of shape [C*k*k, B*H'*W'] for arbitrary stride."""
    b, c = x.shape[:2]
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, k, k, b, h_out, w_out), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            src = x[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
            cols[:, i, j] = src.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, b * h_out * w_out)


def _col2im_strided(cols_t: np.ndarray, x_shape: tuple, k: int, stride: int,
                    padding: int, h_out: int, w_out: int) -> np.ndarray:
    """Scatter-add inverse of :func:`_im2col_strided`."""
    b, c, h, w = x_shape
    x_pad = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols_t.dtype)
    patches = cols_t.reshape(c, k, k, b, h_out, w_out)
    for i in range(k):
        for j in range(k):
            x_pad[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += \
                patches[:, i, j].transpose(1, 0, 2, 3)
    if padding > 0:
        return x_pad[:, :, padding:h + padding, padding:w + padding]
    return x_pad


def _im2col_flat(x: np.ndarray, k: int, padding: int, h_out: int) -> np.ndarray:
    """Stride-1 patch tensor [B, C*k*k, H'*Wp] over flattened padded rows.

    Copies contiguous full-row runs instead of k-wide windows, which is far
    faster; positions whose column index exceeds W'-1 wrap into the next
    image row and are garbage, so callers mask them out of the output and
    keep the matching loss gradients zero.
    """
    b, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    x_pad = np.zeros((b, c, hp * wp + k - 1), dtype=x.dtype)
    if padding > 0:
        x_pad[:, :, :hp * wp].reshape(b, c, hp, wp)[:, :, padding:padding + h,
                                                    padding:padding + w] = x
    else:
        x_pad[:, :, :hp * wp] = x.reshape(b, c, hp * wp)
    q = h_out * wp
    cols = np.empty((b, c, k, k, q), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            cols[:, :, i, j] = x_pad[:, :, off:off + q]
    return cols.reshape(b, c * k * k, q)


def _col2im_flat(cols: np.ndarray, x_shape: tuple, k: int, padding: int,
                 h_out: int) -> np.ndarray:
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    q = h_out * wp
    grad_pad = np.zeros((b, c, hp * wp + k - 1), dtype=cols.dtype)
    patches = cols.reshape(b, c, k, k, q)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            grad_pad[:, :, off:off + q] += patches[:, :, i, j]
    grad_pad = grad_pad[:, :, :hp * wp].reshape(b, c, hp, wp)
    if padding > 0:
        return grad_pad[:, :, padding:padding + h, padding:padding + w]
    return grad_pad.reshape(b, c, h, w)


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: int = 0):
    """Cross-correlate [B,C,H,W] with [F,C,k,k] filters.

    Returns ``(out, cache)`` with out of shape [B,F,H',W'] where
    H' = floor((H + 2p - k)/s) + 1.
    """
    if x.ndim != 4 or weights.ndim != 4:
        raise ConfigurationError("conv2d expects 4-d input and weights")
    b, c, h, w, f, k, h_out, w_out = _conv_geometry(x.shape, weights.shape, stride, padding)
    w_mat = weights.reshape(f, c * k * k)
    if stride == 1:
        wp = w + 2 * padding
        cols = _im2col_flat(x, k, padding, h_out)            # [B, Ckk, H'*Wp]
        out_full = np.matmul(w_mat, cols).reshape(b, f, h_out, wp)
        out = np.ascontiguousarray(out_full[:, :, :, :w_out])
        kind = "flat"
    else:
        cols = _im2col_strided(x, k, stride, padding, h_out, w_out)
        out_full = (w_mat @ cols).reshape(f, b, h_out, w_out)
        out = np.ascontiguousarray(out_full.transpose(1, 0, 2, 3))
        kind = "strided"
    out += bias[None, :, None, None]
    cache = (kind, cols, weights, x.shape, stride, padding, h_out, w_out)
    return out, cache


def conv2d_backward(cache, grad_out: np.ndarray, need_grad_input: bool = True):
    """Gradients of a scalar loss w.r.t. conv input, weights and bias.

    ``need_grad_input=False`` (first layer of a network) skips the input
    gradient and returns None in its place.
    """
    if cache is None:
        raise UsageError("conv2d_backward called without a forward cache")
    kind, cols, weights, x_shape, stride, padding, h_out, w_out = cache
    b, _, _, w_in = x_shape
    f, c, k, _ = weights.shape
    w_mat = weights.reshape(f, c * k * k)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_x = None
    if kind == "flat":
        wp = w_in + 2 * padding
        go_full = np.zeros((b, f, h_out, wp), dtype=grad_out.dtype)
        go_full[:, :, :, :w_out] = grad_out
        go = go_full.reshape(b, f, h_out * wp)
        grad_w = np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0).reshape(f, c, k, k)
        if need_grad_input:
            grad_cols = np.matmul(w_mat.T, go)               # [B, Ckk, H'*Wp]
            grad_x = _col2im_flat(grad_cols, x_shape, k, padding, h_out)
    else:
        go = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(f, b * h_out * w_out)
        grad_w = (go @ cols.T).reshape(f, c, k, k)
        if need_grad_input:
            grad_cols = w_mat.T @ go
            grad_x = _col2im_strided(grad_cols, x_shape, k, stride, padding, h_out, w_out)
    return grad_x, grad_w, grad_bias


# ---------------------------------------------------------------------------
# maxpool
# ---------------------------------------------------------------------------

def maxpool_forward(x: np.ndarray, k: int, stride: int | None = None):
    """Max pooling over k x k windows; ties go to the first element row-major."""
    stride = k if stride is None else stride
    b, c, h, w = x.shape
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ConfigurationError(f"maxpool output would be empty for input {h}x{w}, k={k}")
    if k == 2 and stride == 2 and h % 2 == 0 and w % 2 == 0:
        # strict '>' comparisons keep the first (row-major) maximum on ties
        c0, c1 = x[:, :, :, 0::2], x[:, :, :, 1::2]
        colmax = np.maximum(c0, c1)
        right = colmax > c0
        r0, r1 = colmax[:, :, 0::2, :], colmax[:, :, 1::2, :]
        out = np.maximum(r0, r1)
        bottom = out > r0
        right_sel = np.where(bottom, right[:, :, 1::2, :], right[:, :, 0::2, :])
        arg = (bottom.astype(np.int8) << 1) | right_sel.astype(np.int8)
        return out, ("tiled", arg, x.shape, k, stride, h_out, w_out)
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :].reshape(b, c, h_out, w_out, k * k)
    arg = windows.argmax(axis=-1)  # argmax picks the first (row-major) maximum
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, ("general", arg, x.shape, k, stride, h_out, w_out)


def maxpool_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    if cache is None:
        raise UsageError("maxpool_backward called without a forward cache")
    kind, arg, x_shape, k, stride, h_out, w_out = cache
    b, c, h, w = x_shape
    if kind == "tiled":
        grad_x = np.empty(x_shape, dtype=grad_out.dtype)
        for t in range(4):
            i, j = divmod(t, 2)
            grad_x[:, :, i::2, j::2] = np.where(arg == t, grad_out, 0)
        return grad_x
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    ii, jj = np.unravel_index(arg, (k, k))
    rows = (np.arange(h_out) * stride)[None, None, :, None] + ii
    colz = (np.arange(w_out) * stride)[None, None, None, :] + jj
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(grad_x, (bi, ci, rows, colz), grad_out)
    return grad_x


# ---------------------------------------------------------------------------
# batchnorm (per-channel over batch + spatial dims)
# ---------------------------------------------------------------------------

def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      mode: str, momentum: float = 0.1, eps: float = 1e-5,
                      update_stats: bool = True):
    """Normalize each channel of [B,C,H,W] (or [B,C]).

    Train mode normalizes with batch statistics and, unless ``update_stats``
    is False, blends them into the running estimates with ``momentum``.  Eval
    mode uses the running estimates and never mutates them.  Returns
    ``(out, cache, new_running_mean, new_running_var)``.
    """
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if mode == "train":
        n = x.size // x.shape[1]
        mean = x.mean(axis=axes)
        xc = x - mean.reshape(shape)
        sq = np.einsum("bc,bc->c", xc, xc) if x.ndim == 2 \
            else np.einsum("bchw,bchw->c", xc, xc)
        var = sq / n
        if update_stats:
            new_mean = ((1.0 - momentum) * running_mean + momentum * mean).astype(running_mean.dtype)
            new_var = ((1.0 - momentum) * running_var + momentum * var).astype(running_var.dtype)
        else:
            new_mean, new_var = running_mean, running_var
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        x_hat = xc * inv_std.reshape(shape)
        out = gamma.reshape(shape) * x_hat + beta.reshape(shape)
        cache = (x_hat, inv_std, gamma, shape, axes, n)
        return out, cache, new_mean, new_var
    if mode == "eval":
        # fixed statistics make this a per-channel affine map; x_hat is only
        # rebuilt if someone actually backprops through an eval pass
        scale = (gamma / np.sqrt(running_var + eps)).astype(x.dtype)
        shift = (beta - scale * running_mean).astype(x.dtype)
        out = x * scale.reshape(shape) + shift.reshape(shape)
        cache = ("eval", x, running_mean, running_var, eps, gamma, shape, axes)
        return out, cache, running_mean, running_var
    raise UsageError(f"unknown batchnorm mode {mode!r}")


def batchnorm_backward(cache, grad_out: np.ndarray):
    """Backward of batchnorm; returns (grad_x, grad_gamma, grad_beta)."""
    if cache is None:
        raise UsageError("batchnorm_backward called without a forward cache")
    if isinstance(cache[0], str):
        _, x, running_mean, running_var, eps, gamma, shape, axes = cache
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        x_hat = (x - running_mean.reshape(shape)) * inv_std.reshape(shape)
        cache = (x_hat, inv_std, gamma, shape, axes, None)
    x_hat, inv_std, gamma, shape, axes, n = cache
    if grad_out.ndim == 2:
        grad_gamma = np.einsum("bc,bc->c", grad_out, x_hat)
    else:
        grad_gamma = np.einsum("bchw,bchw->c", grad_out, x_hat)
    grad_beta = grad_out.sum(axis=axes)
    if n is None:
        # eval mode: the normalization is an affine map with fixed statistics
        grad_x = grad_out * (gamma * inv_std).reshape(shape)
        return grad_x, grad_gamma, grad_beta
    # with per-channel a = gamma*inv_std the train-mode gradient collapses to
    # a*grad_out - (a*grad_gamma/n)*x_hat - a*grad_beta/n
    a = gamma * inv_std
    grad_x = a.reshape(shape) * grad_out \
        - (a * grad_gamma / n).reshape(shape) * x_hat \
        - (a * grad_beta / n).reshape(shape)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# relu / dense / dropout / global average pool
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    if cache is None:
        raise UsageError("relu_backward called without a forward cache")
    return grad_out * cache


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """x [B,D] @ weights [D,K] + bias [K]; flattens higher-rank inputs."""
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != weights.shape[0]:
        raise ConfigurationError(
            f"dense expects input dim {weights.shape[0]}, got {x2.shape[1]}")
    out = x2 @ weights + bias
    return out, (x2, x.shape, weights)


def dense_backward(cache, grad_out: np.ndarray):
    if cache is None:
        raise UsageError("dense_backward called without a forward cache")
    x2, x_shape, weights = cache
    grad_w = x2.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    grad_x = (grad_out @ weights.T).reshape(x_shape)
    return grad_x, grad_w, grad_b


def dropout_forward(x: np.ndarray, p: float, mode: str, rng: np.random.Generator):
    """Inverted dropout: active only in train mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0,1), got {p}")
    if mode == "eval" or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    if cache is None:
        return grad_out
    return grad_out * cache


def global_avg_pool_forward(x: np.ndarray):
    b, c, h, w = x.shape
    return x.mean(axis=(2, 3)), (x.shape,)


def global_avg_pool_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    if cache is None:
        raise UsageError("global_avg_pool_backward called without a forward cache")
    (x_shape,) = cache
    b, c, h, w = x_shape
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), x_shape).copy()


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy with max-subtraction; returns (loss, grad_logits)."""
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(b), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(b), labels] -= 1.0
    return float(loss), grad / b

"""Differentiable layer primitives in NHWC layout.

Convolution is implemented as a sum of k*k shifted GEMMs rather than a
single im2col matrix.  At 500x500 inputs with 64 channels an im2col buffer
would cost ~0.5 GB per layer; the per-tap formulation touches one
(N*Ho*Wo, Cin) slice at a time, which keeps full-image inference inside a
small memory envelope at identical arithmetic cost.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, ShapeError, Tensor, check_dtype, record_op, reshape


def _require_rank(x: Tensor, rank: int, opname: str) -> None:
    if x.data.ndim != rank:
        raise ShapeError(f"{opname}: expected rank-{rank} input, got shape {x.data.shape}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """2-D convolution, zero 'same' padding of (k-1)/2, odd square kernels.

    x: (N, H, W, Cin); kernel: (k, k, Cin, Cout); bias: (Cout,).
    With stride s the output is (N, ceil(H/s), ceil(W/s), Cout).
    """
    _require_rank(x, 4, "conv2d")
    _require_rank(kernel, 4, "conv2d kernel")
    k0, k1, cin_k, cout = kernel.data.shape
    if k0 != k1 or k0 % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd side, got {kernel.data.shape}")
    n, h, w, cin = x.data.shape
    if cin != cin_k:
        raise ShapeError(f"conv2d: input has {cin} channel(s) but kernel expects {cin_k}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape}, expected ({cout},)")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    check_dtype(x, kernel, "conv2d")
    check_dtype(x, bias, "conv2d")

    k = k0
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    kmat = kernel.data

    def tap(arr, di, dj):
        return arr[:, di : di + (ho - 1) * stride + 1 : stride,
                   dj : dj + (wo - 1) * stride + 1 : stride, :]

    acc = np.empty((n * ho * wo, cout), dtype=x.data.dtype)
    acc[:] = bias.data
    for di in range(k):
        for dj in range(k):
            acc += tap(xp, di, dj).reshape(-1, cin) @ kmat[di, dj]
    out = acc.reshape(n, ho, wo, cout)

    def backward(g):
        gm = np.ascontiguousarray(g).reshape(-1, cout)
        d_bias = g.sum(axis=(0, 1, 2)) if bias.requires_grad else None
        d_kernel = np.zeros_like(kmat) if kernel.requires_grad else None
        d_xp = np.zeros_like(xp) if x.requires_grad else None
        for di in range(k):
            for dj in range(k):
                if d_kernel is not None:
                    d_kernel[di, dj] = tap(xp, di, dj).reshape(-1, cin).T @ gm
                if d_xp is not None:
                    tap(d_xp, di, dj)[...] += (gm @ kmat[di, dj].T).reshape(n, ho, wo, cin)
        d_x = d_xp[:, pad : pad + h, pad : pad + w, :] if d_xp is not None else None
        return d_x, d_kernel, d_bias

    return record_op(out, (x, kernel, bias), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer: x (N, Fin) @ weight (Fin, Fout) + bias."""
    _require_rank(x, 2, "dense")
    _require_rank(weight, 2, "dense weight")
    fin, fout = weight.data.shape
    if x.data.shape[1] != fin:
        raise ShapeError(
            f"dense: input features {x.data.shape[1]} do not match weight rows {fin}"
        )
    if bias.data.shape != (fout,):
        raise ShapeError(f"dense: bias shape {bias.data.shape}, expected ({fout},)")
    check_dtype(x, weight, "dense")
    xd, wd = x.data, weight.data

    def backward(g):
        d_x = g @ wd.T if x.requires_grad else None
        d_w = xd.T @ g if weight.requires_grad else None
        d_b = g.sum(axis=0) if bias.requires_grad else None
        return d_x, d_w, d_b

    return record_op(xd @ wd + bias.data, (x, weight, bias), backward)


def prelu(x: Tensor, alpha: Tensor, channel_shared: bool = False) -> Tensor:
    """max(0, x) + alpha * min(0, x); alpha per channel or a single shared scalar.

    Channels live on the last axis.  alpha must have one element per channel
    (or exactly one when shared).
    """
    channels = x.data.shape[-1]
    expected = 1 if channel_shared else channels
    if alpha.data.size != expected:
        raise ShapeError(
            f"prelu: alpha has {alpha.data.size} element(s), expected {expected} "
            f"for {channels} channel(s) (channel_shared={channel_shared})"
        )
    check_dtype(x, alpha, "prelu")
    xd = x.data
    a = alpha.data.reshape(-1)[0] if channel_shared else alpha.data.reshape(channels)
    negative = xd < 0
    out = np.where(negative, a * xd, xd)

    def backward(g):
        d_x = np.where(negative, a * g, g) if x.requires_grad else None
        d_alpha = None
        if alpha.requires_grad:
            contrib = g * np.where(negative, xd, 0)
            if channel_shared:
                d_alpha = contrib.sum(dtype=xd.dtype).reshape(alpha.data.shape)
            else:
                axes = tuple(range(xd.ndim - 1))
                d_alpha = contrib.sum(axis=axes).reshape(alpha.data.shape)
        return d_x, d_alpha

    return record_op(out, (x, alpha), backward)


def lrelu(x: Tensor, alpha: float = 0.2) -> Tensor:
    """Leaky ReLU with a fixed negative slope."""
    xd = x.data
    a = xd.dtype.type(alpha)
    negative = xd < 0

    def backward(g):
        return (np.where(negative, a * g, g),)

    return record_op(np.where(negative, a * xd, xd), (x,), backward)


def relu(x: Tensor) -> Tensor:
    return lrelu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic; large |x| saturates without overflow."""
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1 / (1 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1 + e)

    def backward(g):
        return (g * out * (1 - out),)

    return record_op(out, (x,), backward)


class BatchNormStats:
    """Running mean/variance buffers for one batchnorm layer.

    Variance is stored biased (divide by M), matching the normalizer used
    in training mode, so inference converges to training behaviour as the
    running estimates converge.  Updates mutate the buffers in place; any
    state_dict view of them stays valid.
    """

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, batch_mean, batch_var, momentum: float) -> None:
        self.mean *= momentum
        self.mean += (1 - momentum) * batch_mean
        self.var *= momentum
        self.var += (1 - momentum) * batch_var


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (N, H, W) with scale and shift.

    Training mode normalizes by batch statistics (biased variance) and
    folds them into the running buffers as running = momentum * running +
    (1 - momentum) * batch.  Inference mode normalizes by the running
    buffers only.
    """
    _require_rank(x, 4, "batchnorm")
    channels = x.data.shape[-1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.data.shape != (channels,):
            raise ShapeError(f"batchnorm: {name} shape {t.data.shape}, expected ({channels},)")
    check_dtype(x, gamma, "batchnorm")
    xd = x.data
    if training:
        if xd.shape[0] < 2:
            raise ShapeError(
                f"batchnorm: training mode needs a batch of at least 2, got {xd.shape[0]}"
            )
        m = xd.mean(axis=(0, 1, 2), dtype=xd.dtype)
        v = xd.var(axis=(0, 1, 2), dtype=xd.dtype)
        stats.update(m, v, momentum)
    else:
        m = stats.mean
        v = stats.var
    inv_std = 1 / np.sqrt(v + xd.dtype.type(eps))
    xhat = (xd - m) * inv_std
    gd = gamma.data

    def backward(g):
        d_gamma = (g * xhat).sum(axis=(0, 1, 2)) if gamma.requires_grad else None
        d_beta = g.sum(axis=(0, 1, 2)) if beta.requires_grad else None
        d_x = None
        if x.requires_grad:
            gh = g * gd
            if training:
                # batch statistics depend on x: subtract the mean pull and
                # the variance pull (classic normalized-form adjoint)
                gh_mean = gh.mean(axis=(0, 1, 2), dtype=xd.dtype)
                ghx_mean = (gh * xhat).mean(axis=(0, 1, 2), dtype=xd.dtype)
                d_x = inv_std * (gh - gh_mean - xhat * ghx_mean)
            else:
                d_x = inv_std * gh
        return d_x, d_gamma, d_beta

    return record_op(gd * xhat + beta.data, (x, gamma, beta), backward)


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Rearrange (N, H, W, r*r*C) -> (N, r*H, r*W, C).

    Input channel (dy*r + dx)*C + c lands at output spatial offset
    (dy, dx) in channel c, so for C=1 and r=2 the four input channels tile
    the 2x2 output block row-major.  Exactly inverted by pixel_unshuffle.
    """
    _require_rank(x, 4, "pixel_shuffle")
    n, h, w, c_in = x.data.shape
    r = int(factor)
    if r < 1 or c_in % (r * r) != 0:
        raise ShapeError(
            f"pixel_shuffle: {c_in} channel(s) not divisible by factor^2 = {r * r}"
        )
    c = c_in // (r * r)
    out = (
        x.data.reshape(n, h, w, r, r, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h * r, w * r, c)
    )

    def backward(g):
        return (_unshuffle_array(g, r),)

    return record_op(np.ascontiguousarray(out), (x,), backward)


def _unshuffle_array(y: np.ndarray, r: int) -> np.ndarray:
    n, hr, wr, c = y.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        y.reshape(n, h, r, w, r, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, r * r * c)
    )


def pixel_unshuffle(x: Tensor, factor: int) -> Tensor:
    """Inverse of pixel_shuffle: (N, r*H, r*W, C) -> (N, H, W, r*r*C)."""
    _require_rank(x, 4, "pixel_unshuffle")
    n, hr, wr, c = x.data.shape
    r = int(factor)
    if r < 1 or hr % r != 0 or wr % r != 0:
        raise ShapeError(
            f"pixel_unshuffle: spatial dims {(hr, wr)} not divisible by factor {r}"
        )

    def backward(g):
        h, w = hr // r, wr // r
        return (
            np.ascontiguousarray(
                g.reshape(n, h, w, r, r, c)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(n, hr, wr, c)
            ),
        )

    return record_op(_unshuffle_array(x.data, r), (x,), backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; a trailing odd row/column is dropped.

    The gradient routes to the argmax of each window (first occurrence on
    ties, per argmax convention).
    """
    _require_rank(x, 4, "maxpool2d")
    n, h, w, c = x.data.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2d: input spatial dims {(h, w)} are smaller than the window")
    he, we = (h // 2) * 2, (w // 2) * 2
    ho, wo = he // 2, we // 2
    windows = (
        x.data[:, :he, :we, :]
        .reshape(n, ho, 2, wo, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, ho, wo, 4, c)
    )
    idx = windows.argmax(axis=3)
    out = np.take_along_axis(windows, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(g):
        d_windows = np.zeros_like(windows)
        np.put_along_axis(d_windows, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        d_cropped = (
            d_windows.reshape(n, ho, wo, 2, 2, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, he, we, c)
        )
        if he == h and we == w:
            return (d_cropped,)
        d_x = np.zeros_like(x.data)
        d_x[:, :he, :we, :] = d_cropped
        return (d_x,)

    return record_op(np.ascontiguousarray(out), (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all non-batch axes: (N, ...) -> (N, prod(...))."""
    if x.data.ndim < 2:
        raise ShapeError(f"flatten: expected at least rank 2, got shape {x.data.shape}")
    return reshape(x, (x.data.shape[0], -1))


def channel_replicate(x: Tensor, copies: int) -> Tensor:
    """Tile a single-channel image to `copies` identical channels."""
    _require_rank(x, 4, "channel_replicate")
    if x.data.shape[-1] != 1:
        raise ShapeError(
            f"channel_replicate: expected 1 input channel, got {x.data.shape[-1]}"
        )
    if copies < 1:
        raise ShapeError(f"channel_replicate: copies must be >= 1, got {copies}")

    def backward(g):
        return (g.sum(axis=-1, keepdims=True),)

    return record_op(np.repeat(x.data, copies, axis=-1), (x,), backward)

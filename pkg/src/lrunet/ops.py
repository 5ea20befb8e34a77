"""Forward and backward kernels for every layer primitive in the network.

All kernels are pure functions on (batch, channels, height, width) numpy
arrays.  A forward call returns ``(output, cache)``; the matching backward
takes the upstream gradient plus that cache and returns exact
vector-Jacobian products.  Nothing here owns parameters: convolution
kernels and batch-norm scales are passed in, so weight sharing is decided
entirely by the caller.

Convolutions are cross-correlations computed by unrolling input windows
into column matrices and multiplying by the reshaped kernel, one matmul
per call with the group axis batched.  1x1/stride-1/no-padding
convolutions skip the unrolling and reuse the input buffer directly.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, ShapeError

# ---------------------------------------------------------------------------
# convolution


@dataclass
class ConvWeights:
    """A convolution's kernel plus its call-site configuration.

    kernel has shape (out_channels, in_channels_per_group, kH, kW); there is
    no bias term anywhere in this architecture.
    """

    kernel: np.ndarray
    groups: int = 1
    stride: int = 1
    padding: int = 0


def conv_out_size(in_size: int, kernel: int, stride: int, padding: int) -> int:
    return (in_size + 2 * padding - kernel) // stride + 1


def conv2d_forward(x: np.ndarray, w: ConvWeights):
    """Grouped 2-D cross-correlation.

    Input group i (a contiguous slice of channels) feeds only output group i.
    Output spatial size is floor((in + 2*pad - k) / stride) + 1.
    """
    b, cin, h, wid = x.shape
    cout, cin_g, kh, kw = w.kernel.shape
    g, s, p = w.groups, w.stride, w.padding
    if cin % g != 0 or cout % g != 0:
        raise ShapeError(f"channels ({cin} in, {cout} out) not divisible by groups={g}")
    if cin_g != cin // g:
        raise ShapeError(
            f"kernel expects {cin_g} channels per group, input provides {cin // g}"
        )
    ho = conv_out_size(h, kh, s, p)
    wo = conv_out_size(wid, kw, s, p)
    if ho < 1 or wo < 1:
        raise ShapeError(f"spatial extents {h}x{wid} too small for kernel {kh}x{kw}")

    pointwise = kh == 1 and kw == 1 and s == 1 and p == 0
    if pointwise:
        cols = x.reshape(b, g, cin_g, h * wid)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        # (b, cin, ho, wo, kh, kw) -> (b, g, cin_g * kh * kw, ho * wo)
        cols = np.ascontiguousarray(
            win.reshape(b, g, cin_g, ho, wo, kh, kw).transpose(0, 1, 2, 5, 6, 3, 4)
        ).reshape(b, g, cin_g * kh * kw, ho * wo)

    wmat = w.kernel.reshape(g, cout // g, cin_g * kh * kw)
    y = np.matmul(wmat[None], cols).reshape(b, cout, ho, wo)
    cache = (cols, wmat, x.shape, (kh, kw, s, p, g), pointwise)
    return y, cache


def conv2d_backward(dy: np.ndarray, cache):
    """Gradients of conv2d_forward w.r.t. input and kernel."""
    cols, wmat, x_shape, (kh, kw, s, p, g), pointwise = cache
    b, cin, h, wid = x_shape
    cout = dy.shape[1]
    ho, wo = dy.shape[2], dy.shape[3]
    cin_g = cin // g

    dyg = dy.reshape(b, g, cout // g, ho * wo)
    dwmat = np.matmul(dyg, cols.transpose(0, 1, 3, 2)).sum(axis=0)
    dkernel = dwmat.reshape(cout, cin_g, kh, kw)

    dcols = np.matmul(wmat.transpose(0, 2, 1)[None], dyg)
    if pointwise:
        dx = dcols.reshape(x_shape)
    else:
        dcols = dcols.reshape(b, g, cin_g, kh, kw, ho, wo).reshape(b, cin, kh, kw, ho, wo)
        dxp = np.zeros((b, cin, h + 2 * p, wid + 2 * p), dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, i, j]
        dx = dxp[:, :, p : p + h, p : p + wid] if p else dxp
    return dx, dkernel


def depthwise_conv_forward(x: np.ndarray, w: ConvWeights):
    """Depthwise 3x3 convolution with channel multiplier 2.

    Each input channel c is filtered independently and yields output
    channels 2c and 2c+1; spatial size is preserved (stride 1, padding 1).
    """
    cin = x.shape[1]
    cout = w.kernel.shape[0]
    if w.groups != cin:
        raise ConfigError(f"depthwise conv needs groups == input channels ({cin}), got {w.groups}")
    if cout != 2 * cin:
        raise ConfigError(f"depthwise conv must map {cin} -> {2 * cin} channels, got {cout} out")
    if w.kernel.shape[2:] != (3, 3) or w.stride != 1 or w.padding != 1:
        raise ConfigError("depthwise conv is fixed to kernel 3x3, stride 1, padding 1")
    return conv2d_forward(x, w)


def pointwise_group_conv_forward(x: np.ndarray, w: ConvWeights):
    """1x1 grouped convolution; contiguous channel groups mix independently."""
    cin = x.shape[1]
    cout = w.kernel.shape[0]
    if w.kernel.shape[2:] != (1, 1) or w.stride != 1 or w.padding != 0:
        raise ConfigError("pointwise conv is fixed to kernel 1x1, stride 1, padding 0")
    if cin % w.groups != 0 or cout % w.groups != 0:
        raise ConfigError(
            f"channels ({cin} in, {cout} out) must be divisible by groups={w.groups}"
        )
    return conv2d_forward(x, w)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BNState:
    """Per-channel affine batch normalization with running statistics.

    gamma/beta are trainable; running_mean/running_var are state updated in
    place on every train-mode forward as
    ``running <- (1 - momentum) * running + momentum * batch``.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        n = len(self.gamma)
        if not (len(self.beta) == len(self.running_mean) == len(self.running_var) == n):
            raise ConfigError("batch norm per-channel arrays must have equal length")
        if self.eps <= 0 or not (0 < self.momentum < 1):
            raise ConfigError("batch norm needs eps > 0 and momentum in (0, 1)")


def batchnorm_forward(x: np.ndarray, bn: BNState, train: bool):
    """Normalize per channel over (batch, height, width), then scale and shift.

    Train mode uses batch statistics and updates the running statistics;
    eval mode normalizes with the stored running statistics.
    """
    if x.shape[1] != len(bn.gamma):
        raise ShapeError(f"batch norm over {len(bn.gamma)} channels got input with {x.shape[1]}")
    gamma = bn.gamma.reshape(1, -1, 1, 1)
    beta = bn.beta.reshape(1, -1, 1, 1)
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m <= 1:
            raise ShapeError("train-mode batch norm needs more than one value per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + bn.eps)
        xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        bn.running_mean *= 1.0 - bn.momentum
        bn.running_mean += bn.momentum * mean
        bn.running_var *= 1.0 - bn.momentum
        bn.running_var += bn.momentum * var
        cache = (xhat, inv_std, bn.gamma)
        return gamma * xhat + beta, cache
    inv_std = 1.0 / np.sqrt(bn.running_var + bn.eps)
    xhat = (x - bn.running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    return gamma * xhat + beta, None


def batchnorm_backward(dy: np.ndarray, cache):
    """Gradients of train-mode batch norm w.r.t. input, gamma and beta."""
    if cache is None:
        raise ShapeError("batch norm backward needs a train-mode forward cache")
    xhat, inv_std, gamma = cache
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma.reshape(1, -1, 1, 1)
    sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    dx = (inv_std.reshape(1, -1, 1, 1) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# activations, pooling, dropout


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def maxpool_forward(x: np.ndarray, kernel: int = 3, stride: int = 2, padding: int = 1):
    """Max pooling; padding contributes -inf and is never selected.

    The cache records the winning position of each window (ties resolve to
    the lowest linear index) so backward can route the gradient exactly.
    """
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(b, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    cache = (arg, x.shape, (kernel, stride, padding), (ho, wo))
    return np.ascontiguousarray(y), cache


def maxpool_backward(dy: np.ndarray, cache) -> np.ndarray:
    arg, x_shape, (kernel, stride, padding), (ho, wo) = cache
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    hi = stride * np.arange(ho)[None, None, :, None] + arg // kernel
    wj = stride * np.arange(wo)[None, None, None, :] + arg % kernel
    base = (np.arange(b)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (hp * wp)
    idx = base + hi * wp + wj
    dxp = np.zeros(b * c * hp * wp, dtype=dy.dtype)
    np.add.at(dxp, idx.ravel(), dy.ravel())
    dxp = dxp.reshape(b, c, hp, wp)
    return dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp


def global_avgpool_forward(x: np.ndarray, window=None):
    """Mean over the full spatial extent, returned as a (batch, channels) matrix.

    If `window` is given the spatial extents must equal it exactly.
    """
    b, c, h, w = x.shape
    if window is not None and (h, w) != tuple(window):
        raise ShapeError(f"average pool expected spatial extents {tuple(window)}, got {(h, w)}")
    y = x.mean(axis=(2, 3))
    return y, (x.shape,)


def global_avgpool_backward(dy: np.ndarray, cache) -> np.ndarray:
    (x_shape,) = cache
    h, w = x_shape[2], x_shape[3]
    return np.broadcast_to(dy[:, :, None, None], x_shape) / (h * w)


def dropout_forward(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator = None):
    """Inverted dropout: survivors are rescaled so eval mode is exact identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("train-mode dropout needs a random generator")
    scale = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * scale, scale


def dropout_backward(dy: np.ndarray, cache) -> np.ndarray:
    return dy if cache is None else dy * cache


# ---------------------------------------------------------------------------
# channel shuffle


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Source-channel index for each output channel of the half-swap shuffle.

    Stage 1 swaps the first and second halves of the channel axis; stage 2
    is the view-as-(groups, channels/groups), transpose, flatten shuffle.
    The composition is a bijection in which no channel keeps its position,
    and output channel 0 always reads from channel channels/2.
    """
    if channels % 2 != 0 or channels % groups != 0:
        raise ConfigError(
            f"shuffle needs channels divisible by 2 and by groups={groups}, got {channels}"
        )
    n = channels // groups
    out = np.arange(channels)
    return ((out % groups) * n + out // groups + channels // 2) % channels


def channel_shuffle_halfswap(x: np.ndarray, groups: int) -> np.ndarray:
    """Apply the half-swap channel shuffle; pure permutation of channels."""
    return np.ascontiguousarray(x[:, shuffle_permutation(x.shape[1], groups)])


def channel_shuffle_backward(dy: np.ndarray, groups: int) -> np.ndarray:
    """Route gradients through the inverse channel permutation."""
    perm = shuffle_permutation(dy.shape[1], groups)
    return np.ascontiguousarray(dy[:, np.argsort(perm)])


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns the scalar loss and its gradient w.r.t. the logits,
    (softmax - onehot) / batch, in one call.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must be ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels must lie in [0, {k}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(n), labels].mean()
    dlogits = np.exp(log_p)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits

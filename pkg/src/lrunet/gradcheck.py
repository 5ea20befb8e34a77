"""Finite-difference verification of every backward implementation.

Each op check builds a scalar loss from one forward call, computes the
analytic gradient with the matching backward, and compares against
central differences in float64.  The relative error metric is
|a - n| / max(1, |a|, |n|), elementwise, maximized over all checked
entries.  The whole-network check does the same through a small
two-application configuration, sampling coordinates from every
parameter tensor so all layer kinds and both shared-gradient
accumulation sites are covered.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .network import NetworkSpec, build_network
from .tensor import concat_channels, elementwise_add

STEP = 1e-5
OP_TOLERANCE = 1e-4
NET_TOLERANCE = 1e-3

# Test hook: when True the shuffle check reports a deliberately wrong
# analytic gradient, so negative-control tests can watch the suite fail.
CORRUPT_SHUFFLE_BACKWARD = False


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return f"{self.name:<24} max_rel_err {self.max_rel_err:.3e}  tol {self.tolerance:.0e}  {verdict}"


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. x, mutated in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def _weighted_sum_loss(forward, *tensors, step):
    """Compare analytic and numeric grads of sum(forward() * fixed weights)."""
    y0, backward = forward()
    sens = np.random.default_rng(987).normal(size=y0.shape)

    analytic = backward(sens)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        n = numeric_grad(lambda: float((forward()[0] * sens).sum()), t, step)
        worst = max(worst, relative_error(a, n))
    return worst


# -- individual op checks ----------------------------------------------------


def _check_conv2d(rng, step):
    x = rng.normal(size=(2, 4, 5, 5))
    w = ops.ConvWeights(rng.normal(size=(6, 2, 3, 3)), groups=2, stride=2, padding=1)

    def forward():
        y, cache = ops.conv2d_forward(x, w)
        return y, lambda dy: ops.conv2d_backward(dy, cache)

    return _weighted_sum_loss(forward, x, w.kernel, step=step)


def _check_conv2d_1x1(rng, step):
    x = rng.normal(size=(2, 6, 4, 4))
    w = ops.ConvWeights(rng.normal(size=(5, 6, 1, 1)))

    def forward():
        y, cache = ops.conv2d_forward(x, w)
        return y, lambda dy: ops.conv2d_backward(dy, cache)

    return _weighted_sum_loss(forward, x, w.kernel, step=step)


def _check_depthwise_conv(rng, step):
    x = rng.normal(size=(2, 4, 5, 5))
    w = ops.ConvWeights(rng.normal(size=(8, 1, 3, 3)), groups=4, stride=1, padding=1)

    def forward():
        y, cache = ops.depthwise_conv_forward(x, w)
        return y, lambda dy: ops.conv2d_backward(dy, cache)

    return _weighted_sum_loss(forward, x, w.kernel, step=step)


def _check_pointwise_group_conv(rng, step):
    x = rng.normal(size=(2, 16, 3, 3))
    w = ops.ConvWeights(rng.normal(size=(8, 2, 1, 1)), groups=8)

    def forward():
        y, cache = ops.pointwise_group_conv_forward(x, w)
        return y, lambda dy: ops.conv2d_backward(dy, cache)

    return _weighted_sum_loss(forward, x, w.kernel, step=step)


def _check_batchnorm(rng, step):
    x = rng.normal(size=(3, 4, 4, 4))
    gamma = rng.normal(size=4) + 1.5
    beta = rng.normal(size=4)

    def forward():
        bn = ops.BNState(gamma, beta, np.zeros(4), np.ones(4))
        y, cache = ops.batchnorm_forward(x, bn, train=True)
        return y, lambda dy: ops.batchnorm_backward(dy, cache)

    return _weighted_sum_loss(forward, x, gamma, beta, step=step)


def _check_relu(rng, step):
    # keep entries away from the kink at 0, where the derivative jumps
    x = rng.normal(size=(2, 3, 4, 4))
    near = np.abs(x) < 0.02
    x[near] = np.sign(x[near]) * (np.abs(x[near]) + 0.05)

    def forward():
        y, mask = ops.relu_forward(x)
        return y, lambda dy: (ops.relu_backward(dy, mask),)

    return _weighted_sum_loss(forward, x, step=step)


def _check_maxpool(rng, step):
    # resample until window maxima are well separated; ties are non-differentiable
    while True:
        x = rng.normal(size=(2, 3, 6, 6))
        win = np.sort(np.lib.stride_tricks.sliding_window_view(
            np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf),
            (3, 3), axis=(2, 3))[:, :, ::2, ::2].reshape(2, 3, 3, 3, 9), axis=-1)
        if np.min(win[..., -1] - win[..., -2]) > 1e-3:
            break

    def forward():
        y, cache = ops.maxpool_forward(x)
        return y, lambda dy: (ops.maxpool_backward(dy, cache),)

    return _weighted_sum_loss(forward, x, step=step)


def _check_global_avgpool(rng, step):
    x = rng.normal(size=(2, 5, 2, 2))

    def forward():
        y, cache = ops.global_avgpool_forward(x)
        return y, lambda dy: (ops.global_avgpool_backward(dy, cache),)

    return _weighted_sum_loss(forward, x, step=step)


def _check_channel_shuffle(rng, step):
    x = rng.normal(size=(2, 16, 3, 3))

    def forward():
        y = ops.channel_shuffle_halfswap(x, 8)
        if CORRUPT_SHUFFLE_BACKWARD:
            return y, lambda dy: (ops.channel_shuffle_halfswap(dy, 8),)
        return y, lambda dy: (ops.channel_shuffle_backward(dy, 8),)

    return _weighted_sum_loss(forward, x, step=step)


def _check_dropout(rng, step):
    x = rng.normal(size=(2, 4, 3, 3))
    mask_seed = int(rng.integers(1 << 30))

    def forward():
        # same generator seed every call, so the mask is constant under differencing
        y, cache = ops.dropout_forward(x, 0.4, True, np.random.default_rng(mask_seed))
        return y, lambda dy: (ops.dropout_backward(dy, cache),)

    return _weighted_sum_loss(forward, x, step=step)


def _check_shortcut_add(rng, step):
    a = rng.normal(size=(2, 3, 4, 4))
    b = rng.normal(size=(2, 3, 4, 4))

    def forward():
        return elementwise_add(a, b), lambda dy: (dy, dy)

    return _weighted_sum_loss(forward, a, b, step=step)


def _check_concat_self(rng, step):
    x = rng.normal(size=(2, 3, 4, 4))

    def forward():
        c = x.shape[1]
        return concat_channels(x, x), lambda dy: (dy[:, :c] + dy[:, c:],)

    return _weighted_sum_loss(forward, x, step=step)


def _check_softmax_cross_entropy(rng, step):
    logits = rng.normal(size=(4, 10))
    labels = rng.integers(0, 10, size=4)
    _, analytic = ops.softmax_cross_entropy(logits, labels)
    numeric = numeric_grad(lambda: float(ops.softmax_cross_entropy(logits, labels)[0]),
                           logits, step)
    return relative_error(analytic, numeric)


OP_CHECKS = (
    ("conv2d", _check_conv2d),
    ("conv2d_1x1", _check_conv2d_1x1),
    ("depthwise_conv", _check_depthwise_conv),
    ("pointwise_group_conv", _check_pointwise_group_conv),
    ("batchnorm", _check_batchnorm),
    ("relu", _check_relu),
    ("maxpool", _check_maxpool),
    ("global_avgpool", _check_global_avgpool),
    ("channel_shuffle", _check_channel_shuffle),
    ("dropout", _check_dropout),
    ("shortcut_add", _check_shortcut_add),
    ("concat_self", _check_concat_self),
    ("softmax_cross_entropy", _check_softmax_cross_entropy),
)


def run_op_checks(seeds=(0, 1, 2, 3, 4), step: float = STEP,
                  tolerance: float = OP_TOLERANCE):
    """One CheckResult per op; the error is the worst over all seeds."""
    results = []
    for name, fn in OP_CHECKS:
        worst = 0.0
        for seed in seeds:
            worst = max(worst, fn(np.random.default_rng(seed), step))
        results.append(CheckResult(name, worst, tolerance))
    return results


TOY_SPEC = NetworkSpec(reuse_count=2, width_multiplier=0.125, num_classes=10,
                       input_shape=(3, 16, 16), dropout_rate=0.0)


def run_network_check(seed: int = 0, step: float = STEP,
                      tolerance: float = NET_TOLERANCE,
                      coords_per_tensor: int = 6) -> CheckResult:
    """End-to-end check of the full backward pass on a small configuration.

    Samples `coords_per_tensor` coordinates from every parameter tensor
    (all of them when the tensor is smaller), so every layer and reuse
    site contributes.  Batch-norm running statistics drift across the
    repeated train-mode forwards, but the loss depends only on batch
    statistics, so the differencing is unaffected.
    """
    net = build_network(TOY_SPEC, dtype=np.float64)
    net.init_parameters(seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(2, 3, 16, 16))
    labels = rng.integers(0, TOY_SPEC.num_classes, size=2)

    def loss() -> float:
        logits = net.forward(x, train=True)
        return float(ops.softmax_cross_entropy(logits, labels)[0])

    logits = net.forward(x, train=True)
    _, dlogits = ops.softmax_cross_entropy(logits, labels)
    net.backward(dlogits)
    analytic = {p.name: p.grad.copy() for p in net.store}

    worst = 0.0
    pick = np.random.default_rng(seed + 2)
    for p in net.store:
        flat = p.value.ravel()
        count = min(coords_per_tensor, flat.size)
        idxs = pick.choice(flat.size, size=count, replace=False)
        aflat = analytic[p.name].ravel()
        for i in idxs:
            old = flat[i]
            flat[i] = old + step
            fp = loss()
            flat[i] = old - step
            fm = loss()
            flat[i] = old
            numeric = (fp - fm) / (2.0 * step)
            worst = max(worst, relative_error(aflat[i], numeric))
    return CheckResult("network", worst, tolerance)


def run_all(seeds=(0, 1, 2, 3, 4), step: float = STEP):
    """The complete suite: all op checks plus the whole-network check."""
    results = run_op_checks(seeds, step)
    results.append(run_network_check(seeds[0], step))
    return results, all(r.passed for r in results)

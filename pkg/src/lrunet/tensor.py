"""Rank-4 tensor primitives.

Every feature volume in this package is a dense numpy array in
(batch, channels, height, width) layout, C-contiguous and row-major in
that axis order.  Training runs in float32; float64 is used when checking
gradients numerically.  The helpers here create and combine such tensors
and enforce the layout contract at the boundaries, so the layer kernels
can assume well-formed inputs.
"""

from typing import NamedTuple

import numpy as np

from .errors import ShapeError


class Shape4(NamedTuple):
    """Extents of a rank-4 tensor, (batch, channels, height, width)."""

    batch: int
    channels: int
    height: int
    width: int


def check_shape4(shape) -> Shape4:
    """Validate a 4-component shape: all extents >= 1, total size addressable."""
    if len(shape) != 4:
        raise ShapeError(f"expected 4 extents (batch, channels, height, width), got {tuple(shape)}")
    b, c, h, w = (int(v) for v in shape)
    if min(b, c, h, w) < 1:
        raise ShapeError(f"all extents must be >= 1, got {(b, c, h, w)}")
    total = b * c * h * w
    if total > np.iinfo(np.intp).max:
        raise ShapeError(f"element count {total} exceeds addressable range")
    return Shape4(b, c, h, w)


def zeros(shape, dtype=np.float32) -> np.ndarray:
    """Allocate an all-zero rank-4 tensor."""
    return np.zeros(check_shape4(shape), dtype=dtype)


def check_tensor4(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Assert that `x` is a valid rank-4 volume and return it C-contiguous."""
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name} must be a rank-4 array, got {getattr(x, 'shape', type(x))}")
    check_shape4(x.shape)
    return np.ascontiguousarray(x)


def elementwise_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum of two tensors with identical shapes (shortcut join)."""
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} vs {b.shape}")
    return a + b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate along the channel axis; batch and spatial extents must agree.

    Output channels [0, a.channels) come from `a` in order, the rest from `b`.
    """
    check_tensor4(a, "a")
    check_tensor4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"channel concat needs matching batch/spatial extents, got {a.shape} vs {b.shape}"
        )
    return np.concatenate([a, b], axis=1)

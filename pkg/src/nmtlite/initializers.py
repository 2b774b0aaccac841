"""Weight initialization schemes selected by the ``weight_init`` option."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .rng import RngState
from .tensor import Tensor

METHODS = ("xavier", "he", "orthogonal", "normal")


def init_weight(method: str, shape, rng: RngState, dtype=np.float64) -> Tensor:
    """Draw a weight tensor.

    xavier: uniform on +-sqrt(6/(fan_in+fan_out)); he: normal with std
    sqrt(2/fan_in); orthogonal: Q factor of a random normal matrix
    (orthonormal along the taller side for non-square shapes); normal:
    N(0, 0.01).  fan_in/fan_out are shape[0]/shape[1].
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError("init_weight", shape, detail="zero extent")
    if method == "xavier":
        fan_in, fan_out = _fans(shape)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-limit, limit, shape, dtype))
    if method == "he":
        fan_in, _ = _fans(shape)
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape, dtype))
    if method == "orthogonal":
        if len(shape) != 2:
            raise ShapeError("init_weight", shape, detail="orthogonal needs rank 2")
        return Tensor(_orthogonal(shape, rng).astype(dtype, copy=False))
    if method == "normal":
        return Tensor(rng.normal(0.0, 0.01, shape, dtype))
    raise ValueError("unknown weight_init %r (supported: %s)" % (method, ", ".join(METHODS)))


def zeros(shape, dtype=np.float64) -> Tensor:
    """Biases are always zero-initialized no matter the weight_init method."""
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def _fans(shape):
    if len(shape) == 1:
        return shape[0], shape[0]
    return shape[0], shape[1]


def _orthogonal(shape, rng):
    rows, cols = shape
    transpose = rows < cols
    tall = (cols, rows) if transpose else (rows, cols)
    a = rng.normal(0.0, 1.0, tall)
    q, r = np.linalg.qr(a)
    # fix signs so the factor is unique given the draw
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q.T) if transpose else q

"""Dense float64 arithmetic used throughout the package.

Tensors are plain ``numpy.ndarray`` objects with dtype float64 in C
(row-major) order.  Flat parameter-space vectors are 1-D arrays; the helpers
below validate that and raise :class:`~dtnh.errors.DimensionError` on shape
disagreement instead of relying on numpy broadcasting.
"""

import numpy as np

from .errors import DimensionError

DTYPE = np.float64


def as_tensor(data, shape=None):
    """Return ``data`` as a contiguous float64 array, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise DimensionError(f"shape extents must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise DimensionError(
                f"cannot view {arr.size} values as shape {shape}"
            )
        arr = arr.reshape(shape)
    return arr


def as_flat(data):
    """Return ``data`` as a 1-D float64 vector."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if arr.ndim != 1:
        raise DimensionError(f"expected a flat vector, got shape {arr.shape}")
    return arr


def zeros(d):
    return np.zeros(int(d), dtype=DTYPE)


def _check_same_length(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def dot(a, b):
    """Inner product of two flat vectors."""
    a = as_flat(a)
    b = as_flat(b)
    _check_same_length(a, b)
    return float(np.dot(a, b))


def norm_sq(a):
    """Squared Euclidean norm; shares the code path of :func:`dot`."""
    return dot(a, a)


def axpy(alpha, x, y):
    """Return ``alpha * x + y`` as a new vector."""
    x = as_flat(x)
    y = as_flat(y)
    _check_same_length(x, y)
    return alpha * x + y


def matmul(a, b):
    """Rank-2 matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul expects rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    return a @ b

"""Dense double-precision helpers.

Matrices are plain ``numpy.ndarray`` objects of dtype float64; these helpers
add the shape and finiteness checks the rest of the package relies on.
"""
import numpy as np

from ..errors import NumericError, ShapeError


def as_matrix(a, name="matrix"):
    """Return ``a`` as a 2-D float64 array, rejecting NaN/Inf entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(m))[0])
        raise NumericError(f"{name} has a non-finite entry at {bad}", coordinate=bad)
    return m


def as_vector(v, name="vector"):
    out = np.asarray(v, dtype=np.float64)
    if out.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {out.shape}")
    return out


def matmul(a, b):
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def symmetrize(a):
    return 0.5 * (a + a.T)


def is_symmetric(a, tol=1e-12):
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and bool(np.max(np.abs(a - a.T), initial=0.0) <= tol)

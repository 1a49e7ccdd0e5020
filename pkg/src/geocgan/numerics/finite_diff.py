"""Central finite differences, used as independent oracles for autodiff."""
import numpy as np

from ..errors import ContractError, NumericError


def _eval(f, z, j):
    out = np.asarray(f(z), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite function value while perturbing coordinate {j}", coordinate=j)
    return out


def finite_diff_jacobian(f, z, step=1e-5):
    """Central-difference Jacobian of ``f`` at ``z``, shape ``(dim f, dim z)``."""
    if not step > 0:
        raise ContractError("finite-difference step must be positive")
    z = np.asarray(z, dtype=np.float64).ravel()
    cols = []
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = step
        hi = _eval(f, z + e, j).ravel()
        lo = _eval(f, z - e, j).ravel()
        cols.append((hi - lo) / (2.0 * step))
    return np.stack(cols, axis=1)


def finite_diff_grad(f, z, step=1e-5):
    """Gradient of a scalar function by central differences."""
    z = np.asarray(z, dtype=np.float64)
    return finite_diff_jacobian(lambda u: np.atleast_1d(f(u.reshape(z.shape))), z.ravel(), step)[0].reshape(z.shape)

"""Backend selection for the MLP kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over.  Set ``GEOCGAN_PURE_PYTHON=1`` to force the
fallback (the benchmark and the backend-parity tests rely on this).

The compiled forward/backward loops beat numpy for the small batches of
the per-example training loop, while numpy's BLAS-backed products win on
large batches, so those two kernels dispatch on the batch size.
"""
import os

from . import _kernels_py

if os.environ.get("GEOCGAN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"
TANH = _kernels_py.TANH
SOFTPLUS = _kernels_py.SOFTPLUS
SMALL_BATCH = 3


def mlp_forward(params, sizes, X, act):
    mod = _impl if X.shape[0] <= SMALL_BATCH else _kernels_py
    return mod.mlp_forward(params, sizes, X, act)


def mlp_backward(params, sizes, acts, gY, act):
    mod = _impl if gY.shape[0] <= SMALL_BATCH else _kernels_py
    return mod.mlp_backward(params, sizes, acts, gY, act)


mlp_jacobian = _impl.mlp_jacobian

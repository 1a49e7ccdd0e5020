import os
import subprocess
import sys

import numpy as np
import pytest

from geocgan import _kernels_py as ref
from geocgan import kernels
from geocgan.models import init_params, layer_sizes
from geocgan.numerics import finite_diff_grad, make_rng

SIZES = np.array(layer_sizes(5, (16, 16), 3), dtype=np.int64)


def _setup(act, n=4, seed=0):
    rng = make_rng(seed)
    p = init_params(list(SIZES), rng)
    X = rng.normal(size=(n, SIZES[0]))
    return p, X


@pytest.mark.parametrize("act", [kernels.TANH, kernels.SOFTPLUS])
def test_backend_parity(act):
    if kernels.BACKEND != "compiled":
        pytest.skip("compiled extension not built")
    from geocgan import _kernels as ext
    p, X = _setup(act)
    a_ref = ref.mlp_forward(p, SIZES, X, act)
    a_ext = ext.mlp_forward(p, SIZES, X, act)
    np.testing.assert_allclose(a_ext, a_ref, rtol=1e-12, atol=1e-13)
    gY = np.random.default_rng(1).normal(size=(len(X), SIZES[-1]))
    for r, e in zip(ref.mlp_backward(p, SIZES, a_ref, gY, act), ext.mlp_backward(p, SIZES, a_ext, gY, act)):
        np.testing.assert_allclose(e, r, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(ext.mlp_jacobian(p, SIZES, X, act, 2), ref.mlp_jacobian(p, SIZES, X, act, 2),
                               rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("act", [kernels.TANH, kernels.SOFTPLUS])
def test_backward_matches_finite_differences(act):
    p, X = _setup(act, n=2)
    gY = np.ones((2, SIZES[-1]))
    acts = kernels.mlp_forward(p, SIZES, X, act)
    gp, gX = kernels.mlp_backward(p, SIZES, acts, gY, act)

    def out(params):
        a = kernels.mlp_forward(params, SIZES, X, act)
        return float(a[:, -SIZES[-1]:].sum())

    fd = finite_diff_grad(out, p, step=1e-6)
    assert np.linalg.norm(gp - fd) / np.linalg.norm(fd) < 1e-6


def test_pure_python_fallback_is_selected_by_env():
    code = "import geocgan.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, GEOCGAN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"

import numpy as np
import pytest

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")
from hypothesis import given, strategies as st

from geocgan.errors import ContractError, NumericError, ShapeError
from geocgan.numerics import (Tape, as_matrix, finite_diff_grad, finite_diff_jacobian, is_symmetric,
                              make_rng, matmul, symmetrize)
from geocgan.numerics import autodiff as ad

from conftest import rel_err


def test_as_matrix_rejects_non_finite_with_coordinate():
    with pytest.raises(NumericError) as ei:
        as_matrix([[1.0, 2.0], [np.nan, 4.0]])
    assert ei.value.coordinate == (1, 0)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_symmetrize():
    A = np.arange(9.0).reshape(3, 3)
    assert is_symmetric(symmetrize(A))
    assert not is_symmetric(A)


def test_rng_is_deterministic_and_streams_differ():
    a = make_rng(7).normal(size=5)
    b = make_rng(7).normal(size=5)
    c = make_rng(7, stream=1).normal(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    s1 = make_rng(7).spawn(3).normal(size=3)
    s2 = make_rng(7).spawn(3).normal(size=3)
    np.testing.assert_array_equal(s1, s2)


def test_finite_diff_jacobian_linear_is_exact():
    A = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]])
    J = finite_diff_jacobian(lambda z: A @ z, np.array([0.3, -0.2]))
    np.testing.assert_allclose(J, A, atol=1e-9)


def test_finite_diff_rejects_bad_step_and_nan():
    with pytest.raises(ContractError):
        finite_diff_jacobian(lambda z: z, np.zeros(2), step=0.0)
    with pytest.raises(NumericError) as ei:
        finite_diff_jacobian(lambda z: np.sqrt(z[1:]), np.array([1.0, 0.0]))
    assert ei.value.coordinate == 1


def _check_grad(fn, *shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    vals = [rng.normal(size=s) for s in shapes]
    tape = Tape()
    vs = [tape.var(v) for v in vals]
    grads = tape.grad(fn(*vs), vs)
    for i, v in enumerate(vals):
        def f(flat, i=i):
            args = list(vals)
            args[i] = flat.reshape(v.shape)
            return float(fn(*args))
        fd = finite_diff_grad(f, v.ravel(), step=1e-6).reshape(v.shape)
        assert rel_err(grads[i], fd) < tol, (i, grads[i], fd)


@pytest.mark.parametrize("fn,shapes", [
    (lambda a, b: ad.vsum(ad.mul(a, b)), [(3, 4), (3, 4)]),
    (lambda a, b: ad.vsum(ad.div(a, ad.add(ad.mul(b, b), 1.0))), [(5,), (5,)]),
    (lambda a, b: ad.vsum(ad.tanh(ad.matmul(a, b))), [(3, 4), (4, 2)]),
    (lambda a: ad.trace(ad.matmul(a, ad.transpose(a))), [(4, 4)]),
    (lambda a: ad.vsum(ad.softplus(a)), [(6,)]),
    (lambda a: ad.vsum(ad.log_sigmoid(a)), [(6,)]),
    (lambda a: ad.vsum(ad.exp(ad.mul(a, 0.3))), [(2, 3)]),
    (lambda a: ad.vsum(ad.log(ad.add(ad.mul(a, a), 1.0))), [(4,)]),
    (lambda a: ad.vsum(ad.sqrt(ad.add(ad.mul(a, a), 1.0))), [(4,)]),
    (lambda a: ad.vsum(ad.norm(a, axis=-1)), [(3, 4)]),
    (lambda a: ad.mean(ad.power(a, 3)), [(3, 3)]),
    (lambda a, b: ad.vsum(ad.concat([a, ad.mul(b, 2.0)], axis=0)), [(2, 3), (1, 3)]),
    (lambda a: ad.vsum(ad.mul(ad.getitem(a, (slice(None), 1)), ad.reshape(a, (6,))[:3])), [(3, 2)]),
    (lambda a, b: ad.vsum(ad.add(a, b)), [(3, 4), (4,)]),
])
def test_autodiff_matches_finite_differences(fn, shapes):
    _check_grad(fn, *shapes)


def test_abs_subgradient_at_zero_and_norm_at_origin():
    tape = Tape()
    x = tape.var(np.array([0.0, -2.0, 3.0]))
    g = tape.grad(ad.vsum(ad.abs(x)), [x])[0]
    np.testing.assert_array_equal(g, [0.0, -1.0, 1.0])
    tape = Tape()
    z = tape.var(np.zeros(3))
    np.testing.assert_array_equal(tape.grad(ad.vsum(ad.norm(z)), [z])[0], np.zeros(3))


def test_stop_gradient_blocks_flow():
    tape = Tape()
    x = tape.var(np.array([2.0]))
    y = ad.mul(ad.stop_gradient(x), x)
    np.testing.assert_allclose(tape.grad(ad.vsum(y), [x])[0], [2.0])


def test_grad_contracts():
    tape = Tape()
    x = tape.var(np.ones(3))
    with pytest.raises(ContractError):
        tape.grad(ad.mul(x, 2.0), [x])
    other = Tape()
    y = other.var(np.ones(1))
    with pytest.raises(ContractError):
        tape.grad(ad.vsum(y), [x])


def test_gradient_of_intermediate_input():
    tape = Tape()
    x = tape.var(np.array([1.0, 2.0]))
    h = ad.mul(x, 3.0)
    out = ad.vsum(ad.mul(h, h))
    gx, gh = tape.grad(out, [x, h])
    np.testing.assert_allclose(gh, 2 * np.array([3.0, 6.0]))
    np.testing.assert_allclose(gx, 18 * np.array([1.0, 2.0]))


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_softplus_and_log_sigmoid_are_consistent(xs):
    x = np.array(xs)
    np.testing.assert_allclose(ad.log_sigmoid(x), -ad.softplus(-x), atol=1e-12)


def test_non_var_ops_return_arrays():
    out = ad.tanh(np.array([0.0, 1.0]))
    assert isinstance(out, np.ndarray)

import numpy as np
import pytest

from geocgan import geometry as geo
from geocgan.errors import ContractError, GeometryError
from geocgan.models import GeneratorNet, LinearGenerator, sphere_map
from geocgan.numerics import make_rng


def test_flat_geodesic_is_straight():
    g = LinearGenerator(np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    path = geo.integrate_geodesic(geo.CurveState(0.0, np.zeros(2), np.array([0.3, -0.4])), g, steps=50)
    expect = path.ts[:, None] * np.array([0.3, -0.4])
    assert np.abs(path.zs - expect).max() < 1e-6


def test_sphere_geodesic_is_great_circle():
    g = sphere_map()
    start = geo.CurveState(0.0, np.array([np.pi / 2, 0.0]), np.array([0.0, 1.0]))
    path = geo.integrate_geodesic(start, g, T=1.0, steps=100)
    Y = g.forward(path.zs)
    np.testing.assert_allclose(Y[:, 2], 0.0, atol=1e-7)  # stays on the equator
    length = geo.curve_length(path, g)
    assert abs(length - 1.0) < 1e-3


def test_curve_length_of_straight_path_on_linear_map():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    g = LinearGenerator(A)
    p = geo.straight_path(np.zeros(2), np.array([1.0, 1.0]), steps=10)
    assert abs(geo.curve_length(p, g) - np.linalg.norm(A @ [1.0, 1.0])) < 1e-12


def test_curve_path_validation():
    with pytest.raises(Exception):
        geo.CurvePath(np.array([0.0, 0.5, 0.4]), np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(ContractError):
        geo.integrate_geodesic(geo.CurveState(0.0, np.zeros(2), np.ones(2)), LinearGenerator(np.eye(2)), steps=1)


def test_metric_derivative_on_quadratic_map():
    from geocgan.models import FunctionGenerator
    g = FunctionGenerator(lambda z: np.array([z[0] ** 2, z[1]]), 2, 2,
                          jac=lambda z: np.array([[2 * z[0], 0.0], [0.0, 1.0]]))
    M, dM = geo.metric_derivative(g, np.array([0.5, 0.0]))
    np.testing.assert_allclose(M, np.diag([1.0, 1.0]), atol=1e-12)
    assert abs(dM[0, 0, 0] - 8 * 0.5) < 1e-6
    assert np.abs(dM).sum() - abs(dM[0, 0, 0]) < 1e-9


def test_velocity_scaling_law():
    g = GeneratorNet.create(2, 0, 3, (8,), rng=make_rng(4), std=0.5)
    z0, v = np.array([0.1, -0.2]), np.array([0.4, 0.3])
    p1 = geo.integrate_geodesic(geo.CurveState(0.0, z0, v), g, T=1.0, steps=200)
    p2 = geo.integrate_geodesic(geo.CurveState(0.0, z0, 2 * v), g, T=0.5, steps=100)
    assert np.abs(p1.zs[-1] - p2.zs[-1]).max() < 1e-4


def test_geodesic_has_constant_speed():
    g = GeneratorNet.create(2, 0, 3, (8,), rng=make_rng(5), std=0.5)
    p = geo.integrate_geodesic(geo.CurveState(0.0, np.zeros(2), np.array([0.5, 0.2])), g, steps=100)
    s = geo.speeds(p, g)
    assert s.std() / s.mean() < 0.02


def test_shoot_geodesic_on_sphere_matches_arc():
    g = sphere_map()
    a, b = np.array([1.0, 0.2]), np.array([1.6, 1.5])
    res = geo.shoot_geodesic(g, None, a, b, rng=make_rng(0))
    ya, yb = g.forward(a), g.forward(b)
    assert abs(res.length - np.arccos(np.clip(ya @ yb, -1, 1))) < 0.02 * res.length
    assert res.converged and not res.graph_fallback
    with pytest.raises(ContractError):
        geo.shoot_geodesic(g, None, a, a)


def test_lattice_path_upper_bounds_geodesic():
    g = sphere_map()
    a, b = np.array([1.0, 0.2]), np.array([1.6, 1.5])
    lat = geo.lattice_shortest_path(g, None, a, b)
    exact = np.arccos(np.clip(g.forward(a) @ g.forward(b), -1, 1))
    assert exact * 0.98 <= lat[0] <= exact * 1.1


def test_tau_and_bilipschitz():
    g = LinearGenerator(np.diag([1.0, 3.0]))
    assert geo.tau_ratio(g, None, [0, 0], [0, 1]) == pytest.approx(3.0)
    with pytest.raises(ContractError):
        geo.tau_ratio(g, None, [1, 1], [1, 1])
    rep = geo.bilipschitz_report(g, None, lambda r, n: r.normal(size=(n, 2)), pairs=200, rng=make_rng(0))
    assert 1.0 - 1e-9 <= rep.min_ratio <= rep.max_ratio <= 3.0 + 1e-9
    assert rep.c_upper == rep.max_ratio and rep.ok
    with pytest.raises(ContractError):
        geo.bilipschitz_report(g, None, lambda r, n: r.normal(size=(n, 2)), pairs=10)


def test_hadamard_and_distortion(rng):
    for _ in range(20):
        J = rng.normal(size=(5, 3))
        assert np.linalg.det(J.T @ J) <= geo.hadamard_bound(J) * (1 + 1e-12)
    g = LinearGenerator(np.diag([2.0, 3.0]))
    assert geo.distortion(g, None, np.zeros(2)) == pytest.approx(36.0)


def test_singular_metric_is_regularised_or_reported():
    out = geo._solve_metric(np.ones((2, 2)), np.array([1.0, 1.0]), np.zeros(2))
    assert np.all(np.isfinite(out))
    with pytest.raises(GeometryError):
        geo._solve_metric(np.full((2, 2), np.nan), np.array([1.0, 0.0]), np.zeros(2))

import numpy as np
import pytest

from geocgan.errors import ConfigError, TrainingError
from geocgan.models import FunctionGenerator, GeneratorNet
from geocgan.numerics import Tape, finite_diff_grad, make_rng
from geocgan.training import (Adam, AdamState, TrainConfig, build_dataset, curve_velocity, init_state,
                              inner_geodesic_phase, outer_update, run, sample_latent_ball, train, walk_step)

TINY = dict(dataset="cond_rings2d", k=2, n_train=8, n_eval=8, epochs=2, hidden=(8, 8), disc_hidden=(8,),
            batch=8, T=3, diag_pairs=8, diag_conditions=2)


def test_config_validation():
    for bad in (dict(T=0), dict(radius=0.0), dict(eps2=1.0), dict(eps1=0.5), dict(mode="x"),
                dict(losses=("gh", "bogus")), dict(lh_variant="x"), dict(walk_norm="x")):
        with pytest.raises(ConfigError) as ei:
            TrainConfig(**bad)
        assert ei.value.field is not None


def test_config_sections_roundtrip():
    cfg = TrainConfig.from_dict({"data": {"dataset": "bimodal1d"}, "optimizer": {"lr": 1e-3},
                                 "weights": {"gh": 1.0, "lh": 0.0, "rec": 1.0, "adv": 0.0}})
    assert cfg.dataset == "bimodal1d" and cfg.lr == 1e-3 and cfg.weights.gh == 1.0
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError) as ei:
        TrainConfig.from_dict({"training": {"nonsense": 1}})
    assert ei.value.field == "nonsense"


def test_adam_converges_on_quadratic():
    A = np.diag([1.0, 10.0, 0.1])
    target = np.array([1.0, -2.0, 3.0])
    opt, st = Adam(lr=0.05), AdamState.zeros(3)
    w = np.zeros(3)
    for _ in range(5000):
        w = opt.step(w, A @ (w - target), st)
    assert np.abs(w - target).max() < 1e-6
    assert st.step == 5000


def test_sample_latent_ball():
    rng = make_rng(0)
    Z = sample_latent_ball(4, 0.01, rng, n=100_000)
    assert np.linalg.norm(Z, axis=1).max() <= 0.01
    sigma = 0.01 / np.sqrt(4 + 2)
    assert np.all(np.abs(Z.mean(0)) < 3 * sigma / np.sqrt(len(Z)))
    assert sample_latent_ball(64, 0.01, rng).shape == (64,)


def _linear_1d():
    return GeneratorNet((), "tanh", np.array([1.0, 0.0]), 1, 0, 1)


def test_curve_velocity_examples():
    g = _linear_1d()
    assert curve_velocity(g, np.zeros(1), None, np.array([5.0]))[0] == pytest.approx(-1.0)
    np.testing.assert_array_equal(curve_velocity(g, np.array([2.0]), None, np.array([2.0])), [0.0])


def test_curve_velocity_matches_finite_differences():
    g = GeneratorNet.create(3, 1, 2, (8,), rng=make_rng(0))
    x, y, z0 = np.array([0.2]), np.array([3.0, -3.0]), np.array([0.1, 0.0, -0.1])
    fd = finite_diff_grad(lambda z: float(np.abs(y - g.forward(z, x)).sum()), z0, 1e-6)
    np.testing.assert_allclose(curve_velocity(g, z0, x, y), fd, atol=1e-4)


def test_walk_step_modes():
    V = np.array([3.0, 4.0])
    np.testing.assert_allclose(walk_step(V, 0.1, "unit"), [0.06, 0.08])
    np.testing.assert_allclose(walk_step(V * 0.1, 0.1, "clip"), [0.03, 0.04])
    np.testing.assert_allclose(walk_step(V * 0.1, 0.1, "unit"), [0.06, 0.08])
    np.testing.assert_array_equal(walk_step(np.zeros(2), 0.1), [0.0, 0.0])


def _state(cfg):
    ds = build_dataset(cfg)
    return ds, init_state(cfg, ds.d, ds.M, make_rng(cfg.seed))


def test_inner_phase_zero_loss_fixed_point():
    cfg = TrainConfig(**TINY, eta=0.0, eps1=0.0)
    ds, st = _state(cfg)
    x, z0 = ds.x_train[0], np.zeros(2)
    y = st.gen.forward(z0, x)
    before = st.gen.params.copy()
    zT, gh, _ = inner_geodesic_phase(st, z0, x, y, cfg, make_rng(0))
    assert gh == 0.0
    np.testing.assert_array_equal(st.gen.params, before)
    np.testing.assert_array_equal(zT, z0)


def test_inner_phase_walk_bound_and_discriminator_untouched():
    cfg = TrainConfig(**dict(TINY, T=10), eps1=1e-3)
    ds, st = _state(cfg)
    d_before = st.disc.params.copy()
    x, y = ds.x_train[0], ds.y_train[0]
    z0 = np.array([0.001, -0.002])
    V = curve_velocity(st.gen, z0, x, y)
    step = walk_step(-V, cfg.eta, cfg.walk_norm)
    zT, _, _ = inner_geodesic_phase(st, z0, x, y, cfg, make_rng(1))
    assert np.linalg.norm(zT - z0 - cfg.T * step) <= 3 * cfg.eps1 * np.sqrt(cfg.T * cfg.k)
    np.testing.assert_array_equal(st.disc.params, d_before)


def test_outer_update_pure_reconstruction_when_weights_zeroed():
    cfg = TrainConfig(**TINY, weights={"gh": 0.0, "lh": 0.0, "rec": 1.0, "adv": 0.0})
    ds, st = _state(cfg)
    x, y, zT = ds.x_train[0], ds.y_train[0], np.array([0.1, 0.2])
    g0 = st.gen.with_params(st.gen.params)
    d_before = st.disc.params.copy()
    out = outer_update(st, zT, x, y, cfg, make_rng(0))
    tape = Tape()
    w = tape.var(g0.params)
    from geocgan.numerics import autodiff as ad
    grad = tape.grad(ad.mean(ad.abs(ad.sub(y[None], g0.apply(w, zT, x)))), [w])[0]
    expect = Adam(cfg.lr).step(g0.params, grad, AdamState.zeros(g0.n_params))
    np.testing.assert_allclose(st.gen.params, expect, atol=1e-14)
    assert not np.array_equal(st.disc.params, d_before)  # discriminator steps 1:1
    assert out["loss_rec"] > 0


def test_train_is_deterministic_and_logs_metrics():
    cfg = TrainConfig(**TINY)
    a, b = run(cfg), run(cfg)
    np.testing.assert_array_equal(a.gen.params, b.gen.params)
    assert a.metrics.to_csv() == b.metrics.to_csv()
    assert {n for _, n, _ in a.metrics.records} >= {"loss_gh", "loss_lh", "loss_rec", "tau_min", "velocity_cv"}


def test_baseline_mode_uses_only_rec_and_adv():
    res = run(TrainConfig(**TINY, mode="baseline"))
    names = {n for _, n, _ in res.metrics.records}
    assert "loss_gh" not in names and "loss_lh" not in names and "loss_rec" in names


@pytest.mark.parametrize("variant", ["univariate", "maxdist", "mmd"])
def test_lh_variants_train(variant):
    res = run(TrainConfig(**dict(TINY, epochs=1), lh_variant=variant))
    assert np.isfinite(res.metrics.last("loss_total"))


def test_training_failure_carries_last_state():
    cfg = TrainConfig(**TINY)
    ds = build_dataset(cfg)
    ds.y_train = ds.y_train.copy()
    ds.y_train[3] = np.nan
    with pytest.raises(TrainingError) as ei:
        train(ds, cfg)
    assert ei.value.epoch == 0 and ei.value.last_state is not None


def test_empty_dataset_rejected():
    cfg = TrainConfig(**TINY)
    ds = build_dataset(cfg)
    ds.x_train = None
    with pytest.raises(ConfigError):
        train(ds, cfg)

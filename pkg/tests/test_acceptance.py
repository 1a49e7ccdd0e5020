"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The three training-based comparisons (diversity, interpolation velocity and
bi-lipschitz signature) share one set of trained models through a module
fixture; the training time is charged to the diversity criterion, which is
the one whose budget covers training.
"""
import time

import numpy as np
import pytest

from geocgan import geometry as geo
from geocgan import linalg_approx as la
from geocgan import losses as L
from geocgan.checkpoint import IntegrityError, load_checkpoint, save_checkpoint
from geocgan.errors import FormatVersionError
from geocgan.evaluation import (COMPARISON_SEEDS, comparison_configs, generated_diameter, geodesic_sweep,
                                interpolation_study, latent_sampler, median_convergence_check,
                                mode_coverage, sweep_targets)
from geocgan.models import GeneratorNet, sphere_map
from geocgan.numerics import Tape, finite_diff_grad, make_rng
from geocgan.numerics import autodiff as ad
from geocgan.training import TrainConfig, run

pytestmark = pytest.mark.slow

MINUTE = 60.0


def _rel(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-12))


def _random_net(rng, k=None, d=None, M=None):
    k = k or int(rng.integers(1, 5))
    d = int(rng.integers(0, 4)) if d is None else d
    M = M or int(rng.integers(1, 6))
    hidden = tuple(int(h) for h in rng.integers(3, 11, size=int(rng.integers(1, 4))))
    act = ("tanh", "softplus")[int(rng.integers(0, 2))]
    return GeneratorNet.create(k, d, M, hidden, act, rng=rng, std=float(rng.uniform(0.3, 0.8)))


# 1 -----------------------------------------------------------------------------------
def test_criterion_1_autodiff_oracle(criterion):
    t0 = time.perf_counter()
    rng = make_rng(101)
    worst = 0.0
    for _ in range(100):
        g = _random_net(rng)
        x = rng.normal(size=g.d)
        z0 = rng.normal(size=g.k)
        c = rng.normal(size=g.M)

        def loss_of(w, z):
            out = g.apply(w, z, x)
            return ad.vsum(ad.add(ad.mul(ad.tanh(out), c), ad.mul(ad.mul(out, out), 0.5)))

        tape = Tape()
        w, z = tape.var(g.params), tape.var(z0)
        gw, gz = tape.grad(loss_of(w, z), [w, z])
        fw = finite_diff_grad(lambda p: float(loss_of(p, z0)), g.params, 1e-6)
        fz = finite_diff_grad(lambda v: float(loss_of(g.params, v)), z0, 1e-6)
        worst = max(worst, _rel(gw, fw), _rel(gz, fz))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < MINUTE
    criterion(1, ok, f"max relative gradient error {worst:.2e} over 100 nets, {dt:.1f}s")
    assert ok


# 2 -----------------------------------------------------------------------------------
def _random_spd(rng, n, cond):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = np.exp(rng.uniform(np.log(1.0 / cond), 0.0, size=n))
    ev[0], ev[-1] = 1.0, 1.0 / cond
    return (Q * ev) @ Q.T


def test_criterion_2_linalg_approx(criterion):
    t0 = time.perf_counter()
    ld = float(la.logdet_series(np.diag([0.5, 0.5]), 20))
    ld_ok = abs(ld - (-1.3863)) < 1e-4
    rng = make_rng(202)
    resid = 0.0
    for _ in range(20):
        S = _random_spd(rng, 16, float(rng.uniform(2.0, 100.0)))
        V = la.hyperpower_inverse(S, N=100, alpha=0.1)
        resid = max(resid, float(np.linalg.norm(V @ S - np.eye(16))))
    P = la.make_projection(1000, 1000, rng).matrix
    n = P.size
    freq_ok = True
    freqs = []
    for level, p in zip((-np.sqrt(3), 0.0, np.sqrt(3)), (1 / 6, 2 / 3, 1 / 6)):
        count = int(np.sum(P == level))
        freqs.append(count / n)
        freq_ok &= abs(count - n * p) <= 3 * np.sqrt(n * p * (1 - p))
    dt = time.perf_counter() - t0
    ok = ld_ok and resid < 1e-6 and freq_ok and dt < MINUTE
    criterion(2, ok, f"logdet {ld:.6f}, max ||VS-I||_F {resid:.1e}, "
                     f"entry freqs {[round(f, 4) for f in freqs]}, {dt:.1f}s")
    assert ok


# 3 -----------------------------------------------------------------------------------
def test_criterion_3_kl_equivalence(criterion):
    t0 = time.perf_counter()
    rng = make_rng(303)
    worst = 0.0
    for h in range(1, 17):
        A = rng.normal(size=(256, h)) @ (np.eye(h) + 0.3 * rng.normal(size=(h, h)))
        B = rng.normal(size=(256, h)) * rng.uniform(0.5, 1.5, size=h) + 0.2 * rng.normal(size=h)
        gm, tm = L.estimate_moments(A), L.estimate_moments(B)
        exact = L.gaussian_kl_exact(tm.mean, tm.cov, gm.mean, gm.cov)
        approx = float(L.lh_loss(gm, tm, logdet_tol=1e-8))
        worst = max(worst, abs(approx - exact) / exact)
    self_kl = abs(float(L.lh_loss(tm, tm, logdet_tol=1e-8)))
    A, B = rng.normal(size=(100, 5)), 1.7 * rng.normal(size=(100, 5)) - 0.4
    uni = float(L.lh_loss_univariate(A, B))
    ga, gb = L.estimate_moments(A), L.estimate_moments(B)
    diag = sum(L.gaussian_kl_exact(gb.mean[i:i + 1], gb.cov[i:i + 1, i:i + 1],
                                   ga.mean[i:i + 1], ga.cov[i:i + 1, i:i + 1]) for i in range(5))
    dt = time.perf_counter() - t0
    ok = worst < 1e-3 and self_kl < 1e-3 and abs(uni - diag) < 1e-10 and dt < MINUTE
    criterion(3, ok, f"max relative KL error {worst:.1e} (h<=16), KL(P||P) {self_kl:.1e}, "
                     f"univariate gap {abs(uni - diag):.1e}, {dt:.1f}s")
    assert ok


# 4 -----------------------------------------------------------------------------------
def test_criterion_4_geometry(criterion):
    t0 = time.perf_counter()
    from geocgan.models import LinearGenerator
    g = LinearGenerator(np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    v = np.array([0.3, -0.4])
    path = geo.integrate_geodesic(geo.CurveState(0.0, np.zeros(2), v), g, steps=50)
    flat = float(np.abs(path.zs - path.ts[:, None] * v).max())

    sphere = sphere_map()
    rng = make_rng(404)
    arc_err = 0.0
    for _ in range(5):
        a = np.array([rng.uniform(0.6, 1.2), rng.uniform(-1.0, 1.0)])
        b = a + rng.uniform(0.3, 0.8) * np.array([rng.uniform(-0.5, 0.5), 1.0])
        res = geo.shoot_geodesic(sphere, None, a, b, rng=rng)
        arc = np.arccos(np.clip(sphere.forward(a) @ sphere.forward(b), -1, 1))
        arc_err = max(arc_err, abs(res.length - arc) / arc)

    scale_err, spread = 0.0, 0.0
    for i in range(5):
        net = GeneratorNet.create(2, 0, 3, (8,), rng=make_rng(410 + i), std=0.5)
        z0, v = 0.2 * rng.normal(size=2), 0.5 * rng.normal(size=2)
        base = geo.integrate_geodesic(geo.CurveState(0.0, z0, v), net, T=1.0, steps=200)
        for c in (0.5, 2.0):
            p = geo.integrate_geodesic(geo.CurveState(0.0, z0, c * v), net, T=0.5, steps=100)
            # gamma_{cV}(0.5) against gamma_V(0.5 c), read off the base grid
            j = int(round(0.5 * c * 200))
            if j <= 200:
                scale_err = max(scale_err, float(np.abs(p.zs[-1] - base.zs[j]).max()))
            else:
                ext = geo.integrate_geodesic(geo.CurveState(0.0, z0, v), net, T=0.5 * c, steps=j)
                scale_err = max(scale_err, float(np.abs(p.zs[-1] - ext.zs[-1]).max()))
        s = geo.speeds(base, net)
        spread = max(spread, s.std() / s.mean())

    hadamard_ok = True
    for _ in range(1000):
        net = _random_net(rng, k=int(rng.integers(1, 5)))
        J = np.asarray(net.jacobian_z(rng.normal(size=net.k), rng.normal(size=net.d)))
        hadamard_ok &= bool(np.linalg.det(J.T @ J) <= geo.hadamard_bound(J) * (1 + 1e-12) + 1e-300)
    dt = time.perf_counter() - t0
    ok = (flat < 1e-6 and arc_err < 0.02 and scale_err < 1e-4 and spread < 0.02
          and hadamard_ok and dt < 5 * MINUTE)
    criterion(4, ok, f"flat dev {flat:.1e}, sphere arc err {arc_err:.2%}, scaling err {scale_err:.1e}, "
                     f"speed std/mean {spread:.2%}, Hadamard {'holds' if hadamard_ok else 'violated'}, {dt:.0f}s")
    assert ok


# 5 -----------------------------------------------------------------------------------
def test_criterion_5_median_mean(criterion):
    t0 = time.perf_counter()
    l1 = median_convergence_check("l1")
    l2 = median_convergence_check("l2")
    dt = time.perf_counter() - t0
    ok = l1.error <= 0.15 and l1.distance_to_mean >= 1.0 and l2.error <= 0.15 and dt < 5 * MINUTE
    criterion(5, ok, f"l1: {l1.error:.3f} from median, {l1.distance_to_mean:.2f} from mean; "
                     f"l2: {l2.error:.3f} from mean, {dt:.0f}s")
    assert ok


# shared trained models ---------------------------------------------------------------
@pytest.fixture(scope="module")
def trained():
    t0 = time.perf_counter()
    models = {}
    for seed in COMPARISON_SEEDS:
        for cfg in comparison_configs(seed):
            r = run(cfg)
            models[cfg.mode, seed] = (r.gen, r.dataset, cfg)
    return models, time.perf_counter() - t0


def _shell(cfg):
    return latent_sampler(cfg.k, cfg.walk_radius, "shell")


def test_criterion_6_diversity(criterion, trained):
    models, train_time = trained
    t0 = time.perf_counter()
    cov = {"geo": [], "baseline": []}
    for (mode, seed), (g, ds, cfg) in models.items():
        rep = mode_coverage(g, ds, 64, ds.x_eval[:10], _shell(cfg), make_rng(seed, 51))
        cov[mode].append(rep.coverage)
    dt = train_time + time.perf_counter() - t0
    geo_c, base_c = float(np.mean(cov["geo"])), float(np.mean(cov["baseline"]))
    ok = geo_c >= 0.9 and base_c <= 0.6 and dt < 20 * MINUTE
    criterion(6, ok, f"coverage geo {geo_c:.3f} (>= 0.9), baseline {base_c:.3f} (<= 0.6); "
                     f"per seed geo {np.round(cov['geo'], 3).tolist()} baseline "
                     f"{np.round(cov['baseline'], 3).tolist()}; {dt / MINUTE:.1f} min incl. training")
    assert ok


def test_criterion_7_interpolation_velocity(criterion, trained):
    models, _ = trained
    t0 = time.perf_counter()
    spread = {"geo": [], "baseline": []}
    for (mode, seed), (g, ds, cfg) in models.items():
        s = interpolation_study(g, ds.x_eval[:10], _shell(cfg), pairs=100, rng=make_rng(seed, 52))
        spread[mode].append(s.mean_relative_std)
    dt = time.perf_counter() - t0
    ratio = float(np.mean(spread["geo"]) / np.mean(spread["baseline"]))
    ok = ratio <= 0.5 and dt < 10 * MINUTE
    criterion(7, ok, f"velocity std/mean geo {np.mean(spread['geo']):.3f}, baseline "
                     f"{np.mean(spread['baseline']):.3f}, ratio {ratio:.3f} (<= 0.5), {dt:.0f}s")
    assert ok


def test_criterion_8_geodesic_sweep(criterion, trained):
    models, _ = trained
    t0 = time.perf_counter()
    gaps, notes = {}, []
    for mode in ("geo", "baseline"):
        g, ds, cfg = models[mode, 0]
        x = ds.x_eval[0]
        rng = make_rng(0, 41)
        D = generated_diameter(g, x, _shell(cfg), rng)
        res = geodesic_sweep(g, x, sweep_targets(D), 10, rng=rng)
        gaps[mode] = res.mean_relative_gap
        notes.append(f"{mode} {res.mean_relative_gap:.3f} ({res.fallbacks} fallbacks)")
    dt = time.perf_counter() - t0
    ok = gaps["geo"] < gaps["baseline"] and gaps["geo"] <= 0.25 and dt < 30 * MINUTE
    criterion(8, ok, f"mean relative gap {', '.join(notes)}, {dt / MINUTE:.1f} min")
    assert ok


def test_criterion_9_bilipschitz(criterion, trained):
    models, _ = trained
    t0 = time.perf_counter()
    lo = {"geo": [], "baseline": []}
    hi = {"geo": [], "baseline": []}
    for (mode, seed), (g, ds, cfg) in models.items():
        rng, s = make_rng(seed, 53), _shell(cfg)
        X = ds.x_eval[:10]
        taus = np.concatenate([geo.tau_ratios(g, x, s(rng, 100), s(rng, 100)) for x in X])
        lo[mode].append(float(taus.min()))
        hi[mode].append(float(taus.max()))
    dt = time.perf_counter() - t0
    ratio = float(np.mean(lo["geo"]) / np.mean(lo["baseline"]))
    finite = bool(np.all(np.isfinite(hi["geo"] + hi["baseline"])))
    ok = ratio >= 10.0 and finite and dt < 5 * MINUTE
    criterion(9, ok, f"min tau geo {np.mean(lo['geo']):.4f}, baseline {np.mean(lo['baseline']):.4f}, "
                     f"ratio {ratio:.1f} (>= 10), max tau finite {finite}, {dt:.0f}s")
    assert ok


# 10 ----------------------------------------------------------------------------------
def test_criterion_10_determinism_persistence(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = TrainConfig(dataset="cond_rings2d", n_train=32, n_eval=16, k=2, hidden=(16, 16), disc_hidden=(16,),
                      epochs=2, T=4, batch=16, diag_pairs=16, diag_conditions=2, seed=7)
    a, b = run(cfg), run(cfg)
    same_metrics = a.metrics.to_csv().encode() == b.metrics.to_csv().encode()
    same_params = a.gen.params.tobytes() == b.gen.params.tobytes()

    p = tmp_path / "model.ckpt"
    save_checkpoint(p, a.gen, a.disc, metadata={"seed": 7})
    ck = load_checkpoint(p)
    exact = ck.gen.params.tobytes() == a.gen.params.tobytes() and ck.disc.params.tobytes() == a.disc.params.tobytes()

    raw = p.read_bytes()
    rejected = 0
    cases = {"flipped byte": raw[:40] + bytes([raw[40] ^ 0xFF]) + raw[41:],
             "truncated": raw[:-7],
             "bad magic": b"XXXX" + raw[4:]}
    for name, blob in cases.items():
        q = tmp_path / f"{name.replace(' ', '_')}.ckpt"
        q.write_bytes(blob)
        try:
            load_checkpoint(q)
        except (IntegrityError, FormatVersionError):
            rejected += 1
    dt = time.perf_counter() - t0
    ok = same_metrics and same_params and exact and rejected == len(cases) and dt < 5 * MINUTE
    criterion(10, ok, f"metrics identical {same_metrics}, params identical {same_params}, "
                      f"round-trip exact {exact}, corrupted rejected {rejected}/{len(cases)}, {dt:.0f}s")
    assert ok

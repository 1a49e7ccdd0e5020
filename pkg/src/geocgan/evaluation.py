"""Desk-scale experimental protocols: median/mean convergence, geodesic sweeps,
interpolation velocity profiles, mode coverage and ablation grids."""
import csv
import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import losses as L
from .data import make_dataset
from .errors import ContractError, GeoCGANError
from .models import GeneratorNet
from .numerics import Tape, make_rng
from .numerics import autodiff as ad
from .training import Adam, AdamState, TrainConfig, ball_sampler, train

SWEEP_POINTS = 9
SWEEP_DIRECTIONS = 10
INTERP_PAIRS = 100
INTERP_STEPS = 100


def latent_sampler(k, radius, kind="ball"):
    """Latent distribution used by every evaluation: the ball (or its shell) of ``radius``."""
    if kind == "ball":
        return ball_sampler(k, radius)
    if kind == "shell":
        def shell(rng, n):
            g = rng.normal(size=(n, k))
            return radius * g / np.linalg.norm(g, axis=1, keepdims=True)
        return shell
    raise ContractError(f"unknown latent sampler kind {kind!r}")


# median / mean convergence --------------------------------------------------------
@dataclass
class ConvergenceReport:
    norm: str
    target: str
    error: float
    distance_to_mean: float
    distance_to_median: float
    final_loss: float
    converged: bool
    predictions: np.ndarray = field(repr=False)


MEDIAN_CHECK_PAIRS = 32768


def median_convergence_check(norm, dataset=None, budget=3000, batch=256, lr=3e-3, hidden=(16, 16),
                             conditions=None, seed=0, plateau=None):
    """Fit ``x -> y`` by plain regression under ``norm`` and compare with the analytic median/mean.

    The net sees no latent code, so the loss minimiser is the conditional
    median (``l1``) or the conditional mean (``l2``).  ``budget`` is the
    number of Adam steps on mini-batches of ``batch`` training pairs; the
    reported predictor averages the iterates of the second half.  The
    default dataset is large because the sample mean of the heavy-tailed
    mixture converges slowly (standard error about ``4.3 / sqrt(n)``).
    """
    rng = make_rng(seed, 11)
    if dataset is None:
        dataset = make_dataset("bimodal1d", (MEDIAN_CHECK_PAIRS, 256), rng.spawn(1))
    net = GeneratorNet.create(0, dataset.d, dataset.M, hidden, "tanh", rng=rng.spawn(2), std=0.5)
    opt = Adam(lr)
    st = AdamState.zeros(net.n_params)
    z = np.zeros((batch, 0))
    losses = []
    avg, n_avg = np.zeros(net.n_params), 0
    for step in range(budget):
        idx = rng.integers(0, len(dataset), size=batch)
        tape = Tape()
        w = tape.var(net.params)
        out = net.apply(w, z, dataset.x_train[idx])
        loss = L.rec_loss(dataset.y_train[idx], out, norm)
        losses.append(float(loss))
        net.params = opt.step(net.params, tape.grad(loss, [w])[0], st)
        if step >= budget // 2:  # Polyak averaging over the second half
            n_avg += 1
            avg += (net.params - avg) / n_avg
    net.params = avg
    X = dataset.x_eval if conditions is None else np.atleast_2d(conditions)
    pred = net.forward(np.zeros((len(X), 0)), X)[:, 0]
    medians = np.array([dataset.median(x) for x in X])
    means = np.array([dataset.mean(x)[0] for x in X])
    d_med = float(np.mean(np.abs(pred - medians)))
    d_mean = float(np.mean(np.abs(pred - means)))
    final = float(np.mean(losses[-max(1, budget // 20):]))
    thresh = plateau if plateau is not None else 10.0 * dataset.mode_std + (d_mean if norm == "l2" else 0.0)
    converged = bool(np.isfinite(final)) and (norm == "l2" or final < thresh + float(np.mean(np.abs(dataset.y_eval[:, 0] - np.median(dataset.y_eval[:, 0])))))
    target = "median" if norm == "l1" else "mean"
    return ConvergenceReport(norm, target, d_med if norm == "l1" else d_mean, d_mean, d_med, final, converged, pred)


# geodesic sweep ---------------------------------------------------------------------
@dataclass
class SweepRecord:
    L_E: float
    mean_LG: float
    std_LG: float
    directions: int


@dataclass
class GeodesicSweepResult:
    records: list
    fallbacks: int = 0
    failures: int = 0

    def __post_init__(self):
        le = [r.L_E for r in self.records]
        if any(b <= a for a, b in zip(le, le[1:])):
            raise ContractError("sweep targets must be strictly increasing")

    @property
    def relative_gaps(self):
        return np.array([abs(r.mean_LG - r.L_E) / r.L_E for r in self.records])

    @property
    def mean_relative_gap(self):
        return float(np.mean(self.relative_gaps))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["L_E", "mean_LG", "std_LG", "directions"])
        for r in self.records:
            w.writerow([repr(r.L_E), repr(r.mean_LG), repr(r.std_LG), r.directions])
        return buf.getvalue()


def generated_diameter(g, x, sampler, rng, n=256):
    Y = g.forward(sampler(rng, n), x)
    d = np.sqrt(np.maximum(L._pairwise_sq(Y, Y), 0.0))
    return float(d.max())


def sweep_targets(diameter, points=SWEEP_POINTS):
    """Evenly spaced image-length targets spanning ``[0.1 D, 0.9 D]``."""
    return np.linspace(0.1 * diameter, 0.9 * diameter, points)


def _walk_to_lengths(g, x, z0, u, targets, ds, max_steps):
    """March along ``z0 + s u``; return the latent points where image length first reaches each target."""
    out = []
    length, s = 0.0, 0.0
    prev = np.asarray(g.forward(z0, x)).ravel()
    j = 0
    for _ in range(max_steps):
        z = z0 + (s + ds) * u
        cur = np.asarray(g.forward(z, x)).ravel()
        seg = float(np.linalg.norm(cur - prev))
        while j < len(targets) and length + seg >= targets[j]:
            frac = (targets[j] - length) / seg if seg > 0 else 0.0
            out.append(z0 + (s + frac * ds) * u)
            j += 1
        if j == len(targets):
            return out
        length += seg
        s += ds
        prev = cur
    return out


# Shooting settings for sweeps: two Newton starts, no Nelder-Mead restarts.
# Misses fall back to the lattice or relaxed-polyline length and are counted.
SWEEP_SHOOT = dict(restarts=2, steps=20, newton_iters=6)


def geodesic_sweep(g, x, targets, directions=SWEEP_DIRECTIONS, rng=None, start_sampler=None,
                   ds=None, max_steps=20000, **shoot_kw):
    """Compare Euclidean-line image lengths with geodesic lengths between the same endpoints.

    For each random start and unit direction, walk the latent line until the
    image curve length reaches each target ``L_E``, then shoot a geodesic
    between the start and that point.  Fallback events are counted.
    """
    targets = np.asarray(targets, dtype=np.float64)
    shoot_kw = {**SWEEP_SHOOT, **shoot_kw}
    rng = rng if rng is not None else make_rng(0, 21)
    k = g.k
    start_sampler = start_sampler or (lambda r, n: np.zeros((n, k)))
    if ds is None:
        J = np.asarray(g.jacobian_z(np.zeros(k), x))
        scale = max(float(np.linalg.norm(J, 2)), 1e-12)
        ds = float(targets[0]) / scale / 50.0
    per_target = [[] for _ in targets]
    fallbacks = failures = 0
    for _ in range(directions):
        z0 = start_sampler(rng, 1)[0]
        u = rng.normal(size=k)
        u /= np.linalg.norm(u)
        ends = _walk_to_lengths(g, x, z0, u, targets, ds, max_steps)
        for i, z1 in enumerate(ends):
            try:
                res = geo.shoot_geodesic(g, x, z0, z1, rng=rng.spawn(1000 + i), **shoot_kw)
            except GeoCGANError:
                failures += 1
                continue
            fallbacks += int(res.graph_fallback)
            per_target[i].append(min(res.length, float(targets[i])))
    records = []
    for t, vals in zip(targets, per_target):
        v = np.asarray(vals)
        records.append(SweepRecord(float(t), float(v.mean()) if len(v) else float("nan"),
                                   float(v.std()) if len(v) else float("nan"), len(v)))
    return GeodesicSweepResult(records, fallbacks, failures)


# interpolation velocity ---------------------------------------------------------------
@dataclass
class VelocityProfile:
    velocities: np.ndarray

    def __post_init__(self):
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if np.any(self.velocities < 0):
            raise ContractError("velocities must be non-negative")

    @property
    def mean(self):
        return float(self.velocities.mean())

    @property
    def std(self):
        return float(self.velocities.std())

    @property
    def relative_std(self):
        m = self.mean
        return self.std / m if m > 0 else 0.0


def interpolation_profile(g, x, z_a, z_b, steps=INTERP_STEPS):
    """Velocity ``sqrt(zdot^T M zdot)`` at each of ``steps`` uniform points from ``z_a`` to ``z_b``."""
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if np.array_equal(z_a, z_b):
        raise ContractError("interpolation endpoints coincide")
    zdot = (z_b - z_a) / steps
    ts = np.arange(steps) / steps
    J = np.asarray(g.jacobian_z(z_a + ts[:, None] * (z_b - z_a), x))
    return VelocityProfile(np.linalg.norm(J @ zdot, axis=1))


@dataclass
class InterpolationSummary:
    profiles: list
    conditions: np.ndarray

    @property
    def relative_stds(self):
        return np.array([p.relative_std for p in self.profiles])

    @property
    def mean_relative_std(self):
        return float(self.relative_stds.mean())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "mean_velocity", "std_velocity", "relative_std"])
        for i, p in enumerate(self.profiles):
            w.writerow([i, repr(p.mean), repr(p.std), repr(p.relative_std)])
        return buf.getvalue()


def interpolation_study(g, conditions, sampler, pairs=INTERP_PAIRS, steps=INTERP_STEPS, rng=None):
    """``pairs`` random interpolations; condition ``i`` is ``conditions[i % len]``."""
    rng = rng if rng is not None else make_rng(0, 22)
    conditions = np.atleast_2d(conditions)
    profiles = []
    for i in range(pairs):
        x = conditions[i % len(conditions)]
        za, zb = sampler(rng, 2)
        profiles.append(interpolation_profile(g, x, za, zb, steps))
    return InterpolationSummary(profiles, conditions)


# mode coverage ------------------------------------------------------------------------
@dataclass
class CoverageReport:
    per_x: np.ndarray
    in_mode_fraction: np.ndarray
    realism: float

    @property
    def coverage(self):
        return float(self.per_x.mean())


def covered_modes(Y, centers, radius):
    """Indices of the modes that receive at least one sample within ``radius``."""
    d = np.linalg.norm(Y[:, None, :] - centers[None], axis=2)
    nearest = d.argmin(axis=1)
    hit = d[np.arange(len(Y)), nearest] <= radius
    return np.unique(nearest[hit]), hit


def mode_coverage(g, dataset, samples_per_x=64, conditions=None, sampler=None, rng=None):
    """Fraction of each condition's modes hit by the generator, plus a realism proxy.

    ``g`` may be a generator or a callable ``(x, rng, n) -> samples``.
    The realism proxy is the mean distance from a sample to the nearest
    evaluation target.
    """
    rng = rng if rng is not None else make_rng(0, 23)
    X = dataset.x_eval[:32] if conditions is None else np.atleast_2d(conditions)
    if callable(g) and not hasattr(g, "forward"):
        draw = g
    else:
        sampler = sampler or ball_sampler(g.k, 0.5)
        draw = lambda x, r, n: np.asarray(g.forward(sampler(r, n), x))
    per_x, inside, real = [], [], []
    for x in X:
        Y = np.atleast_2d(draw(x, rng, samples_per_x))
        centers = dataset.mode_centers(x)
        modes, hit = covered_modes(Y, centers, dataset.mode_radius(x))
        per_x.append(len(modes) / len(centers))
        inside.append(hit.mean())
    if dataset.y_eval is not None:
        for x in X[:8]:
            Y = np.atleast_2d(draw(x, rng, samples_per_x))
            real.append(np.sqrt(np.maximum(L._pairwise_sq(Y, dataset.y_eval), 0.0)).min(axis=1).mean())
    return CoverageReport(np.array(per_x), np.array(inside), float(np.mean(real)) if real else float("nan"))


def ground_truth_sampler(dataset):
    return lambda x, rng, n: np.stack([dataset.sample_y(x, rng) for _ in range(n)])


# ablation -------------------------------------------------------------------------------
ABLATION_AXES = {
    "lh_variant": ("multivariate", "univariate", "maxdist", "mmd"),
    "projection": ("random", "passthrough"),
    "k": (2, 4, 8, 16),
    "losses": (("gh", "lh", "rec", "adv"), ("lh", "rec", "adv"), ("gh", "rec", "adv"), ("rec", "adv")),
}
ABLATION_COLUMNS = ("cell", "status", "coverage", "realism", "velocity_rel_std", "tau_min", "tau_max", "error")


def ablation_cells(axes, base):
    """One cell per value of each axis, varying a single axis from ``base`` (as in a row table)."""
    cells = []
    for axis in axes:
        if axis not in ABLATION_AXES:
            raise ContractError(f"unknown ablation axis {axis!r}")
        for val in ABLATION_AXES[axis]:
            label = "+".join(val) if isinstance(val, tuple) else str(val)
            cells.append((f"{axis}={label}", base.replace(**{axis: val})))
    return cells


def evaluate_cell(name, cfg, conditions=8, pairs=20, tau_pairs=200):
    try:
        res = train(make_dataset(cfg.dataset, (cfg.n_train, cfg.n_eval), make_rng(cfg.seed).spawn(7)), cfg)
        ds, g = res.dataset, res.gen
        sampler = latent_sampler(cfg.k, cfg.eval_radius)
        rng = make_rng(cfg.seed, 31)
        cov = mode_coverage(g, ds, conditions=ds.x_eval[:conditions], sampler=sampler, rng=rng)
        interp = interpolation_study(g, ds.x_eval[:conditions], sampler, pairs=pairs, rng=rng)
        taus = np.concatenate([
            geo.tau_ratios(g, x, sampler(rng, tau_pairs // conditions), sampler(rng, tau_pairs // conditions))
            for x in ds.x_eval[:conditions]])
        return {"cell": name, "status": "ok", "coverage": cov.coverage, "realism": cov.realism,
                "velocity_rel_std": interp.mean_relative_std, "tau_min": float(taus.min()),
                "tau_max": float(taus.max()), "error": ""}
    except GeoCGANError as exc:
        return {"cell": name, "status": "failed", "coverage": float("nan"), "realism": float("nan"),
                "velocity_rel_std": float("nan"), "tau_min": float("nan"), "tau_max": float("nan"),
                "error": f"{type(exc).__name__}: {exc}"}


def _cell_worker(args):
    return evaluate_cell(*args)


def ablation_grid(axes, base, jobs=1, **cell_kw):
    """Train and evaluate every cell; failing cells are recorded and the grid continues."""
    cells = ablation_cells(axes, base)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_cell_worker, [(n, c) for n, c in cells]))
    return [evaluate_cell(n, c, **cell_kw) for n, c in cells]


def ablation_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# paired geo / baseline comparison ---------------------------------------------------------
COMPARISON_SEEDS = (0, 1, 2, 3, 4)
COMPARISON_BASE = dict(dataset="cond_rings2d", k=2, n_train=512, n_eval=64, epochs=8, lr=2e-4, d_lr=2e-4)
BASELINE_EPOCHS = 200


def comparison_configs(seed, **overrides):
    """The geo and baseline configurations of one paired run.

    Both share data, architecture, learning rate and seed.  The baseline
    makes one generator update per pair against the geo run's ``T + 1``, so
    it is given ``BASELINE_EPOCHS`` epochs (more than the matching update
    count) to reach its converged behaviour.
    """
    kw = dict(COMPARISON_BASE, seed=seed)
    kw.update(overrides)
    geo_cfg = TrainConfig(**kw)
    base_cfg = geo_cfg.replace(mode="baseline", epochs=max(BASELINE_EPOCHS, geo_cfg.epochs * (geo_cfg.T + 1)))
    return geo_cfg, base_cfg


@dataclass
class ModelSummary:
    mode: str
    seed: int
    coverage: float
    velocity_rel_std: float
    tau_min: float
    tau_max: float


def summarize_model(g, dataset, cfg, conditions=10, samples=64, pairs=100, tau_pairs=1000, seed=0):
    """Coverage, interpolation velocity spread and tau range on the walk's end shell."""
    sampler = latent_sampler(cfg.k, cfg.walk_radius, "shell")
    X = dataset.x_eval[:conditions]
    cov = mode_coverage(g, dataset, samples, X, sampler, make_rng(seed, 51))
    interp = interpolation_study(g, X, sampler, pairs=pairs, rng=make_rng(seed, 52))
    rng = make_rng(seed, 53)
    per = tau_pairs // len(X)
    taus = np.concatenate([geo.tau_ratios(g, x, sampler(rng, per), sampler(rng, per)) for x in X])
    return ModelSummary(cfg.mode, cfg.seed, cov.coverage, interp.mean_relative_std,
                        float(taus.min()), float(taus.max()))

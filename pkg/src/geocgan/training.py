"""Geometry-aware training loop, its plain-cGAN baseline, and the Adam optimizer.

One call to ``train_pair`` processes a single ``(x, y)`` example:

1. draw ``z`` from a small latent ball and fix the walk velocity
   ``V = grad_z ||y - G(z, x)||_1``;
2. for ``T`` steps, take an Adam step on the geodesic loss at the current
   walk point, then move ``z <- z + eta V + e``;
3. around the final point ``z_T`` take one joint generator step on the
   moment-matching, reconstruction and adversarial losses, followed by one
   discriminator step.

``mode="baseline"`` skips steps 1-2 (``z`` is drawn once from the
evaluation ball) and keeps only reconstruction and adversarial terms.
"""
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg_approx as la
from . import losses as L
from .data import PerturbationSpec, make_dataset, perturb
from .errors import ConfigError, GeoCGANError, TrainingError
from .metrics import MetricsLog
from .models import DiscriminatorNet, GeneratorNet
from .numerics import Tape, make_rng
from .numerics import autodiff as ad

MODES = ("geo", "baseline")
LOSS_NAMES = ("gh", "lh", "rec", "adv")
LH_VARIANTS = ("multivariate", "univariate", "maxdist", "mmd")
PROJECTIONS = ("random", "passthrough", "meanpool")
WALK_NORMS = ("unit", "clip")
WALK_DIRECTIONS = ("gradient", "descent")


@dataclass
class TrainConfig:
    """Every knob of a training run; a run is a pure function of this and the seed."""

    # data
    dataset: str = "cond_rings2d"
    n_train: int = 2048
    n_eval: int = 512
    # networks
    k: int = 4
    hidden: tuple = (64, 64, 64)
    activation: str = "tanh"
    init_std: float = 0.5
    disc_hidden: tuple = (64, 64)
    # algorithm
    mode: str = "geo"
    losses: tuple = LOSS_NAMES
    T: int = 10
    eta: float = 0.05
    eps1: float = 1e-3
    eps2: float = 0.1
    radius: float = 0.01
    baseline_radius: float = None
    batch: int = 32
    proj_dim: int = 16
    projection: str = "random"
    lh_variant: str = "multivariate"
    mmd_bandwidth: float = 1.0
    schedule: str = "linear"
    gh_literal_sign: bool = False
    rec_norm: str = "l1"
    walk_norm: str = "unit"
    walk_direction: str = "descent"
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    # numerical approximations
    logdet_terms: int = la.DEFAULT_LOGDET_TERMS
    inverse_iters: int = la.DEFAULT_INVERSE_ITERS
    inverse_alpha: float = la.DEFAULT_ALPHA
    inverse_order: int = 3
    # perturbation of targets
    brightness: tuple = (-0.05, 0.05)
    contrast: tuple = (0.95, 1.05)
    noise_std: float = 0.01
    # optimizer
    lr: float = 2e-4
    d_lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # run
    epochs: int = 10
    seed: int = 0
    diag_conditions: int = 4
    diag_pairs: int = 64

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)
        self.losses = tuple(self.losses)
        self.brightness = tuple(float(v) for v in self.brightness)
        self.contrast = tuple(float(v) for v in self.contrast)
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        self.validate()

    def validate(self):
        def bad(name, msg):
            raise ConfigError(msg, field=name)

        if self.mode not in MODES:
            bad("mode", f"must be one of {MODES}")
        if not set(self.losses) <= set(LOSS_NAMES):
            bad("losses", f"entries must come from {LOSS_NAMES}")
        if self.T < 1:
            bad("T", "must be >= 1")
        if not self.radius > 0:
            bad("radius", "must be positive")
        if not 0.0 < self.eps2 < 1.0:
            bad("eps2", "must lie in (0, 1)")
        if not 0.0 <= self.eps1 < 0.1:
            bad("eps1", "must be much smaller than 1 (0 <= eps1 < 0.1)")
        if self.eta < 0:
            bad("eta", "must be non-negative")
        if self.k < 1:
            bad("k", "must be >= 1")
        if self.batch < 2:
            bad("batch", "must be >= 2")
        if self.lh_variant not in LH_VARIANTS:
            bad("lh_variant", f"must be one of {LH_VARIANTS}")
        if self.projection not in PROJECTIONS:
            bad("projection", f"must be one of {PROJECTIONS}")
        if self.rec_norm not in ("l1", "l2"):
            bad("rec_norm", "must be 'l1' or 'l2'")
        if self.walk_norm not in WALK_NORMS:
            bad("walk_norm", f"must be one of {WALK_NORMS}")
        if self.walk_direction not in WALK_DIRECTIONS:
            bad("walk_direction", f"must be one of {WALK_DIRECTIONS}")
        if self.inverse_order not in (2, 3):
            bad("inverse_order", "must be 2 or 3")
        if self.epochs < 0 or self.n_train < 1:
            bad("epochs", "epochs must be >= 0 and n_train >= 1")
        if self.baseline_radius is not None and not self.baseline_radius > 0:
            bad("baseline_radius", "must be positive")
        L.Schedule(self.schedule, float(self.T))

    @property
    def active_losses(self):
        return ("rec", "adv") if self.mode == "baseline" else self.losses

    @property
    def walks(self):
        """Whether the inner geodesic walk runs (it feeds the ``gh`` term)."""
        return "gh" in self.active_losses

    @property
    def walk_radius(self):
        return self.T * self.eta

    @property
    def eval_radius(self):
        return self.baseline_radius if self.baseline_radius is not None else max(self.walk_radius, self.radius)

    def perturbation(self):
        return PerturbationSpec(self.brightness, self.contrast, self.noise_std)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        out["disc_hidden"] = list(self.disc_hidden)
        out["losses"] = list(self.losses)
        out["brightness"] = list(self.brightness)
        out["contrast"] = list(self.contrast)
        return out

    @classmethod
    def from_dict(cls, data):
        """Build from a flat mapping or one grouped into sections.

        Section names (``data``, ``models``, ``training``, ``losses``,
        ``linalg_approx``, ``optimizer``, ``run``) are flattened; unknown keys
        raise ``ConfigError`` naming the field.
        """
        flat = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, val in data.items():
            if isinstance(val, dict) and key not in names:
                for k2, v2 in val.items():
                    flat[k2] = v2
            else:
                flat[key] = val
        for key in flat:
            if key not in names:
                raise ConfigError("unknown configuration key", field=key)
        try:
            return cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# optimizer ---------------------------------------------------------------------
@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.step)


@dataclass(frozen=True)
class Adam:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, params, grad, state):
        """Return updated parameters; ``state`` is advanced in place."""
        state.step += 1
        state.m *= self.beta1
        state.m += (1.0 - self.beta1) * grad
        state.v *= self.beta2
        state.v += (1.0 - self.beta2) * grad * grad
        mhat = state.m / (1.0 - self.beta1 ** state.step)
        vhat = state.v / (1.0 - self.beta2 ** state.step)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


# latent sampling ---------------------------------------------------------------
def sample_latent_ball(k, r, rng, n=None):
    """Uniform draw(s) from the ``k``-ball of radius ``r``."""
    shape = (k,) if n is None else (n, k)
    g = rng.normal(size=shape)
    nrm = np.linalg.norm(g, axis=-1, keepdims=True)
    nrm = np.where(nrm == 0.0, 1.0, nrm)
    u = rng.uniform(size=shape[:-1] + (1,))
    return g / nrm * r * u ** (1.0 / k)


def ball_sampler(k, r):
    return lambda rng, n: sample_latent_ball(k, r, rng, n)


def curve_velocity(g, z_t0, x, y, params=None):
    """``grad_z ||y - G(z_t0, x)||_1`` (subgradient 0 where a residual vanishes)."""
    tape = Tape()
    z = tape.var(np.asarray(z_t0, dtype=np.float64))
    w = g.params if params is None else params
    out = g.apply(w, z, x)
    loss = ad.vsum(ad.abs(ad.sub(np.asarray(y, dtype=np.float64)[None], out)))
    return tape.grad(loss, [z])[0]


def walk_step(V, eta, norm="unit"):
    """Per-step latent displacement along ``V``.

    ``"clip"`` takes ``eta V`` rescaled to length ``eta`` only when ``||V|| > 1``;
    ``"unit"`` always takes a step of length ``eta`` (zero when ``V = 0``).
    """
    n = float(np.linalg.norm(V))
    if n == 0.0:
        return np.zeros_like(V)
    if norm == "unit" or n > 1.0:
        return eta * V / n
    return eta * V


# training state ----------------------------------------------------------------
@dataclass
class TrainState:
    gen: GeneratorNet
    disc: DiscriminatorNet
    g_opt: AdamState
    d_opt: AdamState
    projection: la.RandomProjection
    epoch: int = 0

    def snapshot(self):
        return TrainState(self.gen.with_params(self.gen.params), self.disc.with_params(self.disc.params),
                          self.g_opt.copy(), self.d_opt.copy(), self.projection, self.epoch)


def make_projection_for(cfg, M, rng):
    if cfg.projection == "passthrough" or M <= cfg.proj_dim:
        return la.passthrough_projection(M)
    if cfg.projection == "meanpool":
        h = cfg.proj_dim
        R = np.zeros((M, h))
        for j, chunk in enumerate(np.array_split(np.arange(M), h)):
            R[chunk, j] = np.sqrt(h) / len(chunk)  # apply() divides by sqrt(h)
        return la.RandomProjection(M, h, 0, R)
    return la.make_projection(M, cfg.proj_dim, rng)


def init_state(cfg, d, M, rng):
    gen = GeneratorNet.create(cfg.k, d, M, cfg.hidden, cfg.activation, rng=rng.spawn(1), std=cfg.init_std)
    disc = DiscriminatorNet.create(d, M, cfg.disc_hidden, cfg.activation, rng=rng.spawn(2), std=cfg.init_std)
    proj = make_projection_for(cfg, M, rng.spawn(3))
    return TrainState(gen, disc, AdamState.zeros(gen.n_params), AdamState.zeros(disc.n_params), proj)


# one example ---------------------------------------------------------------------
def _finite(value, name, epoch, step):
    if not np.all(np.isfinite(ad.value(value))):
        raise TrainingError(f"non-finite {name} loss at epoch {epoch}, step {step}",
                            epoch=epoch, step=step, component=name)


def inner_geodesic_phase(state, z_t0, x, y, cfg, rng, opt=None, epoch=0):
    """Run the ``T`` geodesic steps; returns ``(z_T, mean L_gh, V)``."""
    gen = state.gen
    opt = opt or Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    sched = L.Schedule(cfg.schedule, float(cfg.T))
    V = curve_velocity(gen, z_t0, x, y)
    step = walk_step(V if cfg.walk_direction == "gradient" else -V, cfg.eta, cfg.walk_norm)
    z = np.array(z_t0, dtype=np.float64)
    total = 0.0
    for t in range(cfg.T):
        tape = Tape()
        w = tape.var(gen.params)
        loss = L.gh_loss(gen, w, float(t), z, z_t0, y, x, sched, cfg.gh_literal_sign)
        _finite(loss, "gh", epoch, t)
        total += float(loss)
        grad = tape.grad(ad.mul(loss, cfg.weights.gh), [w])[0]
        gen.params = opt.step(gen.params, grad, state.g_opt)
        e = rng.normal(0.0, cfg.eps1, size=z.shape) if cfg.eps1 > 0 else 0.0
        z = z + step + e
    return z, total / cfg.T, V


def lh_term(cfg, projection, gen_out, targets):
    if cfg.lh_variant == "maxdist":
        return L.lh_loss_maxdist(gen_out)
    gp = projection.apply(gen_out)
    tp = projection.apply(targets)
    if cfg.lh_variant == "univariate":
        return L.lh_loss_univariate(gp, tp)
    if cfg.lh_variant == "mmd":
        return L.lh_loss_mmd(gp, tp, cfg.mmd_bandwidth)
    gm = L.estimate_moments(gp)
    tm = L.estimate_moments(tp)
    return L.lh_loss(gm, tm, cfg.logdet_terms, cfg.inverse_iters, cfg.inverse_alpha,
                     cfg.inverse_order, inverse_tol=1e-10)


def outer_update(state, z_T, x, y, cfg, rng, g_opt=None, d_opt=None, epoch=0, step=0):
    """Joint generator step around ``z_T`` and one discriminator step.

    Returns the dict of (unweighted) loss values.
    """
    gen, disc = state.gen, state.disc
    g_opt = g_opt or Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    d_opt = d_opt or Adam(cfg.d_lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    active = cfg.active_losses
    y = np.asarray(y, dtype=np.float64)
    tape = Tape()
    w = tape.var(gen.params)
    comps = {}
    y_hat = gen.apply(w, z_T, x)
    if "lh" in active:
        Zt = z_T + cfg.eps2 * rng.normal(size=(cfg.batch, cfg.k))
        Yt = perturb(y, cfg.perturbation(), rng, count=cfg.batch)
        comps["lh"] = lh_term(cfg, state.projection, gen.apply(w, Zt, x), Yt)
    if "rec" in active:
        comps["rec"] = L.rec_loss(y[None], y_hat, cfg.rec_norm)
    if "adv" in active:
        fake_logits = disc.apply(disc.params, x, y_hat)
        comps["adv"] = ad.mul(ad.mean(ad.log_sigmoid(fake_logits)), -1.0)
    for name, c in comps.items():
        _finite(c, name, epoch, step)
    total = L.total_loss(comps, cfg.weights)
    out = {f"loss_{n}" if n != "adv" else "loss_adv_g": float(v) for n, v in comps.items()}
    out["loss_total"] = float(total)
    if isinstance(total, ad.Var):
        gen.params = g_opt.step(gen.params, tape.grad(total, [w])[0], state.g_opt)
    if "adv" in active:
        dtape = Tape()
        wd = dtape.var(disc.params)
        _, dloss = L.adv_loss(disc, wd, x, y[None], ad.value(y_hat))
        _finite(dloss, "adv_d", epoch, step)
        disc.params = d_opt.step(disc.params, dtape.grad(dloss, [wd])[0], state.d_opt)
        out["loss_adv_d"] = float(dloss)
    return out


def train_pair(state, x, y, cfg, rng, g_opt, d_opt, epoch=0, step=0):
    if cfg.walks:
        z0 = sample_latent_ball(cfg.k, cfg.radius, rng)
        z_T, gh, _ = inner_geodesic_phase(state, z0, x, y, cfg, rng, g_opt, epoch)
        stats = {"loss_gh": gh, "walk_norm": float(np.linalg.norm(z_T - z0))}
    else:
        z_T = sample_latent_ball(cfg.k, cfg.eval_radius, rng)
        stats = {}
    stats.update(outer_update(state, z_T, x, y, cfg, rng, g_opt, d_opt, epoch, step))
    return stats


# diagnostics --------------------------------------------------------------------
def diagnostics(gen, cfg, conditions, rng):
    """Cheap per-epoch geometry summary over a fixed set of conditions."""
    taus, cvs = [], []
    sampler = ball_sampler(cfg.k, cfg.eval_radius)
    for x in conditions:
        Z1, Z2 = sampler(rng, cfg.diag_pairs), sampler(rng, cfg.diag_pairs)
        dz = np.linalg.norm(Z1 - Z2, axis=1)
        keep = dz > 0
        dy = np.linalg.norm(gen.forward(Z1[keep], x) - gen.forward(Z2[keep], x), axis=1)
        taus.append(dy / dz[keep])
        za, zb = sampler(rng, 1)[0], sampler(rng, 1)[0]
        ts = np.linspace(0.0, 1.0, 17)
        J = gen.jacobian_z(za + ts[:, None] * (zb - za), x)
        v = np.linalg.norm(J @ (zb - za), axis=1)
        cvs.append(v.std() / v.mean() if v.mean() > 0 else 0.0)
    taus = np.concatenate(taus)
    return {"tau_min": float(taus.min()), "tau_median": float(np.median(taus)),
            "tau_max": float(taus.max()), "velocity_cv": float(np.mean(cvs))}


@dataclass
class TrainResult:
    gen: GeneratorNet
    disc: DiscriminatorNet
    metrics: MetricsLog
    state: TrainState
    dataset: object


def train(dataset, cfg, log=None, progress=None):
    """Run the full training loop; deterministic given ``(dataset, cfg)``.

    On failure the raised ``TrainingError`` carries ``last_state`` holding
    the parameters at the end of the last completed epoch.
    """
    if dataset is None or len(dataset) == 0:
        raise ConfigError("training dataset is empty", field="dataset")
    root = make_rng(cfg.seed)
    state = init_state(cfg, dataset.d, dataset.M, root)
    g_opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    d_opt = Adam(cfg.d_lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    log = log if log is not None else MetricsLog()
    diag_rng_seed = root.spawn(5)
    conditions = dataset.x_eval[: cfg.diag_conditions] if dataset.x_eval is not None else dataset.x_train[:cfg.diag_conditions]
    last_good = state.snapshot()
    for epoch in range(cfg.epochs):
        rng = root.spawn(100 + epoch)
        order = rng.permutation(len(dataset))
        sums = {}
        try:
            for i, idx in enumerate(order):
                stats = train_pair(state, dataset.x_train[idx], dataset.y_train[idx], cfg, rng, g_opt, d_opt, epoch, i)
                for key, val in stats.items():
                    sums[key] = sums.get(key, 0.0) + val
        except (GeoCGANError, FloatingPointError) as exc:
            err = exc if isinstance(exc, TrainingError) else TrainingError(str(exc), epoch=epoch)
            err.last_state = last_good
            raise err from exc
        state.epoch = epoch + 1
        record = {key: val / len(order) for key, val in sums.items()}
        record.update(diagnostics(state.gen, cfg, conditions, diag_rng_seed.spawn(epoch)))
        log.extend(epoch, record)
        last_good = state.snapshot()
        if progress is not None:
            progress(epoch, record)
    return TrainResult(state.gen, state.disc, log, state, dataset)


def build_dataset(cfg):
    return make_dataset(cfg.dataset, (cfg.n_train, cfg.n_eval), make_rng(cfg.seed).spawn(7))


def run(cfg, progress=None):
    """Dataset construction plus training, both seeded from ``cfg.seed``."""
    return train(build_dataset(cfg), cfg, progress=progress)

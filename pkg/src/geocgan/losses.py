"""Loss components of the geometry-aware objective and their ablation variants.

All losses accept numpy arrays or tape variables and return a tape variable
(or a 0-d array when nothing is being differentiated); wrap with ``float`` to
read the value.
"""
from dataclasses import dataclass

import numpy as np

from . import linalg_approx as la
from .errors import ConfigError, ContractError, ShapeError, TrainingError
from .numerics import autodiff as ad

LAMBDA_REG = la.DEFAULT_REG


@dataclass
class GaussianMoments:
    mean: object  # (h,) array or Var
    cov: object  # (h, h) array or Var, already regularized
    count: int

    @property
    def dim(self):
        return ad.value(self.mean).shape[-1]


@dataclass(frozen=True)
class Schedule:
    """Interpolation weight along the latent walk; ``alpha(0) = 0``, ``alpha(T) = 1``."""

    kind: str = "linear"
    horizon: float = 10.0

    def __post_init__(self):
        if self.kind not in ("linear", "smoothstep", "cosine"):
            raise ConfigError(f"unknown schedule {self.kind!r}", field="schedule")
        if not self.horizon > 0:
            raise ConfigError("schedule horizon must be positive", field="schedule.horizon")

    def __call__(self, t):
        s = min(max(float(t) / self.horizon, 0.0), 1.0)
        if self.kind == "linear":
            return s
        if self.kind == "smoothstep":
            return s * s * (3.0 - 2.0 * s)
        return 0.5 * (1.0 - np.cos(np.pi * s))


@dataclass(frozen=True)
class LossWeights:
    gh: float = 100.0
    lh: float = 0.01
    rec: float = 100.0
    adv: float = 1.0

    def __post_init__(self):
        for name in ("gh", "lh", "rec", "adv"):
            if getattr(self, name) < 0:
                raise ConfigError("loss weights must be non-negative", field=f"weights.{name}")


# adversarial / reconstruction ---------------------------------------------
def adv_loss(disc, d_params, x, y_real, y_fake):
    """Non-saturating GAN losses computed from logits.

    Returns ``(gen_loss, disc_loss)`` where ``gen_loss = -mean log D(fake)``
    and ``disc_loss = -mean log D(real) - mean log(1 - D(fake))``.
    """
    real = disc.apply(d_params, x, y_real)
    fake = disc.apply(d_params, x, y_fake)
    gen = ad.mul(ad.mean(ad.log_sigmoid(fake)), -1.0)
    dis = ad.sub(ad.mul(ad.mean(ad.log_sigmoid(real)), -1.0), ad.mean(ad.log_sigmoid(ad.mul(fake, -1.0))))
    return gen, dis


def adv_terms_from_logits(real_logits, fake_logits):
    """Same losses as ``adv_loss`` but starting from precomputed logits."""
    gen = ad.mul(ad.mean(ad.log_sigmoid(fake_logits)), -1.0)
    dis = ad.sub(ad.mul(ad.mean(ad.log_sigmoid(real_logits)), -1.0),
                 ad.mean(ad.log_sigmoid(ad.mul(fake_logits, -1.0))))
    return gen, dis


def rec_loss(y, y_hat, norm="l1"):
    """Mean absolute (``l1``) or mean squared (``l2``) error."""
    if ad.value(y).shape != ad.value(y_hat).shape:
        raise ShapeError(f"reconstruction operands differ: {ad.value(y).shape} vs {ad.value(y_hat).shape}")
    diff = ad.sub(y, y_hat)
    if norm == "l1":
        return ad.mean(ad.abs(diff))
    if norm == "l2":
        return ad.mean(ad.mul(diff, diff))
    raise ConfigError(f"unknown reconstruction norm {norm!r}", field="rec.norm")


# geodesic-homeomorphism loss -------------------------------------------------
def gh_target(t, y, anchor, schedule, literal_sign=False):
    """Interpolated output target at walk time ``t``.

    ``anchor`` is ``G(z_t0, x)``.  The default is the convex combination
    ``a*y + (1-a)*anchor``; ``literal_sign`` flips the anchor term's sign.
    """
    a = schedule(t)
    y = np.asarray(y, dtype=np.float64)
    anchor = np.asarray(ad.value(anchor), dtype=np.float64)
    if literal_sign:
        return a * y - (1.0 - a) * anchor
    # written as a step from the anchor so that y == anchor gives the anchor exactly
    return anchor + a * (y - anchor)


def gh_loss(g, params, t, z_t, z_t0, y, x, schedule, literal_sign=False):
    """l1 distance between ``G(z_t, x)`` and the interpolated target.

    The anchor ``G(z_t0, x)`` is evaluated with the current parameters but
    held constant (no gradient flows through it).
    """
    if not 0.0 <= t <= schedule.horizon:
        raise ContractError(f"walk time {t} outside [0, {schedule.horizon}]")
    anchor = g.apply(ad.value(params), z_t0, x)[0]
    target = gh_target(t, y, anchor, schedule, literal_sign)
    out = g.apply(params, z_t, x)
    return ad.vsum(ad.abs(ad.sub(target[None], out)))


# local-bijectivity (moment matching) --------------------------------------------
def estimate_moments(batch, proj=None, lam=LAMBDA_REG):
    """Mean and regularized covariance of the projected rows of ``batch``."""
    bv = ad.value(batch)
    if bv.ndim != 2 or bv.shape[0] < 2:
        raise ContractError("moment estimation needs a 2-D batch with at least 2 rows")
    P = batch if proj is None else proj.apply(batch)
    n = bv.shape[0]
    h = ad.value(P).shape[1]
    mu = ad.mean(P, axis=0)
    C = ad.sub(P, ad.reshape(mu, (1, h)))
    cov = ad.add(ad.mul(ad.matmul(ad.transpose(C), C), 1.0 / (n - 1)), lam * np.eye(h))
    return GaussianMoments(mu, cov, n)


def _inverse(S, iters, alpha, order, tol):
    a = la.safe_alpha(S, alpha)
    return la.hyperpower_inverse(S, iters, a, order=order, tol=tol, check_alpha=False)


def lh_loss(gen, tgt, logdet_terms=la.DEFAULT_LOGDET_TERMS, inverse_iters=la.DEFAULT_INVERSE_ITERS,
            alpha=la.DEFAULT_ALPHA, inverse_order=3, logdet_tol=None, inverse_tol=None):
    """Gaussian KL(target || generated) with series log-dets and iterative inverse.

    ``alpha`` is shrunk automatically when it violates the convergence bound
    for the generated covariance.
    """
    h = gen.dim
    if tgt.dim != h:
        raise ShapeError(f"moment dimensions differ: {h} vs {tgt.dim}")
    inv = _inverse(gen.cov, inverse_iters, alpha, inverse_order, inverse_tol)
    ld_gen = la.logdet(gen.cov, logdet_terms, tol=logdet_tol)
    ld_tgt = la.logdet(tgt.cov, logdet_terms, tol=logdet_tol)
    dmu = ad.reshape(ad.sub(gen.mean, tgt.mean), (h, 1))
    quad = ad.reshape(ad.matmul(ad.transpose(dmu), ad.matmul(inv, dmu)), ())
    tr = ad.trace(ad.matmul(inv, tgt.cov))
    return ad.mul(ad.add(ad.add(ad.sub(ad.sub(ld_gen, ld_tgt), float(h)), tr), quad), 0.5)


def gaussian_kl_exact(mu_p, cov_p, mu_q, cov_q):
    """Closed-form KL(P || Q) between Gaussians with dense algebra (oracle)."""
    mu_p, mu_q = np.asarray(mu_p, float), np.asarray(mu_q, float)
    cov_p, cov_q = np.atleast_2d(cov_p), np.atleast_2d(cov_q)
    h = mu_p.size
    iq = np.linalg.inv(cov_q)
    d = mu_q - mu_p
    return 0.5 * (np.linalg.slogdet(cov_q)[1] - np.linalg.slogdet(cov_p)[1] - h
                  + np.trace(iq @ cov_p) + d @ iq @ d)


def lh_loss_univariate(gen_batch, tgt_batch, lam=LAMBDA_REG):
    """Per-coordinate Gaussian KL(target || generated), summed over coordinates."""
    if ad.value(gen_batch).shape[1:] != ad.value(tgt_batch).shape[1:]:
        raise ShapeError("univariate KL needs batches with equal feature dimension")
    mu_q = ad.mean(gen_batch, axis=0)
    mu_p = ad.mean(tgt_batch, axis=0)
    ng, nt = ad.value(gen_batch).shape[0], ad.value(tgt_batch).shape[0]
    dq = ad.sub(gen_batch, mu_q)
    dp = ad.sub(tgt_batch, mu_p)
    var_q = ad.add(ad.mul(ad.vsum(ad.mul(dq, dq), axis=0), 1.0 / (ng - 1)), lam)
    var_p = ad.add(ad.mul(ad.vsum(ad.mul(dp, dp), axis=0), 1.0 / (nt - 1)), lam)
    dm = ad.sub(mu_p, mu_q)
    terms = ad.add(ad.mul(ad.sub(ad.log(var_q), ad.log(var_p)), 0.5),
                   ad.div(ad.add(var_p, ad.mul(dm, dm)), ad.mul(var_q, 2.0)))
    return ad.sub(ad.vsum(terms), 0.5 * ad.value(mu_p).size)


def _pairwise_sq(A, B):
    """Squared distances ``(n, m)``, differentiable in both arguments."""
    a2 = ad.vsum(ad.mul(A, A), axis=1)
    b2 = ad.vsum(ad.mul(B, B), axis=1)
    cross = ad.matmul(A, ad.transpose(B))
    n, m = ad.value(A).shape[0], ad.value(B).shape[0]
    return ad.sub(ad.add(ad.reshape(a2, (n, 1)), ad.reshape(b2, (1, m))), ad.mul(cross, 2.0))


def lh_loss_maxdist(gen_batch):
    """Negative mean pairwise Euclidean distance between generated samples."""
    bv = ad.value(gen_batch)
    n = bv.shape[0]
    if n < 2:
        raise ContractError("max-distance loss needs at least two samples")
    iu, ju = np.triu_indices(n, 1)
    diffs = ad.sub(ad.getitem(gen_batch, iu), ad.getitem(gen_batch, ju))
    return ad.mul(ad.mean(ad.norm(diffs, axis=1)), -1.0)


def lh_loss_mmd(gen_batch, tgt_batch, bandwidth=1.0):
    """Unbiased RBF-kernel MMD^2 estimate."""
    m, n = ad.value(gen_batch).shape[0], ad.value(tgt_batch).shape[0]
    if m < 2 or n < 2:
        raise ContractError("MMD needs at least two samples per batch")
    s = -1.0 / (2.0 * bandwidth ** 2)
    Kxx = ad.exp(ad.mul(_pairwise_sq(gen_batch, gen_batch), s))
    Kyy = ad.exp(ad.mul(_pairwise_sq(tgt_batch, tgt_batch), s))
    Kxy = ad.exp(ad.mul(_pairwise_sq(gen_batch, tgt_batch), s))
    offx = 1.0 - np.eye(m)
    offy = 1.0 - np.eye(n)
    xx = ad.mul(ad.vsum(ad.mul(Kxx, offx)), 1.0 / (m * (m - 1)))
    yy = ad.mul(ad.vsum(ad.mul(Kyy, offy)), 1.0 / (n * (n - 1)))
    xy = ad.mul(ad.vsum(Kxy), 2.0 / (m * n))
    return ad.sub(ad.add(xx, yy), xy)


def total_loss(components, weights):
    """Weighted sum; ``components`` maps ``gh``/``lh``/``rec``/``adv`` to losses."""
    total = 0.0
    for name in ("gh", "lh", "rec", "adv"):
        if name not in components or components[name] is None:
            continue
        c = components[name]
        if not np.all(np.isfinite(ad.value(c))):
            raise TrainingError(f"loss component {name!r} is not finite", component=name)
        total = ad.add(total, ad.mul(c, getattr(weights, name)))
    return total

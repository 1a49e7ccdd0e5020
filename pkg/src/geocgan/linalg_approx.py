"""Random projection, truncated-series log-determinant and hyper-power inverse.

``logdet_series`` and ``hyperpower_inverse`` accept either numpy arrays or
tape variables (``numerics.Var``); with variables every matrix product is
recorded so the training losses can be differentiated through them.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError, ShapeError
from .numerics import autodiff as ad

SQRT3 = np.sqrt(3.0)
# (value, probability) of each projection entry
PROJECTION_LEVELS = np.array([SQRT3, 0.0, -SQRT3])
PROJECTION_PROBS = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])

DEFAULT_LOGDET_TERMS = 20
DEFAULT_INVERSE_ITERS = 100
DEFAULT_ALPHA = 0.1
DEFAULT_REG = 1e-4
DIVERGENCE_WINDOW = 10
RESIDUAL_TOL = 1e-8
MAX_SERIES_TERMS = 20000


@dataclass
class RandomProjection:
    """``M x h`` matrix with entries in {-sqrt3, 0, +sqrt3}; ``None`` matrix means pass-through."""

    ambient: int
    dim: int
    seed: int
    matrix: np.ndarray = field(repr=False, default=None)

    @property
    def passthrough(self):
        return self.matrix is None

    def apply(self, Y):
        """Project rows of ``Y`` (``B x M``) to ``B x h``.

        The projection is ``Y R / sqrt(h)`` so that squared norms are preserved
        in expectation.
        """
        if self.passthrough:
            return Y
        return ad.matmul(Y, self.matrix / np.sqrt(self.dim)) if isinstance(Y, ad.Var) else \
            np.asarray(Y) @ (self.matrix / np.sqrt(self.dim))


def make_projection(ambient, dim, rng):
    if dim < 1 or dim > ambient:
        raise ConfigError(f"projection dim must satisfy 1 <= h <= M, got h={dim}, M={ambient}", field="h")
    R = rng.choice(PROJECTION_LEVELS, size=(ambient, dim), p=PROJECTION_PROBS)
    return RandomProjection(ambient, dim, getattr(rng, "seed", 0), R)


def passthrough_projection(ambient):
    return RandomProjection(ambient, ambient, 0, None)


@dataclass
class SpdEstimate:
    matrix: np.ndarray
    regularization: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"SPD estimate must be square, got {m.shape}")
        self.matrix = m

    @classmethod
    def regularized(cls, matrix, lam=DEFAULT_REG):
        m = np.asarray(matrix, dtype=np.float64)
        m = 0.5 * (m + m.T) + lam * np.eye(m.shape[0])
        return cls(m, lam)

    def is_positive_definite(self):
        try:
            np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError:
            return False
        return True


def _mat(S):
    if isinstance(S, SpdEstimate):
        return S.matrix
    return S


def spectral_radius(A, iters=50, tol=1e-12, seed=0, squarings=10):
    """Largest absolute eigenvalue of a square matrix by power iteration.

    The iteration is accelerated by first forming ``A^(2^squarings)`` through
    repeated (normalised) squaring, whose dominant direction seeds ordinary
    power steps on ``A``.
    """
    A = np.asarray(ad.value(A), dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"spectral_radius needs a square matrix, got {A.shape}")
    scale = np.abs(A).max()
    if scale == 0.0:
        return 0.0
    B = A / scale
    for _ in range(squarings):
        B = B @ B
        nb = np.abs(B).max()
        if nb == 0.0 or not np.isfinite(nb):
            break
        B /= nb
    v = B @ np.random.default_rng(seed).normal(size=A.shape[0])
    nv = np.linalg.norm(v)
    if nv == 0.0 or not np.isfinite(nv):
        v = np.random.default_rng(seed).normal(size=A.shape[0])
        nv = np.linalg.norm(v)
    v /= nv
    est = 0.0
    for _ in range(iters):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - est) <= tol * nw:
            return float(nw)
        est = nw
    return float(est)


def _series_bound_terms(c, dim, tol):
    # smallest N with dim * c^(N+1) / ((N+1)(1-c)) <= tol
    if c <= 0.0:
        return 1
    n = 1
    while n < MAX_SERIES_TERMS and dim * c ** (n + 1) / ((n + 1) * (1.0 - c)) > tol:
        n = max(n + 1, int(n * 1.25))
    return min(n, MAX_SERIES_TERMS)


def logdet_series(S, N=DEFAULT_LOGDET_TERMS):
    """``-sum_{i=1..N} tr(C^i)/i`` with ``C = I - S``; requires ``rho(C) < 1``."""
    S = _mat(S)
    n = ad.value(S).shape[-1]
    C = ad.sub(np.eye(n), S)
    rho = spectral_radius(ad.value(C))
    if rho >= 1.0:
        raise DivergenceError(f"log-det series diverges: spectral radius of I - S is {rho:.6g} >= 1")
    total = 0.0
    P = C
    for i in range(1, N + 1):
        if i > 1:
            P = ad.matmul(P, C)
        total = ad.sub(total, ad.mul(ad.trace(P), 1.0 / i))
    return total


def logdet(S, N=DEFAULT_LOGDET_TERMS, tol=None, eps=1e-6):
    """Log-determinant of an SPD matrix via the rescaled series.

    The matrix is divided by ``s = rho(S) + eps`` so the series converges, and
    ``dim * log(s)`` is added back.  ``s`` is treated as a constant.  With
    ``tol`` set, the number of terms is raised above ``N`` until the a-priori
    truncation bound drops below ``tol``.
    """
    S = _mat(S)
    Sv = ad.value(S)
    n = Sv.shape[-1]
    s = spectral_radius(Sv) + eps
    scaled = ad.mul(S, 1.0 / s)
    terms = N
    if tol is not None:
        c = spectral_radius(np.eye(n) - Sv / s)
        terms = max(N, _series_bound_terms(c, n, tol))
    return ad.add(logdet_series(scaled, terms), n * np.log(s))


def hyperpower_inverse(S, N=DEFAULT_INVERSE_ITERS, alpha=DEFAULT_ALPHA, order=3,
                       tol=None, window=DIVERGENCE_WINDOW, check_alpha=True):
    """Iterative inverse starting from ``V0 = alpha * S^T``.

    ``order=3`` runs ``V <- V(3I - SV(3I - SV))``; ``order=2`` is the classical
    Newton-Schulz step ``V <- V(2I - SV)``.  With ``tol`` set, iteration stops
    once ``||VS - I||_F < tol``.  A residual that fails to decrease for
    ``window`` consecutive steps ends the loop when it has already reached the
    rounding floor (below ``RESIDUAL_TOL``) and raises ``DivergenceError``
    otherwise.
    """
    if order not in (2, 3):
        raise ConfigError("inverse order must be 2 or 3", field="inverse.order")
    S = _mat(S)
    Sv = ad.value(S)
    n = Sv.shape[-1]
    if check_alpha:
        rho = spectral_radius(Sv @ Sv.T)
        if not (0.0 < alpha < 2.0 / rho):
            raise ContractError(f"alpha={alpha} outside (0, 2/rho(S S^T)) = (0, {2.0 / rho:.6g})")
    I = np.eye(n)
    V = ad.mul(ad.transpose(S), alpha)
    best = np.inf
    stalled = 0
    for _ in range(N):
        SV = ad.matmul(S, V)
        if order == 3:
            inner = ad.sub(3.0 * I, SV)
            V = ad.matmul(V, ad.sub(3.0 * I, ad.matmul(SV, inner)))
        else:
            V = ad.matmul(V, ad.sub(2.0 * I, SV))
        Vv = ad.value(V)
        res = np.linalg.norm(Vv @ Sv - I)
        if not np.isfinite(res) or res > 1e12:
            raise DivergenceError(f"hyper-power iteration blew up (residual {res:.3g})")
        if tol is not None and res < tol:
            break
        if res < best:
            best = res
            stalled = 0
        else:
            stalled += 1
            if stalled >= window:
                if best < RESIDUAL_TOL:
                    break
                raise DivergenceError(f"hyper-power residual stalled at {res:.3g} for {window} steps")
    return V


def safe_alpha(S, alpha=DEFAULT_ALPHA, margin=0.5):
    """``alpha`` if valid for ``S``, otherwise ``margin * 2 / rho(S S^T)``."""
    Sv = np.asarray(ad.value(_mat(S)))
    bound = 2.0 / spectral_radius(Sv @ Sv.T)
    return alpha if alpha < bound else margin * bound

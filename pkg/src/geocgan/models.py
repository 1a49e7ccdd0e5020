"""Conditional generator and discriminator MLPs.

The generator input is the concatenation ``[z; x]``; every hidden layer is
smooth (tanh or softplus) so the latent Jacobian exists everywhere.  Forward
passes, parameter gradients and latent Jacobians all go through
``geocgan.kernels``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .numerics import autodiff as ad
from .numerics.finite_diff import finite_diff_jacobian

ACTIVATIONS = {"tanh": kernels.TANH, "softplus": kernels.SOFTPLUS}
INIT_STD = 0.5


def layer_sizes(n_in, hidden, n_out):
    return np.array([n_in, *hidden, n_out], dtype=np.int64)


def param_count(sizes):
    return int(sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:])))


def init_params(sizes, rng, std=INIT_STD):
    """Weights ~ Normal(0, std); biases start at zero."""
    chunks = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        chunks.append(rng.normal(0.0, std, size=n_out * n_in))
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


def weight_mask(sizes):
    """Boolean mask selecting weight (non-bias) entries of a flat parameter vector."""
    parts = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        parts.append(np.ones(n_out * n_in, dtype=bool))
        parts.append(np.zeros(n_out, dtype=bool))
    return np.concatenate(parts)


def layer_views(params, sizes):
    """List of ``(W, b)`` views into a flat parameter vector."""
    out, off = [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = params[off: off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        out.append((W, params[off: off + n_out]))
        off += n_out
    return out


def mlp_apply(sizes, act, params, X):
    """Differentiable MLP evaluation; ``params``/``X`` may be tape variables."""
    pv = np.ascontiguousarray(ad.value(params), dtype=np.float64)
    Xv = ad.value(X)
    acts = kernels.mlp_forward(pv, sizes, Xv, act)
    out = np.array(acts[:, acts.shape[1] - sizes[-1]:])
    if not isinstance(params, ad.Var) and not isinstance(X, ad.Var):
        return out
    memo = {}

    def backward(g):
        if memo.get("g") is not g:
            memo["g"] = g
            memo["res"] = kernels.mlp_backward(pv, sizes, acts, np.ascontiguousarray(g), act)
        return memo["res"]

    return ad.custom([params, X], out, [lambda g: backward(g)[0], lambda g: backward(g)[1]])


@dataclass
class _MLP:
    hidden: tuple
    activation: str
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", field="activation")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.size != param_count(self.sizes):
            raise ShapeError(f"expected {param_count(self.sizes)} parameters, got {self.params.size}")

    @property
    def act(self):
        return ACTIVATIONS[self.activation]

    @property
    def n_params(self):
        return self.params.size

    def layers(self):
        return layer_views(self.params, self.sizes)

    def lipschitz_bound(self):
        """Product of layer spectral norms (times 1 for the 1-Lipschitz activations)."""
        bound = 1.0
        for W, _ in self.layers():
            bound *= np.linalg.norm(W, 2)
        return bound


@dataclass
class GeneratorNet(_MLP):
    k: int = 4
    d: int = 1
    M: int = 1

    @classmethod
    def create(cls, k, d, M, hidden=(64, 64, 64), activation="tanh", rng=None, std=INIT_STD):
        sizes = layer_sizes(k + d, hidden, M)
        params = init_params(sizes, rng, std) if rng is not None else np.zeros(param_count(sizes))
        return cls(hidden=tuple(hidden), activation=activation, params=params, k=k, d=d, M=M)

    @property
    def sizes(self):
        return layer_sizes(self.k + self.d, self.hidden, self.M)

    def with_params(self, params):
        return GeneratorNet(self.hidden, self.activation, np.array(params), self.k, self.d, self.M)

    def _inputs(self, z, x):
        z = np.asarray(ad.value(z), dtype=np.float64)
        single = z.ndim == 1
        z2 = np.atleast_2d(z)
        if z2.shape[1] != self.k:
            raise ShapeError(f"latent code must have {self.k} entries, got {z2.shape[1]}")
        if self.d == 0:
            return z2, single
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x2.shape[1] != self.d:
            raise ShapeError(f"condition must have {self.d} entries, got {x2.shape[1]}")
        if x2.shape[0] == 1 and z2.shape[0] > 1:
            x2 = np.broadcast_to(x2, (z2.shape[0], self.d))
        if x2.shape[0] != z2.shape[0]:
            raise ShapeError(f"batch mismatch: {z2.shape[0]} latents vs {x2.shape[0]} conditions")
        return np.concatenate([z2, x2], axis=1), single

    def forward(self, z, x=None):
        X, single = self._inputs(z, x)
        out = mlp_apply(self.sizes, self.act, self.params, X)
        return out[0] if single else out

    __call__ = forward

    def apply(self, params, z, x=None):
        """Tape-aware forward on a batch; ``params`` and ``z`` may be ``Var``."""
        X, _ = self._inputs(z, x)
        if isinstance(z, ad.Var):
            zv = z if z.ndim == 2 else ad.reshape(z, (1, self.k))
            if self.d:
                X = ad.concat([zv, X[:, self.k:]], axis=1)
            else:
                X = zv
        return mlp_apply(self.sizes, self.act, params, X)

    def jacobian_z(self, z, x=None):
        """Exact ``dG/dz``: ``(M, k)`` for a single point, ``(N, M, k)`` for a batch."""
        X, single = self._inputs(z, x)
        J = kernels.mlp_jacobian(self.params, self.sizes, X, self.act, self.k)
        return J[0] if single else J


@dataclass
class DiscriminatorNet(_MLP):
    d: int = 1
    M: int = 1

    @classmethod
    def create(cls, d, M, hidden=(64, 64, 64), activation="tanh", rng=None, std=INIT_STD):
        sizes = layer_sizes(d + M, hidden, 1)
        params = init_params(sizes, rng, std) if rng is not None else np.zeros(param_count(sizes))
        return cls(hidden=tuple(hidden), activation=activation, params=params, d=d, M=M)

    @property
    def sizes(self):
        return layer_sizes(self.d + self.M, self.hidden, 1)

    def with_params(self, params):
        return DiscriminatorNet(self.hidden, self.activation, np.array(params), self.d, self.M)

    def apply(self, params, x, y):
        """Logits ``(N,)`` for condition/output batches; ``y`` may be a ``Var``."""
        yv = ad.value(y)
        y2 = yv if yv.ndim == 2 else yv[None]
        N = y2.shape[0]
        x2 = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=np.float64)), (N, self.d)) if self.d else np.zeros((N, 0))
        if isinstance(y, ad.Var):
            yvar = y if y.ndim == 2 else ad.reshape(y, (1, self.M))
            X = ad.concat([x2, yvar], axis=1) if self.d else yvar
        else:
            X = np.concatenate([x2, y2], axis=1)
        return ad.reshape(mlp_apply(self.sizes, self.act, params, X), (N,))

    def logits(self, x, y):
        return np.asarray(self.apply(self.params, x, y))


class LinearGenerator:
    """``G(z, x) = A z + b``; handy flat-space reference map."""

    def __init__(self, A, bias=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.M, self.k = self.A.shape
        self.bias = np.zeros(self.M) if bias is None else np.asarray(bias, dtype=np.float64)

    def forward(self, z, x=None):
        z = np.asarray(z, dtype=np.float64)
        return z @ self.A.T + self.bias

    __call__ = forward

    def jacobian_z(self, z, x=None):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            return self.A.copy()
        return np.broadcast_to(self.A, (z.shape[0], self.M, self.k)).copy()


class FunctionGenerator:
    """Wraps an analytic map ``f(z) -> R^M`` (condition ignored).

    Without an explicit ``jac`` the Jacobian falls back to central
    differences.
    """

    def __init__(self, fn, k, M, jac=None, step=1e-6):
        self.fn, self.k, self.M, self.jac, self.step = fn, k, M, jac, step

    def forward(self, z, x=None):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            return np.asarray(self.fn(z), dtype=np.float64)
        return np.stack([np.asarray(self.fn(r), dtype=np.float64) for r in z])

    __call__ = forward

    def _jac1(self, z):
        if self.jac is not None:
            return np.asarray(self.jac(z), dtype=np.float64)
        return finite_diff_jacobian(self.fn, z, self.step)

    def jacobian_z(self, z, x=None):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            return self._jac1(z)
        return np.stack([self._jac1(r) for r in z])


def sphere_map():
    """Spherical-coordinate embedding of the unit sphere, ``(theta, phi) -> R^3``."""

    def fn(z):
        th, ph = z
        return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    def jac(z):
        th, ph = z
        return np.array([
            [np.cos(th) * np.cos(ph), -np.sin(th) * np.sin(ph)],
            [np.cos(th) * np.sin(ph), np.sin(th) * np.cos(ph)],
            [-np.sin(th), 0.0],
        ])

    return FunctionGenerator(fn, 2, 3, jac=jac)

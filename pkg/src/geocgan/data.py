"""Synthetic conditional datasets with analytically known structure."""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .errors import ConfigError

DATASETS = ("bimodal1d", "cond_rings2d", "cond_grid8x8")
DEFAULT_TRAIN = 2048
DEFAULT_EVAL = 512


@dataclass(frozen=True)
class PerturbationSpec:
    brightness: tuple = (-0.05, 0.05)
    contrast: tuple = (0.95, 1.05)
    noise_std: float = 0.01

    @classmethod
    def identity(cls):
        return cls((0.0, 0.0), (1.0, 1.0), 0.0)


def perturb(y, spec, rng, count=None):
    """``c*y + b + n`` with ``c ~ U(contrast)``, ``b ~ U(brightness)``, ``n ~ N(0, std^2)``.

    With ``count`` set, returns ``count`` independent perturbations of ``y``
    stacked along a new leading axis.
    """
    y = np.asarray(y, dtype=np.float64)
    shape = (count,) if count is not None else ()
    c = rng.uniform(spec.contrast[0], spec.contrast[1], size=shape) if spec.contrast[0] != spec.contrast[1] \
        else np.full(shape, float(spec.contrast[0]))
    b = rng.uniform(spec.brightness[0], spec.brightness[1], size=shape) if spec.brightness[0] != spec.brightness[1] \
        else np.full(shape, float(spec.brightness[0]))
    if count is not None:
        c, b = c[:, None], b[:, None]
    out = c * y + b
    if spec.noise_std > 0:
        out = out + rng.normal(0.0, spec.noise_std, size=out.shape)
    return out


@dataclass
class ConditionalDataset:
    """Train/eval pairs plus the generative description of ``p(y | x)``.

    Subclasses define the mixture: ``mode_centers(x)`` (n, M), ``mode_weights(x)``,
    and the per-mode noise ``mode_std``.
    """

    name: str
    d: int
    M: int
    x_train: np.ndarray = field(repr=False, default=None)
    y_train: np.ndarray = field(repr=False, default=None)
    x_eval: np.ndarray = field(repr=False, default=None)
    y_eval: np.ndarray = field(repr=False, default=None)

    mode_std = 0.1

    def sample_x(self, rng, n):
        return rng.uniform(-1.0, 1.0, size=(n, self.d))

    def mode_centers(self, x):
        raise NotImplementedError

    def mode_weights(self, x):
        n = len(self.mode_centers(x))
        return np.full(n, 1.0 / n)

    def sample_y(self, x, rng):
        x = np.asarray(x, dtype=np.float64)
        centers = self.mode_centers(x)
        j = rng.choice(len(centers), p=self.mode_weights(x))
        return self._emit(centers[j], x, rng)

    def _emit(self, center, x, rng):
        return center + rng.normal(0.0, self.mode_std, size=self.M)

    def sample_y_batch(self, X, rng):
        return np.stack([self.sample_y(x, rng) for x in np.atleast_2d(X)])

    def mean(self, x):
        return self.mode_weights(x) @ self.mode_centers(x)

    def mode_radius(self, x):
        """Half the smallest distance between two mode centers."""
        c = self.mode_centers(x)
        d = np.linalg.norm(c[:, None] - c[None], axis=2)
        d[np.diag_indices(len(c))] = np.inf
        return 0.5 * float(d.min())

    def generate(self, n_train, n_eval, rng):
        self.x_train = self.sample_x(rng, n_train)
        self.y_train = self.sample_y_batch(self.x_train, rng)
        self.x_eval = self.sample_x(rng, n_eval)
        self.y_eval = self.sample_y_batch(self.x_eval, rng)
        return self

    def __len__(self):
        return 0 if self.x_train is None else len(self.x_train)

    def to_csv(self, path, split="train"):
        X = self.x_train if split == "train" else self.x_eval
        Y = self.y_train if split == "train" else self.y_eval
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.d)] + [f"y{j}" for j in range(self.M)])
            for xr, yr in zip(X, Y):
                w.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])


class Bimodal1D(ConditionalDataset):
    """``y | x ~ w1 N(m1(x), s^2) + w2 N(m2(x), s^2)`` with ``m1 = x``, ``m2 = x + separation``."""

    def __init__(self, separation=10.0, weights=(0.75, 0.25), std=0.1, slope=1.0):
        super().__init__("bimodal1d", 1, 1)
        self.separation = float(separation)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.mode_std = float(std)
        self.slope = float(slope)

    def mode_centers(self, x):
        m1 = self.slope * float(np.ravel(x)[0])
        return np.array([[m1], [m1 + self.separation]])

    def mode_weights(self, x):
        return self.weights

    def cdf(self, y, x):
        c = self.mode_centers(x)[:, 0]
        return float(self.weights @ norm.cdf((y - c) / self.mode_std))

    def median(self, x):
        c = self.mode_centers(x)[:, 0]
        lo, hi = c.min() - 10 * self.mode_std, c.max() + 10 * self.mode_std
        return brentq(lambda y: self.cdf(y, x) - 0.5, lo, hi, xtol=1e-12)


class CondRings2D(ConditionalDataset):
    """Modes evenly spaced on a ring; the condition picks 2, 3 or 4 of them and rotates the ring."""

    def __init__(self, radius=1.0, std=0.05):
        super().__init__("cond_rings2d", 1, 2)
        self.radius = float(radius)
        self.mode_std = float(std)

    @staticmethod
    def n_modes(x):
        v = float(np.ravel(x)[0])
        return 2 if v < -1.0 / 3.0 else (3 if v < 1.0 / 3.0 else 4)

    def mode_centers(self, x):
        n = self.n_modes(x)
        phase = 0.25 * np.pi * float(np.ravel(x)[0])
        ang = phase + 2.0 * np.pi * np.arange(n) / n
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


class CondGrid8x8(ConditionalDataset):
    """8x8 images of a Gaussian bump; ``x`` places the bump, the mode picks one of four offsets.

    Amplitude and width jitter act as nuisance variation around each mode.
    """

    side = 8
    offsets = np.array([[1.5, 0.0], [-1.5, 0.0], [0.0, 1.5], [0.0, -1.5]])

    def __init__(self, width=1.0, amp_jitter=0.1, width_jitter=0.1, std=0.02):
        super().__init__("cond_grid8x8", 2, 64)
        self.width = width
        self.amp_jitter = amp_jitter
        self.width_jitter = width_jitter
        self.mode_std = std
        g = np.arange(self.side, dtype=np.float64)
        self._rr, self._cc = np.meshgrid(g, g, indexing="ij")

    def _image(self, pos, amp=1.0, width=None):
        w = self.width if width is None else width
        r = (self._rr - pos[0]) ** 2 + (self._cc - pos[1]) ** 2
        return (amp * np.exp(-r / (2.0 * w * w))).ravel()

    def _base(self, x):
        return 3.5 + 1.5 * np.asarray(np.ravel(x)[:2], dtype=np.float64)

    def mode_centers(self, x):
        base = self._base(x)
        return np.stack([self._image(base + o) for o in self.offsets])

    def sample_y(self, x, rng):
        j = rng.integers(len(self.offsets))
        amp = 1.0 + rng.uniform(-self.amp_jitter, self.amp_jitter)
        wid = self.width * (1.0 + rng.uniform(-self.width_jitter, self.width_jitter))
        img = self._image(self._base(x) + self.offsets[j], amp, wid)
        return img + rng.normal(0.0, self.mode_std, size=self.M)


def make_dataset(name, sizes=(DEFAULT_TRAIN, DEFAULT_EVAL), rng=None, **kwargs):
    """Build and populate one of the named synthetic datasets."""
    cls = {"bimodal1d": Bimodal1D, "cond_rings2d": CondRings2D, "cond_grid8x8": CondGrid8x8}.get(name)
    if cls is None:
        raise ConfigError(f"unknown dataset {name!r}; expected one of {DATASETS}", field="data.name")
    ds = cls(**kwargs)
    if rng is not None:
        ds.generate(sizes[0], sizes[1], rng)
    return ds

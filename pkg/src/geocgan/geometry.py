"""Pullback-metric geometry of a generator's latent space.

Everything here takes a *latent map* ``g``: any object with
``forward(z, x)`` and ``jacobian_z(z, x)`` accepting single points or
batches (``GeneratorNet``, ``LinearGenerator``, ``FunctionGenerator``).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import BlowUpError, ContractError, GeometryError

FD_STEP = 1e-4
SINGULAR_COND = 1e10
TIKHONOV = 1e-8
STEPS_PER_UNIT_TIME = 100
SHOOT_TOL = 1e-4
LATTICE_POINTS = 21
LATTICE_MAX_DIM = 3
# A shot whose speed varies more than this (std/mean) is an integration
# artefact, typically a blow-up near a degenerate metric, not a geodesic.
SPEED_SPREAD_TOL = 0.05


@dataclass
class MetricTensor:
    at: np.ndarray
    value: np.ndarray

    @property
    def dim(self):
        return self.value.shape[0]


@dataclass
class CurveState:
    t: float
    z: np.ndarray
    zdot: np.ndarray


@dataclass
class CurvePath:
    """States at uniform spacing: ``ts`` (N+1,), ``zs`` and ``zdots`` (N+1, k)."""

    ts: np.ndarray
    zs: np.ndarray
    zdots: np.ndarray
    x: np.ndarray = None

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=np.float64)
        self.zs = np.atleast_2d(np.asarray(self.zs, dtype=np.float64))
        self.zdots = np.atleast_2d(np.asarray(self.zdots, dtype=np.float64))
        if len(self.ts) < 2:
            raise ContractError("a curve path needs at least two states")
        dt = np.diff(self.ts)
        if np.any(dt <= 0) or np.max(np.abs(dt - dt[0])) > 1e-12 * max(1.0, abs(self.ts[-1])):
            raise ContractError("curve parameter must be strictly increasing with uniform spacing")

    def __len__(self):
        return len(self.ts)

    @property
    def dt(self):
        return float(self.ts[1] - self.ts[0])

    @property
    def states(self):
        return [CurveState(float(t), z, zd) for t, z, zd in zip(self.ts, self.zs, self.zdots)]

    @property
    def start(self):
        return self.zs[0]

    @property
    def end(self):
        return self.zs[-1]


@dataclass
class BiLipschitzReport:
    pairs: int
    min_ratio: float
    max_ratio: float
    histogram: np.ndarray = field(repr=False)
    bin_edges: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)

    @property
    def c_lower(self):
        """Constant bounding the contraction: ``d_y >= d_z / c_lower``."""
        return np.inf if self.min_ratio == 0 else 1.0 / self.min_ratio

    @property
    def c_upper(self):
        return self.max_ratio

    @property
    def constant(self):
        return max(self.c_lower, self.c_upper)

    @property
    def ok(self):
        return 0.0 < self.min_ratio and np.isfinite(self.max_ratio)


@dataclass
class ShootResult:
    path: CurvePath
    length: float
    miss: float
    converged: bool
    graph_fallback: bool = False
    lattice_path: np.ndarray = None
    method: str = "shooting"


# metric ------------------------------------------------------------------
def metric_values(g, Z, x=None):
    """Batch of metric tensors ``J^T J`` for latent points ``Z`` (N, k)."""
    J = g.jacobian_z(np.atleast_2d(Z), x)
    return np.einsum("nmi,nmj->nij", J, J)


def metric_at(g, z, x=None):
    z = np.asarray(z, dtype=np.float64)
    J = g.jacobian_z(z, x)
    M = J.T @ J
    return MetricTensor(z, 0.5 * (M + M.T))


def _solve_metric(M, rhs, z):
    if not np.all(np.isfinite(M)):
        raise GeometryError(f"non-finite metric at z={z}", z=z)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        M = M + TIKHONOV * np.eye(M.shape[0])
    try:
        out = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise GeometryError(f"singular metric at z={z}", z=z) from exc
    if not np.all(np.isfinite(out)):
        raise GeometryError(f"singular metric at z={z}", z=z)
    return out


def metric_derivative(g, z, x=None, step=FD_STEP):
    """``M(z)`` and ``dM[i, j, l] = d M_ij / d z_l`` by central differences."""
    z = np.asarray(z, dtype=np.float64)
    k = z.size
    E = np.eye(k) * step
    pts = np.concatenate([z[None], z + E, z - E], axis=0)
    Ms = metric_values(g, pts, x)
    dM = (Ms[1:k + 1] - Ms[k + 1:]) / (2.0 * step)  # (l, i, j)
    return Ms[0], np.transpose(dM, (1, 2, 0))


def geodesic_rhs(state, g, x=None, fd_step=FD_STEP):
    """Geodesic acceleration in the metric form of the geodesic equation."""
    z, zd = np.asarray(state.z, dtype=np.float64), np.asarray(state.zdot, dtype=np.float64)
    M, dM = metric_derivative(g, z, x, fd_step)
    a = np.einsum("ijl,j,l->i", dM, zd, zd)
    b = np.einsum("ijl,i,j->l", dM, zd, zd)
    return -0.5 * _solve_metric(M, 2.0 * a - b, z)


def integrate_geodesic(start, g, x=None, T=1.0, steps=None, fd_step=FD_STEP):
    """Fixed-step RK4 integration; returns ``steps + 1`` states on ``[t0, t0 + T]``."""
    if steps is None:
        steps = max(2, int(round(STEPS_PER_UNIT_TIME * T)))
    if steps < 2:
        raise ContractError("geodesic integration needs at least 2 steps")
    h = T / steps
    k = np.asarray(start.z).size
    zs = np.empty((steps + 1, k))
    vs = np.empty((steps + 1, k))
    zs[0], vs[0] = start.z, start.zdot

    def f(z, v):
        return v, geodesic_rhs(CurveState(0.0, z, v), g, x, fd_step)

    for n in range(steps):
        z, v = zs[n], vs[n]
        k1z, k1v = f(z, v)
        k2z, k2v = f(z + 0.5 * h * k1z, v + 0.5 * h * k1v)
        k3z, k3v = f(z + 0.5 * h * k2z, v + 0.5 * h * k2v)
        k4z, k4v = f(z + h * k3z, v + h * k3v)
        zs[n + 1] = z + h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
        vs[n + 1] = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(zs[n + 1])) and np.all(np.isfinite(vs[n + 1]))):
            raise BlowUpError(f"geodesic blew up after t={start.t + n * h:.6g}",
                              last_t=start.t + n * h, z=z)
    ts = start.t + h * np.arange(steps + 1)
    return CurvePath(ts, zs, vs, x)


def straight_path(z_a, z_b, steps=100, x=None):
    """Euclidean segment ``z_a -> z_b`` on ``t in [0, 1]`` with constant velocity."""
    z_a, z_b = np.asarray(z_a, dtype=np.float64), np.asarray(z_b, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, steps + 1)
    zs = z_a + ts[:, None] * (z_b - z_a)
    return CurvePath(ts, zs, np.broadcast_to(z_b - z_a, zs.shape).copy(), x)


def speeds(path, g, x=None):
    """``sqrt(zdot^T M zdot)`` at every state of the path."""
    x = path.x if x is None else x
    J = g.jacobian_z(path.zs, x)
    return np.linalg.norm(np.einsum("nmk,nk->nm", J, path.zdots), axis=1)


def curve_length(path, g, x=None):
    """Left Riemann sum of the metric speed over the path."""
    return float(np.sum(speeds(path, g, x)[:-1]) * path.dt)


# shooting ------------------------------------------------------------------
def _steady(path, g, x):
    sp = speeds(path, g, x)
    m = sp.mean()
    return bool(np.isfinite(m) and m > 0 and sp.std() <= SPEED_SPREAD_TOL * m)


def _endpoint(g, x, z0, v, steps, fd_step):
    try:
        path = integrate_geodesic(CurveState(0.0, z0, v), g, x, 1.0, steps, fd_step)
    except (BlowUpError, GeometryError):
        return None
    return path


def _newton_shoot(g, x, z0, z1, v, steps, fd_step, iters=12, tol=SHOOT_TOL):
    """Newton iteration on the endpoint map with a finite-difference sensitivity."""
    k = z0.size
    scale = max(1.0, np.linalg.norm(z1 - z0))
    best = (np.inf, v, None)
    for _ in range(iters):
        path = _endpoint(g, x, z0, v, steps, fd_step)
        if path is None:
            break
        r = path.end - z1
        miss = np.linalg.norm(r)
        if miss < best[0]:
            best = (miss, v, path)
        if miss < tol * scale:
            break
        h = 1e-6 * max(1.0, np.linalg.norm(v))
        S = np.empty((k, k))
        ok = True
        for j in range(k):
            e = np.zeros(k)
            e[j] = h
            pj = _endpoint(g, x, z0, v + e, steps, fd_step)
            if pj is None:
                ok = False
                break
            S[:, j] = (pj.end - path.end) / h
        if not ok:
            break
        try:
            dv = np.linalg.lstsq(S, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        # damped step: halve until the miss improves
        lam = 1.0
        while lam > 1e-3:
            trial = _endpoint(g, x, z0, v + lam * dv, steps, fd_step)
            if trial is not None and np.linalg.norm(trial.end - z1) < miss:
                break
            lam *= 0.5
        v = v + lam * dv
    return best


def relax_geodesic(g, x, z_from, z_to, segments=24, iters=300):
    """Discrete geodesic: minimise the path energy of a polyline with fixed ends.

    Energy is ``sum ||G(z_{i+1}) - G(z_i)||^2``; its minimiser has
    equal-length output segments, so the polyline also approximates the
    constant-speed geodesic.  Returns the ``(segments + 1, k)`` vertices.
    """
    z0, z1 = np.asarray(z_from, float), np.asarray(z_to, float)
    k = z0.size
    ts = np.linspace(0.0, 1.0, segments + 1)[1:-1]
    init = (z0 + ts[:, None] * (z1 - z0)).ravel()

    def energy(flat):
        Z = np.concatenate([z0[None], flat.reshape(-1, k), z1[None]])
        Y = np.asarray(g.forward(Z, x))
        J = g.jacobian_z(Z[1:-1], x)
        D = np.diff(Y, axis=0)
        e = float(np.sum(D * D)) * segments
        gy = 2.0 * segments * (D[:-1] - D[1:])
        return e, np.einsum("nmk,nm->nk", J, gy).ravel()

    res = minimize(energy, init, jac=True, method="L-BFGS-B", options={"maxiter": iters, "gtol": 1e-10})
    return np.concatenate([z0[None], res.x.reshape(-1, k), z1[None]])


def polyline_length(g, x, Z):
    Y = np.asarray(g.forward(np.asarray(Z), x))
    return float(np.sum(np.linalg.norm(np.diff(Y, axis=0), axis=1)))


def shoot_geodesic(g, x, z_from, z_to, restarts=8, steps=40, fd_step=FD_STEP,
                   tol=SHOOT_TOL, rng=None, allow_fallback=True, relax_segments=24,
                   newton_iters=12):
    """Boundary-value geodesic between two latent points by shooting.

    The first start is the initial velocity of a relaxed discrete geodesic,
    the second the Euclidean direction; both are refined by damped Newton
    shooting.  Further restarts (rescaled and perturbed Euclidean directions)
    go through Nelder-Mead first.  If every start misses by more than the
    tolerance, the length comes from a latent-lattice shortest path
    (``k <= 3``) or the relaxed polyline, flagged ``graph_fallback``.
    """
    z0 = np.asarray(z_from, dtype=np.float64)
    z1 = np.asarray(z_to, dtype=np.float64)
    delta = z1 - z0
    dist = np.linalg.norm(delta)
    if dist == 0.0:
        raise ContractError("shooting needs distinct endpoints")
    scale = max(1.0, dist)
    ok = tol * scale
    poly = relax_geodesic(g, x, z0, z1, relax_segments) if relax_segments else None
    miss, v, path = np.inf, delta, None
    starts = ([(poly[1] - poly[0]) * relax_segments] if poly is not None else []) + [delta.copy()]
    for v0 in starts:
        m2, v2, p2 = _newton_shoot(g, x, z0, z1, v0, steps, fd_step, iters=newton_iters, tol=tol)
        if p2 is not None and m2 < ok and not _steady(p2, g, x):
            m2 = np.inf
        if m2 < miss:
            miss, v, path = m2, v2, p2
        if miss < ok:
            break
    if miss >= ok:
        rng = np.random.default_rng(0) if rng is None else rng
        factors = [1.0, 0.5, 1.5, 0.75, 1.25, 0.25, 2.0, 1.0]
        for r in range(max(0, restarts - len(starts))):
            v0 = factors[r % len(factors)] * delta + 0.25 * dist * rng.normal(size=z0.size)

            def objective(vv):
                p = _endpoint(g, x, z0, vv, steps, fd_step)
                return np.inf if p is None else float(np.linalg.norm(p.end - z1))

            res = minimize(objective, v0, method="Nelder-Mead",
                           options={"xatol": 1e-8, "fatol": ok * 1e-2, "maxiter": 60 * z0.size})
            m2, v2, p2 = _newton_shoot(g, x, z0, z1, res.x, steps, fd_step, iters=4, tol=tol)
            if p2 is not None and m2 < ok and not _steady(p2, g, x):
                m2 = np.inf
            if m2 < miss:
                miss, v, path = m2, v2, p2
            if miss < ok:
                break
    if path is not None and miss < ok:
        return ShootResult(path, curve_length(path, g, x), float(miss), True)
    fallback_path = path if path is not None else straight_path(z0, z1, steps, x)
    if allow_fallback and z0.size <= LATTICE_MAX_DIM:
        length, pts = lattice_shortest_path(g, x, z0, z1)
        if poly is not None:
            length = min(length, polyline_length(g, x, poly))
        return ShootResult(fallback_path, length, float(miss), False, True, pts, "lattice")
    if allow_fallback and poly is not None:
        return ShootResult(fallback_path, polyline_length(g, x, poly), float(miss), False, True, poly, "relaxation")
    return ShootResult(fallback_path, curve_length(fallback_path, g, x), float(miss), False)


def lattice_shortest_path(g, x, z_from, z_to, points=LATTICE_POINTS, margin=0.5, seg_steps=4):
    """Dijkstra over an axis-aligned latent lattice spanning both endpoints."""
    z0, z1 = np.asarray(z_from, float), np.asarray(z_to, float)
    k = z0.size
    lo, hi = np.minimum(z0, z1), np.maximum(z0, z1)
    pad = margin * np.maximum(hi - lo, np.linalg.norm(z1 - z0) / 2)
    lo, hi = lo - pad, hi + pad
    axes = [np.linspace(lo[i], hi[i], points) for i in range(k)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    idx = np.arange(len(grid)).reshape((points,) * k)
    src, dst = [], []
    for off in np.ndindex(*(3,) * k):
        off = np.array(off) - 1
        nz = np.flatnonzero(off)
        if nz.size == 0 or off[nz[0]] < 0:
            continue  # one direction per undirected edge
        sl_a = tuple(slice(max(0, -o), points - max(0, o)) for o in off)
        sl_b = tuple(slice(max(0, o), points - max(0, -o)) for o in off)
        src.append(idx[sl_a].ravel())
        dst.append(idx[sl_b].ravel())
    src, dst = np.concatenate(src), np.concatenate(dst)
    # edge weight: curve length of the straight segment, midpoint-free left sum
    ts = np.arange(seg_steps) / seg_steps
    Zs = grid[src][:, None, :] + ts[None, :, None] * (grid[dst] - grid[src])[:, None, :]
    J = g.jacobian_z(Zs.reshape(-1, k), x).reshape(len(src), seg_steps, -1, k)
    vel = np.einsum("esmk,ek->esm", J, grid[dst] - grid[src])
    w = np.linalg.norm(vel, axis=2).mean(axis=1)
    n = len(grid)
    W = coo_matrix((w, (src, dst)), shape=(n, n)).tocsr()
    a = int(np.argmin(np.linalg.norm(grid - z0, axis=1)))
    b = int(np.argmin(np.linalg.norm(grid - z1, axis=1)))
    dist, pred = dijkstra(W, directed=False, indices=a, return_predecessors=True)
    order = [b]
    while order[-1] != a and pred[order[-1]] >= 0:
        order.append(pred[order[-1]])
    return float(dist[b]), grid[order[::-1]]


# ratios and distortion -------------------------------------------------------
def tau_ratio(g, x, z1, z2):
    z1, z2 = np.asarray(z1, float), np.asarray(z2, float)
    dz = np.linalg.norm(z1 - z2)
    if dz == 0.0:
        raise ContractError("tau ratio is undefined for coincident latent points")
    return float(np.linalg.norm(np.asarray(g.forward(z1, x)) - np.asarray(g.forward(z2, x))) / dz)


def tau_ratios(g, x, Z1, Z2):
    """Vectorised ``tau_ratio`` over paired rows of ``Z1`` and ``Z2``."""
    dz = np.linalg.norm(Z1 - Z2, axis=1)
    if np.any(dz == 0.0):
        raise ContractError("tau ratio is undefined for coincident latent points")
    dy = np.linalg.norm(np.asarray(g.forward(Z1, x)) - np.asarray(g.forward(Z2, x)), axis=1)
    return dy / dz


def bilipschitz_report(g, x, sampler, pairs=1000, rng=None, geodesic=False, bins=20, **shoot_kw):
    """Empirical distance-ratio bounds over sampled latent pairs.

    ``sampler(rng, n)`` returns ``n`` latent codes.  With ``geodesic=True`` the
    numerator is the output-manifold geodesic length from ``shoot_geodesic``.
    """
    if pairs < 100:
        raise ContractError("bi-lipschitz report needs at least 100 pairs")
    rng = np.random.default_rng(0) if rng is None else rng
    Z1, Z2 = sampler(rng, pairs), sampler(rng, pairs)
    if geodesic:
        ratios = np.array([
            shoot_geodesic(g, x, a, b, **shoot_kw).length / np.linalg.norm(a - b)
            for a, b in zip(Z1, Z2)
        ])
    else:
        ratios = tau_ratios(g, x, Z1, Z2)
    hist, edges = np.histogram(ratios, bins=bins)
    return BiLipschitzReport(pairs, float(ratios.min()), float(ratios.max()), hist, edges, ratios)


def distortion(g, x, z):
    """``det(M(z))`` from the Cholesky factor of the pullback metric."""
    M = metric_at(g, z, x).value
    try:
        L = np.linalg.cholesky(M)
        return float(np.prod(np.diag(L)) ** 2)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(M)
        if ev.min() < -1e-10 * max(1.0, abs(ev).max()):
            raise GeometryError(f"metric is not positive semi-definite at z={z}", z=z) from None
        return float(np.prod(np.clip(ev, 0.0, None)))


def hadamard_bound(J):
    """Product of squared column norms of ``J``: an upper bound on ``det(J^T J)``."""
    return float(np.prod(np.sum(np.asarray(J) ** 2, axis=0)))

"""Distances between discrete measures: W_p, the series metric for narrow
convergence, Hölder-in-time fits, and the AC-curve speed check.

1D W_2 uses the quantile (monotone-rearrangement) coupling, which is the exact
optimizer on the line. General W_p on small supports is solved exactly as a
transport LP (HiGHS); the entropic path is an opt-in surrogate and never backs
an acceptance assertion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .fields import DensityField

DEFAULT_ATOM_CAP = 1024


class MetricsError(ValueError):
    pass


@dataclass
class DiscreteMeasure:
    support: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.support.shape[0] != self.weights.size:
            raise MetricsError("support/weights size mismatch")
        if self.weights.min(initial=0.0) < -1e-15:
            raise MetricsError("negative weights")
        self.weights = np.maximum(self.weights, 0.0)
        total = self.weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise MetricsError(f"weights must sum to 1 (got {total!r}); normalize first")

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @classmethod
    def from_field(cls, fld: DensityField) -> "DiscreteMeasure":
        w = fld.values.ravel() * fld.grid.cell_volume
        total = w.sum()
        if total <= 0:
            raise MetricsError("zero-mass field")
        return cls(fld.grid.center_points(), w / total)


def coarsen_field_measure(fld: DensityField, max_atoms: int) -> DiscreteMeasure:
    """Conservative block aggregation of a grid density into <= max_atoms atoms.

    Block mass is summed exactly; each block's atom sits at the mass-weighted
    centroid (geometric center for empty blocks).
    """
    grid = fld.grid
    n_cells = int(np.prod(grid.cells))
    if n_cells <= max_atoms:
        return DiscreteMeasure.from_field(fld)
    if grid.dim == 1:
        n = grid.cells[0]
        block = int(np.ceil(n / max_atoms))
        xs = grid.centers(0)
        w = fld.values * grid.cell_volume
        atoms, weights = [], []
        for i0 in range(0, n, block):
            sl = slice(i0, min(i0 + block, n))
            mass = w[sl].sum()
            if mass > 0:
                atoms.append([(xs[sl] * w[sl]).sum() / mass])
            else:
                atoms.append([xs[sl].mean()])
            weights.append(mass)
        weights = np.array(weights)
        return DiscreteMeasure(np.array(atoms), weights / weights.sum())
    per_axis = int(np.floor(np.sqrt(max_atoms)))
    n1, n2 = grid.cells
    b1 = int(np.ceil(n1 / per_axis))
    b2 = int(np.ceil(n2 / per_axis))
    X, Y = grid.meshgrid()
    w = fld.values * grid.cell_volume
    atoms, weights = [], []
    for i0 in range(0, n1, b1):
        for j0 in range(0, n2, b2):
            sl = (slice(i0, min(i0 + b1, n1)), slice(j0, min(j0 + b2, n2)))
            mass = w[sl].sum()
            if mass > 0:
                atoms.append([(X[sl] * w[sl]).sum() / mass, (Y[sl] * w[sl]).sum() / mass])
            else:
                atoms.append([X[sl].mean(), Y[sl].mean()])
            weights.append(mass)
    weights = np.array(weights)
    return DiscreteMeasure(np.array(atoms), weights / weights.sum())


@dataclass
class TransportPlan:
    coupling: np.ndarray
    cost: float
    row_marginal_error: float
    col_marginal_error: float


def w2_1d(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact 1D W_2 via the quantile coupling."""
    if mu.dim != 1 or nu.dim != 1:
        raise MetricsError("w2_1d needs 1D supports")
    xo = np.argsort(mu.support[:, 0], kind="stable")
    yo = np.argsort(nu.support[:, 0], kind="stable")
    xs, ws = mu.support[xo, 0], mu.weights[xo]
    ys, wt = nu.support[yo, 0], nu.weights[yo]
    i = j = 0
    wa, wb = ws[0], wt[0]
    cost = 0.0
    while True:
        chunk = min(wa, wb)
        cost += chunk * (xs[i] - ys[j]) ** 2
        wa -= chunk
        wb -= chunk
        if wa <= 1e-18:
            i += 1
            if i >= xs.size:
                break
            wa = ws[i]
        if wb <= 1e-18:
            j += 1
            if j >= ys.size:
                break
            wb = wt[j]
    return float(np.sqrt(max(cost, 0.0)))


def _cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> np.ndarray:
    diff = mu.support[:, None, :] - nu.support[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    return dist**p


def wp_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0,
             cap: int = DEFAULT_ATOM_CAP) -> tuple[float, TransportPlan]:
    """Exact W_p on small supports via the transport LP (HiGHS)."""
    n, mm = mu.weights.size, nu.weights.size
    if n > cap or mm > cap:
        raise MetricsError(
            f"support sizes ({n}, {mm}) exceed cap {cap}; coarsen the inputs "
            "(coarsen_field_measure) or use wp_entropic"
        )
    C = _cost_matrix(mu, nu, p)
    rows_sum = sparse.kron(sparse.eye(n), np.ones((1, mm))).tocsr()
    cols_sum = sparse.kron(np.ones((1, n)), sparse.eye(mm)).tocsr()
    A = sparse.vstack([rows_sum, cols_sum[:-1]]).tocsc()
    beq = np.concatenate([mu.weights, nu.weights[:-1]])
    res = linprog(C.ravel(), A_eq=A, b_eq=beq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise MetricsError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(n, mm)
    row_err = float(np.abs(plan.sum(axis=1) - mu.weights).max())
    col_err = float(np.abs(plan.sum(axis=0) - nu.weights).max())
    if max(row_err, col_err) > 1e-9:
        raise MetricsError(f"transport plan marginals off by {max(row_err, col_err):.2e}")
    cost = float(res.fun)
    return max(cost, 0.0) ** (1.0 / p), TransportPlan(plan, cost, row_err, col_err)


def _sinkhorn_potentials(C, a, b, reg, iters, tol):
    loga = np.log(np.maximum(a, 1e-300))
    logb = np.log(np.maximum(b, 1e-300))
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    err = np.inf
    for it in range(iters):
        M = (f[:, None] + g[None, :] - C) / reg
        f = f + reg * (loga - np.logaddexp.reduce(M, axis=1))
        M = (f[:, None] + g[None, :] - C) / reg
        g = g + reg * (logb - np.logaddexp.reduce(M, axis=0))
        if it % 10 == 9 or it == iters - 1:
            pi = np.exp((f[:, None] + g[None, :] - C) / reg)
            err = max(np.abs(pi.sum(axis=1) - a).max(), np.abs(pi.sum(axis=0) - b).max())
            if err < tol:
                return pi, err, it + 1
    return pi, err, iters


def wp_entropic(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0,
                reg: float = 1e-2, iters: int = 5000, tol: float = 1e-9) -> float:
    """Debiased entropic surrogate for W_p (sharp transport cost of the blurred plans).

    value = ( <C, pi(mu,nu)> - 1/2 <C, pi(mu,mu)> - 1/2 <C, pi(nu,nu)> )_+^{1/p}
    """
    if reg <= 0:
        raise MetricsError("reg must be positive")

    def sharp_cost(m1, m2):
        C = _cost_matrix(m1, m2, p)
        pi, err, _ = _sinkhorn_potentials(C, m1.weights, m2.weights, reg, iters, tol)
        if err >= max(tol * 100, 1e-6):
            raise MetricsError(f"Sinkhorn failed to converge (marginal error {err:.2e})")
        return float((C * pi).sum())

    val = sharp_cost(mu, nu) - 0.5 * sharp_cost(mu, mu) - 0.5 * sharp_cost(nu, nu)
    return max(val, 0.0) ** (1.0 / p)


# ---------------------------------------------------------------------------
# delta distance (series metrization of narrow convergence)
# ---------------------------------------------------------------------------


def _delta_test_functions(extents, K: int):
    """The documented W^{1,inf}-normalized family f_k, k = 1..K.

    1D: f_k(x) = c_k sin(k pi xh), c_k = min(1, L/(k pi)).
    2D: diagonal enumeration of sin(k1 pi xh) sin(k2 pi yh) tensor modes with
    c = min(1, 1/súp|grad|). Both have sup|f| <= 1 and sup|grad f| <= 1.
    """
    funcs = []
    if len(extents) == 1:
        (a, b) = extents[0]
        L = b - a
        for k in range(1, K + 1):
            c = min(1.0, L / (k * np.pi))

            def f(pts, k=k, c=c, a=a, L=L):
                return c * np.sin(k * np.pi * (pts[:, 0] - a) / L)

            funcs.append(f)
        return funcs
    (ax, bx), (ay, by) = extents
    Lx, Ly = bx - ax, by - ay
    pairs = []
    s = 2
    while len(pairs) < K:
        for k1 in range(1, s):
            k2 = s - k1
            pairs.append((k1, k2))
            if len(pairs) == K:
                break
        s += 1
    for k1, k2 in pairs:
        gnorm = np.pi * np.hypot(k1 / Lx, k2 / Ly)
        c = min(1.0, 1.0 / gnorm)

        def f(pts, k1=k1, k2=k2, c=c):
            return (c * np.sin(k1 * np.pi * (pts[:, 0] - ax) / Lx)
                    * np.sin(k2 * np.pi * (pts[:, 1] - ay) / Ly))

        funcs.append(f)
    return funcs


def delta_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, K: int = 16,
                   extents=None) -> tuple[float, float]:
    """Truncated series metric for narrow convergence, with a rigorous tail bound.

    Returns (sum_{k<=K} 2^{-k} |∫f_k dmu - ∫f_k dnu|, tail) with
    tail = 2 * 2^{-K} since every |∫f d(mu-nu)| <= 2.
    """
    if K < 8:
        raise MetricsError("K must be >= 8")
    if mu.dim != nu.dim:
        raise MetricsError("dimension mismatch")
    if extents is None:
        allpts = np.vstack([mu.support, nu.support])
        extents = tuple((float(allpts[:, i].min()), float(allpts[:, i].max() + 1e-12))
                        for i in range(mu.dim))
    funcs = _delta_test_functions(extents, K)
    value = 0.0
    for k, f in enumerate(funcs, start=1):
        gap = float((f(mu.support) * mu.weights).sum() - (f(nu.support) * nu.weights).sum())
        value += 2.0 ** (-k) * abs(gap)
    return value, 2.0 ** (1 - K)


# ---------------------------------------------------------------------------
# Hölder-in-time fits and AC speed
# ---------------------------------------------------------------------------


@dataclass
class HolderFit:
    exponent: float
    constant: float
    fit_residual: float
    r_squared: float
    stationary: bool
    n_gaps: int
    gaps: np.ndarray = field(default_factory=lambda: np.array([]))
    envelope: np.ndarray = field(default_factory=lambda: np.array([]))


def holder_fit_from_pairs(pairs) -> HolderFit:
    """Upper-envelope log-log regression of distance against time gap.

    ``pairs`` is an iterable of (s, t, dist). The paper-style claims are
    one-sided bounds, so the fit uses the max distance per (rounded) gap.
    """
    gaps = {}
    for s, t, dist in pairs:
        g = round(abs(t - s), 12)
        if g <= 0:
            continue
        gaps[g] = max(gaps.get(g, 0.0), dist)
    if not gaps:
        raise MetricsError("no positive time gaps")
    gs = np.array(sorted(gaps))
    env = np.array([gaps[g] for g in gs])
    if env.max() <= 1e-14:
        return HolderFit(float("nan"), 0.0, 0.0, 1.0, True, gs.size, gs, env)
    if gs.size < 6:
        raise MetricsError(f"need >= 6 distinct gaps, got {gs.size}")
    mask = env > 0
    lx = np.log(gs[mask])
    ly = np.log(env[mask])
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    a, logC = coef
    pred = A @ coef
    ss_res = float(((ly - pred) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return HolderFit(float(a), float(np.exp(logC)), ss_res, r2, False, gs.size, gs, env)


def envelope_constant(pairs, exponent: float) -> float:
    """Smallest C with dist <= C * gap^exponent over all sampled pairs."""
    best = 0.0
    for s, t, dist in pairs:
        g = abs(t - s)
        if g > 0:
            best = max(best, dist / g**exponent)
    return best


def snapshot_pairs(times, idx_pairs=None):
    if idx_pairs is not None:
        return idx_pairs
    n = len(times)
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def trajectory_distance_pairs(traj, kind: str = "W2", pair_stride_set=None,
                              max_atoms_2d: int = 1024, delta_terms: int = 14):
    """(s, t, dist) tuples over snapshot pairs of a trajectory record.

    ``pair_stride_set`` restricts to index gaps j - i in the given set; 1D W2
    is exact quantile, 2D W2 goes through conservative coarsening + the LP.
    """
    snaps = traj.snapshots
    grid = snaps[0][1].grid
    if grid.dim == 1:
        measures = [DiscreteMeasure.from_field(f) for _, f in snaps]
    else:
        measures = [coarsen_field_measure(f, max_atoms_2d) for _, f in snaps]
    strides = None if pair_stride_set is None else set(pair_stride_set)
    pairs = []
    for i in range(len(snaps)):
        for j in range(i + 1, len(snaps)):
            if strides is not None and (j - i) not in strides:
                continue
            if kind == "W2":
                if grid.dim == 1:
                    dist = w2_1d(measures[i], measures[j])
                else:
                    dist = wp_exact(measures[i], measures[j], 2.0)[0]
            elif kind == "delta":
                dist, _ = delta_distance(measures[i], measures[j], K=delta_terms,
                                         extents=grid.extents)
            else:
                raise MetricsError(f"unknown distance kind {kind!r}")
            pairs.append((snaps[i][0], snaps[j][0], dist))
    return pairs


def holder_fit(traj, distance: str = "W2", pair_stride_set=None, **kw) -> "HolderFit":
    """Hölder-in-time fit of a trajectory under the chosen snapshot distance."""
    return holder_fit_from_pairs(trajectory_distance_pairs(traj, distance,
                                                           pair_stride_set, **kw))


def metric_speed(traj, V, m: float, eps: float, pair_stride_set=None,
                 budget: float = 0.0):
    """AC-curve speed check on a trajectory: the distance between snapshots is
    bounded by the time integral of ||w||_{L^2(rho)} with w = -grad rho^m/rho + V."""
    from .fields import center_gradient, integrate_values

    snaps = traj.snapshots
    grid = snaps[0][1].grid
    times = np.array([t for t, _ in snaps])
    centers = grid.center_points()
    floor = max(eps, 1e-300)
    speeds = np.empty(len(snaps))
    for i, (t, f) in enumerate(snaps):
        v = f.values
        grads = center_gradient(grid, np.maximum(v, floor) ** m)
        vel = V.velocity(centers, t)
        wsq = np.zeros(grid.shape)
        for axis in range(grid.dim):
            w_axis = -grads[axis] / np.maximum(v, floor) + vel[:, axis].reshape(grid.shape)
            wsq += w_axis**2
        speeds[i] = np.sqrt(integrate_values(grid, wsq * v))
    if grid.dim == 1:
        measures = [DiscreteMeasure.from_field(f) for _, f in snaps]

        def dist(i, j):
            return w2_1d(measures[i], measures[j])
    else:
        measures = [coarsen_field_measure(f, 1024) for _, f in snaps]

        def dist(i, j):
            return wp_exact(measures[i], measures[j], 2.0)[0]

    idx_pairs = None
    if pair_stride_set is not None:
        strides = set(pair_stride_set)
        idx_pairs = [(i, j) for i in range(len(snaps)) for j in range(i + 1, len(snaps))
                     if (j - i) in strides]
    out = []
    for i, j in snapshot_pairs(times, idx_pairs):
        d = dist(i, j)
        integral = float(np.trapezoid(speeds[i:j + 1], times[i:j + 1]))
        out.append(SpeedCheck(times[i], times[j], d, integral, integral + budget - d))
    return out


@dataclass
class SpeedCheck:
    s: float
    t: float
    distance: float
    speed_integral: float
    slack: float


def metric_speed_pairs(times, fields, speeds, distance_fn, idx_pairs=None,
                       budget: float = 0.0):
    """Check dist(rho(s), rho(t)) <= ∫_s^t ||w|| dtau + budget over sampled pairs.

    ``speeds`` holds ||w(t)||_{L^2(rho(t))} per sample; the integral uses the
    trapezoid rule on the sample times.
    """
    times = np.asarray(times, dtype=np.float64)
    out = []
    for i, j in snapshot_pairs(times, idx_pairs):
        dist = distance_fn(fields[i], fields[j])
        integral = float(np.trapezoid(speeds[i:j + 1], times[i:j + 1]))
        out.append(SpeedCheck(times[i], times[j], dist, integral,
                              integral + budget - dist))
    return out

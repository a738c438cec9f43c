"""Closed-form drift fields with analytic divergence, plus admissibility checks.

Drifts are symbolic specs rather than grid data so that flow maps and Jacobian
line integrals can be evaluated off-grid and off-sample. The classifier turns
the mixed-norm integrability conditions that gate the a priori estimates into
numeric membership reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fields import INF, Grid, MixedNormSpec, mixed_norm_samples

KINDS = (
    "constant",
    "shear",
    "rigid_rotation",
    "potential_gradient",
    "stream_function",
    "sine1d",
    "time_modulated",
    "grid_field",
)

CLASS_TAGS = ("S", "S_tilde", "D", "D_plus", "D_s")


class DriftError(ValueError):
    """Bad drift construction or classification request."""


def _poly(coeffs, t):
    out = 0.0
    for k, c in enumerate(coeffs):
        out = out + c * (t**k)
    return out


@dataclass
class DriftSpec:
    """A named closed-form vector field V(x, t) with analytic divergence."""

    kind: str
    params: dict
    declared_divergence_free: bool = False
    declared_zero_normal_flux: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DriftError(f"unknown drift kind {self.kind!r}")
        if self.kind == "time_modulated" and not isinstance(self.params.get("inner"), DriftSpec):
            raise DriftError("time_modulated needs an inner DriftSpec")

    # -- evaluation ---------------------------------------------------------

    def velocity(self, points: np.ndarray, t: float) -> np.ndarray:
        """V at an (N, d) array of points; returns (N, d)."""
        x = np.atleast_2d(np.asarray(points, dtype=np.float64))
        p = self.params
        if self.kind == "constant":
            v = np.asarray(p["v"], dtype=np.float64)
            return np.broadcast_to(v, x.shape).copy()
        if self.kind == "shear":
            out = np.zeros_like(x)
            out[:, 0] = p["rate"] * (x[:, 1] - p["center_y"])
            return out
        if self.kind == "rigid_rotation":
            cx, cy = p["center"]
            out = np.empty_like(x)
            out[:, 0] = -p["omega"] * (x[:, 1] - cy)
            out[:, 1] = p["omega"] * (x[:, 0] - cx)
            return out
        if self.kind == "potential_gradient":
            alpha = np.asarray(p["alpha"], dtype=np.float64)
            center = np.asarray(p["center"], dtype=np.float64)
            return alpha * (x - center)
        if self.kind == "stream_function":
            return self._stream_velocity(x)
        if self.kind == "sine1d":
            a, b = p["extent"]
            xh = (x[:, 0] - a) / (b - a)
            return (p["amplitude"] * np.sin(p["mode"] * np.pi * xh))[:, None]
        if self.kind == "time_modulated":
            return _poly(p["coeffs"], t) * p["inner"].velocity(x, t)
        if self.kind == "grid_field":
            return p["interpolator"].velocity(x)
        raise DriftError(self.kind)

    def _stream_hat(self, x):
        p = self.params
        (ax, bx), (ay, by) = p["extents"]
        return (x[:, 0] - ax) / (bx - ax), (x[:, 1] - ay) / (by - ay), bx - ax, by - ay

    def _stream_velocity(self, x):
        # psi = A sin(k1 pi xh) sin(k2 pi yh); V = (dpsi/dy, -dpsi/dx)
        p = self.params
        xh, yh, Lx, Ly = self._stream_hat(x)
        k1, k2 = p["modes"]
        A = p["amplitude"]
        out = np.empty_like(x)
        out[:, 0] = A * np.sin(k1 * np.pi * xh) * np.cos(k2 * np.pi * yh) * (k2 * np.pi / Ly)
        out[:, 1] = -A * np.cos(k1 * np.pi * xh) * np.sin(k2 * np.pi * yh) * (k1 * np.pi / Lx)
        return out

    def divergence(self, points: np.ndarray, t: float) -> np.ndarray:
        """Closed-form divergence at (N, d) points."""
        x = np.atleast_2d(np.asarray(points, dtype=np.float64))
        p = self.params
        n = x.shape[0]
        if self.kind in ("constant", "shear", "rigid_rotation", "stream_function"):
            return np.zeros(n)
        if self.kind == "potential_gradient":
            return np.full(n, float(np.sum(p["alpha"])))
        if self.kind == "sine1d":
            a, b = p["extent"]
            xh = (x[:, 0] - a) / (b - a)
            return p["amplitude"] * (p["mode"] * np.pi / (b - a)) * np.cos(p["mode"] * np.pi * xh)
        if self.kind == "time_modulated":
            return _poly(p["coeffs"], t) * p["inner"].divergence(x, t)
        if self.kind == "grid_field":
            return p["interpolator"].divergence(x)
        raise DriftError(self.kind)

    def jacobian(self, points: np.ndarray, t: float) -> np.ndarray | None:
        """Analytic Jacobian dV_i/dx_j as (N, d, d), or None when unavailable."""
        x = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n, d = x.shape
        p = self.params
        if self.kind == "constant":
            return np.zeros((n, d, d))
        if self.kind == "shear":
            J = np.zeros((n, 2, 2))
            J[:, 0, 1] = p["rate"]
            return J
        if self.kind == "rigid_rotation":
            J = np.zeros((n, 2, 2))
            J[:, 0, 1] = -p["omega"]
            J[:, 1, 0] = p["omega"]
            return J
        if self.kind == "potential_gradient":
            J = np.zeros((n, d, d))
            for i, a in enumerate(np.atleast_1d(p["alpha"])):
                J[:, i, i] = a
            return J
        if self.kind == "stream_function":
            xh, yh, Lx, Ly = self._stream_hat(x)
            k1, k2 = p["modes"]
            A = p["amplitude"]
            c1, s1 = np.cos(k1 * np.pi * xh), np.sin(k1 * np.pi * xh)
            c2, s2 = np.cos(k2 * np.pi * yh), np.sin(k2 * np.pi * yh)
            J = np.empty((n, 2, 2))
            J[:, 0, 0] = A * (k1 * np.pi / Lx) * (k2 * np.pi / Ly) * c1 * c2
            J[:, 0, 1] = -A * (k2 * np.pi / Ly) ** 2 * s1 * s2
            J[:, 1, 0] = A * (k1 * np.pi / Lx) ** 2 * s1 * s2
            J[:, 1, 1] = -A * (k1 * np.pi / Lx) * (k2 * np.pi / Ly) * c1 * c2
            return J
        if self.kind == "sine1d":
            return self.divergence(x, t)[:, None, None]
        if self.kind == "time_modulated":
            inner = p["inner"].jacobian(x, t)
            return None if inner is None else _poly(p["coeffs"], t) * inner
        return None

    def jacobian_fd(self, points: np.ndarray, t: float, step: float) -> np.ndarray:
        """Central-difference Jacobian fallback (step picked by the caller)."""
        x = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n, d = x.shape
        J = np.empty((n, d, d))
        for j in range(d):
            dx = np.zeros(d)
            dx[j] = step
            J[:, :, j] = (self.velocity(x + dx, t) - self.velocity(x - dx, t)) / (2 * step)
        return J

    def describe(self) -> dict:
        desc = {"kind": self.kind, "name": self.name,
                "declared_divergence_free": self.declared_divergence_free,
                "declared_zero_normal_flux": self.declared_zero_normal_flux}
        params = {}
        for k, v in self.params.items():
            if isinstance(v, DriftSpec):
                params[k] = v.describe()
            elif k == "interpolator":
                params[k] = "grid-sampled velocity"
            elif isinstance(v, (tuple, list, np.ndarray)):
                params[k] = np.asarray(v, dtype=float).tolist()
            else:
                params[k] = v
        desc["params"] = params
        return desc


def evaluate(V: DriftSpec, x, t: float) -> np.ndarray:
    """Single-point velocity; returns a length-d vector."""
    return V.velocity(np.atleast_2d(np.asarray(x, dtype=np.float64)), t)[0]


def divergence(V: DriftSpec, x, t: float) -> float:
    return float(V.divergence(np.atleast_2d(np.asarray(x, dtype=np.float64)), t)[0])


# ---------------------------------------------------------------------------
# declaration audits (sampled checks for the declared_* flags)
# ---------------------------------------------------------------------------


def _probe_points(grid: Grid, per_axis: int = 32) -> np.ndarray:
    axes = [np.linspace(a, b, per_axis) for a, b in grid.extents]
    if grid.dim == 1:
        return axes[0][:, None]
    X, Y = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def _boundary_normals(grid: Grid, per_side: int = 64):
    """Sample points on each boundary face with the outward normal."""
    out = []
    if grid.dim == 1:
        (a, b) = grid.extents[0]
        out.append((np.array([[a]]), np.array([-1.0])))
        out.append((np.array([[b]]), np.array([1.0])))
        return out
    (ax, bx), (ay, by) = grid.extents
    ys = np.linspace(ay, by, per_side)
    xs = np.linspace(ax, bx, per_side)
    out.append((np.column_stack([np.full_like(ys, ax), ys]), np.array([-1.0, 0.0])))
    out.append((np.column_stack([np.full_like(ys, bx), ys]), np.array([1.0, 0.0])))
    out.append((np.column_stack([xs, np.full_like(xs, ay)]), np.array([0.0, -1.0])))
    out.append((np.column_stack([xs, np.full_like(xs, by)]), np.array([0.0, 1.0])))
    return out


def validate_declarations(V: DriftSpec, grid: Grid, T: float, n_t: int = 9) -> dict:
    """Sampled audit of the declared_divergence_free / declared_zero_normal_flux flags."""
    pts = _probe_points(grid)
    times = np.linspace(0.0, T, n_t)
    report = {"divergence_free_ok": True, "zero_normal_flux_ok": True,
              "max_abs_div": 0.0, "max_normal_flux": 0.0, "sup_speed": 0.0}
    grad_scale = 0.0
    for t in times:
        v = V.velocity(pts, t)
        report["sup_speed"] = max(report["sup_speed"], float(np.abs(v).max(initial=0.0)))
        J = V.jacobian(pts, t)
        if J is None:
            J = V.jacobian_fd(pts, t, 1e-6 * min(grid.spacing))
        grad_scale = max(grad_scale, float(np.sqrt((J**2).sum(axis=(1, 2))).max(initial=0.0)))
        report["max_abs_div"] = max(report["max_abs_div"], float(np.abs(V.divergence(pts, t)).max(initial=0.0)))
        for bpts, normal in _boundary_normals(grid):
            vb = V.velocity(bpts, t)
            report["max_normal_flux"] = max(report["max_normal_flux"], float(np.abs(vb @ normal).max(initial=0.0)))
    if V.declared_divergence_free and report["max_abs_div"] > 1e-12 * (1.0 + grad_scale):
        report["divergence_free_ok"] = False
    if V.declared_zero_normal_flux and report["max_normal_flux"] > 1e-12 * max(report["sup_speed"], 1e-300):
        report["zero_normal_flux_ok"] = False
    return report


# ---------------------------------------------------------------------------
# class membership
# ---------------------------------------------------------------------------


@dataclass
class DriftClassReport:
    class_tag: str
    q1: float
    q2: float
    m: float
    q: float
    d: int
    lhs: float
    rhs: float
    member: bool
    critical: bool
    norm: float
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "class": self.class_tag,
            "q1": self.q1,
            "q2": self.q2,
            "m": self.m,
            "q": self.q,
            "d": self.d,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "member": self.member,
            "critical": self.critical,
            "norm": self.norm,
            "details": self.details,
        }
        return json.dumps(payload, indent=1, sort_keys=True, default=float)


def class_bound(class_tag: str, m: float, q: float, d: int) -> float:
    """Right side of the scaling inequality for each admissibility class."""
    if class_tag == "S":
        return 1.0 + d * (m - 1.0)
    if class_tag == "S_tilde":
        return 2.0 + d * (m - 1.0)
    if class_tag in ("D", "D_plus"):
        return 2.0 + d * (q + m - 2.0) / q
    if class_tag == "D_s":
        return 1.0 + d * (q + m - 2.0) / (2.0 * q)
    raise DriftError(f"unknown class tag {class_tag!r}")


def class_lhs(class_tag: str, q1: float, q2: float, m: float, q: float, d: int) -> float:
    inv1 = 0.0 if q1 == INF else 1.0 / q1
    inv2 = 0.0 if q2 == INF else 1.0 / q2
    if class_tag in ("S", "S_tilde"):
        return d * inv1 + (2.0 + d * (q + m - 2.0)) * inv2
    q_md = d * (m - 1.0) / q
    return d * inv1 + (2.0 + q_md) * inv2


def _check_m_range(class_tag: str, m: float, q: float, d: int) -> None:
    if class_tag == "S":
        lo = 1.0 - 1.0 / d
        if not (lo < m < 1.0):
            raise DriftError(f"class S needs {lo} < m < 1, got m={m}")
    elif class_tag == "S_tilde":
        lo = max(1.0 - 2.0 / d, 0.0)
        if not (lo <= m < 1.0):
            raise DriftError(f"class S_tilde needs {lo} <= m < 1, got m={m}")
    elif class_tag in ("D", "D_plus", "D_s"):
        if m > 1.0:
            return  # PME branch: any m > 1
        lo = max(1.0 - 2.0 * q / d, 0.0)
        if not (lo <= m < 1.0):
            raise DriftError(f"divergence-free classes need {lo} <= m < 1 (or m > 1), got m={m}")
    if q < 1.0:
        raise DriftError(f"q >= 1 required, got {q}")


def drift_mixed_norm(V: DriftSpec, grid: Grid, T: float, spec: MixedNormSpec,
                     n_t: int = 17, per_axis: int = 32, use_gradient: bool = False) -> float:
    """Numeric ‖V‖ (or ‖∇V‖ Frobenius) in the L^{q1,q2}_{x,t} mixed norm on probe samples."""
    axes = []
    for (a, b), n in zip(grid.extents, (per_axis,) * grid.dim):
        h = (b - a) / n
        axes.append(a + (np.arange(n) + 0.5) * h)
    if grid.dim == 1:
        pts = axes[0][:, None]
    else:
        X, Y = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
    cellvol = grid.volume / pts.shape[0]
    times = np.linspace(0.0, T, n_t)
    spatial = np.empty(len(times))
    fd_step = 1e-6 * min(grid.spacing)
    for i, t in enumerate(times):
        if use_gradient:
            J = V.jacobian(pts, t)
            if J is None:
                J = V.jacobian_fd(pts, t, fd_step)
            mag = np.sqrt((J**2).sum(axis=(1, 2)))
        else:
            mag = np.sqrt((V.velocity(pts, t) ** 2).sum(axis=1))
        if spec.q1 == INF:
            spatial[i] = mag.max(initial=0.0)
        else:
            spatial[i] = ((mag**spec.q1).sum() * cellvol) ** (1.0 / spec.q1)
    return mixed_norm_samples(times, spatial, spec.q2)


def classify(V: DriftSpec, m: float, q: float, spec: MixedNormSpec, class_tag: str,
             grid: Grid, T: float = 1.0) -> DriftClassReport:
    """Membership report for the drift admissibility class ``class_tag``."""
    if class_tag not in CLASS_TAGS:
        raise DriftError(f"unknown class tag {class_tag!r}")
    d = grid.dim
    _check_m_range(class_tag, m, q, d)
    lhs = class_lhs(class_tag, spec.q1, spec.q2, m, q, d)
    rhs = class_bound(class_tag, m, q, d)
    details: dict = {}
    audit = validate_declarations(V, grid, T)
    details["max_abs_div"] = audit["max_abs_div"]
    details["max_normal_flux"] = audit["max_normal_flux"]
    details["sup_speed"] = audit["sup_speed"]

    norm = drift_mixed_norm(V, grid, T, spec, use_gradient=(class_tag == "S_tilde"))
    details["norm_kind"] = "grad_V_frobenius" if class_tag == "S_tilde" else "V"

    structural_ok = True
    if class_tag in ("D", "D_plus", "D_s"):
        # the divergence-free classes live in the closure of div-free fields
        if audit["max_abs_div"] > 1e-10 * (1.0 + audit["sup_speed"]):
            structural_ok = False
            details["reason"] = "not divergence-free"
    critical = abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
    if class_tag == "D_plus":
        scaling_ok = lhs < rhs and not critical
    else:
        scaling_ok = lhs <= rhs or critical
    member = bool(scaling_ok and np.isfinite(norm) and structural_ok)
    return DriftClassReport(class_tag, spec.q1, spec.q2, m, q, d, lhs, rhs,
                            member, critical, norm, details)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def drift_preset(name: str, grid: Grid, **kw) -> DriftSpec:
    """Named drifts addressable from scenario files."""
    if name == "zero":
        v = (0.0,) * grid.dim
        return DriftSpec("constant", {"v": v}, True, True, name="zero")
    if name == "constant":
        v = kw.get("v", (1.0,) + (0.0,) * (grid.dim - 1))
        if np.isscalar(v):
            v = (float(v),) + (0.0,) * (grid.dim - 1)
        return DriftSpec("constant", {"v": tuple(v)}, True, False, name="constant")
    if name == "shear":
        cy = kw.get("center_y", 0.5 * sum(grid.extents[1]))
        return DriftSpec("shear", {"rate": kw.get("rate", 1.0), "center_y": cy},
                         True, False, name="shear")
    if name == "rotation":
        center = kw.get("center", tuple(0.5 * (a + b) for a, b in grid.extents))
        return DriftSpec("rigid_rotation", {"omega": kw.get("omega", 1.0), "center": tuple(center)},
                         True, False, name="rotation")
    if name == "expansion":
        center = kw.get("center", tuple(0.5 * (a + b) for a, b in grid.extents))
        alpha = kw.get("alpha", 0.5)
        alphas = (float(alpha),) * grid.dim if np.isscalar(alpha) else tuple(alpha)
        return DriftSpec("potential_gradient",
                         {"alpha": alphas, "center": tuple(center)},
                         False, False, name="expansion")
    if name == "vortex":
        if grid.dim != 2:
            raise DriftError("vortex preset needs a 2D grid")
        return DriftSpec("stream_function",
                         {"amplitude": kw.get("amplitude", 0.1),
                          "modes": tuple(kw.get("modes", (1, 1))),
                          "extents": grid.extents},
                         True, True, name="vortex")
    if name == "sine1d":
        if grid.dim != 1:
            raise DriftError("sine1d preset needs a 1D grid")
        # V = A sin(k pi xh): vanishes at both endpoints (zero normal flux)
        return DriftSpec("sine1d",
                         {"amplitude": kw.get("amplitude", 1.0),
                          "mode": int(kw.get("mode", 1)),
                          "extent": grid.extents[0]},
                         False, True, name="sine1d")
    if name == "modulated-vortex":
        inner = drift_preset("vortex", grid, **kw)
        coeffs = tuple(kw.get("coeffs", (1.0, 0.0, 0.0)))
        return DriftSpec("time_modulated", {"inner": inner, "coeffs": coeffs},
                         inner.declared_divergence_free, inner.declared_zero_normal_flux,
                         name="modulated-vortex")
    raise DriftError(f"unknown drift preset {name!r}")

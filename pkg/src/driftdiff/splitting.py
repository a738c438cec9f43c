"""Alternating diffusion/transport scheme on n subintervals of [0, T].

Each subinterval (iT/n, (i+1)T/n] first evolves the homogeneous regularized
diffusion from the previous composed state, then pushes the result forward
along the drift over the subinterval; the composed endpoint seeds the next
subinterval. Interior-time outputs apply the flow from the subinterval start
to the interior diffusion state on demand, so the marching loop itself only
ever transports at endpoints.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import (DensityField, FieldError, Grid, center_gradient, integrate_values,
                     lq_norm, power_gradient_energy, save_snapshot, load_snapshot)
from .drift import DriftSpec
from .diffusion import DiffusionParams, step_diffusion
from .transport import pushforward

_TINY = 1e-300


class SplittingError(RuntimeError):
    pass


@dataclass
class SplittingSchedule:
    T: float
    n: int
    diffusion: DiffusionParams
    rk_steps: int = 8
    output_times: np.ndarray | None = None
    epsilon_sequence: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise FieldError("n must be >= 1")
        if self.T <= 0:
            raise FieldError("T must be positive")
        sub = self.T / self.n
        steps = sub / self.diffusion.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise FieldError(
                f"T/n = {sub} must be an integer multiple of dt = {self.diffusion.dt}")
        if self.output_times is None:
            self.output_times = np.linspace(0.0, self.T, self.n + 1)
        self.output_times = np.asarray(sorted(set(float(t) for t in self.output_times)))
        if self.output_times.min() < -1e-12 or self.output_times.max() > self.T + 1e-12:
            raise FieldError("output_times must lie within [0, T]")

    @property
    def steps_per_sub(self) -> int:
        return int(round(self.T / self.n / self.diffusion.dt))

    @classmethod
    def make(cls, T: float, n: int, steps_per_sub: int, m: float, epsilon: float,
             rk_steps: int = 8, newton_tol: float = 1e-11, output_times=None) -> "SplittingSchedule":
        dt = T / (n * steps_per_sub)
        p = DiffusionParams(m=m, epsilon=epsilon, dt=dt, newton_tol=newton_tol)
        return cls(T=T, n=n, diffusion=p, rk_steps=rk_steps, output_times=output_times)


@dataclass
class TrajectoryRecord:
    snapshots: list  # [(time, DensityField)]
    diagnostics: dict  # column name -> np.ndarray
    provenance: dict
    m: float
    epsilon: float
    n: int
    T: float
    q_list: tuple[float, ...]
    subinterval_times: np.ndarray
    subinterval_dissipation: dict  # q -> np.ndarray of per-subinterval ∫∫|grad (eps+rho)^{(q+m-1)/2}|^2
    dense: bool = False

    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.snapshots])

    def field_at(self, t: float) -> DensityField:
        for tt, f in self.snapshots:
            if abs(tt - t) <= 1e-10 * max(1.0, self.T):
                return f
        raise KeyError(f"no snapshot at t = {t}")

    # -- persistence --------------------------------------------------------

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        snapdir = os.path.join(directory, "snapshots")
        os.makedirs(snapdir, exist_ok=True)
        index = []
        for k, (t, f) in enumerate(self.snapshots):
            prefix = os.path.join(snapdir, f"t_{k:06d}")
            save_snapshot(replace(f, time_tag=t), prefix)
            index.append({"time": t, "prefix": f"snapshots/t_{k:06d}"})
        manifest = {
            "format": "driftdiff-trajectory-v1",
            "m": self.m,
            "epsilon": self.epsilon,
            "n": self.n,
            "T": self.T,
            "q_list": list(self.q_list),
            "dense": self.dense,
            "snapshots": index,
            "provenance": self.provenance,
            "subinterval_times": self.subinterval_times.tolist(),
            "subinterval_dissipation": {str(q): arr.tolist()
                                        for q, arr in self.subinterval_dissipation.items()},
        }
        _atomic_json(os.path.join(directory, "manifest.json"), manifest)
        _atomic_csv(os.path.join(directory, "diagnostics.csv"), self.diagnostics)

    @classmethod
    def load(cls, directory: str) -> "TrajectoryRecord":
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        snaps = []
        for entry in manifest["snapshots"]:
            fld = load_snapshot(os.path.join(directory, entry["prefix"]))
            snaps.append((entry["time"], fld))
        diagnostics = {}
        with open(os.path.join(directory, "diagnostics.csv")) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            cols = [[] for _ in header]
            for row in reader:
                for c, x in zip(cols, row):
                    c.append(float(x))
        diagnostics = {h: np.array(c) for h, c in zip(header, cols)}
        return cls(
            snapshots=snaps,
            diagnostics=diagnostics,
            provenance=manifest["provenance"],
            m=manifest["m"],
            epsilon=manifest["epsilon"],
            n=manifest["n"],
            T=manifest["T"],
            q_list=tuple(manifest["q_list"]),
            subinterval_times=np.array(manifest["subinterval_times"]),
            subinterval_dissipation={float(q): np.array(v) for q, v in
                                     manifest["subinterval_dissipation"].items()},
            dense=manifest["dense"],
        )


def _atomic_json(path: str, payload: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")
    os.replace(tmp, path)


def _atomic_csv(path: str, columns: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    keys = list(columns.keys())
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        if keys:
            for row in zip(*(columns[k] for k in keys)):
                writer.writerow([repr(float(x)) for x in row])
    os.replace(tmp, path)


def _hash_array(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()[:16]


def _diagnose(fld: DensityField, t: float, V: DriftSpec, m: float, eps: float,
              q_list, table: dict) -> None:
    grid = fld.grid
    v = fld.values
    table.setdefault("time", []).append(t)
    table.setdefault("mass", []).append(fld.mass())
    ent = np.where(v > 0, v * np.log(np.maximum(v, _TINY)), 0.0)
    table.setdefault("entropy", []).append(integrate_values(grid, ent))
    table.setdefault("entropy_abs", []).append(integrate_values(grid, np.abs(ent)))
    q0 = q_list[0] if q_list else 2.0
    for q in q_list:
        table.setdefault(f"lq_norm({q:g})", []).append(lq_norm(fld, q))
    table.setdefault("grad_energy", []).append(
        power_gradient_energy(grid, v, (q0 + m - 1.0) / 2.0, shift=eps))
    # instantaneous speed integrands
    floor = max(eps, 1e-12)
    grads = center_gradient(grid, np.maximum(v, floor) ** m)
    gsq = sum(g**2 for g in grads)
    fisher = integrate_values(grid, gsq / np.maximum(v, floor))
    table.setdefault("speed_fisher", []).append(fisher)
    vel = V.velocity(grid.center_points(), t)
    vsq = (vel**2).sum(axis=1).reshape(grid.shape)
    table.setdefault("speed_drift", []).append(integrate_values(grid, vsq * v))


def run_splitting(rho0: DensityField, V: DriftSpec, schedule: SplittingSchedule,
                  q_list=(1.0, 2.0), renormalize: bool = True, dense_output: bool = False,
                  exit_tol: float | None = None) -> TrajectoryRecord:
    """March the splitting scheme and collect snapshots plus diagnostics.

    With ``dense_output`` every inner diffusion node is exported as a
    transported snapshot (needed by the weak-residual study); otherwise only
    the requested output times are kept.
    """
    mass0 = rho0.mass()
    if abs(mass0 - 1.0) > 1e-9:
        raise SplittingError(f"rho0 must be probability-normalized (mass {mass0!r})")
    p = schedule.diffusion
    m, eps = p.m, p.epsilon
    n = schedule.n
    steps = schedule.steps_per_sub
    sub_len = schedule.T / n
    out_arr = np.asarray(schedule.output_times, dtype=np.float64)
    match_tol = 1e-9 * max(1.0, schedule.T)

    def wants(t):
        idx = int(np.searchsorted(out_arr, t))
        for j in (idx - 1, idx):
            if 0 <= j < out_arr.size and abs(out_arr[j] - t) <= match_tol:
                return True
        return False

    table: dict = {}
    snaps: list = []
    sub_diss = {q: np.zeros(n) for q in q_list}

    state = rho0.copy()
    state.time_tag = 0.0
    if dense_output or wants(0.0):
        snaps.append((0.0, state.copy()))
        _diagnose(state, 0.0, V, m, eps, q_list, table)

    for i in range(n):
        t0 = i * sub_len
        rho_sub = state
        for k in range(steps):
            tau = t0 + (k + 1) * p.dt
            try:
                result = step_diffusion(rho_sub, p)
            except Exception as exc:  # annotate with the subinterval index
                raise SplittingError(f"subinterval {i}: {exc}") from exc
            rho_sub = result.field
            for q in q_list:
                a = (q + m - 1.0) / 2.0
                sub_diss[q][i] += p.dt * power_gradient_energy(rho_sub.grid, rho_sub.values, a, shift=eps)
            is_end = k == steps - 1
            if dense_output or wants(tau) or is_end:
                try:
                    pushed = pushforward(rho_sub, V, t0, tau, schedule.rk_steps,
                                         renormalize=renormalize, exit_tol=exit_tol)
                except Exception as exc:
                    raise SplittingError(f"subinterval {i}: {exc}") from exc
                if is_end:
                    state = pushed.field
                    state.time_tag = tau
                if dense_output or wants(tau):
                    snaps.append((tau, pushed.field.copy()))
                    _diagnose(pushed.field, tau, V, m, eps, q_list, table)

    diagnostics = {k: np.array(vals) for k, vals in table.items()}
    provenance = {
        "drift": V.describe(),
        "schedule": {"T": schedule.T, "n": n, "dt": p.dt, "rk_steps": schedule.rk_steps,
                     "m": m, "epsilon": eps},
        "rho0_hash": _hash_array(rho0.values),
        "renormalize": renormalize,
    }
    return TrajectoryRecord(
        snapshots=snaps,
        diagnostics=diagnostics,
        provenance=provenance,
        m=m,
        epsilon=eps,
        n=n,
        T=schedule.T,
        q_list=tuple(q_list),
        subinterval_times=np.linspace(0.0, schedule.T, n + 1),
        subinterval_dissipation=sub_diss,
        dense=dense_output,
    )


# ---------------------------------------------------------------------------
# weak residual of the scheme
# ---------------------------------------------------------------------------


class CosPolyTest:
    """Tensor-cosine test function with a polynomial time factor.

    phi(x, t) = prod_i cos(k_i * pi * (x_i - a_i) / L_i) * poly(t). The cosine
    modes have vanishing normal derivative on the box boundary, which is the
    compatibility the no-flux weak form needs.
    """

    def __init__(self, grid: Grid, modes, t_coeffs=(1.0,)):
        self.grid = grid
        self.modes = tuple(int(k) for k in np.atleast_1d(modes))
        self.t_coeffs = tuple(float(c) for c in t_coeffs)
        if len(self.modes) != grid.dim:
            raise FieldError("modes length must match grid dim")
        axes = [grid.centers(i) for i in range(grid.dim)]
        self._spatial = self._tensor_cos(axes)
        self._face_grads = self._face_gradient_arrays()

    def _hat(self, x, axis):
        a, b = self.grid.extents[axis]
        return (x - a) / (b - a)

    def _tensor_cos(self, axes):
        parts = []
        for i, x in enumerate(axes):
            parts.append(np.cos(self.modes[i] * np.pi * self._hat(x, i)))
        if self.grid.dim == 1:
            return parts[0]
        return np.outer(parts[0], parts[1])

    def _cos_at(self, x, axis):
        return np.cos(self.modes[axis] * np.pi * self._hat(x, axis))

    def _dcos_at(self, x, axis):
        a, b = self.grid.extents[axis]
        k = self.modes[axis]
        return -(k * np.pi / (b - a)) * np.sin(k * np.pi * self._hat(x, axis))

    def _face_gradient_arrays(self):
        """Analytic d(phi)/dx_i at the face centers of axis i (zero-flux faces included)."""
        grid = self.grid
        out = []
        for axis in range(grid.dim):
            (a, b), n, h = grid.extents[axis], grid.cells[axis], grid.spacing[axis]
            xf = a + np.arange(n + 1) * h  # face coordinates along this axis
            if grid.dim == 1:
                out.append(self._dcos_at(xf, 0) * 1.0)
            else:
                other = 1 - axis
                yc = grid.centers(other)
                if axis == 0:
                    arr = np.outer(self._dcos_at(xf, 0), self._cos_at(yc, 1))
                else:
                    arr = np.outer(self._cos_at(yc, 0), self._dcos_at(xf, 1))
                out.append(arr)
        return out

    def poly(self, t):
        out = 0.0
        for k, c in enumerate(self.t_coeffs):
            out += c * t**k
        return out

    def poly_dt(self, t):
        out = 0.0
        for k, c in enumerate(self.t_coeffs):
            if k >= 1:
                out += k * c * t ** (k - 1)
        return out

    def spatial_centers(self) -> np.ndarray:
        return self._spatial

    def grad_at_centers(self) -> list[np.ndarray]:
        grid = self.grid
        out = []
        for axis in range(grid.dim):
            xc = grid.centers(axis)
            if grid.dim == 1:
                out.append(self._dcos_at(xc, 0))
            else:
                other = 1 - axis
                yc = grid.centers(other)
                if axis == 0:
                    out.append(np.outer(self._dcos_at(xc, 0), self._cos_at(yc, 1)))
                else:
                    out.append(np.outer(self._cos_at(yc, 0), self._dcos_at(xc, 1)))
        return out

    def label(self) -> str:
        return f"cos{self.modes}*poly{self.t_coeffs}"


def default_test_functions(grid: Grid, max_mode: int = 3, t_degrees=(0, 1, 2)):
    """The documented family: tensor cosines up to mode 3 times t-polynomials."""
    funcs = []
    if grid.dim == 1:
        mode_list = [(k,) for k in range(0, max_mode + 1)]
    else:
        mode_list = [(k1, k2) for k1 in range(0, max_mode + 1) for k2 in range(0, max_mode + 1)
                     if k1 + k2 <= max_mode]
    for modes in mode_list:
        for deg in t_degrees:
            if modes == tuple([0] * grid.dim) and deg == 0:
                continue  # constants are killed by mass conservation
            coeffs = tuple([0.0] * deg + [1.0])
            funcs.append(CosPolyTest(grid, modes, coeffs))
    return funcs


@dataclass
class WeakResidual:
    label: str
    value: float


def weak_residual(traj: TrajectoryRecord, V: DriftSpec, m: float, eps: float,
                  test_functions, s: float | None = None, t: float | None = None):
    """Defect of the trajectory in the scheme's weak formulation over [s, t].

    E = ∫phi rho|_t - ∫phi rho|_s - ∫∫ (grad phi · V) rho
        - ∫∫ { phi_t rho - grad phi · grad (eps + rho)^m },
    with midpoint space quadrature, face-paired flux terms, and trapezoid in
    time over the recorded snapshots.
    """
    if len(traj.snapshots) < 3:
        raise SplittingError("need a densely sampled trajectory for the weak residual")
    times = traj.times()
    s = times[0] if s is None else s
    t = times[-1] if t is None else t
    sel = [(tt, f) for tt, f in traj.snapshots if s - 1e-12 <= tt <= t + 1e-12]
    grid = sel[0][1].grid
    vol = grid.cell_volume
    centers = grid.center_points()
    tt = np.array([x for x, _ in sel])

    out = []
    for phi in test_functions:
        spatial = phi.spatial_centers()
        grads_c = phi.grad_at_centers()
        face_grads = phi._face_grads
        integrand = np.empty(len(sel))
        for idx, (tau, f) in enumerate(sel):
            rho = f.values
            pt = phi.poly(tau)
            pdt = phi.poly_dt(tau)
            vel = V.velocity(centers, tau)
            vdotgrad = np.zeros(grid.shape)
            for axis in range(grid.dim):
                vdotgrad += grads_c[axis] * vel[:, axis].reshape(grid.shape)
            drift_term = pt * float((vdotgrad * rho).sum()) * vol
            time_term = pdt * float((spatial * rho).sum()) * vol
            w = (eps + rho) ** m
            from .fields import face_gradients

            rho_face = face_gradients(grid, w)
            flux = 0.0
            for axis in range(grid.dim):
                flux += float((face_grads[axis] * rho_face[axis]).sum())
            flux_term = pt * flux * vol
            integrand[idx] = drift_term + time_term - flux_term
        boundary = (phi.poly(tt[-1]) * float((spatial * sel[-1][1].values).sum()) * vol
                    - phi.poly(tt[0]) * float((spatial * sel[0][1].values).sum()) * vol)
        E = boundary - float(np.trapezoid(integrand, tt))
        out.append(WeakResidual(phi.label(), E))
    return out


# ---------------------------------------------------------------------------
# energy report across subintervals
# ---------------------------------------------------------------------------


@dataclass
class EnergyReport:
    q: float
    lyapunov: np.ndarray  # value at each subinterval boundary
    dissipation: np.ndarray  # per-subinterval integrated gradient term
    inequality_slack: np.ndarray  # positive = violation of the per-subinterval estimate
    monotone_slack: np.ndarray  # positive jumps of the Lyapunov value alone
    c_fit: float  # n * max positive inequality slack
    max_violation: float


def splitting_energy_report(traj: TrajectoryRecord, V: DriftSpec, m: float, q: float,
                            eps: float) -> EnergyReport:
    """Discrete analogue of the per-subinterval energy estimate.

    For q = 1 the Lyapunov functional is ∫ rho log rho with coefficient 2/m on
    the dissipation; for q > 1 it is ∫ (eps + rho)^q with coefficient
    2 m q (q-1)/(q+m-1)^2. For divergence-free drifts the drift contribution
    vanishes, so positive slack beyond the splitting defect is a violation.
    """
    bounds = traj.subinterval_times
    fields = []
    for tb in bounds:
        fields.append(traj.field_at(tb))
    grid = fields[0].grid
    if q == 1.0:
        coeff = 2.0 / m
        lyap = np.array([integrate_values(grid, np.where(f.values > 0,
                                                         f.values * np.log(np.maximum(f.values, _TINY)),
                                                         0.0)) for f in fields])
    else:
        coeff = 2.0 * m * q * (q - 1.0) / (q + m - 1.0) ** 2
        lyap = np.array([integrate_values(grid, (eps + f.values) ** q) for f in fields])
    if q in traj.subinterval_dissipation:
        diss = traj.subinterval_dissipation[q]
    else:
        diss = np.zeros(len(bounds) - 1)
    slack = lyap[1:] + coeff * diss - lyap[:-1]
    mono = lyap[1:] - lyap[:-1]
    max_v = float(np.maximum(slack, 0.0).max(initial=0.0))
    return EnergyReport(q, lyap, diss, slack, mono, traj.n * max_v, max_v)


# ---------------------------------------------------------------------------
# self-convergence study
# ---------------------------------------------------------------------------


@dataclass
class StudyRow:
    n: int
    epsilon: float
    l1_error: float
    w2_error: float


@dataclass
class StudyReport:
    rows: list
    l1_order: float
    reference_n: int

    def to_csv(self, path: str) -> None:
        cols = {
            "n": np.array([r.n for r in self.rows], dtype=float),
            "epsilon": np.array([r.epsilon for r in self.rows]),
            "l1_error": np.array([r.l1_error for r in self.rows]),
            "w2_error": np.array([r.w2_error for r in self.rows]),
        }
        _atomic_csv(path, cols)


def study_workers() -> int:
    count = os.environ.get("DRIFTDIFF_WORKERS", "1")
    try:
        return max(1, int(count))
    except ValueError:
        return 1


def convergence_study(rho0: DensityField, V: DriftSpec, T: float, m: float, epsilon: float,
                      n_list, steps_per_sub: int = 4, rk_steps: int = 8,
                      epsilon_sequence=None, newton_tol: float = 1e-11) -> StudyReport:
    """Self-convergence against a reference run at 4x the finest n and 4x inner steps.

    The (n, epsilon) points are independent; with DRIFTDIFF_WORKERS > 1 they run
    in a thread pool and are merged deterministically by key.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .metrics import DiscreteMeasure, coarsen_field_measure, w2_1d, wp_exact

    n_list = sorted(int(n) for n in n_list)
    n_ref = 4 * n_list[-1]
    grid = rho0.grid

    def final_field(n, steps, eps):
        sched = SplittingSchedule.make(T, n, steps, m, eps, rk_steps=rk_steps,
                                       newton_tol=newton_tol, output_times=[0.0, T])
        traj = run_splitting(rho0, V, sched, q_list=(1.0,), dense_output=False)
        return traj.field_at(T)

    jobs = [("ref", n_ref, 4 * steps_per_sub, epsilon)]
    jobs += [(("n", n), n, steps_per_sub, epsilon) for n in n_list]
    if epsilon_sequence:
        jobs += [(("eps", eps), n_list[-1], steps_per_sub, eps) for eps in epsilon_sequence]
    workers = study_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {key: pool.submit(final_field, n, st, ep) for key, n, st, ep in jobs}
            results = {key: fut.result() for key, fut in futures.items()}
    else:
        results = {key: final_field(n, st, ep) for key, n, st, ep in jobs}
    ref = results["ref"]

    def w2_dist(f1, f2):
        if grid.dim == 1:
            return w2_1d(DiscreteMeasure.from_field(f1), DiscreteMeasure.from_field(f2))
        mu = coarsen_field_measure(f1, 16 * 16)
        nu = coarsen_field_measure(f2, 16 * 16)
        return wp_exact(mu, nu, 2.0)[0]

    rows = []
    for n in n_list:
        f = results[("n", n)]
        l1 = integrate_values(grid, np.abs(f.values - ref.values))
        rows.append(StudyRow(n, epsilon, l1, w2_dist(f, ref)))
    if epsilon_sequence:
        prev = None
        for eps in epsilon_sequence:
            f = results[("eps", eps)]
            if prev is not None:
                l1 = integrate_values(grid, np.abs(f.values - prev.values))
                rows.append(StudyRow(n_list[-1], eps, l1, 0.0))
            prev = f
    ns = np.array([r.n for r in rows if r.epsilon == epsilon], dtype=float)
    errs = np.array([r.l1_error for r in rows if r.epsilon == epsilon])
    mask = errs > 0
    if mask.sum() >= 2:
        slope = np.polyfit(np.log(ns[mask]), np.log(errs[mask]), 1)[0]
    else:
        slope = float("nan")
    return StudyReport(rows, float(-slope), n_ref)

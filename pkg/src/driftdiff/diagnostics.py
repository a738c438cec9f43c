"""Entropies, speed integrals, energy budgets, and standalone inequality checks.

Empirical constants are reported, never asserted against unnamed theoretical
constants: callers check finiteness, refinement stability, and inequality
direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import (INF, DensityField, Grid, MixedNormSpec, center_gradient,
                     integrate_values, lq_norm_values, mixed_norm_samples,
                     power_gradient_energy)
from .drift import DriftClassReport, DriftSpec
from .splitting import TrajectoryRecord

_TINY = 1e-300


class DiagnosticsError(ValueError):
    pass


def entropy(fld: DensityField, floor: float = 0.0, absolute: bool = False) -> float:
    """∫ rho log rho (or ∫ rho |log rho|) with 0 log 0 = 0."""
    if floor < 0:
        raise DiagnosticsError("floor must be >= 0")
    v = np.maximum(fld.values, floor)
    ent = np.where(v > 0, v * np.log(np.maximum(v, _TINY)), 0.0)
    if absolute:
        ent = np.abs(ent)
    return integrate_values(fld.grid, ent)


def fisher_speed(fld: DensityField, m: float, eps: float) -> float:
    """∫ |grad rho^m / rho|^2 rho, via the power-gradient form when m > 1/2.

    For m > 1/2 the integrand equals (m/(m-1/2))^2 |grad rho^{m-1/2}|^2; below
    that the direct ratio quadrature with floor eps is used.
    """
    grid = fld.grid
    v = fld.values
    if v.min() < eps and eps <= 0:
        raise DiagnosticsError("fisher_speed needs eps > 0 when the field has small cells")
    if m > 0.5:
        a = m - 0.5
        return (m / a) ** 2 * power_gradient_energy(grid, v, a, floor=eps)
    floor = max(eps, _TINY)
    grads = center_gradient(grid, v)
    gsq = sum(g**2 for g in grads)
    vv = np.maximum(v, floor)
    return m * m * integrate_values(grid, vv ** (2.0 * m - 3.0) * gsq * vv)


def fisher_speed_direct(fld: DensityField, m: float, eps: float) -> float:
    """Direct-ratio discretization m^2 ∫ rho^{2m-3} |grad rho|^2 (cross-check path).

    Uses one-sided interior differences (np.gradient), deliberately different
    from the face-staggered path so the two estimates are independent.
    """
    grid = fld.grid
    floor = max(eps, _TINY)
    vv = np.maximum(fld.values, floor)
    grads = [np.gradient(fld.values, grid.spacing[axis], axis=axis)
             for axis in range(grid.dim)]
    gsq = sum(g**2 for g in grads)
    return m * m * integrate_values(grid, vv ** (2.0 * m - 3.0) * gsq)


@dataclass
class EnergyBudget:
    q: float
    sup_value: float  # sup_t of the Lyapunov functional (entropy_abs for q=1, L^q^q else)
    dissipation: float  # ∫∫ |grad (eps+rho)^{(q+m-1)/2}|^2
    fisher_speed: float  # ∫∫ |grad rho^m / rho|^2 rho
    drift_speed: float  # ∫∫ |V|^2 rho
    rhs_constant: float
    excess: float  # sup over boundaries of (functional + coeff * cumulative dissipation - start)
    satisfied: bool
    dependence: dict = field(default_factory=dict)


def _assemble_trapezoid(times: np.ndarray, samples: np.ndarray) -> float:
    return float(np.trapezoid(samples, times))


def energy_budget(traj: TrajectoryRecord, V: DriftSpec, m: float, q: float,
                  class_report: DriftClassReport, tolerance: float = 1e-8) -> EnergyBudget:
    """Budget of the combined energy/speed estimate on a computed trajectory.

    Refuses drifts whose class report says non-member: the bound is simply not
    claimed there. For divergence-free classes the drift term drops out and the
    budget reduces to Lyapunov monotonicity up to the splitting defect.
    """
    if not class_report.member:
        raise DiagnosticsError(
            f"drift is not a member of class {class_report.class_tag} "
            f"(lhs {class_report.lhs:.4g} vs rhs {class_report.rhs:.4g}); "
            "the energy bound is not claimed for it")
    d = traj.diagnostics
    times = d["time"]
    if q == 1.0:
        values = d["entropy"]
        sup_value = float(d["entropy_abs"].max())
        coeff = 2.0 / m
    else:
        key = f"lq_norm({q:g})"
        if key not in d:
            raise DiagnosticsError(f"trajectory lacks diagnostics column {key}")
        values = d[key] ** q
        sup_value = float(values.max())
        coeff = 2.0 * m * q * (q - 1.0) / (q + m - 1.0) ** 2
    diss_total = float(traj.subinterval_dissipation.get(q, np.zeros(1)).sum())
    fisher_total = _assemble_trapezoid(times, d["speed_fisher"])
    drift_total = _assemble_trapezoid(times, d["speed_drift"])

    # per-subinterval inequality excess (the C/n defect shows up here)
    bounds = traj.subinterval_times
    lyap = np.interp(bounds, times, values)
    diss = traj.subinterval_dissipation.get(q)
    if diss is None:
        diss = np.zeros(len(bounds) - 1)
    slack = lyap[1:] + coeff * diss - lyap[:-1]
    excess = float(np.maximum(slack, 0.0).max(initial=0.0))
    rhs_constant = float(lyap[0] + class_report.norm * drift_total + tolerance)
    satisfied = bool(np.isfinite([sup_value, diss_total, fisher_total, drift_total]).all()
                     and excess <= tolerance + 10.0 / max(traj.n, 1))
    return EnergyBudget(
        q=q,
        sup_value=sup_value,
        dissipation=diss_total,
        fisher_speed=fisher_total,
        drift_speed=drift_total,
        rhs_constant=rhs_constant,
        excess=excess,
        satisfied=satisfied,
        dependence={"class": class_report.class_tag, "norm": class_report.norm,
                    "initial_value": float(lyap[0]), "n": traj.n},
    )


@dataclass
class SpeedBoundReport:
    fisher_total: float
    drift_total: float
    lhs_total: float
    initial_power_term: float
    rhs_assembled: float
    within_factor_two: bool
    strict_holds: bool


def speed_bound_report(traj: TrajectoryRecord, m: float) -> SpeedBoundReport:
    """Quantitative speed estimate assembled exactly as the a priori proof does.

    FDE (0<m<1): ∫∫|grad rho^m/rho|^2 rho <= (2/(1-m)) (|Ω|^{1-m} - ∫rho0^m)
                                              + 4 ∫∫|V|^2 rho.
    PME (m>1):   ∫∫|grad rho^m/rho|^2 rho <= (2/(m-1)) ∫rho0^m + 4 ∫∫|V|^2 rho.
    """
    d = traj.diagnostics
    times = d["time"]
    fisher_total = _assemble_trapezoid(times, d["speed_fisher"])
    drift_total = _assemble_trapezoid(times, d["speed_drift"])
    rho0 = traj.snapshots[0][1]
    grid = rho0.grid
    int_rho0_m = integrate_values(grid, rho0.values**m)
    if m < 1.0:
        initial_term = (2.0 / (1.0 - m)) * max(grid.volume ** (1.0 - m) - int_rho0_m, 0.0)
    elif m > 1.0:
        initial_term = (2.0 / (m - 1.0)) * int_rho0_m
    else:
        raise DiagnosticsError("speed bound needs m != 1")
    rhs = initial_term + 4.0 * drift_total
    lhs_total = fisher_total + drift_total
    return SpeedBoundReport(
        fisher_total=fisher_total,
        drift_total=drift_total,
        lhs_total=lhs_total,
        initial_power_term=initial_term,
        rhs_assembled=rhs,
        within_factor_two=bool(np.isfinite(lhs_total) and lhs_total <= 2.0 * rhs),
        strict_holds=bool(fisher_total <= rhs),
    )


# ---------------------------------------------------------------------------
# functional inequalities on series data
# ---------------------------------------------------------------------------


@dataclass
class InequalityReport:
    lhs: float
    rhs_terms: tuple
    empirical_constant: float
    params: dict


def _series_arrays(series):
    times = np.array([t for t, _ in series], dtype=np.float64)
    if not np.all(np.diff(times) > 0):
        raise DiagnosticsError("series times must increase strictly")
    grid = series[0][1].grid
    return times, grid


def _grad_magnitude(grid: Grid, values: np.ndarray) -> np.ndarray:
    grads = center_gradient(grid, values)
    return np.sqrt(sum(g**2 for g in grads))


def verify_parabolic_sobolev(series, p: float, q: float) -> InequalityReport:
    """Empirical constant of the parabolic Sobolev embedding on sampled data.

    LHS = ∫∫ |v|^{p(d+q)/d}; RHS = (sup_t ∫|v|^q)^{p/d} ∫∫|grad v|^p
          + |Ω|^{1 - p(d+q)/d} ∫ ||v||_{L^1}^{p(d+q)/d} dt.
    """
    times, grid = _series_arrays(series)
    d = grid.dim
    if not (1 <= p < d):
        raise DiagnosticsError(f"need 1 <= p < d (= {d}), got p = {p}")
    if not (0 < q < d * p / (d - p)):
        raise DiagnosticsError(f"need 0 < q < dp/(d-p), got q = {q}")
    expo = p * (d + q) / d
    lhs_t = np.empty(len(times))
    gradp_t = np.empty(len(times))
    supq_t = np.empty(len(times))
    l1_t = np.empty(len(times))
    for i, (_, f) in enumerate(series):
        v = np.abs(f.values)
        lhs_t[i] = integrate_values(grid, v**expo)
        gm = _grad_magnitude(grid, f.values)
        gradp_t[i] = integrate_values(grid, gm**p)
        supq_t[i] = integrate_values(grid, v**q)
        l1_t[i] = integrate_values(grid, v)
    lhs = _assemble_trapezoid(times, lhs_t)
    rhs1 = float(supq_t.max() ** (p / d)) * _assemble_trapezoid(times, gradp_t)
    rhs2 = grid.volume ** (1.0 - expo) * _assemble_trapezoid(times, l1_t**expo)
    rhs = rhs1 + rhs2
    c = lhs / rhs if rhs > 0 else float("inf")
    return InequalityReport(lhs, (rhs1, rhs2), c, {"p": p, "q": q, "d": d, "exponent": expo})


def interpolation_exponent_relation(d: int, p: float, m: float, q: float,
                                    r1: float, r2: float) -> float:
    """Residual of d/r1 + (2 + (d/p)(m+q-1-p))/r2 = d/p."""
    inv1 = 0.0 if r1 == INF else 1.0 / r1
    inv2 = 0.0 if r2 == INF else 1.0 / r2
    return d * inv1 + (2.0 + (d / p) * (m + q - 1.0 - p)) * inv2 - d / p


def verify_interpolation(series, p: float, q: float, m: float, r1: float, r2: float) -> InequalityReport:
    """Empirical constant of the mixed-norm interpolation bound on sampled data.

    LHS = ||rho||_{L^{r1,r2}}; RHS = (sup_t ∫rho^p)^gamma ||grad rho^{(q+m-1)/2}||_{L^2}^{2/r2}
          + |Ω|^{-(1-1/r1)} (∫ ||rho||_{L^1}^{r1} dt)^{1/r2},
    on the admissible exponent line (rejected otherwise with the relation residual).
    """
    times, grid = _series_arrays(series)
    d = grid.dim
    resid = interpolation_exponent_relation(d, p, m, q, r1, r2)
    if abs(resid) > 1e-9:
        raise DiagnosticsError(
            f"(r1, r2) = ({r1}, {r2}) violate the exponent relation (residual {resid:.3e})")
    spatial_r1 = np.empty(len(times))
    grad2_t = np.empty(len(times))
    supp_t = np.empty(len(times))
    l1_t = np.empty(len(times))
    a = (q + m - 1.0) / 2.0
    for i, (_, f) in enumerate(series):
        spatial_r1[i] = lq_norm_values(grid, f.values, r1)
        grad2_t[i] = power_gradient_energy(grid, f.values, a)
        supp_t[i] = integrate_values(grid, f.values**p)
        l1_t[i] = integrate_values(grid, np.abs(f.values))
    lhs = mixed_norm_samples(times, spatial_r1, r2)
    gamma_denom = 2.0 * p + d * (m + q - 1.0 - p)
    inv_r1 = 0.0 if r1 == INF else 1.0 / r1
    gamma = (d * p * (q + m - 1.0) / gamma_denom) * (inv_r1 - (d - 2.0) / (d * (q + m - 1.0)))
    grad_l2 = np.sqrt(_assemble_trapezoid(times, grad2_t))
    pow_r2 = 0.0 if r2 == INF else 2.0 / r2
    rhs1 = float(supp_t.max() ** gamma) * grad_l2**pow_r2
    if r2 == INF:
        # endpoint degeneracy: the temporal power collapses to a sup in time
        rhs2 = grid.volume ** (-(1.0 - inv_r1)) * float(l1_t.max())
    else:
        rhs2 = grid.volume ** (-(1.0 - inv_r1)) * _assemble_trapezoid(times, l1_t**r1) ** (1.0 / r2)
    rhs = rhs1 + rhs2
    c = lhs / rhs if rhs > 0 else float("inf")
    return InequalityReport(lhs, (rhs1, rhs2), c,
                            {"p": p, "q": q, "m": m, "r1": r1, "r2": r2, "gamma": gamma, "d": d})


@dataclass
class HolderBoundReport:
    lhs: float
    rhs: float
    ratio: float
    holds: bool


def vrho_l1_bound(traj: TrajectoryRecord, V: DriftSpec, spec: MixedNormSpec) -> HolderBoundReport:
    """Mixed-norm Hölder control of ||V rho||_{L^1} (exact at the discrete level).

    ∫∫ |V| rho <= ||V||_{L^{q1,q2}} ||rho||_{L^{r1,r2}} with (r1, r2) the
    conjugate exponents; both sides use the same quadrature weights.
    """
    conj = spec.conjugate
    times = traj.times()
    grid = traj.snapshots[0][1].grid
    centers = grid.center_points()
    lhs_t = np.empty(len(times))
    v_q1 = np.empty(len(times))
    rho_r1 = np.empty(len(times))
    for i, (t, f) in enumerate(traj.snapshots):
        speed = np.sqrt((V.velocity(centers, t) ** 2).sum(axis=1)).reshape(grid.shape)
        lhs_t[i] = integrate_values(grid, speed * f.values)
        v_q1[i] = lq_norm_values(grid, speed, spec.q1)
        rho_r1[i] = lq_norm_values(grid, f.values, conj.q1)
    lhs = _assemble_trapezoid(times, lhs_t)
    rhs = mixed_norm_samples(times, v_q1, spec.q2) * mixed_norm_samples(times, rho_r1, conj.q2)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else float("inf"))
    holds = lhs <= rhs * (1.0 + 1e-12) + 1e-15
    return HolderBoundReport(lhs, rhs, ratio, holds)


def weak_solution_residual(traj: TrajectoryRecord, V: DriftSpec, m: float,
                           test_functions) -> list:
    """Residual of the drift-diffusion weak form including the initial-data term.

    For phi vanishing at the final time:
    E = ∫∫ { rho phi_t - grad rho^m · grad phi + rho V · grad phi } + ∫ rho0 phi(·,0).
    """
    from .fields import face_gradients
    from .splitting import WeakResidual

    times = traj.times()
    T = times[-1]
    grid = traj.snapshots[0][1].grid
    vol = grid.cell_volume
    centers = grid.center_points()
    out = []
    for phi in test_functions:
        if abs(phi.poly(T)) > 1e-12:
            raise DiagnosticsError(f"test function {phi.label()} must vanish at t = T")
        spatial = phi.spatial_centers()
        grads_c = phi.grad_at_centers()
        face_grads = phi._face_grads
        integrand = np.empty(len(times))
        for idx, (tau, f) in enumerate(traj.snapshots):
            rho = f.values
            pt = phi.poly(tau)
            pdt = phi.poly_dt(tau)
            vel = V.velocity(centers, tau)
            vdotgrad = np.zeros(grid.shape)
            for axis in range(grid.dim):
                vdotgrad += grads_c[axis] * vel[:, axis].reshape(grid.shape)
            drift_term = pt * float((vdotgrad * rho).sum()) * vol
            time_term = pdt * float((spatial * rho).sum()) * vol
            rho_face = face_gradients(grid, rho**m)
            flux = 0.0
            for axis in range(grid.dim):
                flux += float((face_grads[axis] * rho_face[axis]).sum())
            flux_term = pt * flux * vol
            integrand[idx] = time_term - flux_term + drift_term
        initial = phi.poly(times[0]) * float((spatial * traj.snapshots[0][1].values).sum()) * vol
        E = float(np.trapezoid(integrand, times)) + initial
        out.append(WeakResidual(phi.label(), E))
    return out

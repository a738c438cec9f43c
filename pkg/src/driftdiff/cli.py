"""Command line entry point: run, verify, converge, distances, classify-drift, boussinesq.

Exit codes: 0 on success, 1 when a verification battery finds a violation,
2 for usage or scenario-validation errors. All outputs are files (CSV/JSON)
written atomically.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from .fields import INF, MixedNormSpec
from .drift import CLASS_TAGS, DriftError, classify, drift_preset
from .scenarios import Scenario, ScenarioError, load_bundled, load_scenario
from .splitting import (SplittingError, TrajectoryRecord, convergence_study, run_splitting,
                        splitting_energy_report, _atomic_csv, _atomic_json)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

BATTERIES = ("dissipation", "energy-divfree", "energy-sclass", "speed", "weak", "vrho", "functional")


def _load_any_scenario(spec: str) -> Scenario:
    if os.path.exists(spec):
        return load_scenario(spec)
    return load_bundled(spec)


def _run_scenario(scenario: Scenario, dense: bool = False) -> TrajectoryRecord:
    rho0 = scenario.build_initial()
    V = scenario.build_drift()
    schedule = scenario.build_schedule()
    return run_splitting(rho0, V, schedule, q_list=scenario.q_list, dense_output=dense)


def cmd_run(args) -> int:
    try:
        scenario = _load_any_scenario(args.scenario)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        traj = _run_scenario(scenario, dense=args.dense)
    except SplittingError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    outdir = args.output or scenario.output_dir
    traj.save(outdir)
    print(f"trajectory written to {outdir} ({len(traj.snapshots)} snapshots)")
    return EXIT_OK


def _battery_checks(name: str, traj: TrajectoryRecord, scenario_extras: dict) -> list[dict]:
    from . import diagnostics as diag
    from .splitting import default_test_functions

    V = _drift_from_provenance(traj)
    m, eps = traj.m, traj.epsilon
    checks = []
    if name == "dissipation":
        rep = splitting_energy_report(traj, V, m, 1.0, eps)
        checks.append({"check": "entropy-monotone", "max_violation": rep.max_violation,
                       "passed": rep.max_violation <= 1e-8 + 10.0 / traj.n})
        for q in traj.q_list:
            if q == 1.0:
                continue
            rep = splitting_energy_report(traj, V, m, q, eps)
            checks.append({"check": f"lq-energy(q={q:g})", "max_violation": rep.max_violation,
                           "passed": rep.max_violation <= 1e-8 + 10.0 / traj.n})
    elif name in ("energy-divfree", "energy-sclass"):
        divfree = bool(traj.provenance.get("drift", {}).get("declared_divergence_free"))
        if name == "energy-divfree" and not divfree:
            raise DriftError(
                "battery energy-divfree needs a divergence-free drift; "
                f"drift {traj.provenance.get('drift', {}).get('name')!r} is not declared "
                "divergence-free, so the V-independent energy bound is not claimed")
        for q in traj.q_list:
            rep = splitting_energy_report(traj, V, m, q, eps)
            tol = 1e-8 + (10.0 / traj.n if name == "energy-sclass" else 1e-6)
            checks.append({"check": f"energy(q={q:g})", "max_violation": rep.max_violation,
                           "c_fit": rep.c_fit, "passed": rep.max_violation <= tol})
    elif name == "speed":
        rep = diag.speed_bound_report(traj, m)
        checks.append({"check": "speed-bound", "lhs": rep.lhs_total, "rhs": rep.rhs_assembled,
                       "passed": rep.within_factor_two})
    elif name == "weak":
        grid = traj.snapshots[0][1].grid
        funcs = [f for f in default_test_functions(grid, max_mode=2, t_degrees=(0,))]
        for f in funcs:
            f.t_coeffs = _vanishing_poly(traj.T)
        residuals = diag.weak_solution_residual(traj, V, m, funcs)
        worst = max(abs(r.value) for r in residuals)
        checks.append({"check": "weak-residual", "max_residual": worst, "passed": worst < 0.05})
    elif name == "vrho":
        spec = MixedNormSpec(scenario_extras.get("q1", INF), scenario_extras.get("q2", INF))
        rep = diag.vrho_l1_bound(traj, V, spec)
        checks.append({"check": "vrho-l1", "lhs": rep.lhs, "rhs": rep.rhs, "passed": rep.holds})
    elif name == "functional":
        series = traj.snapshots
        grid = series[0][1].grid
        if grid.dim >= 2:
            rep = diag.verify_parabolic_sobolev(series, p=1.0, q=1.0)
            checks.append({"check": "parabolic-sobolev", "constant": rep.empirical_constant,
                           "passed": np.isfinite(rep.empirical_constant)})
        r2 = 2.0 * m if grid.dim == 2 else None
        if r2 is not None:
            rep = diag.verify_interpolation(series, p=1.0, q=1.0, m=m, r1=2.0, r2=r2)
            checks.append({"check": "interpolation", "constant": rep.empirical_constant,
                           "passed": np.isfinite(rep.empirical_constant)})
    else:
        raise ScenarioError(f"unknown battery {name!r} (choose from {BATTERIES})")
    return checks


def _vanishing_poly(T: float):
    # (1 - t/T)^2 = 1 - 2 t / T + t^2 / T^2 vanishes (to first order) at t = T
    return (1.0, -2.0 / T, 1.0 / T**2)


def _drift_from_provenance(traj: TrajectoryRecord):
    from .fields import Grid

    desc = traj.provenance.get("drift", {})
    grid = traj.snapshots[0][1].grid
    name = desc.get("name") or desc.get("kind")
    params = dict(desc.get("params", {}))
    if isinstance(params.get("inner"), dict):
        # time-modulated wrapper: the preset takes the inner's knobs plus coeffs
        params.update(params.pop("inner").get("params", {}))
    kw = {}
    for key in ("omega", "amplitude", "rate", "alpha", "mode"):
        if key in params:
            kw[key] = params[key]
    if "coeffs" in params:
        kw["coeffs"] = tuple(params["coeffs"])
    if "modes" in params:
        kw["modes"] = tuple(int(k) for k in params["modes"])
    if "center" in params:
        kw["center"] = tuple(params["center"])
    if "v" in params:
        kw["v"] = tuple(params["v"])
    mapping = {"zero": "zero", "constant": "constant", "shear": "shear",
               "rotation": "rotation", "expansion": "expansion", "vortex": "vortex",
               "sine1d": "sine1d", "modulated-vortex": "modulated-vortex"}
    preset = mapping.get(name)
    if preset is None:
        raise ScenarioError(f"cannot rebuild drift {name!r} from trajectory provenance")
    return drift_preset(preset, grid, **kw)


def cmd_verify(args) -> int:
    if not os.path.isdir(args.directory):
        print(f"no trajectory directory {args.directory}", file=sys.stderr)
        return EXIT_USAGE
    traj = TrajectoryRecord.load(args.directory)
    try:
        checks = _battery_checks(args.battery, traj, {})
    except (ScenarioError, DriftError) as exc:
        print(f"battery refused: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = {"battery": args.battery, "directory": args.directory, "checks": checks,
              "passed": all(c["passed"] for c in checks)}
    out = args.output or os.path.join(args.directory, f"verify-{args.battery}.json")
    _atomic_json(out, report)
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        print(f"[{status}] {c['check']}")
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def cmd_converge(args) -> int:
    try:
        scenario = _load_any_scenario(args.scenario)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    n_list = [int(x) for x in args.n_list.split(",")]
    rho0 = scenario.build_initial()
    V = scenario.build_drift()
    eps_seq = None
    if args.epsilon_sequence:
        eps_seq = [float(x) for x in args.epsilon_sequence.split(",")]
    report = convergence_study(rho0, V, scenario.T, scenario.m, scenario.epsilon, n_list,
                               steps_per_sub=scenario.steps_per_sub,
                               rk_steps=scenario.rk_steps, epsilon_sequence=eps_seq,
                               newton_tol=scenario.newton_tol)
    out = args.output or os.path.join(scenario.output_dir, "study.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    report.to_csv(out)
    print(f"study written to {out}; fitted L1 order {report.l1_order:.3f} "
          f"(reference n = {report.reference_n})")
    return EXIT_OK


def cmd_distances(args) -> int:
    from .metrics import (DiscreteMeasure, coarsen_field_measure, delta_distance,
                          holder_fit_from_pairs, w2_1d, wp_exact)

    if not os.path.isdir(args.directory):
        print(f"no trajectory directory {args.directory}", file=sys.stderr)
        return EXIT_USAGE
    traj = TrajectoryRecord.load(args.directory)
    snaps = traj.snapshots
    grid = snaps[0][1].grid
    extents = grid.extents
    measures = []
    for t, f in snaps:
        if grid.dim == 1:
            measures.append(DiscreteMeasure.from_field(f))
        else:
            measures.append(coarsen_field_measure(f, args.max_atoms))
    rows = {"s": [], "t": [], "W2": [], "delta": []}
    pairs_w2 = []
    pairs_delta = []
    for i in range(len(snaps)):
        for j in range(i + 1, len(snaps)):
            s, t = snaps[i][0], snaps[j][0]
            if grid.dim == 1:
                w2 = w2_1d(measures[i], measures[j])
            else:
                w2 = wp_exact(measures[i], measures[j], 2.0)[0]
            dd, _ = delta_distance(measures[i], measures[j], K=args.delta_terms, extents=extents)
            rows["s"].append(s)
            rows["t"].append(t)
            rows["W2"].append(w2)
            rows["delta"].append(dd)
            pairs_w2.append((s, t, w2))
            pairs_delta.append((s, t, dd))
    out_csv = args.output or os.path.join(args.directory, "distances.csv")
    _atomic_csv(out_csv, {k: np.array(v, dtype=float) for k, v in rows.items()})
    from .metrics import MetricsError

    fits = {}
    for label, pairs in (("W2", pairs_w2), ("delta", pairs_delta)):
        try:
            fit = holder_fit_from_pairs(pairs)
            fits[label] = {"stationary": fit.stationary, "exponent": fit.exponent,
                           "constant": fit.constant, "r_squared": fit.r_squared,
                           "n_gaps": fit.n_gaps}
        except MetricsError as exc:
            fits[label] = {"error": str(exc)}
    _atomic_json(os.path.splitext(out_csv)[0] + "-fit.json", fits)
    print(f"distances written to {out_csv}")
    return EXIT_OK


def cmd_classify(args) -> int:
    from .fields import Grid

    extents = tuple(tuple(float(x) for x in part.split(",")) for part in args.extents.split(";"))
    grid = Grid(dim=len(extents), extents=extents, cells=(32,) * len(extents))
    kw = {}
    if args.params:
        for item in args.params.split(","):
            key, val = item.split("=")
            kw[key.strip()] = float(val)
    try:
        V = drift_preset(args.preset, grid, **kw)
        spec = MixedNormSpec(float(args.q1), float(args.q2))
        report = classify(V, args.m, args.q, spec, args.class_tag, grid, T=args.T)
    except DriftError as exc:
        print(f"classification error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = report.to_json()
    if args.output:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(args.output) or ".")
        with os.fdopen(fd, "w") as fh:
            fh.write(text + "\n")
        os.replace(tmp, args.output)
    print(text)
    return EXIT_OK


def cmd_boussinesq(args) -> int:
    from .boussinesq import (BoussinesqParams, boussinesq_energy_check, layered_state,
                             run_boussinesq, taylor_green_state)
    from .fields import Grid, save_snapshot

    cells = int(args.cells)
    if args.mode == "taylor-green":
        grid = Grid(2, ((0.0, 1.0), (0.0, 1.0)), (cells, cells), boundary="periodic")
        state = taylor_green_state(grid, amplitude=args.amplitude)
    else:
        grid = Grid(2, ((0.0, 1.0), (0.0, 1.0)), (cells, cells))
        state = layered_state(grid)
    params = BoussinesqParams(m=args.m, epsilon=args.epsilon, dt=args.dt)
    states, infos = run_boussinesq(state, params, args.T,
                                   sample_every=max(1, int(round(args.T / args.dt)) // 16))
    report = boussinesq_energy_check(states, args.m)
    outdir = args.output or f"runs/boussinesq-{args.mode}"
    os.makedirs(os.path.join(outdir, "snapshots"), exist_ok=True)
    rows = {"time": [], "theta_mass": [], "kinetic_energy": []}
    from driftdiff.fields import DensityField

    for k, st in enumerate(states):
        save_snapshot(st.theta, os.path.join(outdir, "snapshots", f"theta_{k:04d}"))
        # paired velocity snapshots, interpolated to cell centers
        if st.grid.boundary == "periodic":
            uc = 0.5 * (st.u + np.roll(st.u, -1, 0))
            vc = 0.5 * (st.v + np.roll(st.v, -1, 1))
        else:
            uc = 0.5 * (st.u[:-1, :] + st.u[1:, :])
            vc = 0.5 * (st.v[:, :-1] + st.v[:, 1:])
        speed = DensityField(st.grid, np.hypot(uc, vc), st.time)
        save_snapshot(speed, os.path.join(outdir, "snapshots", f"speed_{k:04d}"))
        rows["time"].append(st.time)
        rows["theta_mass"].append(st.theta.mass())
        rows["kinetic_energy"].append(st.kinetic_energy())
    _atomic_csv(os.path.join(outdir, "diagnostics.csv"),
                {k: np.array(v) for k, v in rows.items()})
    _atomic_json(os.path.join(outdir, "energy-report.json"), {
        "sup_combined": report.sup_combined,
        "dissipation_theta": report.dissipation_theta,
        "dissipation_u": report.dissipation_u,
        "lhs_total": report.lhs_total,
        "bound": report.bound,
        "satisfied": report.satisfied,
        "theta_mass_drift": report.theta_mass_drift,
        "entropy_residual": report.entropy_residual,
        "max_divergence": max((i["div_after"] for i in infos), default=0.0),
    })
    print(f"boussinesq run written to {outdir}; energy bound "
          f"{'holds' if report.satisfied else 'VIOLATED'}")
    return EXIT_OK if report.satisfied else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="driftdiff",
                                 description="fast-diffusion / porous-medium splitting laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and persist the trajectory")
    p.add_argument("--scenario", required=True, help="scenario file path or bundled name")
    p.add_argument("--output", default=None)
    p.add_argument("--dense", action="store_true", help="export every inner time node")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("verify", help="run a named verification battery on a trajectory")
    p.add_argument("--battery", required=True, choices=BATTERIES)
    p.add_argument("--directory", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("converge", help="self-convergence study over a list of n")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n-list", required=True, help="comma-separated substep counts")
    p.add_argument("--epsilon-sequence", default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("distances", help="pairwise W2/delta table + Hölder fits")
    p.add_argument("--directory", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--max-atoms", type=int, default=256)
    p.add_argument("--delta-terms", type=int, default=16)
    p.set_defaults(fn=cmd_distances)

    p = sub.add_parser("classify-drift", help="drift class membership report (JSON)")
    p.add_argument("--preset", required=True)
    p.add_argument("--params", default="", help="comma list key=val")
    p.add_argument("--extents", default="0,1;0,1")
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--q1", type=float, default=INF)
    p.add_argument("--q2", type=float, default=INF)
    p.add_argument("--class-tag", required=True, choices=CLASS_TAGS)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("boussinesq", help="coupled temperature/velocity run")
    p.add_argument("--mode", choices=("layered", "taylor-green"), default="layered")
    p.add_argument("--cells", type=int, default=64)
    p.add_argument("--m", type=float, default=0.75)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--dt", type=float, default=2e-3)
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_boussinesq)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (ScenarioError, DriftError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

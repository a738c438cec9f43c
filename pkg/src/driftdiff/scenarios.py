"""Scenario files: the reproducibility unit for every CLI entry point.

A scenario is an INI-style key/value file with sections (parsed with
configparser). It names the grid, model exponents, initial-data preset, drift
preset, schedule, and verification battery; everything is validated before any
compute starts, and all randomness used downstream derives from the scenario
seed.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .fields import DensityField, FieldError, Grid
from .drift import DriftError, DriftSpec, drift_preset
from .splitting import SplittingSchedule

INITIAL_PRESETS = ("uniform", "two-block", "truncated-gaussian", "bump", "layered")


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    grid: Grid
    m: float
    epsilon: float
    q_list: tuple[float, ...]
    initial_preset: str
    initial_params: dict
    drift_preset_name: str
    drift_params: dict
    T: float
    n: int
    steps_per_sub: int
    rk_steps: int
    output_times: list | None
    battery: str
    seed: int
    output_dir: str
    newton_tol: float = 1e-11
    extras: dict = field(default_factory=dict)

    def build_drift(self) -> DriftSpec:
        return drift_preset(self.drift_preset_name, self.grid, **self.drift_params)

    def build_initial(self) -> DensityField:
        return initial_preset(self.initial_preset, self.grid, **self.initial_params)

    def build_schedule(self) -> SplittingSchedule:
        return SplittingSchedule.make(self.T, self.n, self.steps_per_sub, self.m,
                                      self.epsilon, rk_steps=self.rk_steps,
                                      newton_tol=self.newton_tol,
                                      output_times=self.output_times)


def initial_preset(name: str, grid: Grid, **kw) -> DensityField:
    """Probability-normalized initial data presets."""
    if name == "uniform":
        vals = np.ones(grid.shape)
    elif name == "two-block":
        lo = kw.get("lo", 0.05)
        hi = kw.get("hi", 1.0)
        vals = np.full(grid.shape, lo)
        if grid.dim == 1:
            x = grid.centers(0)
            (a, b) = grid.extents[0]
            xh = (x - a) / (b - a)
            vals[(xh > kw.get("b1_lo", 0.1)) & (xh < kw.get("b1_hi", 0.35))] = hi
            vals[(xh > kw.get("b2_lo", 0.6)) & (xh < kw.get("b2_hi", 0.8))] = 0.6 * hi
        else:
            X, Y = grid.meshgrid()
            (ax, bx), (ay, by) = grid.extents
            xh = (X - ax) / (bx - ax)
            yh = (Y - ay) / (by - ay)
            vals[(xh > 0.1) & (xh < 0.4) & (yh > 0.2) & (yh < 0.6)] = hi
            vals[(xh > 0.55) & (xh < 0.85) & (yh > 0.45) & (yh < 0.8)] = 0.6 * hi
    elif name == "truncated-gaussian":
        sigma = kw.get("sigma", 0.15)
        center = kw.get("center", tuple(0.5 * (a + b) for a, b in grid.extents))
        pts = grid.center_points()
        r2 = ((pts - np.asarray(center)) ** 2).sum(axis=1)
        vals = np.exp(-r2 / (2.0 * sigma**2)).reshape(grid.shape) + kw.get("floor", 0.0)
    elif name == "bump":
        radius = kw.get("radius", 0.35 * min(b - a for a, b in grid.extents))
        center = kw.get("center", tuple(0.5 * (a + b) for a, b in grid.extents))
        floor = kw.get("floor", 0.0)
        amplitude = kw.get("amplitude", 1.0)
        pts = grid.center_points()
        r2 = ((pts - np.asarray(center)) ** 2).sum(axis=1) / radius**2
        vals = (floor + amplitude * np.maximum(1.0 - r2, 0.0) ** 3).reshape(grid.shape)
    elif name == "layered":
        if grid.dim != 2:
            raise ScenarioError("layered preset needs a 2D grid")
        _, Y = grid.meshgrid()
        (_, _), (ay, by) = grid.extents
        y0 = ay + kw.get("interface", 0.6) * (by - ay)
        width = kw.get("width", 0.05) * (by - ay)
        vals = 0.5 * (1.0 + np.tanh((Y - y0) / width)) + kw.get("floor", 0.0)
    else:
        raise ScenarioError(f"unknown initial preset {name!r} (choose from {INITIAL_PRESETS})")
    fld = DensityField(grid, vals, 0.0)
    if kw.get("normalize", True):
        fld = fld.normalized()
    return fld


def _parse_pair_list(text: str):
    return [tuple(float(x) for x in part.split(",")) for part in text.split(";")]


def _parse_floats(text: str):
    return [float(x) for x in text.split(",") if x.strip()]


def _section_params(cp: configparser.ConfigParser, section: str, skip=()):
    out = {}
    if not cp.has_section(section):
        return out
    for key, val in cp.items(section):
        if key in skip:
            continue
        parsed: object
        try:
            parsed = float(val)
            if np.isfinite(parsed) and parsed == int(parsed) and "." not in val and "e" not in val.lower():
                parsed = int(val)
        except (ValueError, OverflowError):
            low = val.strip().lower()
            if low in ("true", "false"):
                parsed = low == "true"
            elif "," in val:
                try:
                    parsed = tuple(float(x) for x in val.split(","))
                except ValueError:
                    parsed = val
            else:
                parsed = val
        out[key] = parsed
    return out


def parse_scenario(text: str, name_hint: str = "scenario") -> Scenario:
    cp = configparser.ConfigParser()
    cp.read_file(io.StringIO(text))
    problems = []

    def need(section, key, cast=float):
        if not cp.has_option(section, key):
            problems.append(f"[{section}] {key} missing")
            return None
        try:
            return cast(cp.get(section, key))
        except ValueError:
            problems.append(f"[{section}] {key} malformed: {cp.get(section, key)!r}")
            return None

    name = cp.get("scenario", "name", fallback=name_hint)
    dim = need("grid", "dim", int)
    extents_txt = cp.get("grid", "extents", fallback=None)
    cells_txt = cp.get("grid", "cells", fallback=None)
    boundary = cp.get("grid", "boundary", fallback="noflux")
    m = need("model", "m")
    epsilon = need("model", "epsilon")
    q_list = tuple(_parse_floats(cp.get("model", "q_list", fallback="1,2")))
    T = need("schedule", "t")
    n = need("schedule", "n", int)
    steps = need("schedule", "steps_per_sub", int)
    rk = int(cp.get("schedule", "rk_steps", fallback="8"))
    out_times_txt = cp.get("schedule", "output_times", fallback="subintervals")
    initial = cp.get("initial", "preset", fallback=None)
    drift = cp.get("drift", "preset", fallback=None)
    if initial is None:
        problems.append("[initial] preset missing")
    if drift is None:
        problems.append("[drift] preset missing")
    if extents_txt is None:
        problems.append("[grid] extents missing")
    if cells_txt is None:
        problems.append("[grid] cells missing")
    if problems:
        raise ScenarioError("invalid scenario: " + "; ".join(problems))

    try:
        grid = Grid(dim=dim, extents=tuple(_parse_pair_list(extents_txt)),
                    cells=tuple(int(x) for x in _parse_floats(cells_txt)), boundary=boundary)
    except FieldError as exc:
        raise ScenarioError(f"invalid scenario: [grid] {exc}") from exc

    if out_times_txt.strip() == "subintervals":
        output_times = None
    else:
        output_times = _parse_floats(out_times_txt)

    scenario = Scenario(
        name=name,
        grid=grid,
        m=m,
        epsilon=epsilon,
        q_list=q_list,
        initial_preset=initial,
        initial_params=_section_params(cp, "initial", skip=("preset",)),
        drift_preset_name=drift,
        drift_params=_section_params(cp, "drift", skip=("preset",)),
        T=T,
        n=n,
        steps_per_sub=steps,
        rk_steps=rk,
        output_times=output_times,
        battery=cp.get("verify", "battery", fallback=""),
        seed=int(cp.get("scenario", "seed", fallback="1234")),
        output_dir=cp.get("output", "directory", fallback=f"runs/{name}"),
        newton_tol=float(cp.get("schedule", "newton_tol", fallback="1e-11")),
        extras=_section_params(cp, "extras"),
    )
    # referential integrity before any compute
    if scenario.initial_preset not in INITIAL_PRESETS:
        raise ScenarioError(f"invalid scenario: unknown initial preset {scenario.initial_preset!r}")
    try:
        scenario.build_drift()
    except DriftError as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    try:
        scenario.build_schedule()
    except FieldError as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from exc
    if scenario.epsilon <= 0 and 0 < scenario.m < 1:
        raise ScenarioError("invalid scenario: epsilon must be positive for 0 < m < 1")
    return scenario


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read(), name_hint=path)


def load_bundled(name: str) -> Scenario:
    """Scenario shipped inside the package (see driftdiff/scenarios/)."""
    ref = resources.files("driftdiff").joinpath(f"scenarios/{name}.cfg")
    if not ref.is_file():
        available = sorted(p.name[:-4] for p in resources.files("driftdiff").joinpath("scenarios").iterdir()
                           if p.name.endswith(".cfg"))
        raise ScenarioError(f"no bundled scenario {name!r}; available: {available}")
    return parse_scenario(ref.read_text(), name_hint=name)

"""Cell-centered grids, nonnegative density fields, and discrete calculus.

Everything downstream (diffusion solves, transport, diagnostics) works on the
uniform cell-centered finite-volume layout defined here: node k of axis i sits
at a_i + (k + 1/2) h_i, integrals are midpoint sums (exact for cellwise
constants), and gradients live on faces so that flux-form operators conserve
mass by telescoping.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

INF = float("inf")

NO_FLUX = "noflux"
PERIODIC = "periodic"

# tolerance for "values >= 0": anything below -NEG_TOL * scale is rejected,
# round-off sized undershoots are clipped silently
NEG_TOL = 1e-12


class FieldError(ValueError):
    """Invalid grid/field construction or incompatible operands."""


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on a 1D interval or 2D rectangle."""

    dim: int
    extents: tuple[tuple[float, float], ...]
    cells: tuple[int, ...]
    boundary: str = NO_FLUX

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise FieldError(f"dim must be 1 or 2, got {self.dim}")
        object.__setattr__(self, "extents", tuple((float(a), float(b)) for a, b in self.extents))
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        if len(self.extents) != self.dim or len(self.cells) != self.dim:
            raise FieldError("extents/cells length must match dim")
        for (a, b), n in zip(self.extents, self.cells):
            if not (np.isfinite(a) and np.isfinite(b) and b > a):
                raise FieldError(f"invalid extent [{a}, {b}]")
            if n < 4:
                raise FieldError(f"need at least 4 cells per axis, got {n}")
        if self.boundary not in (NO_FLUX, PERIODIC):
            raise FieldError(f"unknown boundary tag {self.boundary!r}")

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / n for (a, b), n in zip(self.extents, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.extents]))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in self.extents)

    def diameter(self) -> float:
        return float(np.sqrt(sum((b - a) ** 2 for a, b in self.extents)))

    def centers(self, axis: int) -> np.ndarray:
        (a, _), n, h = self.extents[axis], self.cells[axis], self.spacing[axis]
        return a + (np.arange(n) + 0.5) * h

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinate arrays, ij indexing (axis 0 first)."""
        return tuple(np.meshgrid(*(self.centers(i) for i in range(self.dim)), indexing="ij"))

    def center_points(self) -> np.ndarray:
        """All cell centers as an (N, dim) array in row-major cell order."""
        if self.dim == 1:
            return self.centers(0)[:, None]
        X, Y = self.meshgrid()
        return np.column_stack([X.ravel(), Y.ravel()])

    def key(self) -> tuple:
        return (self.dim, self.extents, self.cells, self.boundary)


@dataclass(frozen=True)
class MixedNormSpec:
    """Exponent pair for the space-time mixed norm (temporal norm of spatial norms).

    Exponent 1 is admitted (the L^{1,q2} norms show up in the gradient-class
    conditions); infinity is the discrete supremum.
    """

    q1: float
    q2: float

    def __post_init__(self):
        for name, q in (("q1", self.q1), ("q2", self.q2)):
            if not (q >= 1):
                raise FieldError(f"{name} must be >= 1 (inf allowed), got {q}")

    @property
    def conjugate(self) -> "MixedNormSpec":
        def conj(q):
            return INF if q == 1 else (1.0 if q == INF else q / (q - 1.0))

        return MixedNormSpec(conj(self.q1), conj(self.q2))


@dataclass
class DensityField:
    """Nonnegative grid function with mass bookkeeping."""

    grid: Grid
    values: np.ndarray
    time_tag: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise FieldError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise FieldError("values contain non-finite entries")
        lo = v.min()
        if lo < 0.0:
            scale = max(1.0, float(np.abs(v).max()))
            if lo < -NEG_TOL * scale:
                raise FieldError(f"negative density {lo:.3e} beyond tolerance")
            v = np.maximum(v, 0.0)
        self.values = v

    def mass(self) -> float:
        return float(self.values.sum()) * self.grid.cell_volume

    def normalized(self) -> "DensityField":
        m = self.mass()
        if m <= 0:
            raise FieldError("cannot normalize a zero-mass field")
        return replace(self, values=self.values / m)

    def with_values(self, values: np.ndarray, time_tag: float | None = None) -> "DensityField":
        return DensityField(self.grid, values, self.time_tag if time_tag is None else time_tag)

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.values.copy(), self.time_tag)


def integrate_values(grid: Grid, values: np.ndarray) -> float:
    """Midpoint quadrature of a cellwise sampled function."""
    return float(np.asarray(values, dtype=np.float64).sum()) * grid.cell_volume


def integrate(fld: DensityField) -> float:
    return integrate_values(fld.grid, fld.values)


def lq_norm_values(grid: Grid, values: np.ndarray, q: float) -> float:
    v = np.abs(np.asarray(values, dtype=np.float64))
    if q == INF:
        return float(v.max()) if v.size else 0.0
    if q < 1:
        raise FieldError(f"lq_norm needs q >= 1, got {q}")
    return float((v**q).sum() * grid.cell_volume) ** (1.0 / q)


def lq_norm(fld: DensityField, q: float) -> float:
    return lq_norm_values(fld.grid, fld.values, q)


def face_gradients(grid: Grid, values: np.ndarray) -> tuple[np.ndarray, ...]:
    """Face-staggered first differences of a cell array.

    Boundary faces carry 0 under no-flux (one-sided zero-flux extension) and
    wrap around for periodic grids. Axis i result has shape with cells_i + 1
    along axis i.
    """
    v = np.asarray(values, dtype=np.float64)
    out = []
    for axis in range(grid.dim):
        h = grid.spacing[axis]
        diff = np.diff(v, axis=axis) / h
        pad = [(0, 0)] * grid.dim
        pad[axis] = (1, 1)
        g = np.pad(diff, pad)
        if grid.boundary == PERIODIC:
            wrap = (np.take(v, 0, axis=axis) - np.take(v, -1, axis=axis)) / h
            idx_lo = [slice(None)] * grid.dim
            idx_lo[axis] = 0
            idx_hi = [slice(None)] * grid.dim
            idx_hi[axis] = -1
            g[tuple(idx_lo)] = wrap
            g[tuple(idx_hi)] = wrap
        out.append(g)
    return tuple(out)


def grad_power(fld: DensityField, a: float, floor: float = 0.0) -> tuple[np.ndarray, ...]:
    """Face gradient of (max(rho, floor))^a; zero on no-flux boundary faces."""
    if a <= 0:
        raise FieldError(f"grad_power needs a > 0, got {a}")
    if floor < 0:
        raise FieldError("floor must be >= 0")
    w = np.maximum(fld.values, floor) ** a
    return face_gradients(fld.grid, w)


def gradient_energy(grid: Grid, w_values: np.ndarray) -> float:
    """∫ |grad_h w|^2 with the face-staggered gradient (face weight = cell volume)."""
    grads = face_gradients(grid, w_values)
    total = 0.0
    for g in grads:
        total += float((g**2).sum())
    return total * grid.cell_volume


def power_gradient_energy(grid: Grid, values: np.ndarray, a: float, shift: float = 0.0, floor: float = 0.0) -> float:
    """∫ |grad_h (shift + max(values, floor))^a|^2 — the recurring dissipation integrand."""
    w = (shift + np.maximum(np.asarray(values, dtype=np.float64), floor)) ** a
    return gradient_energy(grid, w)


def center_gradient(grid: Grid, values: np.ndarray) -> list[np.ndarray]:
    """Cell-centered gradient components (face differences averaged back to centers)."""
    grads = face_gradients(grid, values)
    out = []
    for axis, g in enumerate(grads):
        sl_lo = [slice(None)] * grid.dim
        sl_lo[axis] = slice(0, -1)
        sl_hi = [slice(None)] * grid.dim
        sl_hi[axis] = slice(1, None)
        out.append(0.5 * (g[tuple(sl_lo)] + g[tuple(sl_hi)]))
    return out


def _spatial_norm(grid: Grid, values: np.ndarray, q1: float) -> float:
    return lq_norm_values(grid, values, q1)


def mixed_norm(series, spec: MixedNormSpec) -> float:
    """Temporal q2-norm (trapezoid) of spatial q1-norms over a sampled time series.

    ``series`` is a list of (time, DensityField or ndarray); infinite exponents
    are discrete maxima over cells/samples.
    """
    if len(series) < 2:
        raise FieldError("mixed_norm needs at least two time samples")
    times = np.array([t for t, _ in series], dtype=np.float64)
    if not np.all(np.diff(times) > 0):
        raise FieldError("mixed_norm needs strictly increasing times")
    grid = None
    spatial = []
    for _, f in series:
        if isinstance(f, DensityField):
            g, v = f.grid, f.values
        else:
            raise FieldError("series entries must be (time, DensityField)")
        if grid is None:
            grid = g
        elif g.key() != grid.key():
            raise FieldError("mixed_norm rejects mixed grids")
        spatial.append(_spatial_norm(g, v, spec.q1))
    spatial = np.array(spatial)
    if spec.q2 == INF:
        return float(spatial.max())
    return float(np.trapezoid(spatial**spec.q2, times)) ** (1.0 / spec.q2)


def mixed_norm_samples(times: np.ndarray, spatial_norms: np.ndarray, q2: float) -> float:
    """Temporal part of the mixed norm when spatial norms are already known."""
    times = np.asarray(times, dtype=np.float64)
    s = np.asarray(spatial_norms, dtype=np.float64)
    if q2 == INF:
        return float(s.max())
    return float(np.trapezoid(s**q2, times)) ** (1.0 / q2)


# ---------------------------------------------------------------------------
# snapshot persistence: JSON manifest + flat little-endian float64 sidecar
# ---------------------------------------------------------------------------


def _payload(fld: DensityField) -> bytes:
    return np.ascontiguousarray(fld.values, dtype="<f8").tobytes()


def save_snapshot(fld: DensityField, prefix: str) -> None:
    """Write ``prefix``.json (metadata + checksum) and ``prefix``.bin (row-major <f8)."""
    raw = _payload(fld)
    manifest = {
        "format": "driftdiff-snapshot-v1",
        "grid": {
            "dim": fld.grid.dim,
            "extents": [list(e) for e in fld.grid.extents],
            "cells": list(fld.grid.cells),
            "boundary": fld.grid.boundary,
        },
        "time_tag": fld.time_tag,
        "units": {"space": "length", "time": "time", "density": "mass/volume"},
        "dtype": "<f8",
        "order": "C",
        "checksum_sha256": hashlib.sha256(raw).hexdigest(),
    }
    with open(prefix + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(prefix + ".bin", "wb") as fh:
        fh.write(raw)


def load_snapshot(prefix: str) -> DensityField:
    with open(prefix + ".json") as fh:
        manifest = json.load(fh)
    g = manifest["grid"]
    grid = Grid(
        dim=g["dim"],
        extents=tuple(tuple(e) for e in g["extents"]),
        cells=tuple(g["cells"]),
        boundary=g["boundary"],
    )
    with open(prefix + ".bin", "rb") as fh:
        raw = fh.read()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != manifest["checksum_sha256"]:
        raise FieldError(f"snapshot checksum mismatch for {prefix}")
    values = np.frombuffer(raw, dtype="<f8").reshape(grid.shape)
    return DensityField(grid, values.copy(), manifest.get("time_tag"))


def export_csv(fld: DensityField, path: str) -> None:
    """Per-cell CSV dump with header x[,y],value."""
    grid = fld.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if grid.dim == 1:
            writer.writerow(["x", "value"])
            for x, v in zip(grid.centers(0), fld.values):
                writer.writerow([repr(float(x)), repr(float(v))])
        else:
            writer.writerow(["x", "y", "value"])
            X, Y = grid.meshgrid()
            for x, y, v in zip(X.ravel(), Y.ravel(), fld.values.ravel()):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(v))])

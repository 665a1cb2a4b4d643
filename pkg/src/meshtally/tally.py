"""Preallocated tally grids, track-length and collision scoring, batch
statistics, flux normalization, and file output (legacy VTK, CSV).

Scoring targets per-thread partial rows that are reduced into the batch
accumulator at finalize time; serial callers use row 0 directly. Everything
is sized once at construction and never grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import float64, int64, njit
from numba.experimental import jitclass

from .mesh import TetMesh
from .particles import ParticleBatch

_grid_spec = [
    ("num_elements", int64),
    ("num_groups", int64),
    ("partials", float64[:, ::1]),
    ("batch_accum", float64[::1]),
    ("sum", float64[::1]),
    ("sum_sq", float64[::1]),
    ("batches_completed", int64),
]


@jitclass(_grid_spec)
class TallyGrid:
    """Element x group accumulator with per-batch sum / sum-of-squares."""

    def __init__(self, num_elements, num_groups, slabs):
        self.num_elements = num_elements
        self.num_groups = num_groups
        nbins = num_elements * num_groups
        self.partials = np.zeros((slabs, nbins))
        self.batch_accum = np.zeros(nbins)
        self.sum = np.zeros(nbins)
        self.sum_sq = np.zeros(nbins)
        self.batches_completed = 0


def create_grid(num_elements: int, num_groups: int,
                max_threads: int = 1) -> TallyGrid:
    """Zeroed grid with num_elements * num_groups bins (allocated once)."""
    if num_elements <= 0 or num_groups <= 0:
        raise ValueError(
            f"grid sizes must be positive, got ({num_elements}, {num_groups})")
    if max_threads < 1:
        raise ValueError(f"max_threads must be >= 1, got {max_threads}")
    return TallyGrid(int(num_elements), int(num_groups), int(max_threads))


def _check_bin(grid: TallyGrid, element: int, group: int) -> int:
    if not 0 <= element < grid.num_elements:
        raise IndexError(f"element {element} out of range "
                         f"[0, {grid.num_elements})")
    if not 0 <= group < grid.num_groups:
        raise IndexError(f"group {group} out of range [0, {grid.num_groups})")
    return element * grid.num_groups + group


def score_track_length(grid: TallyGrid, element: int, group: int,
                       weight: float, length: float) -> None:
    """batch_accum[element, group] += weight * length."""
    b = _check_bin(grid, element, group)
    grid.partials[0, b] += weight * length


def score_collision(grid: TallyGrid, element: int, group: int,
                    weight: float, sigma_t: float) -> None:
    """batch_accum[element, group] += weight / sigma_t (collision estimator)."""
    if not sigma_t > 0.0:
        raise ValueError(f"sigma_t must be positive, got {sigma_t!r}")
    b = _check_bin(grid, element, group)
    grid.partials[0, b] += weight / sigma_t


def _finalize(grid, source_weight):
    nbins = grid.batch_accum.shape[0]
    slabs = grid.partials.shape[0]
    for b in range(nbins):
        acc = 0.0
        for s in range(slabs):
            acc += grid.partials[s, b]
            grid.partials[s, b] = 0.0
        x = acc / source_weight
        grid.sum[b] += x
        grid.sum_sq[b] += x * x
        grid.batch_accum[b] = 0.0
    grid.batches_completed += 1


_finalize_k = njit(cache=False)(_finalize)


def batch_totals(grid: TallyGrid) -> np.ndarray:
    """Current (unfinalized) batch accumulator, reduced over score slabs."""
    return np.asarray(grid.partials).sum(axis=0).reshape(
        grid.num_elements, grid.num_groups)


def finalize_batch(grid: TallyGrid, batch_source_weight: float) -> None:
    """Fold the current batch into the running statistics and zero it."""
    if not batch_source_weight > 0.0:
        raise ValueError(
            f"batch_source_weight must be positive, got {batch_source_weight!r}")
    _finalize_k(grid, float(batch_source_weight))


@dataclass(frozen=True)
class FluxResult:
    """Per (element, group) flux mean and relative standard error."""

    mean: np.ndarray       # (E, G)
    rel_error: np.ndarray  # (E, G)


def flux(grid: TallyGrid, volumes) -> FluxResult:
    """Volume-normalized per-bin mean over completed batches.

    rel_error is the sample standard error of the per-batch means divided
    by the mean (0 where the mean is 0); it needs >= 2 batches and is
    reported as 0 for a single batch.
    """
    n = grid.batches_completed
    if n == 0:
        raise RuntimeError("no batches completed; nothing to normalize")
    volumes = np.asarray(volumes, dtype=np.float64)
    if volumes.shape != (grid.num_elements,):
        raise ValueError(f"volumes must be ({grid.num_elements},), "
                         f"got {volumes.shape}")
    if not (volumes > 0.0).all():
        raise ValueError("volumes must be positive")

    shape = (grid.num_elements, grid.num_groups)
    s = np.asarray(grid.sum).reshape(shape)
    sq = np.asarray(grid.sum_sq).reshape(shape)
    batch_mean = s / n
    mean = batch_mean / volumes[:, None]
    rel = np.zeros(shape)
    if n >= 2:
        var = (sq - s * s / n) / (n - 1)
        np.clip(var, 0.0, None, out=var)
        se = np.sqrt(var / n)
        nz = batch_mean > 0.0
        rel[nz] = se[nz] / batch_mean[nz]
    return FluxResult(mean=mean, rel_error=rel)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_vtk(mesh: TetMesh, flux_result: FluxResult, filename) -> None:
    """Legacy ASCII VTK unstructured grid with one flux and one rel_error
    cell-data field per energy group."""
    mean = np.atleast_2d(flux_result.mean)
    rel = np.atleast_2d(flux_result.rel_error)
    if mean.shape[0] != mesh.num_elements:
        raise ValueError(
            f"flux has {mean.shape[0]} elements, mesh has {mesh.num_elements}")
    ngroups = mean.shape[1]
    out = []
    out.append("# vtk DataFile Version 3.0")
    out.append("tetrahedral mesh flux tally")
    out.append("ASCII")
    out.append("DATASET UNSTRUCTURED_GRID")
    out.append(f"POINTS {mesh.num_vertices} double")
    for v in mesh.vertices:
        out.append(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    out.append(f"CELLS {mesh.num_elements} {5 * mesh.num_elements}")
    for e in mesh.elements:
        out.append(f"4 {e[0]} {e[1]} {e[2]} {e[3]}")
    out.append(f"CELL_TYPES {mesh.num_elements}")
    out.extend(["10"] * mesh.num_elements)
    out.append(f"CELL_DATA {mesh.num_elements}")
    for g in range(ngroups):
        out.append(f"SCALARS flux_g{g} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(_fmt(x) for x in mean[:, g])
        out.append(f"SCALARS rel_error_g{g} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(_fmt(x) for x in rel[:, g])
    Path(filename).write_text("\n".join(out) + "\n")


def write_flux_csv(flux_result: FluxResult, filename) -> None:
    """CSV rows (element, group, mean, rel_error)."""
    mean = np.atleast_2d(flux_result.mean)
    rel = np.atleast_2d(flux_result.rel_error)
    lines = ["element,group,mean,rel_error"]
    for e in range(mean.shape[0]):
        for g in range(mean.shape[1]):
            lines.append(f"{e},{g},{_fmt(mean[e, g])},{_fmt(rel[e, g])}")
    Path(filename).write_text("\n".join(lines) + "\n")


class MeshTally:
    """Batched tally front end: load a mesh, localize particles once per
    batch, then score every move; internal machinery stays private.

    Mirrors the flow: initialize_particle_location at the start of a batch,
    move_to_next_location per advance step, write to dump the tallies.
    """

    def __init__(self, mesh, num_particles: int, num_groups: int = 1,
                 threads: int = 1):
        from .mesh import read_tetmesh
        from .particles import create_batch
        from .search import create_workspace

        if isinstance(mesh, (str, Path)):
            mesh = read_tetmesh(mesh)
        if not isinstance(mesh, TetMesh):
            raise TypeError("mesh must be a TetMesh or a path to one")
        if num_particles <= 0:
            raise ValueError("num_particles must be positive")
        self._mesh = mesh
        self._threads = max(1, int(threads))
        self._batch = create_batch(int(num_particles))
        self._ws = create_workspace(int(num_particles))
        self._grid = create_grid(mesh.num_elements, int(num_groups),
                                 self._threads)
        self._batch_source_weight = 0.0

    @property
    def mesh(self) -> TetMesh:
        return self._mesh

    @property
    def grid(self) -> TallyGrid:
        return self._grid

    def initialize_particle_location(self, positions) -> None:
        from .search import initialize_locations
        pos = np.asarray(positions, dtype=np.float64).reshape(-1)
        count = pos.size // 3
        initialize_locations(self._mesh, self._batch, pos, count, self._ws,
                             threads=self._threads)
        self._batch_source_weight = 0.0

    def move_to_next_location(self, destinations, flying, weights,
                              groups=None):
        """Load one step and trace it with track-length scoring.

        Array layouts follow load_step; `groups` optionally sets the
        per-particle energy group (defaults to the previous values).
        """
        from .particles import load_step
        from .search import trace_and_score

        fly = np.asarray(flying).reshape(-1)
        count = fly.size
        load_step(self._batch, destinations, fly, weights, count)
        if count == 0:
            return None
        if groups is not None:
            g = np.asarray(groups, dtype=np.int32).reshape(-1)
            if g.size != count:
                raise ValueError("groups size mismatch")
            self._batch.group[:count] = g
        if self._batch_source_weight == 0.0:
            self._batch_source_weight = float(
                np.asarray(self._batch.weight[:count])[fly.astype(bool)].sum())
        return trace_and_score(self._mesh, self._batch, self._ws, self._grid,
                               threads=self._threads)

    def finalize_batch(self, source_weight: float | None = None) -> None:
        w = self._batch_source_weight if source_weight is None else source_weight
        if not w or w <= 0.0:
            raise RuntimeError(
                "no source weight recorded for this batch; pass source_weight")
        finalize_batch(self._grid, w)
        self._batch_source_weight = 0.0

    def flux(self) -> FluxResult:
        return flux(self._grid, self._mesh.volumes)

    def write(self, filename) -> None:
        """Write the current flux and rel_error to a legacy VTK file."""
        write_vtk(self._mesh, self.flux(), filename)

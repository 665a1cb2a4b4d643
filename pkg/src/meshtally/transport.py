"""Event-based analog multigroup transport: fixed source, exponential
flight distances, isotropic scattering, vacuum leakage at the mesh boundary.

Each batch alternates two phases until no particle is flying: an advance
phase (sample a trial collision distance, walk every flying particle to its
destination or the boundary, scoring track length per element crossed) and
a collision phase (score the collision estimator, then scatter or absorb).
All randomness is keyed by (seed, batch, particle, draw block), so results
are independent of thread count and identical across tally backends.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import numba
from numba import get_thread_id, njit, prange
from numba import float64, int64
from numba.experimental import jitclass

from .mesh import TetMesh, build_cube_mesh
from .particles import ParticleBatch, create_batch
from .rng import RngStream, uniform_block
from .search import (OUTCOME_ABSORBED, OUTCOME_LEAKED, OUTCOME_NONE,
                     OUTCOME_REACHED, OUTCOME_STUCK_KILLED, TraceSummary,
                     TraceWorkspace, _compact_flying_k, _tie_break_faces_k,
                     create_workspace, trace_and_score)
from .tally import FluxResult, TallyGrid, create_grid, finalize_batch, flux

_xs_spec = [
    ("num_groups", int64),
    ("sigma_t", float64[::1]),
    ("scatter_prob", float64[::1]),
    ("group_cdf", float64[:, ::1]),
]


@jitclass(_xs_spec)
class XSData:
    def __init__(self, sigma_t, scatter_prob, group_cdf):
        self.num_groups = sigma_t.shape[0]
        self.sigma_t = sigma_t
        self.scatter_prob = scatter_prob
        self.group_cdf = group_cdf


@dataclass(frozen=True)
class CrossSections:
    """Multigroup total and scattering data; absorption is the difference."""

    sigma_t: np.ndarray   # (G,) cm^-1
    sigma_s: np.ndarray   # (G, G) cm^-1, sigma_s[g, g'] scatters g -> g'
    _kernel_data: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        st = np.ascontiguousarray(np.atleast_1d(self.sigma_t), dtype=np.float64)
        ss = np.ascontiguousarray(np.atleast_2d(self.sigma_s), dtype=np.float64)
        object.__setattr__(self, "sigma_t", st)
        object.__setattr__(self, "sigma_s", ss)
        g = st.shape[0]
        if ss.shape != (g, g):
            raise ValueError(f"sigma_s must be ({g}, {g}), got {ss.shape}")
        if not (st > 0.0).all():
            raise ValueError("sigma_t must be positive in every group")
        if (ss < 0.0).any():
            raise ValueError("sigma_s entries must be non-negative")
        rows = ss.sum(axis=1)
        if (rows > st * (1.0 + 1e-12)).any():
            bad = int(np.argmax(rows - st))
            raise ValueError(
                f"scattering row sum {rows[bad]:g} exceeds sigma_t "
                f"{st[bad]:g} in group {bad}")

    @property
    def num_groups(self) -> int:
        return self.sigma_t.shape[0]

    @classmethod
    def one_group(cls, sigma_t: float, sigma_s: float) -> "CrossSections":
        return cls(np.array([sigma_t]), np.array([[sigma_s]]))

    def kernel_data(self) -> XSData:
        if not self._kernel_data:
            g = self.num_groups
            rows = self.sigma_s.sum(axis=1)
            prob = rows / self.sigma_t
            cdf = np.zeros((g, g))
            for i in range(g):
                if rows[i] > 0.0:
                    cdf[i] = np.cumsum(self.sigma_s[i]) / rows[i]
                cdf[i, g - 1] = 1.0
            self._kernel_data.append(
                XSData(np.ascontiguousarray(self.sigma_t),
                       np.ascontiguousarray(prob),
                       np.ascontiguousarray(cdf)))
        return self._kernel_data[0]


@dataclass(frozen=True)
class RunConfig:
    """Full experiment description for one run."""

    mesh_n: int = 10
    edge_length: float = 1.0
    num_particles: int = 10_000
    num_batches: int = 5
    cross_sections: CrossSections = field(
        default_factory=lambda: CrossSections.one_group(100.0, 100.0))
    source_box: tuple = ((0.0, 0.0, 0.0), (0.5, 0.5, 0.5))
    seed: int = 42
    backend: str = "adjacency"
    threads: int = 1
    vtk_path: str | None = None
    csv_path: str | None = None
    # fixed emission direction (unit vector); None samples isotropically
    source_direction: tuple | None = None

    def __post_init__(self):
        if self.mesh_n < 1:
            raise ValueError("mesh_n must be >= 1")
        if self.edge_length <= 0.0:
            raise ValueError("edge_length must be positive")
        if self.num_particles <= 0:
            raise ValueError("num_particles must be positive")
        if self.num_batches <= 0:
            raise ValueError("num_batches must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.backend not in ("adjacency", "baseline"):
            raise ValueError(f"unknown backend {self.backend!r} "
                             "(expected 'adjacency' or 'baseline')")
        box = np.asarray(self.source_box, dtype=np.float64).reshape(2, 3)
        if (box[1] < box[0]).any():
            raise ValueError("source_box max corner below min corner")
        if (box[0] < 0.0).any() or (box[1] > self.edge_length).any():
            raise ValueError("source_box must lie inside the mesh domain")
        object.__setattr__(self, "source_box",
                           (tuple(box[0]), tuple(box[1])))
        if self.source_direction is not None:
            d = np.asarray(self.source_direction, dtype=np.float64).reshape(3)
            n = float(np.sqrt(d @ d))
            if n == 0.0:
                raise ValueError("source_direction must be non-zero")
            object.__setattr__(self, "source_direction", tuple(d / n))


# ---------------------------------------------------------------------------
# kernels (compiled serial and parallel from the same bodies)
# ---------------------------------------------------------------------------

def _source(batch, ws, n, seed, batch_idx, x0, y0, z0, x1, y1, z1,
            fixed_dir, fdx, fdy, fdz):
    """Sample n source particles: uniform position in the box, isotropic
    (or fixed) direction, group 0, weight 1. Blocks 0-1 of each particle's
    stream are consumed; the staging position feeds localization."""
    for i in prange(n):
        u0, u1, u2, u3 = uniform_block(seed, batch_idx, i, 0)
        ws.stage_pos[i, 0] = x0 + (x1 - x0) * u0
        ws.stage_pos[i, 1] = y0 + (y1 - y0) * u1
        ws.stage_pos[i, 2] = z0 + (z1 - z0) * u2
        if fixed_dir != 0:
            batch.direction[i, 0] = fdx
            batch.direction[i, 1] = fdy
            batch.direction[i, 2] = fdz
        else:
            v0, v1, v2, v3 = uniform_block(seed, batch_idx, i, 1)
            mu = 2.0 * v0 - 1.0
            phi = 2.0 * np.pi * v1
            s = np.sqrt(max(0.0, 1.0 - mu * mu))
            batch.direction[i, 0] = s * np.cos(phi)
            batch.direction[i, 1] = s * np.sin(phi)
            batch.direction[i, 2] = mu
        batch.weight[i] = 1.0
        batch.group[i] = 0
        batch.alive[i] = 1
        batch.flying[i] = 0
        ws.rng_block[i] = 2
        ws.outcome[i] = OUTCOME_NONE


def _trial_setup(mesh, batch, ws, n):
    """Point every sourced particle at its true position from the trial
    start (element 0's centroid), ready for the localization walk."""
    cx = mesh.centroids[0, 0]
    cy = mesh.centroids[0, 1]
    cz = mesh.centroids[0, 2]
    for i in prange(n):
        batch.position[i, 0] = cx
        batch.position[i, 1] = cy
        batch.position[i, 2] = cz
        batch.destination[i, 0] = ws.stage_pos[i, 0]
        batch.destination[i, 1] = ws.stage_pos[i, 1]
        batch.destination[i, 2] = ws.stage_pos[i, 2]
        batch.element[i] = 0
        batch.flying[i] = batch.alive[i]
        ws.entry_face[i] = -1
        ws.stuck[i] = 0
        ws.seg_total[i] = 0.0


def _rearm(batch, ws, n):
    """Arm all alive particles for the flight loop after localization."""
    for i in prange(n):
        batch.flying[i] = batch.alive[i]
        ws.entry_face[i] = -1
        ws.outcome[i] = OUTCOME_NONE
        ws.seg_total[i] = 0.0


def _flight(batch, ws, xs, m, seed, batch_idx):
    """Advance-event setup: trial collision distance along the current
    direction sets each flying particle's destination."""
    for k in prange(m):
        i = ws.active[k]
        if batch.flying[i] == 0:
            continue
        u0, u1, u2, u3 = uniform_block(seed, batch_idx, i, ws.rng_block[i])
        ws.rng_block[i] += 1
        lc = -np.log(u0) / xs.sigma_t[batch.group[i]]
        batch.destination[i, 0] = batch.position[i, 0] + lc * batch.direction[i, 0]
        batch.destination[i, 1] = batch.position[i, 1] + lc * batch.direction[i, 1]
        batch.destination[i, 2] = batch.position[i, 2] + lc * batch.direction[i, 2]
        ws.outcome[i] = OUTCOME_NONE


def _collide(batch, ws, xs, grid, m, seed, batch_idx):
    """Collision event for particles that reached their destination:
    score the collision estimator, then scatter (new group and isotropic
    direction) or absorb. Returns (collisions, leaked_w, absorbed_w,
    stuck_w) accumulated over the processed particles."""
    ngroups = grid.num_groups
    collisions = 0
    leaked_w = 0.0
    absorbed_w = 0.0
    stuck_w = 0.0
    for k in prange(m):
        i = ws.active[k]
        oc = ws.outcome[i]
        if oc == OUTCOME_REACHED:
            g = batch.group[i]
            w = batch.weight[i]
            e = int64(batch.element[i])
            tid = get_thread_id()
            grid.partials[tid, e * ngroups + g] += w / xs.sigma_t[g]
            collisions += 1
            u0, u1, u2, u3 = uniform_block(seed, batch_idx, i,
                                           ws.rng_block[i])
            ws.rng_block[i] += 1
            if u0 <= xs.scatter_prob[g]:
                gp = 0
                for j in range(xs.num_groups):
                    gp = j
                    if u1 <= xs.group_cdf[g, j]:
                        break
                mu = 2.0 * u2 - 1.0
                phi = 2.0 * np.pi * u3
                s = np.sqrt(max(0.0, 1.0 - mu * mu))
                batch.direction[i, 0] = s * np.cos(phi)
                batch.direction[i, 1] = s * np.sin(phi)
                batch.direction[i, 2] = mu
                batch.group[i] = gp
                batch.flying[i] = 1
            else:
                batch.alive[i] = 0
                batch.flying[i] = 0
                ws.outcome[i] = OUTCOME_ABSORBED
                absorbed_w += w
        elif oc == OUTCOME_LEAKED:
            leaked_w += batch.weight[i]
        elif oc == OUTCOME_STUCK_KILLED:
            stuck_w += batch.weight[i]
    return collisions, leaked_w, absorbed_w, stuck_w


def _seg_sum(ws, n):
    total = 0.0
    for i in prange(n):
        total += ws.seg_total[i]
    return total


_source_s = njit(cache=False)(_source)
_source_p = njit(parallel=True, cache=False)(_source)
_trial_setup_s = njit(cache=False)(_trial_setup)
_trial_setup_p = njit(parallel=True, cache=False)(_trial_setup)
_rearm_s = njit(cache=False)(_rearm)
_flight_s = njit(cache=False)(_flight)
_flight_p = njit(parallel=True, cache=False)(_flight)
_collide_s = njit(cache=False)(_collide)
_collide_p = njit(parallel=True, cache=False)(_collide)
_seg_sum_s = njit(cache=False)(_seg_sum)

_MAX_ROUNDS = 50_000_000


# ---------------------------------------------------------------------------
# single-sample wrappers (the same draws the kernels make)
# ---------------------------------------------------------------------------

def sample_source(stream: RngStream, config: RunConfig):
    """One source sample: (position, unit direction, group, weight)."""
    box = np.asarray(config.source_box)
    u = stream.next_block()
    position = box[0] + (box[1] - box[0]) * np.array(u[:3])
    if config.source_direction is not None:
        direction = np.array(config.source_direction)
    else:
        v = stream.next_block()
        mu = 2.0 * v[0] - 1.0
        phi = 2.0 * np.pi * v[1]
        s = math.sqrt(max(0.0, 1.0 - mu * mu))
        direction = np.array([s * math.cos(phi), s * math.sin(phi), mu])
    return position, direction, 0, 1.0


def collision_distance(xi: float, sigma_t: float) -> float:
    """Trial collision distance -ln(xi)/sigma_t for xi in (0, 1]."""
    if not sigma_t > 0.0:
        raise ValueError(f"sigma_t must be positive, got {sigma_t!r}")
    if not 0.0 < xi <= 1.0:
        raise ValueError(f"xi must be in (0, 1], got {xi!r}")
    return -math.log(xi) / sigma_t


def sample_collision_distance(stream: RngStream, sigma_t: float) -> float:
    """Keyed trial collision distance (consumes one draw block)."""
    u = stream.next_block()
    return collision_distance(u[0], sigma_t)


@dataclass(frozen=True)
class CollisionOutcome:
    scattered: bool
    group: int | None = None
    direction: np.ndarray | None = None


def sample_collision(stream: RngStream, xs: CrossSections,
                     group: int) -> CollisionOutcome:
    """Scatter (with outgoing group and isotropic direction) or absorb."""
    if not 0 <= group < xs.num_groups:
        raise IndexError(f"group {group} out of range [0, {xs.num_groups})")
    kd = xs.kernel_data()
    u0, u1, u2, u3 = stream.next_block()
    if u0 <= kd.scatter_prob[group]:
        gp = 0
        for j in range(xs.num_groups):
            gp = j
            if u1 <= kd.group_cdf[group, j]:
                break
        mu = 2.0 * u2 - 1.0
        phi = 2.0 * np.pi * u3
        s = math.sqrt(max(0.0, 1.0 - mu * mu))
        direction = np.array([s * math.cos(phi), s * math.sin(phi), mu])
        return CollisionOutcome(True, gp, direction)
    return CollisionOutcome(False)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class Engine:
    """Preallocated run state shared across batches."""

    mesh: TetMesh
    batch: ParticleBatch
    workspace: TraceWorkspace
    track_grid: TallyGrid
    collision_grid: TallyGrid
    xs: CrossSections
    kdtree: object = None  # baseline backend only


def build_engine(config: RunConfig, mesh: TetMesh | None = None) -> Engine:
    if mesh is None:
        mesh = build_cube_mesh(config.mesh_n, config.edge_length)
    batch = create_batch(config.num_particles)
    ws = create_workspace(config.num_particles)
    slabs = max(1, config.threads)
    tl = create_grid(mesh.num_elements, config.cross_sections.num_groups, slabs)
    col = create_grid(mesh.num_elements, config.cross_sections.num_groups, slabs)
    kdtree = None
    if config.backend == "baseline":
        from .baseline import build_kdtree
        kdtree = build_kdtree(mesh)
    return Engine(mesh, batch, ws, tl, col, config.cross_sections, kdtree)


def _localize_adjacency(engine: Engine, n: int, threads: int) -> None:
    mk = engine.mesh.kernel_data()
    setup = _trial_setup_s if threads <= 1 else _trial_setup_p
    setup(mk, engine.batch, engine.workspace, n)
    trace_and_score(engine.mesh, engine.batch, engine.workspace,
                    engine.track_grid, score=False, threads=threads)
    _tie_break_faces_k(mk, engine.batch, n)


def advance_event(mesh: TetMesh, batch: ParticleBatch, ws: TraceWorkspace,
                  grid: TallyGrid, xs: CrossSections, *, seed: int = 0,
                  batch_index: int = 0, threads: int = 1,
                  kdtree=None) -> np.ndarray:
    """One advance event over all flying particles: sample trial collision
    distances, set destinations, walk with track-length scoring. Returns a
    copy of the per-particle outcomes (reached = collided, leaked, ...)."""
    m = _compact_flying_k(batch, ws)
    if m > 0:
        flight = _flight_s if threads <= 1 else _flight_p
        flight(batch, ws, xs.kernel_data(), m, seed, batch_index)
        if kdtree is not None:
            from .baseline import baseline_advance
            baseline_advance(mesh, kdtree, batch, ws, grid, threads=threads)
        else:
            trace_and_score(mesh, batch, ws, grid, threads=threads)
    return np.asarray(ws.outcome).copy()


@dataclass
class RunResult:
    config: RunConfig
    mesh: TetMesh
    flux_track: FluxResult
    flux_collision: FluxResult
    track_grid: TallyGrid
    collision_grid: TallyGrid
    t_init: float
    t_localization: float
    t_batch: float
    t_output: float
    source_weight: float
    leaked_weight: float
    absorbed_weight: float
    stuck_weight: float
    collisions: int
    events: int
    sweeps: int
    track_length_total: float
    threads_used: int


def run(config: RunConfig, mesh: TetMesh | None = None,
        engine: Engine | None = None) -> RunResult:
    """Execute the configured fixed-source problem and return flux results
    for both estimators plus phase timings and balance totals."""
    threads = config.threads
    if threads > 1:
        limit = numba.config.NUMBA_NUM_THREADS
        threads = min(threads, limit)
        numba.set_num_threads(threads)

    t0 = time.perf_counter()
    if engine is None:
        engine = build_engine(config, mesh)
    mesh = engine.mesh
    batch, ws = engine.batch, engine.workspace
    xsd = engine.xs.kernel_data()
    mk = mesh.kernel_data()
    n = config.num_particles
    box = np.asarray(config.source_box, dtype=np.float64)
    fixed = config.source_direction is not None
    fd = config.source_direction if fixed else (0.0, 0.0, 1.0)
    t_init = time.perf_counter() - t0

    t_localization = 0.0
    t_batch = 0.0
    source_weight = 0.0
    leaked_weight = 0.0
    absorbed_weight = 0.0
    stuck_weight = 0.0
    collisions = 0
    events = 0
    sweeps = 0
    track_total = 0.0

    source_k = _source_s if threads <= 1 else _source_p
    flight_k = _flight_s if threads <= 1 else _flight_p
    collide_k = _collide_s if threads <= 1 else _collide_p

    if config.backend == "baseline":
        from .baseline import baseline_advance, baseline_localize
    batch.count = n
    batch.flying[n:] = 0
    batch.alive[n:] = 0

    for b in range(config.num_batches):
        tb = time.perf_counter()
        source_k(batch, ws, n, config.seed, b, box[0, 0], box[0, 1],
                 box[0, 2], box[1, 0], box[1, 1], box[1, 2],
                 1 if fixed else 0, fd[0], fd[1], fd[2])
        t_batch += time.perf_counter() - tb

        tl = time.perf_counter()
        if config.backend == "baseline":
            baseline_localize(mesh, engine.kdtree, batch, ws, n,
                              threads=threads)
        else:
            _localize_adjacency(engine, n, threads)
        t_localization += time.perf_counter() - tl

        tb = time.perf_counter()
        _rearm_s(batch, ws, n)
        batch_source_w = float(np.asarray(batch.weight[:n])[
            np.asarray(batch.alive[:n], dtype=bool)].sum())
        source_weight += batch_source_w

        rounds = 0
        while True:
            m = _compact_flying_k(batch, ws)
            if m == 0:
                break
            flight_k(batch, ws, xsd, m, config.seed, b)
            if config.backend == "baseline":
                summary = baseline_advance(mesh, engine.kdtree, batch, ws,
                                           engine.track_grid, threads=threads)
            else:
                summary = trace_and_score(mesh, batch, ws, engine.track_grid,
                                          threads=threads)
            events += summary.events
            sweeps += summary.sweeps
            c, lw, aw, sw = collide_k(batch, ws, xsd, engine.collision_grid,
                                      m, config.seed, b)
            collisions += int(c)
            leaked_weight += lw
            absorbed_weight += aw
            stuck_weight += sw
            rounds += 1
            if rounds > _MAX_ROUNDS:
                raise RuntimeError("transport did not terminate "
                                   f"within {_MAX_ROUNDS} rounds")

        track_total += float(_seg_sum_s(ws, n))
        finalize_batch(engine.track_grid, batch_source_w)
        finalize_batch(engine.collision_grid, batch_source_w)
        t_batch += time.perf_counter() - tb

    flux_tl = flux(engine.track_grid, mesh.volumes)
    flux_col = flux(engine.collision_grid, mesh.volumes)
    return RunResult(
        config=config, mesh=mesh, flux_track=flux_tl, flux_collision=flux_col,
        track_grid=engine.track_grid, collision_grid=engine.collision_grid,
        t_init=t_init, t_localization=t_localization, t_batch=t_batch,
        t_output=0.0, source_weight=source_weight,
        leaked_weight=leaked_weight, absorbed_weight=absorbed_weight,
        stuck_weight=stuck_weight, collisions=collisions, events=events,
        sweeps=sweeps, track_length_total=track_total, threads_used=threads)

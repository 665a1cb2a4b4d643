"""Lockstep adjacency walk: every flying particle advances one element per
sweep until it reaches its destination or leaves through a boundary face.

Two equivalent paths share the same geometry cores:

* `trace_batch` - the general path. Each sweep first computes every
  particle's proposed crossing and emits the interface events, then invokes
  the user callback on the batched event arrays (which may redirect
  particles, kill them, or resurrect killed ones), then commits.
* `trace_and_score` - the fused hot path used by the transport driver and
  the tally facade: crossing, commit and track-length scoring in a single
  kernel sweep, allocation-free and optionally threaded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import get_thread_id, njit, prange
from numba import float64, int8, int32, int64, uint64
from numba.experimental import jitclass

from . import geometry as geom
from .geometry import (EPS_BARY, NUDGE, STUCK_TOL_FACTOR, elem_contains,
                       exit_search_core)
from .mesh import TetMesh
from .particles import ParticleBatch

EXIT_DESTINATION = -1  # exit_face value for a particle ending inside the element

OUTCOME_NONE = 0
OUTCOME_REACHED = 1
OUTCOME_LEAKED = 2
OUTCOME_STUCK_KILLED = 3
OUTCOME_KILLED = 4     # killed by callback decision
OUTCOME_ABSORBED = 5   # set by the transport collision kernel

_ws_spec = [
    ("capacity", int64),
    ("active", int64[::1]),
    ("entry_face", int8[::1]),
    ("stuck", int8[::1]),
    ("outcome", int8[::1]),
    ("seg_total", float64[::1]),
    ("rng_block", uint64[::1]),
    ("stage_pos", float64[:, ::1]),
    ("ev_particle", int64[::1]),
    ("ev_element", int32[::1]),
    ("ev_face", int8[::1]),
    ("ev_start", float64[:, ::1]),
    ("ev_end", float64[:, ::1]),
    ("ev_length", float64[::1]),
    ("ev_next", int32[::1]),
    ("ev_next_prop", int32[::1]),
    ("ev_entry", int8[::1]),
    ("ev_done", int8[::1]),
    ("ev_done_prop", int8[::1]),
]


@jitclass(_ws_spec)
class TraceWorkspace:
    """Preallocated per-batch scratch: active list, per-particle walk state,
    and the per-sweep interface-event buffers."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.active = np.zeros(capacity, dtype=np.int64)
        self.entry_face = np.full(capacity, -1, dtype=np.int8)
        self.stuck = np.zeros(capacity, dtype=np.int8)
        self.outcome = np.zeros(capacity, dtype=np.int8)
        self.seg_total = np.zeros(capacity)
        self.rng_block = np.zeros(capacity, dtype=np.uint64)
        self.stage_pos = np.zeros((capacity, 3))
        self.ev_particle = np.zeros(capacity, dtype=np.int64)
        self.ev_element = np.zeros(capacity, dtype=np.int32)
        self.ev_face = np.zeros(capacity, dtype=np.int8)
        self.ev_start = np.zeros((capacity, 3))
        self.ev_end = np.zeros((capacity, 3))
        self.ev_length = np.zeros(capacity)
        self.ev_next = np.zeros(capacity, dtype=np.int32)
        self.ev_next_prop = np.zeros(capacity, dtype=np.int32)
        self.ev_entry = np.zeros(capacity, dtype=np.int8)
        self.ev_done = np.zeros(capacity, dtype=np.int8)
        self.ev_done_prop = np.zeros(capacity, dtype=np.int8)


def create_workspace(capacity: int) -> TraceWorkspace:
    if capacity <= 0:
        raise ValueError("workspace capacity must be positive")
    return TraceWorkspace(int(capacity))


@dataclass(frozen=True)
class InterfaceEvent:
    """One element-interface crossing of one particle."""

    particle: int
    element: int
    exit_face: int            # local face 0..3, or EXIT_DESTINATION
    boundary: bool            # exit face has no neighbor (vacuum leak)
    segment_start: np.ndarray
    segment_end: np.ndarray
    segment_length: float


class SweepEvents:
    """Batched view of one sweep's interface events (the callback surface).

    Read-only: particle, element, exit_face, boundary, segment_start,
    segment_end, segment_length. Writable decisions: next_element (element
    the particle moves into; -1 = none) and particle_done (nonzero stops
    the particle; clearing it on a walker-finished particle resurrects it).
    """

    def __init__(self, ws: TraceWorkspace, count: int):
        self._ws = ws
        self.count = count
        self.particle = ws.ev_particle[:count]
        self.element = ws.ev_element[:count]
        self.exit_face = ws.ev_face[:count]
        self.segment_start = ws.ev_start[:count]
        self.segment_end = ws.ev_end[:count]
        self.segment_length = ws.ev_length[:count]
        self.next_element = ws.ev_next[:count]
        self.particle_done = ws.ev_done[:count]

    @property
    def boundary(self) -> np.ndarray:
        return (self._ws.ev_next_prop[:self.count] < 0) & (self.exit_face >= 0)

    def __len__(self) -> int:
        return self.count

    def event(self, k: int) -> InterfaceEvent:
        if not 0 <= k < self.count:
            raise IndexError(k)
        return InterfaceEvent(
            particle=int(self.particle[k]),
            element=int(self.element[k]),
            exit_face=int(self.exit_face[k]),
            boundary=bool(self.boundary[k]),
            segment_start=self.segment_start[k].copy(),
            segment_end=self.segment_end[k].copy(),
            segment_length=float(self.segment_length[k]),
        )


@dataclass(frozen=True)
class TraceSummary:
    sweeps: int
    events: int
    reached: int
    boundary_exits: int
    stuck_recoveries: int
    stuck_terminations: int


def _compact_flying(batch, ws):
    m = 0
    for i in range(batch.capacity):
        if batch.flying[i] != 0:
            ws.active[m] = i
            m += 1
    return m


def _sweep_fused(mesh, batch, ws, grid, m, score):
    """One lockstep sweep over ws.active[:m]: walk each flying particle
    across one element, commit, and (optionally) score track length.

    Returns (still_flying, events, reached, boundary, recoveries, killed).
    """
    ngroups = grid.num_groups
    still = 0
    events = 0
    reached = 0
    boundary = 0
    recoveries = 0
    killed = 0
    for k in prange(m):
        i = ws.active[k]
        if batch.flying[i] == 0:
            continue
        e = int64(batch.element[i])
        px, py, pz = batch.position[i, 0], batch.position[i, 1], batch.position[i, 2]
        dx, dy, dz = batch.destination[i, 0], batch.destination[i, 1], batch.destination[i, 2]
        ox, oy, oz = px, py, pz
        if ws.stuck[i] == 1:
            sx, sy, sz = dx - px, dy - py, dz - pz
            ln = np.sqrt(sx * sx + sy * sy + sz * sz)
            if ln > 0.0:
                ox += NUDGE * sx / ln
                oy += NUDGE * sy / ln
                oz += NUDGE * sz / ln
        kind, face, t = exit_search_core(mesh, e, ox, oy, oz, dx, dy, dz,
                                         ws.entry_face[i])
        if kind == 2:
            if elem_contains(mesh, e, dx, dy, dz, STUCK_TOL_FACTOR * EPS_BARY):
                kind = 0
                recoveries += 1
            elif ws.stuck[i] == 0:
                # rung 1: retry next sweep from a nudged origin
                ws.stuck[i] = 1
                recoveries += 1
                still += 1
                continue
            elif ws.stuck[i] == 1:
                # rung 2: hop to the neighbor containing the nudged point
                hop = -1
                for f in range(4):
                    nb = mesh.adj_elem[e, f]
                    if nb >= 0 and elem_contains(mesh, int64(nb),
                                                 ox, oy, oz, EPS_BARY):
                        hop = nb
                        break
                if hop >= 0:
                    batch.element[i] = hop
                    ws.entry_face[i] = -1
                    ws.stuck[i] = 2
                    recoveries += 1
                    still += 1
                    continue
                batch.flying[i] = 0
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_STUCK_KILLED
                killed += 1
                continue
            else:
                batch.flying[i] = 0
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_STUCK_KILLED
                killed += 1
                continue
        events += 1
        ws.stuck[i] = 0
        if kind == 0:
            seg = np.sqrt((dx - px) ** 2 + (dy - py) ** 2 + (dz - pz) ** 2)
            if score != 0:
                tid = get_thread_id()
                grid.partials[tid, e * ngroups + batch.group[i]] += (
                    batch.weight[i] * seg)
            ws.seg_total[i] += seg
            batch.position[i, 0] = dx
            batch.position[i, 1] = dy
            batch.position[i, 2] = dz
            batch.flying[i] = 0
            ws.entry_face[i] = -1
            ws.outcome[i] = OUTCOME_REACHED
            reached += 1
        else:
            qx = ox + t * (dx - ox)
            qy = oy + t * (dy - oy)
            qz = oz + t * (dz - oz)
            seg = np.sqrt((qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2)
            if score != 0:
                tid = get_thread_id()
                grid.partials[tid, e * ngroups + batch.group[i]] += (
                    batch.weight[i] * seg)
            ws.seg_total[i] += seg
            batch.position[i, 0] = qx
            batch.position[i, 1] = qy
            batch.position[i, 2] = qz
            nb = mesh.adj_elem[e, face]
            if nb < 0:
                batch.flying[i] = 0
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_LEAKED
                boundary += 1
            else:
                batch.element[i] = nb
                ws.entry_face[i] = mesh.adj_face[e, face]
                still += 1
    return still, events, reached, boundary, recoveries, killed


def _sweep_events(mesh, batch, ws, m):
    """Proposal half-sweep for the callback path: computes each flying
    particle's crossing and fills the event buffers without committing.

    Stuck handling (tolerance retry, nudge scheduling, termination) happens
    here so the callback only ever sees real interface events.
    Returns (ev_count, recoveries, killed).
    """
    n = 0
    recoveries = 0
    killed = 0
    for k in range(m):
        i = ws.active[k]
        if batch.flying[i] == 0:
            continue
        e = int64(batch.element[i])
        px, py, pz = batch.position[i, 0], batch.position[i, 1], batch.position[i, 2]
        dx, dy, dz = batch.destination[i, 0], batch.destination[i, 1], batch.destination[i, 2]
        ox, oy, oz = px, py, pz
        if ws.stuck[i] == 1:
            sx, sy, sz = dx - px, dy - py, dz - pz
            ln = np.sqrt(sx * sx + sy * sy + sz * sz)
            if ln > 0.0:
                ox += NUDGE * sx / ln
                oy += NUDGE * sy / ln
                oz += NUDGE * sz / ln
        kind, face, t = exit_search_core(mesh, e, ox, oy, oz, dx, dy, dz,
                                         ws.entry_face[i])
        if kind == 2:
            if elem_contains(mesh, e, dx, dy, dz, STUCK_TOL_FACTOR * EPS_BARY):
                kind = 0
                recoveries += 1
            elif ws.stuck[i] == 0:
                ws.stuck[i] = 1
                recoveries += 1
                continue
            elif ws.stuck[i] == 1:
                hop = -1
                for f in range(4):
                    nb = mesh.adj_elem[e, f]
                    if nb >= 0 and elem_contains(mesh, int64(nb),
                                                 ox, oy, oz, EPS_BARY):
                        hop = nb
                        break
                if hop >= 0:
                    batch.element[i] = hop
                    ws.entry_face[i] = -1
                    ws.stuck[i] = 2
                    recoveries += 1
                    continue
                batch.flying[i] = 0
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_STUCK_KILLED
                killed += 1
                continue
            else:
                batch.flying[i] = 0
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_STUCK_KILLED
                killed += 1
                continue
        ws.stuck[i] = 0
        ws.ev_particle[n] = i
        ws.ev_element[n] = e
        ws.ev_start[n, 0] = px
        ws.ev_start[n, 1] = py
        ws.ev_start[n, 2] = pz
        if kind == 0:
            ws.ev_face[n] = EXIT_DESTINATION
            ws.ev_end[n, 0] = dx
            ws.ev_end[n, 1] = dy
            ws.ev_end[n, 2] = dz
            ws.ev_length[n] = np.sqrt(
                (dx - px) ** 2 + (dy - py) ** 2 + (dz - pz) ** 2)
            ws.ev_next_prop[n] = -1
            ws.ev_entry[n] = -1
            ws.ev_done_prop[n] = 1
        else:
            qx = ox + t * (dx - ox)
            qy = oy + t * (dy - oy)
            qz = oz + t * (dz - oz)
            ws.ev_face[n] = face
            ws.ev_end[n, 0] = qx
            ws.ev_end[n, 1] = qy
            ws.ev_end[n, 2] = qz
            ws.ev_length[n] = np.sqrt(
                (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2)
            nb = mesh.adj_elem[e, face]
            ws.ev_next_prop[n] = nb
            ws.ev_entry[n] = mesh.adj_face[e, face] if nb >= 0 else -1
            ws.ev_done_prop[n] = 1 if nb < 0 else 0
        ws.ev_next[n] = ws.ev_next_prop[n]
        ws.ev_done[n] = ws.ev_done_prop[n]
        n += 1
    return n, recoveries, killed


def _commit_events(mesh, batch, ws, grid, nev, score):
    """Apply the (possibly callback-modified) decisions for one sweep.

    Returns (still_flying, reached, boundary).
    """
    ngroups = grid.num_groups
    still = 0
    reached = 0
    boundary = 0
    for k in range(nev):
        i = ws.ev_particle[k]
        e = int64(ws.ev_element[k])
        seg = ws.ev_length[k]
        if score != 0:
            grid.partials[0, e * ngroups + batch.group[i]] += (
                batch.weight[i] * seg)
        ws.seg_total[i] += seg
        batch.position[i, 0] = ws.ev_end[k, 0]
        batch.position[i, 1] = ws.ev_end[k, 1]
        batch.position[i, 2] = ws.ev_end[k, 2]
        if ws.ev_done[k] != 0:
            batch.flying[i] = 0
            if ws.ev_face[k] == -1:
                ws.outcome[i] = OUTCOME_REACHED
                ws.entry_face[i] = -1
                reached += 1
            elif ws.ev_next_prop[k] < 0:
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_LEAKED
                boundary += 1
            else:
                ws.outcome[i] = OUTCOME_KILLED
        else:
            nxt = ws.ev_next[k]
            if nxt >= 0:
                batch.element[i] = nxt
                # entry-face exclusion only survives an unmodified move
                if nxt == ws.ev_next_prop[k]:
                    ws.entry_face[i] = ws.ev_entry[k]
                else:
                    ws.entry_face[i] = -1
            else:
                ws.entry_face[i] = -1
            still += 1
    return still, reached, boundary


_compact_flying_k = njit(cache=False)(_compact_flying)
_sweep_fused_serial = njit(cache=False)(_sweep_fused)
_sweep_fused_parallel = njit(parallel=True, cache=False)(_sweep_fused)
_sweep_events_k = njit(cache=False)(_sweep_events)
_commit_events_k = njit(cache=False)(_commit_events)


_sink = []


def _score_sink():
    """Shared throwaway 1x1 grid for unscored traces."""
    if not _sink:
        from .tally import create_grid
        _sink.append(create_grid(1, 1))
    return _sink[0]


def _check_localized(batch) -> None:
    flying = np.asarray(batch.flying, dtype=bool)
    if flying.any() and (np.asarray(batch.element)[flying] < 0).any():
        bad = int(np.nonzero(flying & (np.asarray(batch.element) < 0))[0][0])
        raise ValueError(
            f"flying particle {bad} is not localized (element = -1); "
            "call initialize_locations first")


def _sweep_guard(mesh: TetMesh) -> int:
    return 2 * mesh.num_elements + 1000


def trace_batch(mesh: TetMesh, batch: ParticleBatch, callback=None,
                workspace: TraceWorkspace | None = None, *, grid=None,
                max_sweeps: int | None = None) -> TraceSummary:
    """Advance every flying particle to its destination or the boundary,
    invoking `callback(events)` once per sweep on the batched events.

    When `grid` is given, track length is scored per event (weight x length
    into (element, group)) after the callback has run.
    """
    _check_localized(batch)
    ws = workspace if workspace is not None else create_workspace(batch.capacity)
    mk = mesh.kernel_data()
    limit = max_sweeps if max_sweeps is not None else _sweep_guard(mesh)
    score = 0 if grid is None else 1
    if grid is None:
        grid = _score_sink()

    m = _compact_flying_k(batch, ws)
    sweeps = events = reached = boundary = recov = killed = 0
    while m > 0:
        nev, r, kx = _sweep_events_k(mk, batch, ws, m)
        recov += r
        killed += kx
        if callback is not None and nev > 0:
            callback(SweepEvents(ws, nev))
        still, rc, bd = _commit_events_k(mk, batch, ws, grid, nev, score)
        events += nev
        reached += rc
        boundary += bd
        sweeps += 1
        # recompact: callbacks may kill or resurrect arbitrary particles
        m = _compact_flying_k(batch, ws)
        if sweeps > limit:
            raise RuntimeError(
                f"trace did not terminate within {limit} sweeps "
                f"({m} particles still flying)")
    return TraceSummary(sweeps, events, reached, boundary, recov, killed)


def trace_and_score(mesh: TetMesh, batch: ParticleBatch,
                    ws: TraceWorkspace, grid, *, score: bool = True,
                    threads: int = 1,
                    max_sweeps: int | None = None) -> TraceSummary:
    """Fused walk + track-length scoring (the allocation-free hot path)."""
    mk = mesh.kernel_data()
    sweep = _sweep_fused_serial if threads <= 1 else _sweep_fused_parallel
    limit = max_sweeps if max_sweeps is not None else _sweep_guard(mesh)
    sflag = 1 if score else 0

    m = _compact_flying_k(batch, ws)
    sweeps = events = reached = boundary = recov = killed = 0
    remaining = m
    while remaining > 0:
        remaining, ev, rc, bd, r, kx = sweep(mk, batch, ws, grid, m, sflag)
        events += ev
        reached += rc
        boundary += bd
        recov += r
        killed += kx
        sweeps += 1
        if sweeps > limit:
            raise RuntimeError(
                f"trace did not terminate within {limit} sweeps "
                f"({remaining} particles still flying)")
    return TraceSummary(sweeps, events, reached, boundary, recov, killed)


def _tie_break_faces(mesh, batch, n):
    """Move boundary-coincident localized particles to the lowest-id
    element sharing the face(s) their position lies on."""
    for i in range(n):
        if batch.alive[i] == 0 or batch.element[i] < 0:
            continue
        moved = True
        while moved:
            moved = False
            e = int64(batch.element[i])
            l0, l1, l2, l3, d = geom.elem_bary(
                mesh, e, batch.position[i, 0], batch.position[i, 1],
                batch.position[i, 2])
            if d == 0.0:
                break
            for f in range(4):
                lam = l0
                if f == 1:
                    lam = l1
                elif f == 2:
                    lam = l2
                elif f == 3:
                    lam = l3
                if lam <= EPS_BARY:
                    nb = mesh.adj_elem[e, f]
                    if nb >= 0 and nb < e and elem_contains(
                            mesh, nb, batch.position[i, 0],
                            batch.position[i, 1], batch.position[i, 2],
                            EPS_BARY):
                        batch.element[i] = nb
                        moved = True
                        break


_tie_break_faces_k = njit(cache=False)(_tie_break_faces)


def initialize_locations(mesh: TetMesh, batch: ParticleBatch, positions,
                         count: int, workspace: TraceWorkspace | None = None,
                         threads: int = 1) -> TraceSummary:
    """Localize `count` particles to the elements containing `positions`.

    Every particle starts from a trial location (the centroid of element 0)
    and the adjacency walk carries it to its true position. Positions
    outside the mesh leave the particle with alive = 0 and element = -1.
    Boundary-coincident positions resolve to the lowest sharing element id.
    """
    count = int(count)
    if count > batch.capacity:
        raise ValueError(f"count {count} exceeds capacity {batch.capacity}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1)
    if pos.size != 3 * count:
        raise ValueError(f"positions must hold 3*count = {3 * count} floats, "
                         f"got {pos.size}")
    pos = pos.reshape(count, 3)
    ws = workspace if workspace is not None else create_workspace(batch.capacity)

    lo, hi = mesh.bounding_box[0], mesh.bounding_box[1]
    inside = np.all((pos >= lo) & (pos <= hi), axis=1)

    batch.count = count
    batch.flying[count:] = 0
    batch.destination[:count] = pos
    batch.position[:count] = mesh.centroids[0]
    batch.element[:count] = 0
    batch.flying[:count] = inside.astype(np.int8)
    batch.alive[:count] = inside.astype(np.int8)
    batch.element[:count][~inside] = -1
    ws.entry_face[:count] = -1
    ws.stuck[:count] = 0
    ws.outcome[:count] = OUTCOME_NONE
    ws.seg_total[:count] = 0.0

    summary = trace_and_score(mesh, batch, ws, _score_sink(), score=False,
                              threads=threads)
    # walk may push a numerically-outside point through a boundary face
    out = np.asarray(ws.outcome[:count])
    lost = (out == OUTCOME_LEAKED) | (out == OUTCOME_STUCK_KILLED)
    if lost.any():
        batch.element[:count][lost] = -1
    _tie_break_faces_k(mesh.kernel_data(), batch, count)
    return summary

"""Current-practice tally path for comparison: KD-tree point localization,
re-localization of every segment start, and dynamically grown per-particle
segment vectors.

This backend intentionally reproduces the allocation-heavy pattern it is
measured against - every segment performs at least one dynamic allocation
(localization scratch, plus vector growth) and never consults the mesh
adjacency table. The per-element geometry arithmetic is shared with the
adjacency walk so both backends tally identical segments for identical
trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import get_thread_id, njit, prange
from numba import float64, int8, int32, int64
from numba.experimental import jitclass

from .geometry import (EPS_BARY, EPS_T, NUDGE, STUCK_TOL_FACTOR,
                       elem_bary, elem_bary_direction, elem_contains,
                       elem_face_hit)
from .mesh import TetMesh
from .particles import ParticleBatch
from .search import (OUTCOME_LEAKED, OUTCOME_REACHED, OUTCOME_STUCK_KILLED,
                     TraceSummary, TraceWorkspace, _compact_flying_k)

# |lambda| below this marks the query point as lying on that face
_EPS_ENTER = 1e-9
_LEAF_SIZE = 8
_MAX_DEPTH = 48

_kd_spec = [
    ("node_axis", int8[::1]),
    ("node_split", float64[::1]),
    ("node_left", int32[::1]),
    ("node_right", int32[::1]),
    ("leaf_start", int32[::1]),
    ("leaf_count", int32[::1]),
    ("leaf_elems", int32[::1]),
    ("max_leaf", int64),
    ("bbox", float64[:, ::1]),
]


@jitclass(_kd_spec)
class KdData:
    def __init__(self, node_axis, node_split, node_left, node_right,
                 leaf_start, leaf_count, leaf_elems, max_leaf, bbox):
        self.node_axis = node_axis
        self.node_split = node_split
        self.node_left = node_left
        self.node_right = node_right
        self.leaf_start = leaf_start
        self.leaf_count = leaf_count
        self.leaf_elems = leaf_elems
        self.max_leaf = max_leaf
        self.bbox = bbox


@dataclass
class KdTree:
    """Axis-aligned BSP over element bounding boxes with leaf id lists.

    Elements straddling a split plane appear on both sides, so the leaf
    reached by descending with a point contains every element whose
    bounding box holds that point.
    """

    mesh: TetMesh
    node_axis: np.ndarray
    node_split: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    leaf_elems: np.ndarray
    _kernel_data: list = field(default_factory=list, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.node_axis.shape[0]

    @property
    def max_leaf_size(self) -> int:
        return int(self.leaf_count.max()) if self.leaf_count.size else 0

    def kernel_data(self) -> KdData:
        if not self._kernel_data:
            self._kernel_data.append(KdData(
                self.node_axis, self.node_split, self.node_left,
                self.node_right, self.leaf_start, self.leaf_count,
                self.leaf_elems, max(1, self.max_leaf_size),
                self.mesh.bounding_box))
        return self._kernel_data[0]

    def query(self, point, tol: float = EPS_BARY) -> int:
        """Containing element id for a point (-1 when not found),
        lowest id on boundary ties."""
        p = np.asarray(point, dtype=np.float64).reshape(3)
        return int(_kd_locate_k(self.mesh.kernel_data(), self.kernel_data(),
                                p[0], p[1], p[2], tol))


def build_kdtree(mesh: TetMesh, leaf_size: int = _LEAF_SIZE) -> KdTree:
    """Median-split BSP on the longest axis, leaves of <= leaf_size ids."""
    ne = mesh.num_elements
    corners = mesh.vertices[mesh.elements]          # (E, 4, 3)
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)

    node_axis: list[int] = []
    node_split: list[float] = []
    node_left: list[int] = []
    node_right: list[int] = []
    leaf_start: list[int] = []
    leaf_count: list[int] = []
    leaf_elems: list[np.ndarray] = []
    leaf_total = 0

    def new_node():
        node_axis.append(-1)
        node_split.append(0.0)
        node_left.append(-1)
        node_right.append(-1)
        leaf_start.append(-1)
        leaf_count.append(0)
        return len(node_axis) - 1

    def make_leaf(node, ids):
        nonlocal leaf_total
        ids = np.sort(ids).astype(np.int32)
        leaf_start[node] = leaf_total
        leaf_count[node] = ids.size
        leaf_elems.append(ids)
        leaf_total += ids.size

    # iterative split to keep deep trees off the Python stack
    root = new_node()
    stack = [(root, np.arange(ne, dtype=np.int64), 0)]
    while stack:
        node, ids, depth = stack.pop()
        if ids.size <= leaf_size or depth >= _MAX_DEPTH:
            make_leaf(node, ids)
            continue
        ext = hi[ids].max(axis=0) - lo[ids].min(axis=0)
        axis = int(np.argmax(ext))
        centers = 0.5 * (lo[ids, axis] + hi[ids, axis])
        split = float(np.median(centers))
        left_ids = ids[lo[ids, axis] <= split]
        right_ids = ids[hi[ids, axis] >= split]
        if left_ids.size == ids.size and right_ids.size == ids.size:
            make_leaf(node, ids)  # split separates nothing
            continue
        node_axis[node] = axis
        node_split[node] = split
        left = new_node()
        right = new_node()
        node_left[node] = left
        node_right[node] = right
        stack.append((left, left_ids, depth + 1))
        stack.append((right, right_ids, depth + 1))

    return KdTree(
        mesh=mesh,
        node_axis=np.array(node_axis, dtype=np.int8),
        node_split=np.array(node_split, dtype=np.float64),
        node_left=np.array(node_left, dtype=np.int32),
        node_right=np.array(node_right, dtype=np.int32),
        leaf_start=np.array(leaf_start, dtype=np.int32),
        leaf_count=np.array(leaf_count, dtype=np.int32),
        leaf_elems=(np.concatenate(leaf_elems) if leaf_elems
                    else np.zeros(0, dtype=np.int32)),
    )


@njit(inline="always", cache=True)
def _kd_descend(kd, x, y, z):
    node = 0
    while kd.node_axis[node] >= 0:
        ax = kd.node_axis[node]
        v = x
        if ax == 1:
            v = y
        elif ax == 2:
            v = z
        if v <= kd.node_split[node]:
            node = kd.node_left[node]
        else:
            node = kd.node_right[node]
    return node


@njit(inline="always", cache=True)
def _kd_locate(mesh, kd, x, y, z, tol):
    """Lowest-id element containing the point, or -1.

    Performs one scratch allocation per call (the candidate buffer), the
    cost pattern this backend exists to reproduce.
    """
    if (x < kd.bbox[0, 0] or y < kd.bbox[0, 1] or z < kd.bbox[0, 2]
            or x > kd.bbox[1, 0] or y > kd.bbox[1, 1] or z > kd.bbox[1, 2]):
        return int32(-1)
    node = _kd_descend(kd, x, y, z)
    cnt = kd.leaf_count[node]
    start = kd.leaf_start[node]
    scratch = np.empty(cnt, dtype=np.int32)
    for j in range(cnt):
        scratch[j] = kd.leaf_elems[start + j]
    for j in range(cnt):  # leaf ids sorted ascending: first hit = lowest id
        e = scratch[j]
        if elem_contains(mesh, int64(e), x, y, z, tol):
            return e
    return int32(-1)


@njit(cache=True)
def _kd_locate_k(mesh, kd, x, y, z, tol):
    return _kd_locate(mesh, kd, x, y, z, tol)


@njit(inline="always", cache=True)
def _kd_locate_entering(mesh, kd, x, y, z, sx, sy, sz, prev, tol):
    """Containing element the ray (direction s) is moving into.

    Excludes `prev`; among containing candidates prefers one whose
    on-face barycentric coordinates all increase along s (lowest id wins),
    falling back to plain containment.
    """
    if (x < kd.bbox[0, 0] or y < kd.bbox[0, 1] or z < kd.bbox[0, 2]
            or x > kd.bbox[1, 0] or y > kd.bbox[1, 1] or z > kd.bbox[1, 2]):
        return int32(-1)
    node = _kd_descend(kd, x, y, z)
    cnt = kd.leaf_count[node]
    start = kd.leaf_start[node]
    scratch = np.empty(cnt, dtype=np.int32)
    for j in range(cnt):
        scratch[j] = kd.leaf_elems[start + j]
    fallback = int32(-1)
    for j in range(cnt):
        e = scratch[j]
        if e == prev:
            continue
        l0, l1, l2, l3, det = elem_bary(mesh, int64(e), x, y, z)
        if det == 0.0:
            continue
        if l0 < -tol or l1 < -tol or l2 < -tol or l3 < -tol:
            continue
        g0, g1, g2, g3 = elem_bary_direction(mesh, int64(e), sx, sy, sz)
        entering = True
        if l0 < _EPS_ENTER and g0 < 0.0:
            entering = False
        if l1 < _EPS_ENTER and g1 < 0.0:
            entering = False
        if l2 < _EPS_ENTER and g2 < 0.0:
            entering = False
        if l3 < _EPS_ENTER and g3 < 0.0:
            entering = False
        if entering:
            return e
        if fallback < 0:
            fallback = e
    return fallback


@njit(inline="always", cache=True)
def _exit_search_entering(mesh, e, ox, oy, oz, dx, dy, dz):
    """Per-element step without adjacency knowledge: faces the segment is
    entering through (on-face, coordinate increasing) are excluded
    geometrically; otherwise identical arithmetic to the walk's search."""
    if elem_contains(mesh, e, dx, dy, dz, EPS_BARY):
        return 0, -1, 1.0
    sx, sy, sz = dx - ox, dy - oy, dz - oz
    l0, l1, l2, l3, det = elem_bary(mesh, e, ox, oy, oz)
    g0, g1, g2, g3 = elem_bary_direction(mesh, e, sx, sy, sz)
    tbest = 2.0
    fbest = -1
    for f in range(4):
        lam = l0
        grad = g0
        if f == 1:
            lam = l1
            grad = g1
        elif f == 2:
            lam = l2
            grad = g2
        elif f == 3:
            lam = l3
            grad = g3
        if lam < _EPS_ENTER and grad > 0.0:
            continue  # the face we are entering through
        t = elem_face_hit(mesh, e, f, ox, oy, oz, sx, sy, sz)
        if t >= 0.0 and t < tbest - EPS_T:
            tbest = t
            fbest = f
    if fbest < 0:
        return 2, -1, 0.0
    return 1, fbest, tbest


@njit(inline="always", cache=True)
def _baseline_particle(mesh, kd, batch, ws, grid, i, rec_elems, rec_lens,
                       record):
    """Trace one particle's step to destination or boundary, recording
    (element, length) into a freshly grown vector, then score the vector.

    Returns (segments, reached, leaked, recoveries, killed).
    """
    ngroups = grid.num_groups
    cap = 8
    seg_elems = np.empty(cap, dtype=np.int32)
    seg_lens = np.empty(cap, dtype=np.float64)
    nseg = 0

    px, py, pz = batch.position[i, 0], batch.position[i, 1], batch.position[i, 2]
    dx, dy, dz = batch.destination[i, 0], batch.destination[i, 1], batch.destination[i, 2]
    prev = int32(-1)
    e = int32(-1)
    need_localize = True
    stuck_tries = 0
    reached = 0
    leaked = 0
    recoveries = 0
    killed = 0

    while True:
        sx, sy, sz = dx - px, dy - py, dz - pz
        # search origin: the particle position, nudged while recovering
        ox, oy, oz = px, py, pz
        if stuck_tries > 0:
            ln = np.sqrt(sx * sx + sy * sy + sz * sz)
            if ln > 0.0:
                ox += NUDGE * sx / ln
                oy += NUDGE * sy / ln
                oz += NUDGE * sz / ln
        if need_localize:
            e = _kd_locate_entering(mesh, kd, ox, oy, oz, sx, sy, sz, prev,
                                    EPS_BARY)
            if e < 0:
                batch.flying[i] = 0
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_LEAKED
                leaked = 1
                break
            batch.element[i] = e

        kind, face, t = _exit_search_entering(mesh, int64(e), ox, oy, oz,
                                              dx, dy, dz)
        if kind == 2:
            if elem_contains(mesh, int64(e), dx, dy, dz,
                             STUCK_TOL_FACTOR * EPS_BARY):
                kind = 0
                recoveries += 1
            elif stuck_tries == 0:
                # retry the same element from a nudged origin
                stuck_tries = 1
                need_localize = False
                recoveries += 1
                continue
            elif stuck_tries == 1:
                # hand the nudged point back to the localizer
                stuck_tries = 2
                need_localize = True
                prev = e
                recoveries += 1
                continue
            else:
                batch.flying[i] = 0
                batch.alive[i] = 0
                ws.outcome[i] = OUTCOME_STUCK_KILLED
                killed = 1
                break
        stuck_tries = 0

        if nseg == cap:
            cap = cap * 2
            grown_e = np.empty(cap, dtype=np.int32)
            grown_l = np.empty(cap, dtype=np.float64)
            for s in range(nseg):
                grown_e[s] = seg_elems[s]
                grown_l[s] = seg_lens[s]
            seg_elems = grown_e
            seg_lens = grown_l

        if kind == 0:
            seg = np.sqrt((dx - px) ** 2 + (dy - py) ** 2 + (dz - pz) ** 2)
            seg_elems[nseg] = e
            seg_lens[nseg] = seg
            nseg += 1
            batch.position[i, 0] = dx
            batch.position[i, 1] = dy
            batch.position[i, 2] = dz
            batch.flying[i] = 0
            ws.outcome[i] = OUTCOME_REACHED
            reached = 1
            break
        qx = ox + t * (dx - ox)
        qy = oy + t * (dy - oy)
        qz = oz + t * (dz - oz)
        seg = np.sqrt((qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2)
        seg_elems[nseg] = e
        seg_lens[nseg] = seg
        nseg += 1
        batch.position[i, 0] = qx
        batch.position[i, 1] = qy
        batch.position[i, 2] = qz
        px, py, pz = qx, qy, qz
        prev = e
        need_localize = True

    # two-pass pattern: trace recorded the vector, now sum it into the bins
    tid = get_thread_id()
    g = batch.group[i]
    w = batch.weight[i]
    total = 0.0
    for s in range(nseg):
        grid.partials[tid, int64(seg_elems[s]) * ngroups + g] += w * seg_lens[s]
        total += seg_lens[s]
        if record != 0 and s < rec_elems.shape[0]:
            rec_elems[s] = seg_elems[s]
            rec_lens[s] = seg_lens[s]
    ws.seg_total[i] += total
    return nseg, reached, leaked, recoveries, killed


_NOREC_E = np.zeros(0, dtype=np.int32)
_NOREC_L = np.zeros(0, dtype=np.float64)


def _baseline_sweep(mesh, kd, batch, ws, grid, m, norec_e, norec_l):
    events = 0
    reached = 0
    leaked = 0
    recov = 0
    killed = 0
    for k in prange(m):
        i = ws.active[k]
        if batch.flying[i] == 0:
            continue
        ev, rc, lk, rv, kl = _baseline_particle(mesh, kd, batch, ws, grid, i,
                                                norec_e, norec_l, 0)
        events += ev
        reached += rc
        leaked += lk
        recov += rv
        killed += kl
    return events, reached, leaked, recov, killed


def _baseline_localize_kernel(mesh, kd, batch, ws, n):
    for i in prange(n):
        if batch.alive[i] == 0:
            continue
        e = _kd_locate(mesh, kd, ws.stage_pos[i, 0], ws.stage_pos[i, 1],
                       ws.stage_pos[i, 2], EPS_BARY)
        batch.element[i] = e
        batch.position[i, 0] = ws.stage_pos[i, 0]
        batch.position[i, 1] = ws.stage_pos[i, 1]
        batch.position[i, 2] = ws.stage_pos[i, 2]
        if e < 0:
            batch.alive[i] = 0
            batch.flying[i] = 0
        ws.entry_face[i] = -1
        ws.stuck[i] = 0
        ws.seg_total[i] = 0.0


@njit(cache=True)
def _baseline_trace_one(mesh, kd, batch, ws, grid, rec_elems, rec_lens):
    return _baseline_particle(mesh, kd, batch, ws, grid, 0, rec_elems,
                              rec_lens, 1)


_baseline_sweep_s = njit(cache=False)(_baseline_sweep)
_baseline_sweep_p = njit(parallel=True, cache=False)(_baseline_sweep)
_baseline_localize_s = njit(cache=False)(_baseline_localize_kernel)
_baseline_localize_p = njit(parallel=True, cache=False)(_baseline_localize_kernel)


def baseline_localize(mesh: TetMesh, kdtree: KdTree, batch: ParticleBatch,
                      ws: TraceWorkspace, n: int, threads: int = 1) -> None:
    """Tree localization of the staged source positions (no walking)."""
    kern = _baseline_localize_s if threads <= 1 else _baseline_localize_p
    kern(mesh.kernel_data(), kdtree.kernel_data(), batch, ws, n)


def baseline_advance(mesh: TetMesh, kdtree: KdTree, batch: ParticleBatch,
                     ws: TraceWorkspace, grid, threads: int = 1) -> TraceSummary:
    """Trace and score every flying particle's loaded step the
    current-practice way (re-localize each segment, grow a vector)."""
    m = _compact_flying_k(batch, ws)
    sweep = _baseline_sweep_s if threads <= 1 else _baseline_sweep_p
    ev, reached, leaked, recov, killed = sweep(
        mesh.kernel_data(), kdtree.kernel_data(), batch, ws, grid, m,
        _NOREC_E, _NOREC_L)
    return TraceSummary(sweeps=1, events=int(ev), reached=int(reached),
                        boundary_exits=int(leaked),
                        stuck_recoveries=int(recov),
                        stuck_terminations=int(killed))


@dataclass(frozen=True)
class SegmentList:
    """Per-step record of (element id, length) pairs."""

    elements: np.ndarray
    lengths: np.ndarray
    reached_destination: bool

    def __len__(self) -> int:
        return self.elements.shape[0]

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())


def baseline_trace(mesh: TetMesh, kdtree: KdTree, origin, dest) -> SegmentList:
    """Trace one step origin -> dest through the mesh the current-practice
    way and return the recorded segment vector in crossing order."""
    from .particles import create_batch
    from .search import create_workspace
    from .tally import create_grid

    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    dest = np.asarray(dest, dtype=np.float64).reshape(3)
    if kdtree.query(origin) < 0:
        raise ValueError(f"origin {origin.tolist()} is outside the mesh")

    batch = create_batch(1)
    ws = create_workspace(1)
    grid = create_grid(mesh.num_elements, 1)
    batch.count = 1
    batch.position[0] = origin
    batch.destination[0] = dest
    batch.weight[0] = 1.0
    batch.flying[0] = 1
    batch.alive[0] = 1

    rec_cap = mesh.num_elements + 8
    rec_elems = np.zeros(rec_cap, dtype=np.int32)
    rec_lens = np.zeros(rec_cap, dtype=np.float64)
    nseg, reached, leaked, recov, killed = _baseline_trace_one(
        mesh.kernel_data(), kdtree.kernel_data(), batch, ws, grid,
        rec_elems, rec_lens)
    if killed:
        raise RuntimeError("baseline trace failed to localize mid-trace")
    return SegmentList(elements=rec_elems[:nseg].copy(),
                       lengths=rec_lens[:nseg].copy(),
                       reached_destination=bool(reached))

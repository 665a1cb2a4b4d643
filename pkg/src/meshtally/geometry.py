"""Geometric kernels: barycentric coordinates, segment-face intersection by
an explicit 3x3 Cramer solve, point-in-tet tests, and exit-face selection.

All public functions are deterministic pure functions; the scalar cores are
numba-inlined into the tracing kernels so every code path (walk, baseline,
Python-level API) evaluates identical arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

from .mesh import TetMesh

# barycentric slack: a point is inside if all coordinates >= -EPS_BARY
EPS_BARY = 1e-10
# parametric cutoff along a segment (t in [0, 1]); rejects zero-length steps
# and re-hits of the face the segment starts on
EPS_T = 1e-12
# |plane distance| below which a face counts as containing the query point
# (used by the baseline's geometric entry-face identification)
EPS_FACE = 1e-10
STUCK_TOL_FACTOR = 10.0
NUDGE = 1e-9  # cm, stuck-recovery displacement along the flight direction


class ExitKind(IntEnum):
    REACHED_DESTINATION = 0
    EXIT_FACE = 1
    STUCK = 2


@dataclass(frozen=True)
class ExitResult:
    kind: ExitKind
    face: int                 # local face id, -1 unless kind == EXIT_FACE
    t: float                  # parametric position along the segment
    point: np.ndarray         # (3,) intersection point or destination


class SingularGeometryError(ValueError):
    """A tetrahedron is degenerate (zero or near-zero volume)."""


@njit(inline="always", cache=True)
def det3(a11, a12, a13, a21, a22, a23, a31, a32, a33):
    return (a11 * (a22 * a33 - a23 * a32)
            - a12 * (a21 * a33 - a23 * a31)
            + a13 * (a21 * a32 - a22 * a31))


@njit(inline="always", cache=True)
def bary_core(x0, y0, z0, x1, y1, z1, x2, y2, z2, x3, y3, z3, px, py, pz):
    """Barycentric coordinates of p in the tet (v0..v3).

    Returns (l0, l1, l2, l3, det6) where det6 is 6x the signed volume;
    the coordinates are garbage when det6 == 0.
    """
    a11, a21, a31 = x1 - x0, y1 - y0, z1 - z0
    a12, a22, a32 = x2 - x0, y2 - y0, z2 - z0
    a13, a23, a33 = x3 - x0, y3 - y0, z3 - z0
    bx, by, bz = px - x0, py - y0, pz - z0
    d = det3(a11, a12, a13, a21, a22, a23, a31, a32, a33)
    if d == 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    l1 = det3(bx, a12, a13, by, a22, a23, bz, a32, a33) / d
    l2 = det3(a11, bx, a13, a21, by, a23, a31, bz, a33) / d
    l3 = det3(a11, a12, bx, a21, a22, by, a31, a32, bz) / d
    return 1.0 - l1 - l2 - l3, l1, l2, l3, d


@njit(inline="always", cache=True)
def bary_direction_core(x0, y0, z0, x1, y1, z1, x2, y2, z2, x3, y3, z3,
                        dx, dy, dz):
    """Directional derivatives (dl0..dl3)/dt of the barycentric coordinates
    along direction d (exact: the map p -> lambda is affine)."""
    a11, a21, a31 = x1 - x0, y1 - y0, z1 - z0
    a12, a22, a32 = x2 - x0, y2 - y0, z2 - z0
    a13, a23, a33 = x3 - x0, y3 - y0, z3 - z0
    d = det3(a11, a12, a13, a21, a22, a23, a31, a32, a33)
    if d == 0.0:
        return 0.0, 0.0, 0.0, 0.0
    g1 = det3(dx, a12, a13, dy, a22, a23, dz, a32, a33) / d
    g2 = det3(a11, dx, a13, a21, dy, a23, a31, dz, a33) / d
    g3 = det3(a11, a12, dx, a21, a22, dy, a31, a32, dz) / d
    return -(g1 + g2 + g3), g1, g2, g3


@njit(inline="always", cache=True)
def face_hit_core(ax, ay, az, bx, by, bz, cx, cy, cz,
                  ox, oy, oz, sx, sy, sz):
    """Intersect the segment o + t*s, t in (EPS_T, 1], with the triangle
    (a, b, c): solve o + t*s = a + u*(b-a) + w*(c-a) by Cramer.

    Returns t, or -1.0 if there is no valid crossing (including segments
    parallel to the face plane).
    """
    e1x, e1y, e1z = ax - bx, ay - by, az - bz
    e2x, e2y, e2z = ax - cx, ay - cy, az - cz
    rx, ry, rz = ax - ox, ay - oy, az - oz
    d = det3(sx, e1x, e2x, sy, e1y, e2y, sz, e1z, e2z)
    if d == 0.0:
        return -1.0
    t = det3(rx, e1x, e2x, ry, e1y, e2y, rz, e1z, e2z) / d
    u = det3(sx, rx, e2x, sy, ry, e2y, sz, rz, e2z) / d
    w = det3(sx, e1x, rx, sy, e1y, ry, sz, e1z, rz) / d
    if (t > EPS_T and t <= 1.0 and u >= -EPS_BARY and w >= -EPS_BARY
            and u + w <= 1.0 + EPS_BARY):
        return t
    return -1.0


# local vertices spanning face f (opposite vertex f), fixed convention
_FV0 = np.array([1, 0, 0, 0], dtype=np.int64)
_FV1 = np.array([2, 2, 1, 1], dtype=np.int64)
_FV2 = np.array([3, 3, 3, 2], dtype=np.int64)


@njit(inline="always", cache=True)
def load_vertex(mesh, e, j):
    vi = mesh.elements[e, j]
    return mesh.vertices[vi, 0], mesh.vertices[vi, 1], mesh.vertices[vi, 2]


@njit(inline="always", cache=True)
def elem_bary(mesh, e, px, py, pz):
    x0, y0, z0 = load_vertex(mesh, e, 0)
    x1, y1, z1 = load_vertex(mesh, e, 1)
    x2, y2, z2 = load_vertex(mesh, e, 2)
    x3, y3, z3 = load_vertex(mesh, e, 3)
    return bary_core(x0, y0, z0, x1, y1, z1, x2, y2, z2, x3, y3, z3,
                     px, py, pz)


@njit(inline="always", cache=True)
def elem_bary_direction(mesh, e, sx, sy, sz):
    x0, y0, z0 = load_vertex(mesh, e, 0)
    x1, y1, z1 = load_vertex(mesh, e, 1)
    x2, y2, z2 = load_vertex(mesh, e, 2)
    x3, y3, z3 = load_vertex(mesh, e, 3)
    return bary_direction_core(x0, y0, z0, x1, y1, z1, x2, y2, z2,
                               x3, y3, z3, sx, sy, sz)


@njit(inline="always", cache=True)
def elem_contains(mesh, e, px, py, pz, tol):
    l0, l1, l2, l3, d = elem_bary(mesh, e, px, py, pz)
    if d == 0.0:
        return False
    return l0 >= -tol and l1 >= -tol and l2 >= -tol and l3 >= -tol


@njit(inline="always", cache=True)
def elem_face_hit(mesh, e, f, ox, oy, oz, sx, sy, sz):
    i0, i1, i2 = _FV0[f], _FV1[f], _FV2[f]
    ax, ay, az = load_vertex(mesh, e, i0)
    bx, by, bz = load_vertex(mesh, e, i1)
    cx, cy, cz = load_vertex(mesh, e, i2)
    return face_hit_core(ax, ay, az, bx, by, bz, cx, cy, cz,
                         ox, oy, oz, sx, sy, sz)


@njit(inline="always", cache=True)
def exit_search_core(mesh, e, ox, oy, oz, dx, dy, dz, entry_face):
    """One-element step of the walk: destination test, then the lowest-t
    face crossing among the faces other than entry_face.

    Returns (kind, face, t) with kind 0 = reached, 1 = exit face, 2 = stuck.
    Ties within EPS_T in t go to the lowest local face id.
    """
    if elem_contains(mesh, e, dx, dy, dz, EPS_BARY):
        return 0, -1, 1.0
    sx, sy, sz = dx - ox, dy - oy, dz - oz
    tbest = 2.0
    fbest = -1
    for f in range(4):
        if f == entry_face:
            continue
        t = elem_face_hit(mesh, e, f, ox, oy, oz, sx, sy, sz)
        if t >= 0.0 and t < tbest - EPS_T:
            tbest = t
            fbest = f
    if fbest < 0:
        return 2, -1, 0.0
    return 1, fbest, tbest


@njit(cache=True)
def _bary_arr(tet, p):
    return bary_core(tet[0, 0], tet[0, 1], tet[0, 2],
                     tet[1, 0], tet[1, 1], tet[1, 2],
                     tet[2, 0], tet[2, 1], tet[2, 2],
                     tet[3, 0], tet[3, 1], tet[3, 2],
                     p[0], p[1], p[2])


@njit(cache=True)
def _face_hit_arr(face, origin, seg):
    return face_hit_core(face[0, 0], face[0, 1], face[0, 2],
                         face[1, 0], face[1, 1], face[1, 2],
                         face[2, 0], face[2, 1], face[2, 2],
                         origin[0], origin[1], origin[2],
                         seg[0], seg[1], seg[2])


def _as_tet(tet) -> np.ndarray:
    tet = np.ascontiguousarray(tet, dtype=np.float64)
    if tet.shape != (4, 3):
        raise ValueError(f"tet must be (4, 3), got {tet.shape}")
    return tet


def barycentric_coords(tet, p) -> np.ndarray:
    """Barycentric coordinates of p with respect to a non-degenerate tet."""
    tet = _as_tet(tet)
    p = np.ascontiguousarray(p, dtype=np.float64)
    l0, l1, l2, l3, d = _bary_arr(tet, p)
    if d == 0.0:
        raise SingularGeometryError("degenerate tetrahedron")
    return np.array([l0, l1, l2, l3])


def point_in_tet(tet, p, tol: float = EPS_BARY) -> bool:
    """True iff every barycentric coordinate of p is >= -tol."""
    tet = _as_tet(tet)
    p = np.ascontiguousarray(p, dtype=np.float64)
    l0, l1, l2, l3, d = _bary_arr(tet, p)
    if d == 0.0:
        raise SingularGeometryError("degenerate tetrahedron")
    return bool(l0 >= -tol and l1 >= -tol and l2 >= -tol and l3 >= -tol)


def ray_face_intersection(origin, direction, face, max_t: float):
    """Intersection of the ray origin + t*direction with a triangle.

    Returns (t, point) with t in cm, or None when there is no crossing
    with t in (eps, max_t] and in-face coordinates; a ray parallel to the
    face plane gives None.
    """
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    direction = np.ascontiguousarray(direction, dtype=np.float64)
    face = np.ascontiguousarray(face, dtype=np.float64)
    if face.shape != (3, 3):
        raise ValueError(f"face must be (3, 3), got {face.shape}")
    if not max_t > 0.0:
        raise ValueError(f"max_t must be positive, got {max_t!r}")
    norm = float(np.sqrt(direction @ direction))
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector (|d| = {norm!r})")

    seg = direction * max_t
    t_par = _face_hit_arr(face, origin, seg)
    if t_par < 0.0:
        return None
    t = t_par * max_t
    return t, origin + t * direction


def find_exit_face(mesh: TetMesh, elem: int, origin, dest,
                   entry_face: int | None = None) -> ExitResult:
    """Step one element: either the destination is inside `elem`, or the
    segment exits through one of the (up to 3) faces other than entry_face.

    Stuck is reported honestly when no candidate face intersects; recovery
    policy is owned by the tracing loop.
    """
    if not 0 <= elem < mesh.num_elements:
        raise IndexError(f"element id {elem} out of range")
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dest = np.ascontiguousarray(dest, dtype=np.float64)
    ef = -1 if entry_face is None else int(entry_face)
    kind, face, t = exit_search_core(
        mesh.kernel_data(), elem,
        origin[0], origin[1], origin[2], dest[0], dest[1], dest[2], ef)
    if kind == 0:
        return ExitResult(ExitKind.REACHED_DESTINATION, -1, 1.0, dest.copy())
    if kind == 2:
        return ExitResult(ExitKind.STUCK, -1, float("nan"), origin.copy())
    point = origin + t * (dest - origin)
    return ExitResult(ExitKind.EXIT_FACE, int(face), float(t), point)

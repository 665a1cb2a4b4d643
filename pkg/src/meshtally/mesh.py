"""Immutable tetrahedral meshes with element-to-element face adjacency.

Local face convention: face i of a tet is the face opposite local vertex i,
i.e. it is spanned by the other three vertices. The adjacency table stores,
for each (element, local face), the neighbor element id and the neighbor's
local face id for the same geometric face, or -1 on the domain boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import float64, int8, int32
from numba.experimental import jitclass


class MalformedMeshError(ValueError):
    """The element/vertex data does not describe a conforming tet mesh."""


# face i (opposite vertex i) -> the three local vertices spanning it
FACE_VERTICES = np.array(
    [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]], dtype=np.int64
)

# Kuhn split of a hex into 6 tets around the main diagonal (corner bit b:
# bit2 = x, bit1 = y, bit0 = z). Every tet contains corners 0 and 7, so
# shared hex faces are split along the same diagonal in neighboring cells
# and the tessellation conforms without a face-matching pass.
_KUHN_TETS = np.array(
    [
        [0, 4, 6, 7],
        [0, 4, 5, 7],
        [0, 2, 6, 7],
        [0, 2, 3, 7],
        [0, 1, 5, 7],
        [0, 1, 3, 7],
    ],
    dtype=np.int64,
)

_DEGENERATE_REL = 1e-12


_meshdata_spec = [
    ("vertices", float64[:, ::1]),
    ("elements", int32[:, ::1]),
    ("adj_elem", int32[:, ::1]),
    ("adj_face", int8[:, ::1]),
    ("volumes", float64[::1]),
    ("centroids", float64[:, ::1]),
    ("bbox", float64[:, ::1]),
]


@jitclass(_meshdata_spec)
class MeshData:
    """Kernel-side view of a mesh: plain contiguous arrays only."""

    def __init__(self, vertices, elements, adj_elem, adj_face, volumes,
                 centroids, bbox):
        self.vertices = vertices
        self.elements = elements
        self.adj_elem = adj_elem
        self.adj_face = adj_face
        self.volumes = volumes
        self.centroids = centroids
        self.bbox = bbox


@dataclass(frozen=True)
class TetMesh:
    """Immutable tet mesh with precomputed adjacency, volumes, centroids."""

    vertices: np.ndarray          # (V, 3) float64, cm
    elements: np.ndarray          # (E, 4) int32 vertex ids
    adj_elem: np.ndarray          # (E, 4) int32 neighbor element or -1
    adj_face: np.ndarray          # (E, 4) int8 neighbor local face or -1
    volumes: np.ndarray           # (E,) float64, cm^3
    centroids: np.ndarray         # (E, 3) float64, cm
    bounding_box: np.ndarray      # (2, 3) float64 min/max corner, cm
    _kernel_data: list = field(default_factory=list, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def face_adjacency(self) -> np.ndarray:
        """(E, 4, 2) array of (neighbor element, neighbor local face)."""
        return np.stack([self.adj_elem, self.adj_face.astype(np.int32)], axis=2)

    def kernel_data(self) -> MeshData:
        """Jit-side view; built once and reused (arrays are shared)."""
        if not self._kernel_data:
            self._kernel_data.append(
                MeshData(self.vertices, self.elements, self.adj_elem,
                         self.adj_face, self.volumes, self.centroids,
                         self.bounding_box)
            )
        return self._kernel_data[0]

    @classmethod
    def from_arrays(cls, vertices, elements) -> "TetMesh":
        """Build a mesh from raw vertex/element arrays.

        Normalizes element orientation to positive volume, rejects
        degenerate elements, and builds the face adjacency table.
        """
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        elements = np.ascontiguousarray(elements, dtype=np.int32)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MalformedMeshError("vertices must be (V, 3)")
        if elements.ndim != 2 or elements.shape[1] != 4:
            raise MalformedMeshError("elements must be (E, 4)")
        if elements.size and (elements.min() < 0
                              or elements.max() >= vertices.shape[0]):
            raise MalformedMeshError("element vertex id out of range")

        elements = elements.copy()
        vol6 = _signed_volumes6(vertices, elements)
        neg = vol6 < 0.0
        if neg.any():
            elements[neg, 2], elements[neg, 3] = (
                elements[neg, 3].copy(), elements[neg, 2].copy())
            vol6 = np.abs(vol6)

        span = vertices.max(axis=0) - vertices.min(axis=0) if vertices.size else np.ones(3)
        scale3 = max(float(span.max()), 1.0) ** 3
        if (vol6 <= _DEGENERATE_REL * scale3).any():
            bad = int(np.argmin(vol6))
            raise MalformedMeshError(
                f"element {bad} is degenerate (volume {vol6[bad] / 6.0:g})")

        adj_elem, adj_face = build_adjacency(elements, vertices.shape[0])
        volumes = vol6 / 6.0
        centroids = vertices[elements].mean(axis=1)
        bbox = np.stack([vertices.min(axis=0), vertices.max(axis=0)])
        return cls(vertices, elements, adj_elem, adj_face,
                   np.ascontiguousarray(volumes),
                   np.ascontiguousarray(centroids),
                   np.ascontiguousarray(bbox))


def _signed_volumes6(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    a = vertices[elements[:, 0]]
    d1 = vertices[elements[:, 1]] - a
    d2 = vertices[elements[:, 2]] - a
    d3 = vertices[elements[:, 3]] - a
    return np.einsum("ij,ij->i", np.cross(d1, d2), d3)


def build_cube_mesh(n: int, edge_length: float = 1.0) -> TetMesh:
    """All-tet mesh of the cube [0, edge_length]^3: n^3 hex cells, 6 tets each."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"subdivisions must be a positive integer, got {n!r}")
    if not edge_length > 0.0:
        raise ValueError(f"edge_length must be positive, got {edge_length!r}")

    nv = n + 1
    h = edge_length / n
    axis = np.arange(nv, dtype=np.float64) * h
    # snap the far face exactly onto edge_length
    axis[-1] = edge_length
    ii, jj, kk = np.meshgrid(axis, axis, axis, indexing="ij")
    vertices = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)

    ci, cj, ck = np.meshgrid(
        np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    corners = np.empty((n ** 3, 8), dtype=np.int64)
    for b in range(8):
        di, dj, dk = (b >> 2) & 1, (b >> 1) & 1, b & 1
        corners[:, b] = ((ci + di) * nv + (cj + dj)) * nv + (ck + dk)

    elements = np.empty((6 * n ** 3, 4), dtype=np.int64)
    for t in range(6):
        elements[t::6] = corners[:, _KUHN_TETS[t]]
    return TetMesh.from_arrays(vertices, elements)


def build_adjacency(elements, vertex_count: int):
    """Symmetric face adjacency from element connectivity.

    Returns (adj_elem, adj_face), both (E, 4); -1 marks a boundary face.
    Raises MalformedMeshError if any face is shared by more than two
    elements or an element is duplicated.
    """
    elements = np.ascontiguousarray(elements, dtype=np.int32)
    ne = elements.shape[0]
    if ne and (elements.min() < 0 or elements.max() >= vertex_count):
        raise MalformedMeshError("element vertex id out of range")

    faces = np.empty((ne, 4, 3), dtype=np.int64)
    for f in range(4):
        tri = np.sort(elements[:, FACE_VERTICES[f]].astype(np.int64), axis=1)
        faces[:, f] = tri
    flat = faces.reshape(-1, 3)
    owner_elem = np.repeat(np.arange(ne, dtype=np.int64), 4)
    owner_face = np.tile(np.arange(4, dtype=np.int64), ne)

    order = np.lexsort((flat[:, 2], flat[:, 1], flat[:, 0]))
    fs = flat[order]
    oe = owner_elem[order]
    of = owner_face[order]

    same = np.all(fs[1:] == fs[:-1], axis=1) if ne else np.zeros(0, bool)
    # a face key appearing 3+ times shows up as two consecutive same-pairs
    if ne and np.any(same[1:] & same[:-1]):
        run = np.nonzero(same[1:] & same[:-1])[0][0]
        key = fs[run]
        raise MalformedMeshError(
            f"face with vertices {tuple(int(v) for v in key)} is shared by "
            "more than two elements (duplicate or non-manifold mesh)")

    adj_elem = np.full((ne, 4), -1, dtype=np.int32)
    adj_face = np.full((ne, 4), -1, dtype=np.int8)
    idx = np.nonzero(same)[0]
    e1, f1 = oe[idx], of[idx]
    e2, f2 = oe[idx + 1], of[idx + 1]
    if idx.size and np.any(e1 == e2):
        bad = int(e1[np.nonzero(e1 == e2)[0][0]])
        raise MalformedMeshError(
            f"element {bad} lists the same face twice (repeated vertex id)")
    adj_elem[e1, f1] = e2
    adj_face[e1, f1] = f2.astype(np.int8)
    adj_elem[e2, f2] = e1
    adj_face[e2, f2] = f1.astype(np.int8)
    return adj_elem, adj_face


def element_volume(mesh: TetMesh, elem: int) -> float:
    """Volume of one element, |det(v1-v0, v2-v0, v3-v0)| / 6."""
    if not 0 <= elem < mesh.num_elements:
        raise IndexError(f"element id {elem} out of range "
                         f"[0, {mesh.num_elements})")
    v = mesh.vertices[mesh.elements[elem]]
    return abs(float(np.linalg.det(v[1:] - v[0]))) / 6.0


def validate(mesh: TetMesh) -> list[str]:
    """Diagnostics for the mesh invariants; empty list iff the mesh is valid."""
    report: list[str] = []
    ne = mesh.num_elements

    vol6 = _signed_volumes6(mesh.vertices, mesh.elements)
    nonpos = np.nonzero(vol6 <= 0.0)[0]
    for e in nonpos[:10]:
        report.append(f"element {e}: non-positive volume {vol6[e] / 6.0:g}")

    adj_e, adj_f = mesh.adj_elem, mesh.adj_face
    for e in range(ne):
        for f in range(4):
            nb = adj_e[e, f]
            if nb < 0:
                continue
            if not 0 <= nb < ne:
                report.append(f"element {e} face {f}: neighbor id {nb} "
                              "out of range")
                continue
            nf = adj_f[e, f]
            if not 0 <= nf < 4:
                report.append(f"element {e} face {f}: neighbor face id {nf} "
                              "out of range")
                continue
            if adj_e[nb, nf] != e or adj_f[nb, nf] != f:
                report.append(
                    f"element {e} face {f}: asymmetric adjacency (neighbor "
                    f"{nb} face {nf} points back to element "
                    f"{adj_e[nb, nf]} face {adj_f[nb, nf]})")
            mine = set(mesh.elements[e, FACE_VERTICES[f]].tolist())
            theirs = set(mesh.elements[nb, FACE_VERTICES[nf]].tolist())
            if mine != theirs:
                report.append(
                    f"element {e} face {f}: adjacency pairs mismatched "
                    f"vertex sets {sorted(mine)} vs {sorted(theirs)}")
            if len(report) > 50:
                report.append("... further diagnostics suppressed")
                return report

    try:
        ref_e, ref_f = build_adjacency(mesh.elements, mesh.num_vertices)
    except MalformedMeshError as err:
        report.append(str(err))
    else:
        if not (np.array_equal(ref_e, adj_e) and np.array_equal(ref_f, adj_f)):
            bad = np.nonzero(ref_e != adj_e)
            if bad[0].size:
                e, f = int(bad[0][0]), int(bad[1][0])
                report.append(
                    f"element {e} face {f}: stored adjacency disagrees with "
                    f"connectivity (stored {adj_e[e, f]}, derived {ref_e[e, f]})")
    return report


def write_tetmesh(mesh: TetMesh, path) -> None:
    """Plain-text export: header, one vertex per line, one element per line."""
    lines = [f"tetmesh {mesh.num_vertices} {mesh.num_elements}"]
    for v in mesh.vertices:
        lines.append(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for e in mesh.elements:
        lines.append(f"{e[0]} {e[1]} {e[2]} {e[3]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_tetmesh(path) -> TetMesh:
    """Parse the plain-text format written by write_tetmesh."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "tetmesh":
            raise MalformedMeshError(
                f"{path}: expected header 'tetmesh <nverts> <nelems>'")
        try:
            nv, ne = int(header[1]), int(header[2])
        except ValueError as err:
            raise MalformedMeshError(f"{path}: bad header counts") from err
        try:
            vertices = np.loadtxt(fh, dtype=np.float64, max_rows=nv, ndmin=2)
            elements = np.loadtxt(fh, dtype=np.int64, max_rows=ne, ndmin=2)
        except ValueError as err:
            raise MalformedMeshError(f"{path}: {err}") from err
    if vertices.shape != (nv, 3) or elements.shape != (ne, 4):
        raise MalformedMeshError(
            f"{path}: body does not match header counts")
    return TetMesh.from_arrays(vertices, elements)

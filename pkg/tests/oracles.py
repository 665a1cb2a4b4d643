"""Independent reference implementations used to check the package.

Everything here is plain numpy written from the definitions; none of it
calls the package's geometry or tracing code.
"""

import numpy as np


def brute_force_face_counts(elements):
    """Histogram of face usage via hashing of sorted vertex triples.

    Returns (interior_count, boundary_count, max_users).
    """
    from collections import Counter
    faces = Counter()
    for tet in np.asarray(elements):
        a, b, c, d = (int(v) for v in tet)
        for tri in ((b, c, d), (a, c, d), (a, b, d), (a, b, c)):
            faces[tuple(sorted(tri))] += 1
    counts = np.array(list(faces.values()))
    return int((counts == 2).sum()), int((counts == 1).sum()), int(counts.max())


def bary_many(tets, p):
    """Barycentric coordinates of one point in many tets: (n, 4)."""
    tets = np.asarray(tets, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    v0 = tets[:, 0]
    m = np.stack([tets[:, 1] - v0, tets[:, 2] - v0, tets[:, 3] - v0], axis=2)
    lam123 = np.linalg.solve(m, (p - v0)[:, :, None])[:, :, 0]
    lam0 = 1.0 - lam123.sum(axis=1)
    return np.concatenate([lam0[:, None], lam123], axis=1)


def containing_element_exhaustive(mesh, points, tol=1e-10, chunk=2048):
    """Lowest-id element containing each point via a scan over all
    elements (vectorized over points, looped over elements)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    npts = points.shape[0]
    out = np.full(npts, -1, dtype=np.int64)
    verts = mesh.vertices
    elems = mesh.elements
    for e in range(mesh.num_elements):
        unassigned = out < 0
        if not unassigned.any():
            break
        tet = verts[elems[e]]
        v0 = tet[0]
        m = np.stack([tet[1] - v0, tet[2] - v0, tet[3] - v0], axis=1)
        minv = np.linalg.inv(m)
        lam123 = (points[unassigned] - v0) @ minv.T
        lam0 = 1.0 - lam123.sum(axis=1)
        inside = ((lam123 >= -tol).all(axis=1)) & (lam0 >= -tol)
        idx = np.nonzero(unassigned)[0][inside]
        out[idx] = e
    return out


class CubeClassifier:
    """Point -> containing element for the generated cube mesh, via
    point-in-tet tests over the tets of the point's hex cell (and adjacent
    cells near cell boundaries). Lowest element id wins ties."""

    def __init__(self, mesh, n, edge=1.0, tol=1e-12):
        self.mesh = mesh
        self.n = n
        self.h = edge / n
        self.edge = edge
        self.tol = tol
        # tets grouped by hex cell: the generator emits 6 per cell in order
        self.verts = mesh.vertices
        self.elems = mesh.elements

    def _hex_candidates(self, p):
        eps = 1e-9
        cands = set()
        for dx in (-eps, 0.0, eps):
            for dy in (-eps, 0.0, eps):
                for dz in (-eps, 0.0, eps):
                    q = p + np.array([dx, dy, dz])
                    ijk = np.floor(q / self.h).astype(int)
                    if ((ijk < 0) | (ijk >= self.n)).any():
                        continue
                    cell = (ijk[0] * self.n + ijk[1]) * self.n + ijk[2]
                    cands.update(range(6 * cell, 6 * cell + 6))
        return sorted(cands)

    def classify(self, p):
        p = np.asarray(p, dtype=np.float64)
        if (p < -self.tol).any() or (p > self.edge + self.tol).any():
            return -1
        cands = self._hex_candidates(p)
        if not cands:
            return -1
        tets = self.verts[self.elems[cands]]
        lam = bary_many(tets, p)
        inside = (lam >= -self.tol).all(axis=1)
        hits = np.nonzero(inside)[0]
        return int(cands[hits[0]]) if hits.size else -1

    def segment_elements(self, origin, dest, step=1e-5, refine=1e-9):
        """Dense-sampling oracle: classify points every `step` cm along the
        segment, bisect each classification change, return the element
        sequence and per-element lengths."""
        origin = np.asarray(origin, dtype=np.float64)
        dest = np.asarray(dest, dtype=np.float64)
        seg = dest - origin
        length = float(np.linalg.norm(seg))
        if length == 0.0:
            return [self.classify(origin)], [0.0]
        nstep = max(2, int(np.ceil(length / step)) + 1)
        ts = np.linspace(0.0, 1.0, nstep)
        # classify all samples (vectorized over candidates per point is
        # cheap; loop the points in python chunks for clarity)
        labels = np.empty(nstep, dtype=np.int64)
        for k in range(nstep):
            labels[k] = self.classify(origin + ts[k] * seg)

        elements = []
        cuts = [0.0]
        cur = labels[0]
        tol_t = refine / length
        for k in range(1, nstep):
            if labels[k] == cur:
                continue
            # bisect the change in (ts[k-1], ts[k])
            a, b = ts[k - 1], ts[k]
            la = cur
            while b - a > tol_t:
                mid = 0.5 * (a + b)
                if self.classify(origin + mid * seg) == la:
                    a = mid
                else:
                    b = mid
            elements.append(int(cur))
            cuts.append(0.5 * (a + b))
            cur = labels[k]
        elements.append(int(cur))
        cuts.append(1.0)
        lengths = np.diff(np.array(cuts)) * length
        return elements, list(lengths)


def merge_tiny_segments(elements, lengths, cutoff=1e-6):
    """Canonical form for sequence comparison: merge consecutive repeats
    and fold sub-cutoff slivers (grazing artifacts) into a neighbor."""
    def merge_repeats(es, ls):
        oe, ol = [], []
        for e, ln in zip(es, ls):
            if oe and e == oe[-1]:
                ol[-1] += ln
            else:
                oe.append(e)
                ol.append(ln)
        return oe, ol

    e1, l1 = merge_repeats(elements, lengths)
    e2, l2 = [], []
    carry = 0.0
    for e, ln in zip(e1, l1):
        if ln < cutoff:
            if l2:
                l2[-1] += ln
            else:
                carry += ln
        else:
            e2.append(e)
            l2.append(ln + carry)
            carry = 0.0
    if carry and l2:
        l2[-1] += carry
    return merge_repeats(e2, l2)


def ray_face_crossing_oracle(origin, direction, face, max_t, step=1e-5):
    """March o + t*d in `step` increments watching the signed plane
    distance; bisect the first in-triangle sign change. Returns t or None."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    face = np.asarray(face, dtype=np.float64)
    a, b, c = face
    normal = np.cross(b - a, c - a)
    nn = np.linalg.norm(normal)
    if nn == 0.0:
        return None
    normal = normal / nn

    def side(t):
        return float(np.dot(origin + t * direction - a, normal))

    def in_triangle(t, tol=1e-9):
        p = origin + t * direction
        # solve p - a = u*(b-a) + w*(c-a) in the face plane
        e1, e2 = b - a, c - a
        g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        rhs = np.array([(p - a) @ e1, (p - a) @ e2])
        u, w = np.linalg.solve(g, rhs)
        return u >= -tol and w >= -tol and u + w <= 1.0 + tol

    ts = np.arange(0.0, max_t + step, step)
    ts[-1] = min(ts[-1], max_t)
    s_prev = side(ts[0])
    for k in range(1, len(ts)):
        s_now = side(ts[k])
        if s_prev == 0.0 or s_prev * s_now < 0.0 or s_now == 0.0:
            lo, hi = ts[k - 1], ts[k]
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if side(lo) * side(mid) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            t = 0.5 * (lo + hi)
            if t > 1e-12 * max_t and in_triangle(t):
                return t
            s_prev = s_now
            continue
        s_prev = s_now
    return None

"""Planar Delaunay triangulation with point location and adjacency queries.

The default builder is an incremental Bowyer-Watson insertion with
floating-point predicates that fall back to exact rational arithmetic when
a determinant is too close to zero to trust.  ``method="qhull"`` delegates
the construction to :class:`scipy.spatial.Delaunay`; both produce the same
:class:`Triangulation` structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

BOUNDARY_LABELS = (-1, -2, -3, -4)
DEDUP_TOL = 1e-9
PREDICATE_TOL = 1e-12


class DegenerateInputError(ValueError):
    pass


class NotFoundError(LookupError):
    pass


def orient2d(a, b, c) -> float:
    """Twice the signed area of ``abc``; positive when counter-clockwise."""
    det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    scale = abs((b[0] - a[0]) * (c[1] - a[1])) + abs((b[1] - a[1]) * (c[0] - a[0]))
    if abs(det) > PREDICATE_TOL * max(scale, 1.0):
        return det
    fa = [Fraction(x) for x in a]
    fb = [Fraction(x) for x in b]
    fc = [Fraction(x) for x in c]
    exact = (fb[0] - fa[0]) * (fc[1] - fa[1]) - (fb[1] - fa[1]) * (fc[0] - fa[0])
    return float(exact) if exact != 0 else 0.0


def incircle(a, b, c, d) -> float:
    """Positive when ``d`` lies strictly inside the circle through CCW ``abc``."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = (alift * (bdx * cdy - bdy * cdx)
           + blift * (cdx * ady - cdy * adx)
           + clift * (adx * bdy - ady * bdx))
    scale = (alift * (abs(bdx * cdy) + abs(bdy * cdx))
             + blift * (abs(cdx * ady) + abs(cdy * adx))
             + clift * (abs(adx * bdy) + abs(ady * bdx)))
    if abs(det) > PREDICATE_TOL * max(scale, 1.0):
        return det
    A = [Fraction(x) - Fraction(y) for x, y in zip(a, d)]
    B = [Fraction(x) - Fraction(y) for x, y in zip(b, d)]
    C = [Fraction(x) - Fraction(y) for x, y in zip(c, d)]
    al = A[0] ** 2 + A[1] ** 2
    bl = B[0] ** 2 + B[1] ** 2
    cl = C[0] ** 2 + C[1] ** 2
    exact = (al * (B[0] * C[1] - B[1] * C[0])
             + bl * (C[0] * A[1] - C[1] * A[0])
             + cl * (A[0] * B[1] - A[1] * B[0]))
    return float(exact) if exact != 0 else 0.0


@dataclass(frozen=True)
class Triangulation:
    """Vertices, CCW triangles and edge adjacency.

    ``adjacency[t, j]`` is the triangle across the edge opposite vertex ``j``
    of triangle ``t`` (``-1`` on the hull).  ``labels`` carries a vertex
    kind: an obstacle id (``>= 0``) or a boundary marker (negative).
    """

    vertices: np.ndarray
    labels: np.ndarray
    triangles: np.ndarray
    adjacency: np.ndarray
    _corners: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for a in (self.vertices, self.labels, self.triangles, self.adjacency):
            a.setflags(write=False)
        corners = self.vertices[self.triangles] if len(self.triangles) else np.zeros((0, 3, 2))
        object.__setattr__(self, "_corners", corners)

    def __len__(self) -> int:
        return len(self.triangles)

    def triangle_points(self, tid: int) -> np.ndarray:
        return self._corners[tid]

    def triangle_labels(self, tid: int) -> tuple[int, int, int]:
        a, b, c = (int(self.labels[i]) for i in self.triangles[tid])
        return tuple(sorted((a, b, c)))

    def area(self, tid: int) -> float:
        a, b, c = self._corners[tid]
        return 0.5 * orient2d(a, b, c)

    def containing(self, p, tol: float = 1e-12) -> np.ndarray:
        """Ids of every closed triangle containing ``p``."""
        if not len(self.triangles):
            return np.zeros(0, dtype=int)
        c = self._corners
        px, py = float(p[0]), float(p[1])
        inside = np.ones(len(c), dtype=bool)
        for j in range(3):
            a = c[:, j]
            b = c[:, (j + 1) % 3]
            cross = (b[:, 0] - a[:, 0]) * (py - a[:, 1]) - (b[:, 1] - a[:, 1]) * (px - a[:, 0])
            scale = np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])
            inside &= cross >= -tol * np.maximum(scale, 1.0)
        return np.flatnonzero(inside)


def _dedup(points: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    close = np.max(np.abs(points[:, None, :] - points[None, :, :]), axis=2) <= DEDUP_TOL
    close = np.tril(close, k=-1)
    if not close.any():
        return points, labels
    # chains of near-duplicates collapse onto their first member
    keep = ~close.any(axis=1)
    return points[keep], labels[keep]


def _adjacency(triangles: np.ndarray) -> np.ndarray:
    n = len(triangles)
    adj = -np.ones((n, 3), dtype=int)
    if n == 0:
        return adj
    # directed edge opposite vertex j runs from vertex j+1 to vertex j+2
    u = triangles[:, [1, 2, 0]].ravel()
    v = triangles[:, [2, 0, 1]].ravel()
    owner = np.repeat(np.arange(n), 3)
    slot = np.tile(np.arange(3), n)
    base = int(triangles.max()) + 1
    keys = u * base + v
    twin = v * base + u
    order = np.argsort(keys)
    pos = np.searchsorted(keys[order], twin)
    pos = np.minimum(pos, len(keys) - 1)
    found = keys[order][pos] == twin
    adj[owner[found], slot[found]] = owner[order][pos[found]]
    return adj


def _bowyer_watson(points: np.ndarray) -> np.ndarray:
    n = len(points)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    centre = 0.5 * (lo + hi)
    span = max(float(np.max(hi - lo)), 1.0)
    big = 1e4 * span
    pts = [tuple(map(float, p)) for p in points]
    pts += [
        (centre[0] - 2 * big, centre[1] - big),
        (centre[0] + 2 * big, centre[1] - big),
        (centre[0], centre[1] + 2 * big),
    ]
    tris: dict[int, tuple[int, int, int]] = {0: (n, n + 1, n + 2)}
    edges: dict[tuple[int, int], int] = {(n, n + 1): 0, (n + 1, n + 2): 0, (n + 2, n): 0}
    next_id = 1

    for i in range(n):
        p = pts[i]
        start = None
        for t, (a, b, c) in tris.items():
            if (orient2d(pts[a], pts[b], p) >= 0 and orient2d(pts[b], pts[c], p) >= 0
                    and orient2d(pts[c], pts[a], p) >= 0):
                start = t
                break
        if start is None:  # pragma: no cover - the super triangle covers every input
            raise DegenerateInputError("point outside the super triangle")
        bad = {start}
        stack = [start]
        while stack:
            t = stack.pop()
            a, b, c = tris[t]
            for u, v in ((a, b), (b, c), (c, a)):
                nb = edges.get((v, u))
                if nb is None or nb in bad:
                    continue
                x, y, z = tris[nb]
                if incircle(pts[x], pts[y], pts[z], p) > 0:
                    bad.add(nb)
                    stack.append(nb)
        boundary = []
        for t in bad:
            a, b, c = tris[t]
            for u, v in ((a, b), (b, c), (c, a)):
                nb = edges.get((v, u))
                if nb is None or nb not in bad:
                    boundary.append((u, v))
        for t in bad:
            a, b, c = tris.pop(t)
            for u, v in ((a, b), (b, c), (c, a)):
                if edges.get((u, v)) == t:
                    del edges[(u, v)]
        for u, v in boundary:
            tris[next_id] = (u, v, i)
            edges[(u, v)] = next_id
            edges[(v, i)] = next_id
            edges[(i, u)] = next_id
            next_id += 1

    out = [tri for _, tri in sorted(tris.items()) if max(tri) < n]
    return np.array(out, dtype=int).reshape(-1, 3)


def _qhull(points: np.ndarray) -> np.ndarray:
    from scipy.spatial import Delaunay, QhullError

    try:
        simplices = Delaunay(points).simplices
    except QhullError as exc:
        raise DegenerateInputError(str(exc)) from exc
    return np.array(simplices, dtype=int).reshape(-1, 3)


def _signed_areas(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (points[triangles[:, j]] for j in range(3))
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    scale = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])) + np.abs((b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    unsure = np.abs(det) <= PREDICATE_TOL * np.maximum(scale, 1.0)
    for k in np.flatnonzero(unsure):
        i, j, m = triangles[k]
        det[k] = orient2d(points[i], points[j], points[m])
    return det


def _canonical(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Orient CCW, drop zero-area slivers, start each triple at its smallest index, sort."""
    tris = np.array(triangles, dtype=int).reshape(-1, 3)
    det = _signed_areas(points, tris)
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    # Qhull may leave zero-area slivers on collinear hull points
    tris = tris[det != 0]
    k = np.argmin(tris, axis=1)
    rows = np.arange(len(tris))[:, None]
    tris = tris[rows, (k[:, None] + np.arange(3)) % 3]
    order = np.lexsort((tris[:, 2], tris[:, 1], tris[:, 0]))
    return tris[order]


def delaunay(points, extent=None, labels=None, method: str = "bowyer_watson") -> Triangulation:
    """Delaunay triangulation of ``points``.

    With ``extent`` the four corners of ``[0, extent]`` are inserted first
    (labels ``-1..-4``) so the triangles tile the whole box.  Points closer
    than ``1e-9`` to an earlier point are merged into it.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if labels is None:
        labs = np.arange(len(pts), dtype=int)
    else:
        labs = np.asarray(labels, dtype=int).reshape(-1)
        if len(labs) != len(pts):
            raise ValueError("labels and points differ in length")
    if extent is not None:
        ex, ey = float(extent[0]), float(extent[1])
        corners = np.array([[0.0, 0.0], [ex, 0.0], [ex, ey], [0.0, ey]])
        pts = np.vstack([corners, pts])
        labs = np.concatenate([np.array(BOUNDARY_LABELS), labs])
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite point")
    pts, labs = _dedup(pts, labs)
    if len(pts) < 3:
        raise DegenerateInputError("need at least 3 distinct points")
    if all(orient2d(pts[0], pts[1], p) == 0.0 for p in pts[2:]):
        raise DegenerateInputError("all points are collinear")
    if method == "bowyer_watson":
        tris = _bowyer_watson(pts)
    elif method == "qhull":
        tris = _qhull(pts)
    else:
        raise ValueError(f"unknown method {method!r}")
    tris = _canonical(pts, tris)
    return Triangulation(pts, labs, tris, _adjacency(tris))


def locate(tri: Triangulation, p) -> int:
    """Lowest id among the closed triangles that contain ``p``."""
    hits = tri.containing(p)
    if len(hits) == 0:
        raise NotFoundError(f"point {tuple(p)} is outside the triangulation")
    return int(hits[0])


def neighbors(tri: Triangulation, tid: int) -> list[int]:
    if not 0 <= tid < len(tri):
        raise IndexError(f"triangle id {tid} out of range")
    return [int(t) for t in tri.adjacency[tid] if t >= 0]


def circumcircle_violations(tri: Triangulation) -> list[tuple[int, int]]:
    """Brute-force audit: every (triangle, vertex) pair breaking the empty-circle rule."""
    bad = []
    v = tri.vertices
    for t, (a, b, c) in enumerate(tri.triangles):
        for k in range(len(v)):
            if k in (a, b, c):
                continue
            if incircle(v[a], v[b], v[c], v[k]) > 0:
                bad.append((t, k))
    return bad

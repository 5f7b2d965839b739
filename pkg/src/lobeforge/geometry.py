"""Lobe midsurface generation, triangulation, thickness fields and STL export.

Units are millimetres throughout. Two design families are provided:

* ATL -- a planar lobe contour projected onto an ellipsoid.
* SG  -- a synclastic translation surface built from two circular arcs,
  optionally extended by a restraining band at the hinge.

Both are exposed as a :class:`SurfacePatch` (a map from the unit square)
and meshed by :func:`triangulate` into a :class:`TriMesh`.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import (
    InvalidContour,
    InvalidCurvature,
    MissingTags,
    ProjectionMiss,
    QualityFailure,
    SelfIntersection,
)

MIN_ANGLE_DEG = 10.0
MAX_EDGE_FACTOR = 1.5
# typical print-to-print thickness scatter
THICKNESS_TOLERANCE_MM = 0.05


# ---------------------------------------------------------------------------
# parameter types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EllipsoidSpec:
    a: float
    b: float
    c: float
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("ellipsoid semi-axes must be positive")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("projection direction must be a unit 3-vector")


@dataclass(frozen=True, eq=False)
class LobeContour:
    """Closed planar lobe outline in the sketch plane.

    ``points`` run counter-clockwise. The hinge is the segment from
    ``points[0]`` to ``points[1]``; the free edge is the polyline
    ``points[free_edge[0]] .. points[free_edge[1]]``; the two remaining
    stretches are the lateral edges.
    """

    points: np.ndarray
    free_edge: tuple[int, int]
    apex: tuple[float, float]
    tab: np.ndarray | None = None
    rib_offset: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if pts.ndim != 2 or pts.shape[1] != 2 or n < 4:
            raise InvalidContour("contour needs at least 4 planar points")
        f0, f1 = self.free_edge
        if not (1 <= f0 < f1 <= n - 1):
            raise InvalidContour("free edge indices must satisfy 1 <= f0 < f1 <= n-1")
        if _polygon_area(pts) <= 0:
            raise InvalidContour("contour must be counter-clockwise")
        if not _is_simple(pts):
            raise InvalidContour("contour is self-intersecting")
        if not _inside_or_on(np.asarray(self.apex, dtype=float), pts):
            raise InvalidContour("apex lies outside the contour")
        if self.rib_offset is not None and self.rib_offset <= 0:
            raise InvalidContour("rib offset must be positive")

    @property
    def hinge(self) -> np.ndarray:
        return self.points[[0, 1]]

    def boundary_curves(self):
        """Hinge, right lateral, free edge and left lateral as polylines."""
        p = self.points
        f0, f1 = self.free_edge
        closed = np.vstack([p, p[:1]])
        hinge = p[[0, 1]]
        right = p[1 : f0 + 1]
        free = p[f0 : f1 + 1]
        left = closed[f1:]
        return hinge, right, free, left


@dataclass(frozen=True)
class SGPatchSpec:
    """Simplified-geometry lobe: a synclastic patch of two circular arcs.

    ``length`` runs along the hinge (longitudinal), ``width`` from the hinge
    to the free edge (transverse). ``restraint`` adds a band of that width
    beyond the hinge which the holder clamps; 0 disables it.
    """

    length: float
    width: float
    k_long: float
    k_trans: float
    restraint: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("SG chord length and width must be positive")
        if self.restraint < 0:
            raise ValueError("restraint width must be non-negative")
        if self.k_long * self.k_trans < 0:
            raise InvalidCurvature("curvature parameters must share a sign (synclastic)")
        if (self.k_long == 0) != (self.k_trans == 0):
            raise InvalidCurvature("only the flat limit may have zero curvature")
        if abs(self.k_long) * self.length / 2 >= 1 or abs(self.k_trans) * self.width / 2 >= 1:
            raise InvalidCurvature("arc longer than a half circle")


@dataclass(frozen=True)
class ThicknessField:
    kind: str
    t_tip: float
    t_base: float

    def __post_init__(self):
        if self.kind not in ("constant", "taper"):
            raise ValueError(f"unknown thickness kind {self.kind!r}")
        if self.t_tip <= 0 or self.t_base <= 0:
            raise ValueError("thickness must be positive")
        if self.kind == "constant" and self.t_tip != self.t_base:
            raise ValueError("constant thickness needs t_tip == t_base")
        if self.t_base < self.t_tip:
            raise ValueError("taper requires t_base >= t_tip")

    @classmethod
    def constant(cls, t: float) -> "ThicknessField":
        return cls("constant", t, t)

    @classmethod
    def taper(cls, t_tip: float, t_base: float) -> "ThicknessField":
        return cls("taper", t_tip, t_base)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.t_tip, self.t_base


SIDE_TAGS = {"v0": "hinge", "v1": "free-edge", "u0": "lateral", "u1": "lateral"}


@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """Parametric surface over the unit square.

    The v=0 side is the hinge, v=1 the free edge, u=0/1 the laterals.
    ``regions`` maps extra tag names to (u, v) -> bool predicates.
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    apex_uv: tuple[float, float]
    kind: str = "patch"
    regions: Mapping[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(
        default_factory=dict
    )
    rib_offset: float | None = None

    def __call__(self, u, v):
        return self.evaluate(np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    @property
    def apex(self) -> np.ndarray:
        return self(*self.apex_uv)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    tags: Mapping[str, np.ndarray]
    apex: int
    thickness: np.ndarray | None = None
    uv: np.ndarray | None = None
    kind: str = "mesh"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def tagged(self, name: str) -> np.ndarray:
        """Indices of the vertices carrying tag ``name``."""
        mask = self.tags.get(name)
        if mask is None:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(mask)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return replace(self, vertices=np.asarray(vertices, dtype=float))


# ---------------------------------------------------------------------------
# planar polygon helpers
# ---------------------------------------------------------------------------

def _polygon_area(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(p: np.ndarray) -> bool:
    n = len(p)
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a, b, p[j], p[(j + 1) % n]):
                return False
    return True


def _inside_or_on(pt: np.ndarray, poly: np.ndarray, tol: float = 1e-9) -> bool:
    n = len(poly)
    inside = False
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ab = b - a
        t = np.clip(np.dot(pt - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        if np.linalg.norm(a + t * ab - pt) <= tol:
            return True
        if (a[1] > pt[1]) != (b[1] > pt[1]):
            x = a[0] + (pt[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if pt[0] < x:
                inside = not inside
    return inside


def _polyline_eval(poly: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Point at normalized arc length ``s`` along ``poly``."""
    seg = np.sqrt(np.sum(np.diff(poly, axis=0) ** 2, axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.clip(s, 0.0, 1.0) * cum[-1]
    return np.stack([np.interp(t, cum, poly[:, k]) for k in range(poly.shape[1])], axis=-1)


def coons_map(contour: LobeContour) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Transfinite map of the unit square onto the contour interior."""
    hinge, right, free, left = contour.boundary_curves()
    top = free[::-1]
    left_up = left[::-1]
    p00, p10 = hinge[0], hinge[1]
    p01, p11 = top[0], top[-1]

    def sketch(u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        uu, vv = u[..., None], v[..., None]
        bottom = _polyline_eval(hinge, u)
        upper = _polyline_eval(top, u)
        lft = _polyline_eval(left_up, v)
        rgt = _polyline_eval(right, v)
        return (
            (1 - vv) * bottom
            + vv * upper
            + (1 - uu) * lft
            + uu * rgt
            - ((1 - uu) * (1 - vv) * p00 + uu * (1 - vv) * p10 + (1 - uu) * vv * p01 + uu * vv * p11)
        )

    return sketch


# ---------------------------------------------------------------------------
# ATL: contour projected onto an ellipsoid
# ---------------------------------------------------------------------------

def project_to_ellipsoid(points: np.ndarray, ellipsoid: EllipsoidSpec) -> np.ndarray:
    """Move 3D points along the projection direction onto the ellipsoid.

    The intersection reached last when travelling along the direction is
    taken, so points already on that side of the surface are fixed points.
    """
    pts = np.asarray(points, dtype=float)
    axes = np.array([ellipsoid.a, ellipsoid.b, ellipsoid.c])
    d = np.asarray(ellipsoid.direction, dtype=float) / axes
    p = pts / axes
    qa = float(d @ d)
    qb = 2.0 * (p @ d)
    qc = np.sum(p * p, axis=-1) - 1.0
    disc = qb * qb - 4.0 * qa * qc
    if np.any(disc < 0):
        bad = np.argwhere(np.atleast_1d(disc) < 0)[0]
        raise ProjectionMiss(f"projection line misses the ellipsoid (point index {bad.tolist()})")
    s = (-qb + np.sqrt(disc)) / (2.0 * qa)
    return pts + s[..., None] * np.asarray(ellipsoid.direction, dtype=float)


def generate_atl_surface(contour: LobeContour, ellipsoid: EllipsoidSpec) -> SurfacePatch:
    """Abstracted-trap-lobe patch: the contour interior lifted onto the ellipsoid."""
    sketch = coons_map(contour)
    # pre-check the whole outline, not just the Coons samples
    outline = np.column_stack([contour.points, np.zeros(len(contour.points))])
    project_to_ellipsoid(outline, ellipsoid)

    def evaluate(u, v):
        xy = sketch(u, v)
        flat = np.concatenate([xy, np.zeros(xy.shape[:-1] + (1,))], axis=-1)
        return project_to_ellipsoid(flat, ellipsoid)

    apex_uv = _invert_map(sketch, np.asarray(contour.apex, dtype=float))
    return SurfacePatch(evaluate, apex_uv, kind="atl", rib_offset=contour.rib_offset)


def _invert_map(sketch, target: np.ndarray) -> tuple[float, float]:
    """Find (u, v) with sketch(u, v) == target by damped Newton from a coarse seed."""
    g = np.linspace(0.0, 1.0, 41)
    uu, vv = np.meshgrid(g, g, indexing="ij")
    d = np.sum((sketch(uu, vv) - target) ** 2, axis=-1)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    uv = np.array([g[i], g[j]])
    h = 1e-7
    for _ in range(50):
        r = sketch(uv[0], uv[1]) - target
        if np.linalg.norm(r) < 1e-12:
            break
        J = np.column_stack([
            (sketch(uv[0] + h, uv[1]) - sketch(uv[0] - h, uv[1])) / (2 * h),
            (sketch(uv[0], uv[1] + h) - sketch(uv[0], uv[1] - h)) / (2 * h),
        ])
        uv = np.clip(uv - np.linalg.solve(J, r), 0.0, 1.0)
    return float(uv[0]), float(uv[1])


# ---------------------------------------------------------------------------
# SG: synclastic translation surface of two circular arcs
# ---------------------------------------------------------------------------

def arc_height(x, k):
    """Signed height of a circular arc of curvature ``k`` below its crown."""
    x = np.asarray(x, dtype=float)
    return -k * x * x / (1.0 + np.sqrt(1.0 - (k * x) ** 2))


def arc_slope(x, k):
    x = np.asarray(x, dtype=float)
    return -k * x / np.sqrt(1.0 - (k * x) ** 2)


def generate_sg_surface(spec: SGPatchSpec) -> SurfacePatch:
    """Simplified-geometry patch with crown at the centre of the lobe.

    x runs along the hinge on [-length/2, length/2]; y runs from the hinge
    (y=0) to the free edge (y=width). With a restraining band the v=0 side
    sits at y=-restraint and the band continues the surface tangentially.
    """
    L, W, r = spec.length, spec.width, spec.restraint
    kl, kt = spec.k_long, spec.k_trans
    yc = W / 2.0
    g0 = float(arc_height(0.0 - yc, kt))
    s0 = float(arc_slope(0.0 - yc, kt))

    def evaluate(u, v):
        x = (u - 0.5) * L
        y = -r + v * (W + r)
        gy = np.where(y >= 0.0, arc_height(np.maximum(y, 0.0) - yc, kt), g0 + s0 * y)
        z = arc_height(x, kl) + gy
        return np.stack(np.broadcast_arrays(x, y, z), axis=-1)

    regions = {}
    if r > 0:
        v_hinge = r / (W + r)
        regions["restraint"] = lambda u, v: np.asarray(v) <= v_hinge + 1e-12
    apex_uv = (0.5, (r + yc) / (W + r))
    return SurfacePatch(evaluate, apex_uv, kind="sg", regions=regions)


def flat_patch(length: float, width: float) -> SurfacePatch:
    """Planar rectangle in the xy-plane, hinge along y=0."""

    def evaluate(u, v):
        x = (u - 0.5) * length
        y = v * width
        return np.stack(np.broadcast_arrays(x, y, np.zeros_like(x * y)), axis=-1)

    return SurfacePatch(evaluate, (0.5, 0.5), kind="flat")


# ---------------------------------------------------------------------------
# mesh helpers
# ---------------------------------------------------------------------------

def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return 0.5 * np.sqrt(np.sum(n * n, axis=1))


def triangle_angles(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Interior angles (radians), shape (m, 3), angle k at corner k."""
    p = vertices[triangles]
    out = np.empty((len(triangles), 3))
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.sum(a * b, axis=1) / np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1))
        out[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    return out


def unique_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted undirected edges and how many triangles use each."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def edge_lengths(vertices: np.ndarray, edges: np.ndarray) -> np.ndarray:
    d = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    return np.sqrt(np.sum(d * d, axis=1))


def euler_characteristic(mesh: TriMesh) -> int:
    edges, _ = unique_edges(mesh.triangles)
    return mesh.n_vertices - len(edges) + len(mesh.triangles)


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    p = vertices[triangles]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    vn = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(vn, triangles[:, k], fn)
    return vn / np.linalg.norm(vn, axis=1, keepdims=True)


def graph_distance(vertices: np.ndarray, triangles: np.ndarray, sources) -> np.ndarray:
    """Shortest edge-path distance from a vertex set (a geodesic proxy)."""
    edges, _ = unique_edges(triangles)
    w = edge_lengths(vertices, edges)
    n = len(vertices)
    g = coo_matrix((w, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    d = dijkstra(g, directed=False, indices=np.atleast_1d(sources), min_only=True)
    return d


def check_mesh(mesh: TriMesh, field: ThicknessField | None = None) -> None:
    """Raise QualityFailure if a TriMesh invariant is violated."""
    edges, counts = unique_edges(mesh.triangles)
    if np.any(counts > 2):
        raise QualityFailure("non-manifold edge")
    directed = np.concatenate([
        mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]
    ])
    if len(np.unique(directed, axis=0)) != len(directed):
        raise QualityFailure("inconsistent triangle winding")
    with np.errstate(invalid="ignore", divide="ignore"):
        ang = np.degrees(triangle_angles(mesh.vertices, mesh.triangles))
    if not np.all(np.isfinite(ang)):
        raise QualityFailure("degenerate triangle with a zero-length edge")
    if ang.min() <= MIN_ANGLE_DEG:
        raise QualityFailure(f"minimum angle {ang.min():.2f} deg <= {MIN_ANGLE_DEG}")
    if field is not None and mesh.thickness is not None:
        lo, hi = field.bounds
        base = mesh.thickness / np.where(_rib_mask(mesh), 2.0, 1.0)
        if base.min() < lo - 1e-12 or base.max() > hi + 1e-12:
            raise QualityFailure("thickness outside field bounds")


def _rib_mask(mesh: TriMesh) -> np.ndarray:
    m = mesh.tags.get("rib")
    return np.zeros(mesh.n_vertices, dtype=bool) if m is None else m


# ---------------------------------------------------------------------------
# triangulation
# ---------------------------------------------------------------------------

def _grid_triangles(patch: SurfacePatch, nu: int, nv: int):
    g_u = np.linspace(0.0, 1.0, nu + 1)
    g_v = np.linspace(0.0, 1.0, nv + 1)
    uu, vv = np.meshgrid(g_u, g_v, indexing="ij")
    pts = patch(uu, vv).reshape(-1, 3)
    idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    # two splits per quad, keep the one with the larger minimum angle
    t1 = np.stack([np.stack([a, b, c], 1), np.stack([a, c, d], 1)], 1)
    t2 = np.stack([np.stack([a, b, d], 1), np.stack([b, c, d], 1)], 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        m1 = triangle_angles(pts, t1.reshape(-1, 3)).reshape(-1, 6).min(axis=1)
        m2 = triangle_angles(pts, t2.reshape(-1, 3)).reshape(-1, 6).min(axis=1)
    tris = np.where((m1 >= m2)[:, None, None], t1, t2).reshape(-1, 3)
    uv = np.column_stack([uu.ravel(), vv.ravel()])
    return pts, tris, uv


def _isoline_length(patch: SurfacePatch, along_u: bool, n: int = 41) -> float:
    s = np.linspace(0.0, 1.0, 4 * n + 1)
    c = np.linspace(0.0, 1.0, n)
    if along_u:
        uu, vv = np.meshgrid(s, c, indexing="xy")
    else:
        vv, uu = np.meshgrid(s, c, indexing="xy")
    p = patch(uu, vv)
    seg = np.sqrt(np.sum(np.diff(p, axis=1) ** 2, axis=-1))
    return float(seg.sum(axis=1).max())


def triangulate(patch: SurfacePatch, target_edge: float) -> TriMesh:
    """Structured triangulation of ``patch`` with edges near ``target_edge``."""
    if target_edge <= 0:
        raise ValueError("target_edge must be positive")
    nu = max(1, math.ceil(_isoline_length(patch, True) / target_edge))
    nv = max(1, math.ceil(_isoline_length(patch, False) / target_edge))
    for _ in range(12):
        pts, tris, uv = _grid_triangles(patch, nu, nv)
        edges, _ = unique_edges(tris)
        longest = edge_lengths(pts, edges).max()
        if longest <= MAX_EDGE_FACTOR * target_edge:
            break
        grow = longest / (MAX_EDGE_FACTOR * target_edge)
        nu = math.ceil(nu * min(grow, 1.5) + 0.5)
        nv = math.ceil(nv * min(grow, 1.5) + 0.5)
    else:
        raise QualityFailure("could not satisfy the maximum edge bound")

    u, v = uv[:, 0], uv[:, 1]
    tags = {
        "hinge": v == 0.0,
        "free-edge": v == 1.0,
        "lateral": (u == 0.0) | (u == 1.0),
    }
    for name, pred in patch.regions.items():
        tags[name] = np.asarray(pred(u, v), dtype=bool)
    if patch.rib_offset is not None:
        tree = cKDTree(pts[tags["free-edge"]])
        dist, _ = tree.query(pts)
        tags["rib"] = dist <= patch.rib_offset + 1e-9
    apex = int(np.argmin(np.sum((pts - patch.apex) ** 2, axis=1)))
    mesh = TriMesh(pts, tris, tags, apex, uv=uv, kind=patch.kind)
    check_mesh(mesh)
    return mesh


# ---------------------------------------------------------------------------
# thickness
# ---------------------------------------------------------------------------

def assign_thickness(mesh: TriMesh, field: ThicknessField) -> TriMesh:
    """Per-vertex thickness; taper runs affinely from the apex to the hinge.

    Vertices beyond the apex (towards the free edge) keep the tip value.
    Vertices tagged ``rib`` get twice the local value.
    """
    n = mesh.n_vertices
    if field.kind == "constant" or field.t_tip == field.t_base:
        t = np.full(n, field.t_tip)
    else:
        hinge = mesh.tagged("hinge")
        if len(hinge) == 0 or mesh.apex is None or mesh.apex < 0:
            raise MissingTags("taper needs hinge and apex tags")
        d = graph_distance(mesh.vertices, mesh.triangles, hinge)
        frac = np.clip(d / d[mesh.apex], 0.0, 1.0)
        t = field.t_base + (field.t_tip - field.t_base) * frac
    t = np.where(_rib_mask(mesh), 2.0 * t, t)
    return replace(mesh, thickness=t)


# ---------------------------------------------------------------------------
# solids and binary STL
# ---------------------------------------------------------------------------

def boundary_loop_edges(triangles: np.ndarray) -> np.ndarray:
    """Directed boundary edges in the winding of their owning triangle."""
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return directed[counts[inv.ravel()] == 1]


def solidify(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Closed solid from the midsurface offset by +-t/2 along vertex normals."""
    if mesh.thickness is None:
        raise MissingTags("mesh has no thickness assigned")
    t = np.asarray(mesh.thickness, dtype=float)
    if np.any(t <= 0):
        raise ValueError("thickness must be positive")
    n = mesh.n_vertices
    vn = vertex_normals(mesh.vertices, mesh.triangles)
    top = mesh.vertices + 0.5 * t[:, None] * vn
    bottom = mesh.vertices - 0.5 * t[:, None] * vn
    mid_n = _face_normals(mesh.vertices, mesh.triangles)
    edges, _ = unique_edges(mesh.triangles)
    mid_e = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    for layer in (top, bottom):
        flipped = np.sum(_face_normals(layer, mesh.triangles) * mid_n, axis=1) <= 0
        # a point reflection through the centre of curvature keeps face normals but reverses edges
        reversed_ = np.sum((layer[edges[:, 1]] - layer[edges[:, 0]]) * mid_e, axis=1) <= 0
        if np.any(flipped) or np.any(reversed_):
            raise SelfIntersection("offset surface folds over: thickness exceeds curvature radius")
    tris = mesh.triangles
    rim = boundary_loop_edges(tris)
    i, j = rim[:, 0], rim[:, 1]
    side = np.concatenate([
        np.stack([j, i, i + n], 1),
        np.stack([j, i + n, j + n], 1),
    ])
    verts = np.vstack([top, bottom])
    faces = np.vstack([tris, tris[:, ::-1] + n, side])
    return verts, faces


def _face_normals(vertices, triangles):
    p = vertices[triangles]
    return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


_STL_DTYPE = np.dtype([("normal", "<f4", (3,)), ("v", "<f4", (3, 3)), ("attr", "<u2")])
_STL_HEADER = b"lobeforge binary STL".ljust(80, b" ")


def export_stl(mesh: TriMesh, path) -> None:
    """Write the solidified lobe as a binary STL file."""
    verts, faces = solidify(mesh)
    write_stl(path, verts, faces)


def write_stl(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    rec = np.zeros(len(faces), dtype=_STL_DTYPE)
    p = vertices[faces]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    rec["normal"] = nrm
    rec["v"] = p
    with open(path, "wb") as fh:
        fh.write(_STL_HEADER)
        fh.write(struct.pack("<I", len(faces)))
        fh.write(rec.tobytes())


def read_stl(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a binary STL; returns (triangle corners (m,3,3), normals (m,3))."""
    with open(path, "rb") as fh:
        data = fh.read()
    (count,) = struct.unpack_from("<I", data, 80)
    rec = np.frombuffer(data, dtype=_STL_DTYPE, count=count, offset=84)
    return rec["v"].astype(np.float64), rec["normal"].astype(np.float64)


def weld(corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge exactly coincident corners into an indexed mesh."""
    flat = corners.reshape(-1, 3)
    verts, inv = np.unique(flat, axis=0, return_inverse=True)
    return verts, inv.reshape(-1, 3)


def is_watertight(faces: np.ndarray) -> bool:
    """Every edge used by exactly two faces, in opposite directions."""
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    if len(np.unique(directed, axis=0)) != len(directed):
        return False
    _, counts = unique_edges(faces)
    return bool(np.all(counts == 2))


def solid_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    p = vertices[faces]
    return float(np.sum(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2]))) / 6.0)


# ---------------------------------------------------------------------------
# defaults
# ---------------------------------------------------------------------------

def default_atl_contour(n_arc: int = 64, rib_offset: float | None = 2.0) -> LobeContour:
    """Shield-shaped lobe spanning 40 mm along the hinge and 25 mm hinge-to-free-edge.

    The hinge runs from (-18, -12.5) to (18, -12.5); straight laterals rise
    to (+-20, 0); the free edge is an elliptic arc through (0, 12.5) meeting
    the laterals at a genuine corner so the transfinite grid stays well shaped.
    """
    phi0 = math.radians(30.0)
    phi = np.linspace(phi0, math.pi - phi0, n_arc + 1)
    ax = 20.0 / math.cos(phi0)
    ay = 12.5 / (1.0 - math.sin(phi0))
    arc = np.column_stack([ax * np.cos(phi), ay * (np.sin(phi) - math.sin(phi0))])
    pts = np.vstack([[-18.0, -12.5], [18.0, -12.5], arc])
    return LobeContour(pts, free_edge=(2, 2 + n_arc), apex=(0.0, 0.0), rib_offset=rib_offset)


def default_ellipsoid() -> EllipsoidSpec:
    return EllipsoidSpec(30.0, 25.0, 15.0)

"""
Triangulations of the annulus between an outer contour and an inner
circle/ellipse.

Boundary nodes are placed on both curves at the local target spacing and held
fixed; interior nodes are relaxed with a truss-force iteration and
re-triangulated with Delaunay until they settle. Node ordering puts the inner
boundary first (counter-clockwise), then interior nodes, then the outer
boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import Delaunay, cKDTree

from . import geometry
from .errors import GeometryError, MeshQualityError

MIN_ANGLE_DEG = 15.0


@dataclass(frozen=True)
class InnerContour:
    center: tuple
    semi_axes: tuple
    shape: str = "circle"

    def __post_init__(self):
        a, b = self.semi_axes
        if a <= 0 or b <= 0:
            raise ValueError("semi-axes must be positive")
        if self.shape == "circle" and a != b:
            raise ValueError("a circle needs equal semi-axes")
        if self.shape not in ("circle", "ellipse"):
            raise ValueError("shape must be 'circle' or 'ellipse'")

    @classmethod
    def circle(cls, center, radius):
        return cls((float(center[0]), float(center[1])), (float(radius), float(radius)), "circle")

    def at(self, t):
        t = np.asarray(t, dtype=float)
        return np.column_stack([self.center[0] + self.semi_axes[0] * np.cos(t),
                                self.center[1] + self.semi_axes[1] * np.sin(t)])

    def param(self, points):
        p = np.atleast_2d(points)
        return np.arctan2((p[:, 1] - self.center[1]) / self.semi_axes[1],
                          (p[:, 0] - self.center[0]) / self.semi_axes[0])

    def polyline(self, n=720):
        return self.at(np.linspace(0, 2 * np.pi, n, endpoint=False))

    def contains(self, points):
        p = np.atleast_2d(points)
        q = ((p[:, 0] - self.center[0]) / self.semi_axes[0]) ** 2 + \
            ((p[:, 1] - self.center[1]) / self.semi_axes[1]) ** 2
        return q < 1.0


@dataclass
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    n_inner: int
    outer: np.ndarray
    inner_shape: InnerContour | None = None
    outer_curve: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def inner(self) -> np.ndarray:
        return np.arange(self.n_inner)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def r(self):
        return self.nodes[:, 0]

    @property
    def z(self):
        return self.nodes[:, 1]

    @property
    def interior(self) -> np.ndarray:
        if "interior" not in self._cache:
            mask = np.ones(self.n_nodes, bool)
            mask[self.inner] = False
            mask[self.outer] = False
            self._cache["interior"] = np.flatnonzero(mask)
        return self._cache["interior"]

    def edges(self) -> np.ndarray:
        if "edges" not in self._cache:
            t = self.triangles
            e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            self._cache["edges"] = np.unique(np.sort(e, axis=1), axis=0)
        return self._cache["edges"]

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def angles(self) -> np.ndarray:
        """Interior angles in degrees, shape ``(ntri, 3)``."""
        p = self.nodes[self.triangles]
        out = np.empty((len(p), 3))
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cosang = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, k] = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
        return out

    def min_angle(self) -> float:
        return float(self.angles().min())

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)

    def boundary_edges(self) -> np.ndarray:
        t = self.triangles
        e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    def outer_edges(self) -> np.ndarray:
        o = self.outer
        return np.column_stack([o, np.roll(o, -1)])

    def inner_edges(self) -> np.ndarray:
        i = self.inner
        return np.column_stack([i, np.roll(i, -1)])

    def euler_characteristic(self) -> int:
        return self.n_nodes - len(self.edges()) + len(self.triangles)

    def locator(self) -> "PointLocator":
        if "locator" not in self._cache:
            self._cache["locator"] = PointLocator(self)
        return self._cache["locator"]


class PointLocator:
    """Barycentric point location by nearest-centroid candidate search."""

    def __init__(self, mesh: TriMesh, candidates: int = 12):
        self.mesh = mesh
        self.k = min(candidates, len(mesh.triangles))
        self.tree = cKDTree(mesh.centroids())
        p = mesh.nodes[mesh.triangles]
        self.p0 = p[:, 0]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.inv = np.stack([np.stack([d2[:, 1], -d2[:, 0]], -1),
                             np.stack([-d1[:, 1], d1[:, 0]], -1)], 1) / det[:, None, None]

    def locate(self, points, tol: float = 1e-10):
        """Triangle index (``-1`` when outside) and barycentric weights."""
        pts = np.atleast_2d(np.asarray(points, float))
        _, cand = self.tree.query(pts, k=self.k)
        cand = cand.reshape(len(pts), -1)
        tri = np.full(len(pts), -1)
        bary = np.zeros((len(pts), 3))
        best = np.full(len(pts), -np.inf)
        for j in range(cand.shape[1]):
            c = cand[:, j]
            rel = pts - self.p0[c]
            lam = np.einsum("nij,nj->ni", self.inv[c], rel)
            lam = np.column_stack([1 - lam.sum(axis=1), lam])
            score = lam.min(axis=1)
            better = score > best
            best = np.where(better, score, best)
            tri = np.where(better, c, tri)
            bary = np.where(better[:, None], lam, bary)
        tri = np.where(best >= -tol, tri, -1)
        return tri, bary

    def interpolate(self, values, points, fill=np.nan):
        tri, bary = self.locate(points)
        v = np.asarray(values)[self.mesh.triangles[np.maximum(tri, 0)]]
        out = np.sum(v * bary, axis=1)
        return np.where(tri >= 0, out, fill)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

class _SizeFunction:
    def __init__(self, h, zones=None, grade=0.3):
        self.h = float(h)
        self.zones = [(np.asarray(p, float), float(hz)) for p, hz in (zones or [])]
        self.grade = grade

    def __call__(self, p):
        p = np.atleast_2d(p)
        out = np.full(len(p), self.h)
        for c, hz in self.zones:
            out = np.minimum(out, hz + self.grade * np.linalg.norm(p - c, axis=1))
        return out

    @property
    def h_min(self):
        return min([self.h] + [hz for _, hz in self.zones])


def _place_on_curve(dense: np.ndarray, size: _SizeFunction, min_nodes: int = 8) -> np.ndarray:
    """Place nodes along a densely sampled closed curve at the local spacing."""
    closed = geometry.close_polyline(dense)
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    mid = 0.5 * (closed[1:] + closed[:-1])
    density = seg / size(mid)
    cum = np.concatenate([[0.0], np.cumsum(density)])
    n = max(min_nodes, int(round(cum[-1])))
    targets = np.linspace(0.0, cum[-1], n, endpoint=False)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    arc = np.interp(targets, cum, s)
    return np.column_stack([np.interp(arc, s, closed[:, 0]), np.interp(arc, s, closed[:, 1])])


class _Distance:
    """Approximate signed distance to the annulus (positive outside)."""

    def __init__(self, outer_dense, inner_dense):
        outer_dense = geometry.ensure_ccw(outer_dense)
        inner_dense = geometry.ensure_ccw(inner_dense)
        n_out = geometry.vertex_normals(outer_dense)
        n_in = -geometry.vertex_normals(inner_dense)  # points into the hole
        self.samples = np.vstack([outer_dense, inner_dense])
        self.normals = np.vstack([n_out, n_in])
        self.tree = cKDTree(self.samples)

    def __call__(self, p):
        d, idx = self.tree.query(p, workers=-1)
        v = p - self.samples[idx]
        sign = np.sign(np.sum(v * self.normals[idx], axis=1))
        sign[sign == 0] = 1.0
        return sign * d, self.normals[idx]


def spline_closed(points, n: int) -> np.ndarray:
    """``n`` points on the periodic cubic spline through a closed polyline (chord-length parameter)."""
    pts = geometry.close_polyline(points)
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    spline = CubicSpline(s, pts, bc_type="periodic")
    fine = spline(np.linspace(0.0, s[-1], 8 * n, endpoint=False))
    return geometry.resample_closed(fine, n)


def build_annulus_mesh(outer, inner: InnerContour, h: float, refinement=None,
                       seed: int = 0, iterations: int = 80, check_quality: bool = True,
                       outer_spline: bool = True) -> TriMesh:
    """
    Triangulate the region between ``outer`` (closed polyline) and ``inner``.

    Parameters
    ----------
    outer : (N, 2) array
        Outer contour; nodes are placed on this polyline.
    inner : InnerContour
        Inner circle or ellipse, strictly inside ``outer``.
    h : float
        Target edge length [m].
    refinement : list of ((r, z), h_local), optional
        Points around which the edge length is reduced to ``h_local``, growing
        back to ``h`` with a gradient of 0.3.
    outer_spline : bool
        Place outer nodes on the periodic spline through the ``outer``
        vertices instead of on its straight segments. Avoids collinear node
        triples when ``h`` is shorter than the polyline segments; disable for
        polygons with intended corners.
    """
    if h <= 0:
        raise ValueError("target edge length must be positive")
    outer = geometry.ensure_ccw(outer)
    inner_dense = inner.polyline(max(720, int(6 * geometry.perimeter(inner.polyline(720)) / h)))
    if not np.all(geometry.points_in_polygon(inner_dense, outer)):
        raise GeometryError("inner contour is not strictly inside the outer contour")
    gap = geometry.distance_to_polyline(inner_dense, outer).min()
    if gap < h:
        raise GeometryError(f"annulus gap {gap:.3g} m is narrower than h = {h:.3g} m")
    size = _SizeFunction(h, refinement)
    n_dense = max(2000, int(6 * geometry.perimeter(outer) / size.h_min))
    if outer_spline:
        outer_dense = geometry.ensure_ccw(spline_closed(outer, n_dense))
    else:
        outer_dense = geometry.resample_closed(outer, n_dense)
    p_in = _place_on_curve(inner_dense, size)
    p_in = inner.at(inner.param(p_in))  # exactly on the analytic curve
    p_out = _place_on_curve(outer_dense, size)
    # dense samples keep the outer polyline exactly, corners included
    dist = _Distance(np.vstack([outer_dense]), inner_dense)

    rng = np.random.default_rng(seed)
    h0 = size.h_min
    lo, hi = outer.min(axis=0), outer.max(axis=0)
    ys = np.arange(lo[1], hi[1] + h0, h0 * np.sqrt(3) / 2)
    xs = np.arange(lo[0], hi[0] + h0, h0)
    gx, gy = np.meshgrid(xs, ys)
    gx[1::2] += 0.5 * h0
    cand = np.column_stack([gx.ravel(), gy.ravel()])
    d, _ = dist(cand)
    hc = size(cand)
    cand = cand[d < -0.6 * hc]
    keep = rng.random(len(cand)) < (h0 / size(cand)) ** 2
    p_int = cand[keep]

    fixed = np.vstack([p_in, p_out])
    nfix = len(fixed)
    pts = np.vstack([fixed, p_int])
    dt, fscale = 0.2, 1.2
    last = None
    for it in range(iterations):
        if last is None or np.max(np.linalg.norm(pts - last, axis=1) / size(pts)) > 0.1:
            last = pts.copy()
            tri = _triangulate(pts, dist, size)
            bars = _unique_edges(tri, len(pts))
        vec = pts[bars[:, 0]] - pts[bars[:, 1]]
        length = np.linalg.norm(vec, axis=1)
        hbar = size(0.5 * (pts[bars[:, 0]] + pts[bars[:, 1]]))
        l0 = hbar * fscale * np.sqrt(np.sum(length**2) / np.sum(hbar**2))
        force = np.maximum(l0 - length, 0.0)
        fvec = (force / length)[:, None] * vec
        ftot = np.zeros_like(pts)
        np.add.at(ftot, bars[:, 0], fvec)
        np.add.at(ftot, bars[:, 1], -fvec)
        ftot[:nfix] = 0.0
        move = dt * ftot
        pts = pts + move
        # pull stray interior nodes back inside
        inner_pts = pts[nfix:]
        dd, normal = dist(inner_pts)
        hl = size(inner_pts)
        bad = dd > -0.35 * hl
        inner_pts[bad] -= (dd[bad] + 0.35 * hl[bad])[:, None] * normal[bad]
        pts[nfix:] = inner_pts
        if np.max(np.linalg.norm(move[nfix:], axis=1) / hl, initial=0.0) < 2e-3:
            break

    tri = _triangulate(pts, dist, size)
    mesh = _finalize(pts, tri, len(p_in), len(p_out))
    mesh.inner_shape = inner
    mesh.outer_curve = outer_dense if outer_spline else outer
    _validate(mesh, check_quality)
    return mesh


def _unique_edges(tri, n):
    e = np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]]), axis=1)
    key = np.unique(e[:, 0].astype(np.int64) * n + e[:, 1])
    return np.column_stack([key // n, key % n])


def _triangulate(pts, dist, size):
    tri = Delaunay(pts).simplices
    c = pts[tri].mean(axis=1)
    d, _ = dist(c)
    return tri[d < -1e-3 * size(c)]


def _finalize(pts, tri, n_in, n_out) -> TriMesh:
    """Drop unused nodes and order as inner, interior, outer."""
    nfix = n_in + n_out
    used = np.zeros(len(pts), bool)
    used[tri.ravel()] = True
    used[:nfix] = True
    interior = np.flatnonzero(used[nfix:]) + nfix
    order = np.concatenate([np.arange(n_in), interior, np.arange(n_in, nfix)])
    new_index = np.full(len(pts), -1)
    new_index[order] = np.arange(len(order))
    tri = new_index[tri]
    nodes = pts[order]
    # counter-clockwise triangles
    p = nodes[tri]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    outer = np.arange(len(order) - n_out, len(order))
    return TriMesh(nodes, tri, n_in, outer)


def _validate(mesh: TriMesh, check_quality: bool = True):
    bnd = {tuple(e) for e in mesh.boundary_edges()}
    expected = {tuple(sorted(e)) for e in np.vstack([mesh.inner_edges(), mesh.outer_edges()])}
    if bnd != expected:
        raise GeometryError("triangulation does not conform to the annulus boundaries")
    if np.any(mesh.areas() <= 0):
        raise MeshQualityError("degenerate triangle")
    if np.any(mesh.r <= 0):
        raise GeometryError("mesh reaches r <= 0")
    if check_quality:
        amin = mesh.min_angle()
        if amin < MIN_ANGLE_DEG:
            raise MeshQualityError(f"minimum angle {amin:.1f} deg below {MIN_ANGLE_DEG} deg")


def refine_mesh(mesh: TriMesh) -> TriMesh:
    """
    Uniform refinement: every triangle split into four through its edge
    midpoints. Boundary midpoints are moved onto the inner curve and the outer
    polyline, so the result is a mesh of the same annulus with halved h.
    """
    edges = mesh.edges()
    n = mesh.n_nodes
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    key = {tuple(e): n + i for i, e in enumerate(edges)}
    is_in = np.zeros(n, bool)
    is_in[mesh.inner] = True
    is_out = np.zeros(n, bool)
    is_out[mesh.outer] = True
    on_in = is_in[edges[:, 0]] & is_in[edges[:, 1]]
    on_out = is_out[edges[:, 0]] & is_out[edges[:, 1]]
    if mesh.inner_shape is not None and np.any(on_in):
        e = edges[on_in]
        t0 = mesh.inner_shape.param(mesh.nodes[e[:, 0]])
        t1 = mesh.inner_shape.param(mesh.nodes[e[:, 1]])
        dt = np.angle(np.exp(1j * (t1 - t0)))
        mids[on_in] = mesh.inner_shape.at(t0 + 0.5 * dt)
    if mesh.outer_curve is not None and np.any(on_out):
        mids[on_out] = geometry.project_to_polyline(mids[on_out], mesh.outer_curve)
    nodes = np.vstack([mesh.nodes, mids])
    t = mesh.triangles
    m01 = np.array([key[tuple(sorted(p))] for p in t[:, [0, 1]]])
    m12 = np.array([key[tuple(sorted(p))] for p in t[:, [1, 2]]])
    m20 = np.array([key[tuple(sorted(p))] for p in t[:, [2, 0]]])
    tri = np.vstack([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([t[:, 1], m12, m01]),
        np.column_stack([t[:, 2], m20, m12]),
        np.column_stack([m01, m12, m20]),
    ])
    # new boundary loops in counter-clockwise order
    def loop(old):
        out = []
        for a, b in zip(old, np.roll(old, -1)):
            out += [a, key[tuple(sorted((a, b)))]]
        return np.array(out)

    inner_loop = loop(mesh.inner)
    outer_loop = loop(mesh.outer)
    boundary = np.zeros(len(nodes), bool)
    boundary[inner_loop] = True
    boundary[outer_loop] = True
    interior = np.flatnonzero(~boundary)
    order = np.concatenate([inner_loop, interior, outer_loop])
    new_index = np.empty(len(nodes), int)
    new_index[order] = np.arange(len(order))
    out = TriMesh(nodes[order], new_index[tri], len(inner_loop),
                  np.arange(len(order) - len(outer_loop), len(order)),
                  mesh.inner_shape, mesh.outer_curve)
    _validate(out, check_quality=False)
    return out


def structured_mesh(r_range, z_range, nr: int, nz: int) -> TriMesh:
    """
    Right-triangle mesh of a rectangle (no hole); used for reference fields.
    Boundary tags are empty.
    """
    r = np.linspace(*r_range, nr)
    z = np.linspace(*z_range, nz)
    R, Z = np.meshgrid(r, z, indexing="ij")
    nodes = np.column_stack([R.ravel(), Z.ravel()])
    idx = np.arange(nr * nz).reshape(nr, nz)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    tri = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriMesh(nodes, tri, 0, np.zeros(0, int))

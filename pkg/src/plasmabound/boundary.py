"""
Plasma boundary from a P1 flux field: saddle (X-point) search, the boundary
flux value, and marching-triangles iso-contours.

Orientation
-----------
``orientation = +1`` means the plasma lies on the high-flux side, which is the
case for positive plasma current with ``psi = r A_phi``. Use
``orientation_from_current(I_p)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoClosedContour
from .fem import FemField
from .geometry import (as_points, close_polyline, distance_to_polyline, ensure_ccw, open_polyline,
                       points_in_polygon, project_to_polyline, resample_closed, signed_area)
from .mesh import TriMesh

OUTPUT_POINTS = 256
# level nudges toward the plasma, relative to the axis-to-boundary flux range
_NUDGES = (1e-9, 1e-7, 1e-5, 1e-4, 1e-3, 3e-3, 1e-2)


@dataclass(frozen=True)
class LimiterContour:
    points: np.ndarray

    def __post_init__(self):
        pts = ensure_ccw(as_points(self.points))
        if len(pts) < 3:
            raise ValueError("limiter needs at least three points")
        object.__setattr__(self, "points", pts)

    def polyline(self) -> np.ndarray:
        return close_polyline(self.points)

    def densified(self, spacing: float) -> np.ndarray:
        closed = self.polyline()
        seg = np.hypot(*np.diff(closed, axis=0).T)
        n = max(int(np.ceil(seg.sum() / spacing)), len(self.points))
        return resample_closed(self.points, n)

    def contains(self, points) -> np.ndarray:
        return points_in_polygon(points, self.points)

    @property
    def barycenter(self):
        # area centroid of the polygon
        p = self.points
        q = np.roll(p, -1, axis=0)
        cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
        a = 0.5 * cross.sum()
        return (float(np.sum((p[:, 0] + q[:, 0]) * cross) / (6 * a)),
                float(np.sum((p[:, 1] + q[:, 1]) * cross) / (6 * a)))

    @property
    def minor_radius(self) -> float:
        return 0.5 * float(np.ptp(self.points[:, 0]))


@dataclass(frozen=True)
class XPoint:
    """
    Saddle point. ``psi`` is the fitted saddle value; ``node_values`` holds
    the nodal values of the discrete saddle nodes it was built from, which
    are the levels where the P1 contour topology actually changes.
    ``hessian`` is ``(psi_rr, psi_rz, psi_zz)`` of the local fit.
    """

    r: float
    z: float
    psi: float
    hessian_det: float
    node_values: tuple = ()
    hessian: tuple = ()

    def contour_base(self, orientation: int) -> float:
        if not self.node_values:
            return self.psi
        return float(orientation * max(orientation * v for v in self.node_values))

    @property
    def point(self):
        return np.array([self.r, self.z])


@dataclass(frozen=True)
class PlasmaBoundary:
    polyline: np.ndarray
    psi_p: float
    kind: str
    xpoint: tuple | None = None
    level: float | None = None
    flagged: tuple = field(default_factory=tuple)

    @property
    def r(self):
        return self.polyline[:, 0]

    @property
    def z(self):
        return self.polyline[:, 1]


def orientation_from_current(I_p: float) -> int:
    return 1 if I_p >= 0 else -1


# ---------------------------------------------------------------------------
# mesh topology helpers
# ---------------------------------------------------------------------------

def _edge_table(mesh: TriMesh):
    """Unique edges and the triangle-to-edge map, cached on the mesh."""
    if "tri_edges" not in mesh._cache:
        t = mesh.triangles
        pairs = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)
        lo, hi = pairs.min(axis=2), pairs.max(axis=2)
        key = lo.astype(np.int64) * mesh.n_nodes + hi
        uniq, inv = np.unique(key.ravel(), return_inverse=True)
        edges = np.column_stack([uniq // mesh.n_nodes, uniq % mesh.n_nodes])
        mesh._cache["tri_edges"] = (edges, inv.reshape(-1, 3))
    return mesh._cache["tri_edges"]


def _node_fans(mesh: TriMesh):
    """Neighbour lists sorted by angle (CSR arrays) and the mesh-boundary node mask."""
    if "fans" not in mesh._cache:
        edges, tri_edges = _edge_table(mesh)
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        d = mesh.nodes[dst] - mesh.nodes[src]
        ang = np.arctan2(d[:, 1], d[:, 0])
        order = np.lexsort((ang, src))
        src, dst = src[order], dst[order]
        ptr = np.searchsorted(src, np.arange(mesh.n_nodes + 1))
        counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
        on_bnd = np.zeros(mesh.n_nodes, bool)
        on_bnd[edges[counts == 1].ravel()] = True
        mesh._cache["fans"] = (src, dst, ptr, on_bnd)
    return mesh._cache["fans"]


def prepare_topology(mesh: TriMesh):
    """Build the edge, fan and spacing caches used by contouring and saddle search."""
    _edge_table(mesh)
    _node_fans(mesh)
    _mesh_spacing(mesh)


def _two_ring(mesh: TriMesh, i: int) -> np.ndarray:
    _, dst, ptr, _ = _node_fans(mesh)
    ring = dst[ptr[i]:ptr[i + 1]]
    second = np.concatenate([dst[ptr[j]:ptr[j + 1]] for j in ring])
    return np.unique(np.concatenate([[i], ring, second]))


# ---------------------------------------------------------------------------
# saddles
# ---------------------------------------------------------------------------

def _quadratic_fit(mesh: TriMesh, values, i: int):
    patch = _two_ring(mesh, i)
    p0 = mesh.nodes[i]
    d = mesh.nodes[patch] - p0
    scale = np.max(np.abs(d)) or 1.0
    x, y = d[:, 0] / scale, d[:, 1] / scale
    A = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    c, *_ = np.linalg.lstsq(A, values[patch], rcond=None)
    grad = np.array([c[1], c[2]]) / scale
    hess = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]]) / scale ** 2
    return c, grad, hess, scale, p0


def find_xpoints(field: FemField, axis_value: float | None = None, region=None) -> list:
    """
    Saddle points of a P1 field.

    Candidates are nodes around whose fan the sign of ``psi_j - psi_i``
    changes at least four times. Each is refined by a Newton step on a
    quadratic least-squares fit over its two-ring patch and kept when the
    fitted Hessian is indefinite and the step stays within the patch.
    ``region`` (a closed polygon) optionally restricts the search.
    The list is sorted by ``|psi - axis_value|``.
    """
    mesh, psi = field.mesh, field.values
    src, dst, ptr, on_bnd = _node_fans(mesh)
    s = psi[dst] > psi[src]
    nxt = np.arange(len(s)) + 1
    last = ptr[1:] - 1
    valid = ptr[1:] > ptr[:-1]
    nxt[last[valid]] = ptr[:-1][valid]
    changes = np.bincount(src, weights=(s != s[nxt]).astype(float), minlength=mesh.n_nodes)
    cand = np.flatnonzero((changes >= 4) & ~on_bnd)
    if region is not None and cand.size:
        cand = cand[points_in_polygon(mesh.nodes[cand], region)]

    found = []
    for i in cand:
        c, grad, hess, scale, p0 = _quadratic_fit(mesh, psi, i)
        det = float(np.linalg.det(hess))
        if not det < 0:
            continue
        step = -np.linalg.solve(hess, grad)
        if np.linalg.norm(step) > 1.5 * scale:
            continue
        p = p0 + step
        x, y = step / scale
        value = float(c @ np.array([1.0, x, y, x * x, x * y, y * y]))
        found.append((p, value, det, scale, float(psi[i]), (hess[0, 0], hess[0, 1], hess[1, 1])))

    merged = []
    for p, value, det, scale, node, hs in found:
        hit = [k for k, q in enumerate(merged) if np.linalg.norm(p - q.point) < scale]
        if hit:
            q = merged[hit[0]]
            merged[hit[0]] = XPoint(q.r, q.z, q.psi, q.hessian_det, q.node_values + (node,), q.hessian)
            continue
        merged.append(XPoint(float(p[0]), float(p[1]), value, det, (node,), tuple(map(float, hs))))

    if axis_value is None:
        ref = psi[mesh.inner] if mesh.n_inner else psi
        med = np.median(psi)
        axis_value = float(ref[np.argmax(np.abs(ref - med))])
    merged.sort(key=lambda xp: abs(xp.psi - axis_value))
    return merged


# ---------------------------------------------------------------------------
# boundary flux value
# ---------------------------------------------------------------------------

def _mesh_spacing(mesh: TriMesh) -> float:
    if "spacing" not in mesh._cache:
        mesh._cache["spacing"] = float(np.median(mesh.edge_lengths()))
    return mesh._cache["spacing"]


def _front_mask(points, xpoints, center):
    """
    Points not behind any X-point, as seen from ``center`` (private-flux cut).
    A divertor X-point hides a minor sector of the limiter, so a cut that
    would drop more than half of the remaining points is skipped.
    """
    keep = np.ones(len(points), bool)
    c = np.asarray(center, float)
    for xp in xpoints:
        x = xp.point
        cut = keep & ((points - x) @ (c - x) >= 0)
        if cut.sum() >= 0.5 * keep.sum():
            keep = cut
    return keep


def limiter_flux(psi_fn, limiter: LimiterContour, orientation: int, spacing: float,
                 xpoints=(), center=None):
    """
    Plasma-side extremum of ``psi`` along the limiter and where it occurs.
    Limiter points behind an X-point (private-flux side) are skipped.
    """
    pts = limiter.densified(spacing)
    vals = np.asarray(psi_fn(pts), dtype=float)
    ok = np.isfinite(vals)
    if xpoints:
        ok &= _front_mask(pts, xpoints, limiter.barycenter if center is None else center)
    if not ok.any():
        raise NoClosedContour("limiter lies outside the field domain")
    k = np.flatnonzero(ok)[np.argmax(orientation * vals[ok])]
    return float(vals[k]), pts[k]


def axis_side_value(field: FemField, orientation: int) -> float:
    ref = field.values[field.mesh.inner] if field.mesh.n_inner else field.values
    return float(orientation * np.max(orientation * ref))


def psi_boundary_value(field: FemField, limiter: LimiterContour, xpoints, orientation: int = 1,
                       psi_fn=None, axis_value: float | None = None, center=None):
    """
    ``(psi_p, kind, candidates)``.

    X-points inside the limiter whose flux lies on the plasma side of the
    axis-side value are admissible; limiter points behind them are ignored.
    ``psi_lim`` is the plasma-side extremum over the remaining limiter points.
    An admissible X-point whose flux lies strictly between ``psi_lim`` and
    the axis value bounds the plasma; ``candidates`` lists such X-points from
    the outermost flux surface inward. Otherwise the limiter value is returned.
    """
    psi_fn = field if psi_fn is None else psi_fn
    spacing = 0.25 * _mesh_spacing(field.mesh)
    if axis_value is None:
        axis_value = axis_side_value(field, orientation)
    admissible = [xp for xp in xpoints
                  if limiter.contains(xp.point[None])[0] and orientation * (axis_value - xp.psi) > 0]
    psi_lim, _ = limiter_flux(psi_fn, limiter, orientation, spacing, admissible, center)
    cands = [xp for xp in admissible if orientation * (xp.psi - psi_lim) > 0]
    cands.sort(key=lambda xp: orientation * xp.psi)
    if cands:
        return cands[0].psi, "xpoint", cands
    return psi_lim, "limiter", []


# ---------------------------------------------------------------------------
# contouring
# ---------------------------------------------------------------------------

def contour_loops(field: FemField, level: float):
    """
    Marching triangles at ``level``. Returns ``(closed, open)`` lists of
    polylines; vertices lie on mesh edges at the linearly interpolated level.
    """
    mesh, psi = field.mesh, field.values - level
    edges, tri_edges = _edge_table(mesh)
    above = psi > 0
    crossed = above[edges[:, 0]] != above[edges[:, 1]]
    if not crossed.any():
        return [], []
    a, b = edges[crossed, 0], edges[crossed, 1]
    t = psi[a] / (psi[a] - psi[b])
    pts = mesh.nodes[a] + t[:, None] * (mesh.nodes[b] - mesh.nodes[a])
    eid = np.full(len(edges), -1)
    eid[crossed] = np.arange(crossed.sum())

    te = eid[tri_edges]
    hit = (te >= 0).sum(axis=1) == 2
    segs = np.sort(te[hit], axis=1)[:, 1:]  # the -1 sorts first
    n = len(pts)
    adj = np.full((n, 2), -1)
    deg = np.zeros(n, int)
    for u, v in segs:
        adj[u, deg[u]] = v
        deg[u] += 1
        adj[v, deg[v]] = u
        deg[v] += 1

    seen = np.zeros(n, bool)
    closed, opened = [], []

    def walk(start):
        chain = [start]
        seen[start] = True
        prev, cur = -1, start
        while True:
            nbrs = [w for w in adj[cur, :deg[cur]] if w != prev]
            if not nbrs:
                return chain, False
            nxt = nbrs[0]
            if nxt == start:
                return chain, True
            if seen[nxt]:
                return chain, False
            chain.append(nxt)
            seen[nxt] = True
            prev, cur = cur, nxt

    for start in np.flatnonzero(deg == 1):
        if not seen[start]:
            chain, _ = walk(start)
            opened.append(pts[chain])
    for start in range(n):
        if not seen[start] and deg[start] == 2:
            chain, is_closed = walk(start)
            (closed if is_closed and len(chain) >= 3 else opened).append(pts[chain])
    return closed, opened


def _select_loop(loops, center):
    enclosing = [lp for lp in loops if points_in_polygon(np.atleast_2d(center), lp)[0]]
    if not enclosing:
        return None
    return min(enclosing, key=lambda lp: abs(signed_area(lp)))


def sharpen_corner(loop, xp: XPoint, radius: float) -> np.ndarray:
    """
    Pull the contour vertices within ``radius`` of an X-point onto the
    asymptotes of its local quadratic model and insert the X-point itself as
    the corner vertex. The pull fades out linearly over the outer half of the
    radius. Returns the loop rotated so the X-point comes first.
    """
    if len(xp.hessian) != 3:
        return loop
    hrr, hrz, hzz = xp.hessian
    lam, vec = np.linalg.eigh(np.array([[hrr, hrz], [hrz, hzz]]))
    if not lam[0] < 0 < lam[1]:
        return loop
    # zero directions of the quadratic form
    a, b = np.sqrt(lam[1]), np.sqrt(-lam[0])
    dirs = [b * vec[:, 1] + a * vec[:, 0], b * vec[:, 1] - a * vec[:, 0]]
    dirs = [d / np.linalg.norm(d) for d in dirs]
    x = xp.point
    rel = loop - x
    dist = np.linalg.norm(rel, axis=1)
    if not np.any(dist < radius):
        return loop
    proj = [np.outer(rel @ d, d) for d in dirs]
    err = np.stack([np.linalg.norm(rel - p, axis=1) for p in proj])
    which = np.argmin(err, axis=0)
    target = np.where(which[:, None] == 0, proj[0], proj[1])
    w = np.clip(2.0 - 2.0 * dist / radius, 0.0, 1.0)[:, None]
    moved = x + w * target + (1 - w) * rel
    near = dist < radius
    # corner goes where the nearest asymptote switches inside the pulled run
    switch = np.flatnonzero(near & np.roll(near, -1) & (which != np.roll(which, -1)))
    k = int(switch[np.argmin(dist[switch])]) + 1 if switch.size else int(np.argmin(dist))
    out = np.vstack([x[None], moved[k:], moved[:k]])
    if not switch.size:
        out = np.vstack([x[None], moved[k + 1:], moved[:k]])
    return out


def extract_isocontour(field: FemField, level: float, limiter: LimiterContour | None = None,
                       center=None, n_out: int = OUTPUT_POINTS, clip_to_limiter: bool = False,
                       tol: float | None = None, xpoint: XPoint | None = None) -> np.ndarray:
    """
    Closed iso-contour of ``field`` at ``level`` that encircles ``center``,
    resampled to ``n_out`` points and returned closed (first row repeated).
    With ``clip_to_limiter`` points outside the limiter by more than ``tol``
    are rejected and smaller excursions are projected back onto it. With
    ``xpoint`` the separatrix corner is sharpened and the X-point is the
    first output vertex.
    """
    lo, hi = float(field.values.min()), float(field.values.max())
    if not lo < level < hi:
        raise NoClosedContour(f"level {level:.6g} outside field range [{lo:.6g}, {hi:.6g}]")
    if center is None:
        if field.mesh.n_inner:
            center = field.mesh.nodes[field.mesh.inner].mean(axis=0)
        else:
            raise ValueError("a center point is needed to select the contour")
    closed, _ = contour_loops(field, level)
    loop = _select_loop(closed, center)
    if loop is None:
        raise NoClosedContour(f"no closed contour at level {level:.6g} encircles the center")
    spacing = _mesh_spacing(field.mesh)
    if limiter is not None and clip_to_limiter:
        tol = 2 * spacing if tol is None else tol
        out = ~limiter.contains(loop)
        if out.any():
            dist = distance_to_polyline(loop[out], limiter.points)
            if dist.max() > tol:
                raise NoClosedContour("contour crosses the limiter")
            loop = loop.copy()
            loop[out] = project_to_polyline(loop[out], limiter.points)
    loop = ensure_ccw(loop)
    if xpoint is not None:
        loop = ensure_ccw(sharpen_corner(loop, xpoint, 2 * spacing))
        start = int(np.argmin(np.linalg.norm(loop - xpoint.point, axis=1)))
        loop = np.roll(loop, -start, axis=0)
    return close_polyline(resample_closed(loop, n_out))


def plasma_boundary(field: FemField, limiter: LimiterContour, center, orientation: int = 1,
                    xpoints=None, psi_fn=None, axis_value: float | None = None,
                    n_out: int = OUTPUT_POINTS, region=None) -> PlasmaBoundary:
    """
    Boundary flux value plus contour. X-point candidates are tried from the
    outermost flux surface inward; the first whose contour is closed, stays
    inside the limiter, passes the X-point and encloses no other candidate
    wins. The remaining candidates are reported in ``flagged``.
    """
    if xpoints is None:
        xpoints = find_xpoints(field, region=limiter.points if region is None else region)
    if axis_value is None:
        axis_value = axis_side_value(field, orientation)
    psi_p, kind, cands = psi_boundary_value(field, limiter, xpoints, orientation, psi_fn, axis_value, center)
    tol = 2 * _mesh_spacing(field.mesh)
    for k, xp in enumerate(cands):
        span = abs(axis_value - xp.psi)
        # stay below the next saddle inward so the level keeps its topology
        gap = abs(cands[k + 1].psi - xp.psi) if k + 1 < len(cands) else span
        base = xp.contour_base(orientation)
        for nudge in _NUDGES:
            if nudge * span >= 0.5 * gap:
                break
            level = base + orientation * nudge * span
            try:
                line = extract_isocontour(field, level, limiter, center, n_out, clip_to_limiter=True, tol=tol,
                                          xpoint=xp)
            except NoClosedContour:
                continue
            if distance_to_polyline(xp.point[None], line)[0] > tol:
                continue
            # a last closed surface encloses no other saddle of the flux interval
            others = [o.point for o in cands if o is not xp]
            if others:
                pts = np.array(others)
                if np.any(points_in_polygon(pts, line) & (distance_to_polyline(pts, line) > tol)):
                    break
            others = tuple((o.r, o.z, o.psi) for o in cands if o is not xp)
            return PlasmaBoundary(line, xp.psi, "xpoint", (xp.r, xp.z), level, others)

    psi_lim = psi_p
    span = abs(axis_value - psi_lim)
    flagged = tuple((o.r, o.z, o.psi) for o in cands)
    for nudge in _NUDGES:
        level = psi_lim + orientation * nudge * span
        try:
            line = extract_isocontour(field, level, limiter, center, n_out, clip_to_limiter=True, tol=tol)
        except NoClosedContour:
            continue
        return PlasmaBoundary(line, psi_lim, "limiter", None, level, flagged)
    raise NoClosedContour("no closed flux surface inside the limiter")

"""
Closed-polyline helpers shared by the fit, mesh and boundary modules.

Polylines are ``(N, 2)`` arrays of ``(r, z)`` points. A closed polyline is
stored *without* repeating the first point unless stated otherwise.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, cKDTree


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) array of points, got shape {pts.shape}")
    return pts


def open_polyline(points) -> np.ndarray:
    """Drop a repeated closing point if present."""
    pts = as_points(points)
    if len(pts) > 1 and np.allclose(pts[0], pts[-1], rtol=0, atol=1e-14):
        return pts[:-1]
    return pts


def close_polyline(points) -> np.ndarray:
    pts = open_polyline(points)
    return np.vstack([pts, pts[:1]])


def signed_area(points) -> float:
    """Shoelace area; positive for counter-clockwise orientation in (r, z)."""
    pts = open_polyline(points)
    r, z = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(r * np.roll(z, -1) - np.roll(r, -1) * z))


def ensure_ccw(points) -> np.ndarray:
    pts = open_polyline(points)
    return pts if signed_area(pts) > 0 else pts[::-1].copy()


def perimeter(points) -> float:
    pts = close_polyline(points)
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def resample_closed(points, n: int) -> np.ndarray:
    """Resample a closed polyline to ``n`` points uniformly spaced in arc length."""
    pts = close_polyline(points)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, s[-1], n, endpoint=False)
    return np.column_stack([np.interp(t, s, pts[:, 0]), np.interp(t, s, pts[:, 1])])


def vertex_normals(points) -> np.ndarray:
    """
    Outward unit normals at the vertices of a counter-clockwise closed polyline.

    The normal at a vertex is the normalized average of the two adjacent edge
    normals, weighted by edge length.
    """
    pts = ensure_ccw(points)
    nxt = np.roll(pts, -1, axis=0)
    prv = np.roll(pts, 1, axis=0)
    tangent = nxt - prv
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    return normal / np.linalg.norm(normal, axis=1)[:, None]


def points_in_polygon(points, polygon) -> np.ndarray:
    """Even-odd ray casting test; returns a boolean mask."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = open_polyline(polygon)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x1, y1 = poly[:, 0][None, :], poly[:, 1][None, :]
    x2, y2 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    inside = crosses & (x < xint)
    return np.count_nonzero(inside, axis=1) % 2 == 1


def point_segment_distance(points, a, b) -> np.ndarray:
    """Distance from each point to each segment, shape ``(len(points), len(a))``."""
    p = np.atleast_2d(points)[:, None, :]
    ab = (b - a)[None, :, :]
    ap = p - a[None, :, :]
    denom = np.sum(ab * ab, axis=-1)
    denom = np.where(denom > 0, denom, 1.0)
    t = np.clip(np.sum(ap * ab, axis=-1) / denom, 0.0, 1.0)
    d = ap - t[..., None] * ab
    return np.sqrt(np.sum(d * d, axis=-1))


def distance_to_polyline(points, polyline, closed: bool = True, chunk: int = 2048) -> np.ndarray:
    """Exact Euclidean distance from points to a polyline (segment-wise)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    line = close_polyline(polyline) if closed else as_points(polyline)
    a, b = line[:-1], line[1:]
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        out[start:start + chunk] = point_segment_distance(pts[start:start + chunk], a, b).min(axis=1)
    return out


def project_to_polyline(points, polyline, closed: bool = True) -> np.ndarray:
    """Closest point on a polyline for each input point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    line = close_polyline(polyline) if closed else as_points(polyline)
    a, b = line[:-1], line[1:]
    ab = b - a
    ap = pts[:, None, :] - a[None, :, :]
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
    t = np.clip(np.sum(ap * ab[None], axis=-1) / denom[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    d = np.sum((pts[:, None, :] - proj) ** 2, axis=-1)
    idx = np.argmin(d, axis=1)
    return proj[np.arange(len(pts)), idx]


def hausdorff(line_a, line_b, n: int = 2000) -> float:
    """
    Hausdorff distance between two closed polylines.

    Both curves are densified to ``n`` points and vertex-to-segment distances
    are taken in both directions.
    """
    a = resample_closed(line_a, n)
    b = resample_closed(line_b, n)
    return float(max(distance_to_polyline(a, b).max(), distance_to_polyline(b, a).max()))


def convex_hull(points) -> np.ndarray:
    pts = as_points(points)
    hull = ConvexHull(pts)
    return ensure_ccw(pts[hull.vertices])


def offset_inward(polygon, distance: float) -> np.ndarray:
    """
    Inward offset of a convex counter-clockwise polygon by ``distance``.

    Each edge line is shifted along its inward normal and consecutive lines are
    intersected; lines whose segment collapses are dropped until none do.
    """
    poly = ensure_ccw(polygon)
    edge = np.roll(poly, -1, axis=0) - poly
    edge = edge / np.linalg.norm(edge, axis=1)[:, None]
    base = poly + distance * np.column_stack([-edge[:, 1], edge[:, 0]])
    while len(base) >= 3:
        b_prev, d_prev = np.roll(base, 1, axis=0), np.roll(edge, 1, axis=0)
        cross = d_prev[:, 0] * edge[:, 1] - d_prev[:, 1] * edge[:, 0]
        diff = base - b_prev
        t = (diff[:, 0] * edge[:, 1] - diff[:, 1] * edge[:, 0]) / cross
        # vertex i starts line i
        vert = b_prev + t[:, None] * d_prev
        seg = np.roll(vert, -1, axis=0) - vert
        keep = np.sum(seg * edge, axis=1) > 0
        if keep.all():
            return vert
        base, edge = base[keep], edge[keep]
    raise ValueError("offset distance collapses the polygon")


def smooth_closed(points, n: int, passes: int = 2) -> np.ndarray:
    """Resample to ``n`` points and apply light periodic averaging to round corners."""
    pts = resample_closed(points, n)
    for _ in range(passes):
        pts = 0.25 * np.roll(pts, 1, axis=0) + 0.5 * pts + 0.25 * np.roll(pts, -1, axis=0)
    return resample_closed(pts, n)


def nearest_index(points, targets) -> np.ndarray:
    tree = cKDTree(as_points(points))
    return tree.query(np.atleast_2d(targets))[1]

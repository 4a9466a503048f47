"""
Synthetic equilibria built from current filaments: exact fields, sensor
readings with seeded noise, and reference boundaries on fine grids.

The plasma is a set of filaments inside a small D-shaped patch, so the field
outside the patch is an exact vacuum solution. Coil currents are chosen by
least squares so that a target boundary is (approximately) a flux surface.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .boundary import (LimiterContour, PlasmaBoundary, find_xpoints, orientation_from_current,
                       plasma_boundary)
from .errors import NoClosedContour
from .fem import FemField
from .fit import MeasurementSet, Sensors
from .magnetostatics import (B_filaments, CoilSet, Filament, coil_B_matrix, coil_psi_matrix,
                             psi_filaments)
from .mesh import structured_mesh

DEFAULT_SIGMA = 1e-3


@dataclass(frozen=True)
class SyntheticEquilibrium:
    """
    Parameters
    ----------
    plasma_filaments : tuple of Filament
        ``current`` is in amperes.
    coils : CoilSet
    coil_currents : dict
        Current per coil label [A].
    noise : tuple
        Gaussian standard deviations ``(sigma_B [T], sigma_f [Wb], sigma_s [Wb])``.
    seed : int
    """

    plasma_filaments: tuple
    coils: CoilSet
    coil_currents: dict
    noise: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def I_p(self) -> float:
        return float(sum(f.current for f in self.plasma_filaments))

    def _plasma_arrays(self):
        fil = self.plasma_filaments
        return (np.array([f.r for f in fil]), np.array([f.z for f in fil]),
                np.array([f.current for f in fil]))

    def _all_arrays(self):
        rp, zp, ip = self._plasma_arrays()
        rc, zc = self.coils.arrays()
        ic = self.coils.filament_currents(self.coil_currents) if self.coils.filaments else np.zeros(0)
        return np.concatenate([rp, rc]), np.concatenate([zp, zc]), np.concatenate([ip, ic])

    def psi(self, r, z):
        r, z = np.broadcast_arrays(np.asarray(r, float), np.asarray(z, float))
        return psi_filaments(*self._all_arrays(), r.ravel(), z.ravel()).reshape(r.shape)

    def psi_plasma(self, r, z):
        r, z = np.broadcast_arrays(np.asarray(r, float), np.asarray(z, float))
        return psi_filaments(*self._plasma_arrays(), r.ravel(), z.ravel()).reshape(r.shape)

    def B(self, r, z):
        r, z = np.broadcast_arrays(np.asarray(r, float), np.asarray(z, float))
        br, bz = B_filaments(*self._all_arrays(), r.ravel(), z.ravel())
        return br.reshape(r.shape), bz.reshape(r.shape)

    def grad(self, r, z):
        """``(dpsi/dr, dpsi/dz) = (r B_z, -r B_r)``."""
        br, bz = self.B(r, z)
        r = np.asarray(r, float)
        return r * bz, -r * br

    def current_centroid(self):
        """``(r_c, z_c)`` with ``r_c^2 = sum I r^2 / I_p`` and ``z_c = sum I z / I_p``."""
        r, z, i = self._plasma_arrays()
        ip = i.sum()
        return float(np.sqrt(np.sum(i * r * r) / ip)), float(np.sum(i * z) / ip)

    def exclusion_radius(self, margin: float = 0.02) -> float:
        r, z, _ = self._plasma_arrays()
        rc, zc = self.current_centroid()
        return float(np.max(np.hypot(r - rc, z - zc)) + margin) if len(r) else 0.0

    def with_noise(self, noise, seed=None) -> "SyntheticEquilibrium":
        return SyntheticEquilibrium(self.plasma_filaments, self.coils, self.coil_currents,
                                    tuple(float(s) for s in noise), self.seed if seed is None else seed,
                                    self.meta)

    def scaled(self, alpha: float) -> "SyntheticEquilibrium":
        fil = tuple(Filament(f.r, f.z, alpha * f.current) for f in self.plasma_filaments)
        cur = {k: alpha * v for k, v in self.coil_currents.items()}
        noise = tuple(abs(alpha) * s for s in self.noise)
        return SyntheticEquilibrium(fil, self.coils, cur, noise, self.seed, self.meta)


def plasma_patch(center, a: float, kappa: float, delta: float, I_p: float,
                 n_rings: int = 3, per_ring: int = 8) -> tuple:
    """
    Filaments on nested D-shaped rings plus one at the centre, weighted by a
    parabolic profile ``1 - rho^2`` evaluated at mid-ring radius.
    """
    r0, z0 = center
    pts, wts = [(r0, z0)], [1.0]
    for k in range(1, n_rings + 1):
        rho = k / (n_rings + 0.5)
        t = np.linspace(0, 2 * np.pi, per_ring * k, endpoint=False) + 0.5 * k
        for tt in t:
            pts.append((r0 + rho * a * np.cos(tt + delta * np.sin(tt)), z0 + rho * kappa * a * np.sin(tt)))
            wts.append((1 - (rho - 0.5 / (n_rings + 0.5)) ** 2) / k)
    w = np.array(wts)
    w = w / w.sum() * I_p
    return tuple(Filament(float(p[0]), float(p[1]), float(c)) for p, c in zip(pts, w))


def design_coil_currents(coils: CoilSet, plasma: tuple, targets, xpoint=None,
                         regularization: float = 1e-14) -> dict:
    """
    Coil currents that make ``targets`` (and ``xpoint`` if given) share one
    flux value, with zero field at ``xpoint``. Tikhonov-regularized linear
    least squares in the unknowns (coil currents, boundary flux).
    """
    targets = np.asarray(targets, float)
    rp = np.array([f.r for f in plasma])
    zp = np.array([f.z for f in plasma])
    ip = np.array([f.current for f in plasma])
    G = coil_psi_matrix(coils, targets[:, 0], targets[:, 1])
    rhs = -psi_filaments(rp, zp, ip, targets[:, 0], targets[:, 1])
    A = np.column_stack([G, -np.ones(len(targets))])
    rows, b = [A], [rhs]
    if xpoint is not None:
        xr, xz = xpoint
        w = 10.0
        gx = coil_psi_matrix(coils, [xr], [xz])
        rows.append(w * np.column_stack([gx, [[-1.0]]]))
        b.append(-w * psi_filaments(rp, zp, ip, [xr], [xz]))
        br, bz = coil_B_matrix(coils, [xr], [xz])
        pbr, pbz = B_filaments(rp, zp, ip, [xr], [xz])
        # field rows scaled to flux units by the local radius
        rows.append(w * xr * np.vstack([np.column_stack([br, [[0.0]]]), np.column_stack([bz, [[0.0]]])]))
        b.append(-w * xr * np.concatenate([pbr, pbz]))
    A = np.vstack(rows)
    b = np.concatenate(b)
    scale = np.linalg.norm(A, axis=0)
    lam = regularization * np.linalg.norm(A / scale, 2) ** 2
    reg = np.sqrt(lam) * np.eye(A.shape[1])
    reg[-1, -1] = 0.0
    sol, *_ = np.linalg.lstsq(np.vstack([A / scale, reg]), np.concatenate([b, np.zeros(A.shape[1])]),
                              rcond=None)
    sol /= scale
    return {label: float(c) for label, c in zip(coils.labels, sol[:-1])}


def d_shaped_equilibrium(machine, kind: str = "xpoint", I_p: float = 6e5, center=(2.5, 0.0),
                         a: float = 0.44, kappa: float = 1.55, delta: float = 0.3,
                         patch=(0.1, 1.4, 0.25), n_rings: int = 3, seed: int = 0,
                         upper=None) -> SyntheticEquilibrium:
    """
    D-shaped target of half-width ``a`` around ``center``. For ``kind='xpoint'``
    the lower part of the target is replaced by an X-point constraint.
    ``patch`` gives ``(a, kappa, delta)`` of the filament region and ``upper``
    an optional ``(kappa, delta)`` for the upper half of the target. X-point
    cases default to a rounder top, ``(1.2, 0.1)``, which keeps the upper
    saddle well outside the plasma so the case is a clear single null.
    """
    r0, z0 = center
    plasma = plasma_patch(center, patch[0], patch[1], patch[2], I_p, n_rings)
    if upper is None:
        upper = (1.2, 0.1) if kind == "xpoint" else (kappa, delta)
    t = np.linspace(0, 2 * np.pi, 48, endpoint=False)
    k = np.where(np.sin(t) > 0, upper[0], kappa)
    d = np.where(np.sin(t) > 0, upper[1], delta)
    tgt = np.column_stack([r0 + a * np.cos(t + d * np.sin(t)), z0 + k * a * np.sin(t)])
    xp = None
    if kind == "xpoint":
        xp = (r0 - 0.9 * delta * a, z0 - 1.05 * kappa * a)
        tgt = tgt[tgt[:, 1] > xp[1] + 0.45 * kappa * a]
        legs = np.linspace(0.15, 0.85, 6)[:, None]
        side_l = np.array([r0 - a, z0 - 0.35 * kappa * a])
        side_r = np.array([r0 + 0.8 * a, z0 - 0.45 * kappa * a])
        xv = np.array(xp)
        tgt = np.vstack([tgt, side_l + legs * (xv - side_l), side_r + legs * (xv - side_r)])
    elif kind != "limiter":
        raise ValueError("kind must be 'xpoint' or 'limiter'")
    currents = design_coil_currents(machine.coils, plasma, tgt, xp)
    meta = {"kind": kind, "center": tuple(center), "a": a, "kappa": kappa, "delta": delta, "upper": tuple(upper),
            "target_xpoint": xp}
    return SyntheticEquilibrium(plasma, machine.coils, currents, (0.0, 0.0, 0.0), seed, meta)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

def exact_signals(eq: SyntheticEquilibrium, sensors: Sensors):
    """Noise-free ``(b, f, s)`` readings."""
    pos, d = sensors.probe_arrays()
    if len(pos):
        br, bz = eq.B(pos[:, 0], pos[:, 1])
        b = br * d[:, 0] + bz * d[:, 1]
    else:
        b = np.zeros(0)
    loops = sensors.loop_positions()
    f = eq.psi(loops[:, 0], loops[:, 1]) if len(loops) else np.zeros(0)
    p1, p2 = sensors.saddle_positions()
    s = eq.psi(p1[:, 0], p1[:, 1]) - eq.psi(p2[:, 0], p2[:, 1]) if len(p1) else np.zeros(0)
    return b, f, s


def relative_sigmas(eq: SyntheticEquilibrium, sensors: Sensors, fraction: float) -> tuple:
    """Per-type sigma equal to ``fraction`` times the RMS of that type's exact signals."""
    out = []
    for v in exact_signals(eq, sensors):
        out.append(float(fraction * np.sqrt(np.mean(v * v))) if v.size else 0.0)
    return tuple(out)


def generate_measurements(eq: SyntheticEquilibrium, sensors: Sensors, seed: int | None = None,
                          weights=None) -> MeasurementSet:
    """
    Exact readings plus independent Gaussian noise drawn from
    ``numpy.random.default_rng(seed)``. The sigmas stored on the result (used
    as fit weights) are the injected ones, or ``weights`` / 1e-3 when the
    equilibrium is noise-free.
    """
    b, f, s = exact_signals(eq, sensors)
    rng = np.random.default_rng(eq.seed if seed is None else seed)
    sb, sf, ss = eq.noise
    # draw all channels even when sigma is zero so streams stay aligned across noise levels
    nb, nf, ns = rng.standard_normal(b.size), rng.standard_normal(f.size), rng.standard_normal(s.size)
    b, f, s = b + sb * nb, f + sf * nf, s + ss * ns
    if weights is None:
        weights = tuple(x if x > 0 else DEFAULT_SIGMA for x in eq.noise)
    return MeasurementSet(b, f, s, *weights)


# ---------------------------------------------------------------------------
# reference boundary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceBoundary:
    polyline: np.ndarray
    psi_p: float
    kind: str
    xpoint: tuple | None = None

    @property
    def minor_radius(self) -> float:
        return 0.5 * float(np.ptp(self.polyline[:, 0]))


def refine_saddle(eq: SyntheticEquilibrium, guess):
    """Zero of the exact field near ``guess``; returns ``(point, psi, Hessian, converged)``."""
    sol = scipy.optimize.root(lambda p: np.array(eq.B(p[0], p[1]), dtype=float).ravel(),
                              np.asarray(guess, float), method="hybr", options={"xtol": 1e-13})
    p = sol.x
    h = 1e-5
    gr_p, gz_p = eq.grad(p[0] + h, p[1])
    gr_m, gz_m = eq.grad(p[0] - h, p[1])
    hr_p, hz_p = eq.grad(p[0], p[1] + h)
    hr_m, hz_m = eq.grad(p[0], p[1] - h)
    hess = np.array([[gr_p - gr_m, gz_p - gz_m], [hr_p - hr_m, hz_p - hz_m]], dtype=float) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    return p, float(eq.psi(p[0], p[1])), hess, bool(sol.success)


def exact_xpoints(eq: SyntheticEquilibrium, field: FemField, limiter: LimiterContour):
    """Grid saddles outside the plasma patch, refined on the exact field."""
    from .boundary import XPoint

    center = np.array(eq.current_centroid())
    excl = eq.exclusion_radius()
    out = []
    for xp in find_xpoints(field, region=limiter.points):
        if np.hypot(*(xp.point - center)) < excl:
            continue
        p, psi, hess, ok = refine_saddle(eq, xp.point)
        det = float(np.linalg.det(hess))
        if ok and det < 0 and np.hypot(*(p - xp.point)) < 0.05:
            if all(np.hypot(*(p - q.point)) > 1e-6 for q in out):
                out.append(XPoint(float(p[0]), float(p[1]), psi, det, xp.node_values,
                                  (hess[0, 0], hess[0, 1], hess[1, 1])))
    return out


def reference_grid_field(eq: SyntheticEquilibrium, limiter: LimiterContour, grid_h: float) -> FemField:
    lo = limiter.points.min(axis=0) - 4 * grid_h
    hi = limiter.points.max(axis=0) + 4 * grid_h
    # an irrational shift keeps grid nodes off filaments placed on round numbers
    shift = grid_h * (np.sqrt(2) - 1) * 0.5
    nr = int(np.ceil((hi[0] - lo[0]) / grid_h)) + 1
    nz = int(np.ceil((hi[1] - lo[1]) / grid_h)) + 1
    mesh = structured_mesh((lo[0] + shift, lo[0] + shift + (nr - 1) * grid_h),
                           (lo[1] + shift, lo[1] + shift + (nz - 1) * grid_h), nr, nz)
    return FemField(mesh, eq.psi(mesh.r, mesh.z))


def reference_boundary(eq: SyntheticEquilibrium, limiter: LimiterContour, grid_h: float = 0.005,
                       n_out: int = 256) -> ReferenceBoundary:
    """
    Boundary of the exact field: contour of exact flux samples on a Cartesian
    grid with spacing ``grid_h``; the limiter flux and X-point flux come from
    the exact field directly.
    """
    if eq.I_p == 0:
        raise NoClosedContour("no plasma current")
    field = reference_grid_field(eq, limiter, grid_h)
    orient = orientation_from_current(eq.I_p)
    center = np.array(eq.current_centroid())
    xps = exact_xpoints(eq, field, limiter)
    mesh = field.mesh
    near = np.hypot(mesh.r - center[0], mesh.z - center[1]) < eq.exclusion_radius()
    axis_value = float(orient * np.max(orient * field.values[near])) if near.any() else None
    b = plasma_boundary(field, limiter, center, orient, xpoints=xps, psi_fn=lambda p: eq.psi(p[:, 0], p[:, 1]),
                        axis_value=axis_value, n_out=n_out)
    return ReferenceBoundary(b.polyline, b.psi_p, b.kind, b.xpoint)

"""
Least-squares fit of toroidal harmonics to magnetic measurements and
evaluation of Cauchy data on the outer contour.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from . import geometry
from .errors import MissingCurrent, PoleOutsideHull, RankDeficient, ZeroCurrent
from .magnetostatics import MU0, CoilSet, coil_B_matrix, coil_psi_matrix
from .toroidal import HarmonicCoeffs, ToroidalPole, harmonic_basis

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class MagneticProbe:
    pos: tuple
    dir: tuple

    def __post_init__(self):
        if abs(np.hypot(*self.dir) - 1.0) > 1e-12:
            raise ValueError("probe direction must be a unit vector")


@dataclass(frozen=True)
class FluxLoop:
    pos: tuple

    def __post_init__(self):
        if not self.pos[0] > 0:
            raise ValueError("flux loop radius must be positive")


@dataclass(frozen=True)
class SaddleLoop:
    pos1: tuple
    pos2: tuple

    def __post_init__(self):
        if np.allclose(self.pos1, self.pos2):
            raise ValueError("saddle loop end points must differ")


@dataclass(frozen=True)
class Sensors:
    probes: tuple = ()
    flux_loops: tuple = ()
    saddle_loops: tuple = ()

    @property
    def counts(self):
        return len(self.probes), len(self.flux_loops), len(self.saddle_loops)

    def __len__(self):
        return sum(self.counts)

    def probe_arrays(self):
        pos = np.array([p.pos for p in self.probes], dtype=float).reshape(-1, 2)
        d = np.array([p.dir for p in self.probes], dtype=float).reshape(-1, 2)
        return pos, d

    def loop_positions(self):
        return np.array([f.pos for f in self.flux_loops], dtype=float).reshape(-1, 2)

    def saddle_positions(self):
        p1 = np.array([s.pos1 for s in self.saddle_loops], dtype=float).reshape(-1, 2)
        p2 = np.array([s.pos2 for s in self.saddle_loops], dtype=float).reshape(-1, 2)
        return p1, p2

    def all_positions(self) -> np.ndarray:
        p1, p2 = self.saddle_positions()
        return np.vstack([self.probe_arrays()[0], self.loop_positions(), p1, p2])


@dataclass(frozen=True)
class MeasurementSet:
    b_values: np.ndarray
    f_values: np.ndarray
    s_values: np.ndarray
    sigma_B: float = 1e-3
    sigma_f: float = 1e-3
    sigma_s: float = 1e-3

    def __post_init__(self):
        for name in ("b_values", "f_values", "s_values"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if min(self.sigma_B, self.sigma_f, self.sigma_s) <= 0:
            raise ValueError("measurement sigmas must be positive")

    def check(self, sensors: Sensors):
        got = (self.b_values.size, self.f_values.size, self.s_values.size)
        if got != sensors.counts:
            raise ValueError(f"measurement counts {got} do not match sensors {sensors.counts}")

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.b_values, self.f_values, self.s_values])

    @property
    def sigmas(self):
        return self.sigma_B, self.sigma_f, self.sigma_s

    def replace_values(self, values) -> "MeasurementSet":
        nb, nf = self.b_values.size, self.f_values.size
        v = np.asarray(values, dtype=float)
        return MeasurementSet(v[:nb], v[nb:nb + nf], v[nb + nf:], *self.sigmas)


@dataclass(frozen=True)
class Contour:
    """Closed counter-clockwise polyline with outward vertex normals."""

    points: np.ndarray
    normals: np.ndarray

    @classmethod
    def from_points(cls, points) -> "Contour":
        pts = geometry.ensure_ccw(points)
        return cls(pts, geometry.vertex_normals(pts))

    def __len__(self):
        return len(self.points)

    @property
    def r(self):
        return self.points[:, 0]

    @property
    def z(self):
        return self.points[:, 1]

    @property
    def tangents(self):
        """Counter-clockwise unit tangents."""
        return np.column_stack([-self.normals[:, 1], self.normals[:, 0]])

    def weights(self) -> np.ndarray:
        """Closed trapezoid weights (half of each adjacent edge length)."""
        edge = np.hypot(*(np.roll(self.points, -1, axis=0) - self.points).T)
        return 0.5 * (edge + np.roll(edge, 1))


@dataclass(frozen=True)
class CauchyData:
    contour: Contour
    f: np.ndarray
    g: np.ndarray
    dfds: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.contour)
        if np.shape(self.f) != (n,) or np.shape(self.g) != (n,):
            raise ValueError("Cauchy data must have one value per contour point")


@dataclass(frozen=True)
class CurrentCenter:
    r_c: float
    z_c: float
    I_p: float

    @property
    def point(self):
        return (self.r_c, self.z_c)


@dataclass(frozen=True)
class DesignMatrix:
    """Scaled model matrix: row ``i`` maps ``u`` to prediction_i / sigma_i."""

    matrix: np.ndarray
    pole: ToroidalPole
    n_e: int
    n_i: int
    counts: tuple
    sigmas: tuple

    @property
    def row_scale(self) -> np.ndarray:
        return np.concatenate([np.full(n, 1.0 / s) for n, s in zip(self.counts, self.sigmas)])

    def predict(self, u) -> np.ndarray:
        """Unscaled model predictions for coefficient vector ``u``."""
        return (self.matrix @ np.asarray(u, dtype=float)) / self.row_scale


@dataclass(frozen=True)
class FitResult:
    coeffs: HarmonicCoeffs
    rms: dict
    residuals: np.ndarray
    rank: int
    condition: float
    counts: tuple = ()


def build_design_matrix(sensors: Sensors, pole: ToroidalPole, n_e: int, n_i: int,
                        sigmas=(1.0, 1.0, 1.0), check_hull: bool = True, hull=None) -> DesignMatrix:
    """
    Rows: B probes (field along ``dir``), flux loops (flux), saddle loops
    (flux difference), each divided by the sigma of its type. ``hull`` may
    pass a precomputed sensor hull.
    """
    if check_hull:
        if hull is None:
            hull = geometry.convex_hull(sensors.all_positions())
        if not geometry.points_in_polygon([[pole.r0, pole.z0]], hull)[0]:
            raise PoleOutsideHull(f"pole ({pole.r0}, {pole.z0}) lies outside the sensor hull")
    blocks = []
    pos, d = sensors.probe_arrays()
    if len(pos):
        _, d_r, d_z = harmonic_basis(pole, n_e, n_i, pos[:, 0], pos[:, 1], gradient=True)
        inv_r = 1.0 / pos[:, 0][:, None]
        blocks.append((-d_z * inv_r) * d[:, :1] + (d_r * inv_r) * d[:, 1:])
    loops = sensors.loop_positions()
    if len(loops):
        blocks.append(harmonic_basis(pole, n_e, n_i, loops[:, 0], loops[:, 1]))
    p1, p2 = sensors.saddle_positions()
    if len(p1):
        blocks.append(harmonic_basis(pole, n_e, n_i, p1[:, 0], p1[:, 1])
                      - harmonic_basis(pole, n_e, n_i, p2[:, 0], p2[:, 1]))
    size = HarmonicCoeffs.size(n_e, n_i)
    raw = np.vstack(blocks) if blocks else np.zeros((0, size))
    counts = sensors.counts
    scale = np.concatenate([np.full(n, 1.0 / s) for n, s in zip(counts, sigmas)])
    return DesignMatrix(raw * scale[:, None], pole, n_e, n_i, counts, tuple(float(s) for s in sigmas))


def coil_response_matrix(sensors: Sensors, coils: CoilSet) -> np.ndarray:
    """Reading of every sensor per unit current in every coil, shape ``(n_sensors, n_coils)``."""
    parts = []
    pos, d = sensors.probe_arrays()
    if len(pos):
        br, bz = coil_B_matrix(coils, pos[:, 0], pos[:, 1])
        parts.append(br * d[:, :1] + bz * d[:, 1:])
    loops = sensors.loop_positions()
    if len(loops):
        parts.append(coil_psi_matrix(coils, loops[:, 0], loops[:, 1]))
    p1, p2 = sensors.saddle_positions()
    if len(p1):
        parts.append(coil_psi_matrix(coils, p1[:, 0], p1[:, 1]) - coil_psi_matrix(coils, p2[:, 0], p2[:, 1]))
    return np.vstack(parts) if parts else np.zeros((0, len(coils.labels)))


def coil_vector(coils: CoilSet, currents: Mapping[str, float]) -> np.ndarray:
    """Coil currents in ``coils.labels`` order."""
    missing = [lab for lab in coils.labels if lab not in currents]
    if missing:
        raise MissingCurrent(f"no current given for coils {missing}")
    return np.array([float(currents[lab]) for lab in coils.labels])


def coil_measurements(sensors: Sensors, coils: CoilSet, currents: Mapping[str, float],
                      response: np.ndarray | None = None) -> np.ndarray:
    """Coil contribution to every measurement, in measurement order."""
    if not coils.filaments:
        return np.zeros(len(sensors))
    ic = coil_vector(coils, currents)
    if response is None:
        response = coil_response_matrix(sensors, coils)
    return response @ ic


def subtract_coil_contributions(meas: MeasurementSet, sensors: Sensors, coils: CoilSet,
                                currents: Mapping[str, float], response: np.ndarray | None = None) -> MeasurementSet:
    meas.check(sensors)
    return meas.replace_values(meas.values - coil_measurements(sensors, coils, currents, response))


def fit_coefficients(design: DesignMatrix, adjusted: MeasurementSet) -> FitResult:
    """
    Weighted least squares through a column-pivoted QR factorization of the
    scaled design matrix (columns equilibrated first).
    """
    M = design.matrix
    if M.shape[0] < M.shape[1]:
        raise RankDeficient(f"{M.shape[0]} measurements for {M.shape[1]} unknowns", rank=M.shape[0])
    y = adjusted.values * design.row_scale
    col = np.linalg.norm(M, axis=0)
    col[col == 0] = 1.0
    Q, R, perm = scipy.linalg.qr(M / col, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    condition = diag[0] / diag[-1] if diag[-1] > 0 else np.inf
    rank = int(np.sum(diag > diag[0] / MAX_CONDITION))
    if condition > MAX_CONDITION:
        raise RankDeficient(f"design matrix condition {condition:.3g} exceeds {MAX_CONDITION:g}",
                            rank=rank)
    z = scipy.linalg.solve_triangular(R, Q.T @ y)
    u = np.empty_like(z)
    u[perm] = z
    u /= col
    coeffs = HarmonicCoeffs.from_vector(design.pole, design.n_e, design.n_i, u)
    residuals = design.predict(u) - adjusted.values
    rms = {}
    start = 0
    for name, n in zip(("B", "f", "s"), design.counts):
        rms[name] = float(np.sqrt(np.mean(residuals[start:start + n] ** 2))) if n else 0.0
        start += n
    return FitResult(coeffs, rms, residuals, rank, float(condition), tuple(design.counts))


def eval_cauchy(coeffs: HarmonicCoeffs | None, coils: CoilSet, currents: Mapping[str, float],
                contour: Contour) -> CauchyData:
    """``f = psi``, ``g = (1/r) dpsi/dn`` and ``dpsi/ds`` on the contour."""
    r, z = contour.r, contour.z
    psi = np.zeros(len(contour))
    dr = np.zeros(len(contour))
    dz = np.zeros(len(contour))
    if coeffs is not None:
        basis, b_r, b_z = harmonic_basis(coeffs.pole, coeffs.n_e, coeffs.n_i, r, z, gradient=True)
        u = coeffs.vector
        psi += basis @ u
        dr += b_r @ u
        dz += b_z @ u
    if coils.filaments:
        ic = np.array([float(currents[label]) for label in coils.labels])
        psi += coil_psi_matrix(coils, r, z) @ ic
        br, bz = coil_B_matrix(coils, r, z)
        dr += r * (bz @ ic)
        dz -= r * (br @ ic)
    n = contour.normals
    t = contour.tangents
    g = (dr * n[:, 0] + dz * n[:, 1]) / r
    dfds = dr * t[:, 0] + dz * t[:, 1]
    return CauchyData(contour, psi, g, dfds)


def cauchy_from_field(psi_fn, grad_fn, contour: Contour) -> CauchyData:
    """Cauchy data from callables ``psi_fn(r, z)`` and ``grad_fn(r, z) -> (dpsi/dr, dpsi/dz)``."""
    r, z = contour.r, contour.z
    dr, dz = grad_fn(r, z)
    n, t = contour.normals, contour.tangents
    return CauchyData(contour, np.asarray(psi_fn(r, z), float),
                      (dr * n[:, 0] + dz * n[:, 1]) / r, dr * t[:, 0] + dz * t[:, 1])


def current_center(cauchy: CauchyData, min_current: float = 1e3) -> CurrentCenter:
    """
    Plasma current and its first moments from contour integrals.

    With outward normal ``n`` and clockwise tangent, ``B_s = -g`` and
    ``B_n = -(1/r) dpsi/ds`` where ``s`` runs counter-clockwise. The three
    integrals give ``I_p``, ``z_c I_p`` and ``r_c^2 I_p``.
    """
    c = cauchy.contour
    r, z, w = c.r, c.z, c.weights()
    if cauchy.dfds is not None:
        dfds = cauchy.dfds
    else:
        # periodic central difference along the polyline
        s = np.hypot(*(np.roll(c.points, -1, axis=0) - c.points).T)
        dfds = (np.roll(cauchy.f, -1) - np.roll(cauchy.f, 1)) / (s + np.roll(s, 1))
    b_s = -cauchy.g
    b_n = -dfds / r
    ip = np.sum(w * b_s) / MU0
    if not abs(ip) >= min_current:
        raise ZeroCurrent(f"plasma current {ip:.3g} A is below {min_current:g} A")
    zc = np.sum(w * (-r * np.log(r) * b_n + z * b_s)) / MU0 / ip
    rc2 = np.sum(w * (2.0 * r * z * b_n + r * r * b_s)) / MU0 / ip
    if rc2 <= 0:
        raise ZeroCurrent("current moments give a non-positive r_c^2")
    return CurrentCenter(float(np.sqrt(rc2)), float(zc), float(ip))


def make_outer_contour(sensors: Sensors, offset: float = 0.05, n: int = 128) -> Contour:
    """Smoothed inward offset of the sensor convex hull."""
    hull = geometry.convex_hull(sensors.all_positions())
    inner = geometry.offset_inward(hull, offset)
    return Contour.from_points(geometry.smooth_closed(inner, n, passes=4))


def is_symmetric_layout(sensors: Sensors, z0: float, tol: float = 1e-12) -> bool:
    pts = sensors.all_positions()
    mirrored = pts.copy()
    mirrored[:, 1] = 2 * z0 - mirrored[:, 1]
    d = np.min(np.linalg.norm(pts[:, None] - mirrored[None], axis=-1), axis=1)
    return bool(np.all(d < tol))

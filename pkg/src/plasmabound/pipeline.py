"""
Per-slice reconstruction: harmonic fit, Cauchy data on the outer contour,
current center, bank selection, control solve and boundary extraction.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import scipy.linalg

from .boundary import (LimiterContour, PlasmaBoundary, find_xpoints, orientation_from_current,
                       plasma_boundary, prepare_topology)
from .errors import PlasmaBoundError
from .fem import (DEFAULT_EPSILON, FemField, MeshBank, assemble_rhs_with_constant, mesh_bank_build,
                  mesh_bank_select, quadratic_value, solve_dirichlet)
from .fit import (CauchyData, Contour, CurrentCenter, FitResult, MeasurementSet, build_design_matrix,
                  coil_response_matrix, coil_vector, current_center, fit_coefficients,
                  subtract_coil_contributions)
from . import geometry
from .geometry import vertex_normals
from .machine import MachineDescription
from .magnetostatics import coil_B_matrix, coil_psi_matrix
from .mesh import structured_mesh
from .toroidal import MAX_ORDER, HarmonicCoeffs, ToroidalPole, harmonic_basis


@dataclass(frozen=True)
class PipelineConfig:
    """
    Parameters
    ----------
    n_e, n_i : int
        External and internal harmonic orders.
    epsilon : float
        Regularization of the control problem.
    sigma_B, sigma_f, sigma_s : float
        Fit weights per sensor type (T, Wb, Wb).
    radius_fraction : float
        Inner circle radius as a fraction of the limiter half-width.
    h : float
        Mesh edge length [m].
    bank_grid : tuple
        Number of bank centers in r and z.
    bank_spacing : float
        Distance between neighbouring bank centers [m].
    bank_center : tuple or None
        Middle of the center grid; the limiter barycenter when ``None``.
    two_pass : bool
        Refit with the pole moved to the first current center.
    xpoint_refinement : list
        ``[[r, z, h_local], ...]`` mesh refinement zones.
    """

    n_e: int = 4
    n_i: int = 4
    epsilon: float = DEFAULT_EPSILON
    sigma_B: float = 1e-3
    sigma_f: float = 1e-3
    sigma_s: float = 1e-3
    radius_fraction: float = 0.4
    h: float = 0.022
    bank_grid: tuple = (3, 3)
    bank_spacing: float = 0.04
    bank_center: tuple | None = None
    two_pass: bool = True
    xpoint_refinement: tuple = ()
    n_out: int = 256

    def __post_init__(self):
        for name in ("n_e", "n_i"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 0 <= v <= MAX_ORDER):
                raise ValueError(f"{name} must be an integer in [0, {MAX_ORDER}]")
        for name in ("sigma_B", "sigma_f", "sigma_s", "radius_fraction", "h", "bank_spacing"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if len(self.bank_grid) != 2 or min(self.bank_grid) < 1:
            raise ValueError("bank_grid needs two positive counts")
        object.__setattr__(self, "bank_grid", tuple(int(v) for v in self.bank_grid))
        if self.bank_center is not None:
            object.__setattr__(self, "bank_center", tuple(float(v) for v in self.bank_center))
        object.__setattr__(self, "xpoint_refinement", tuple(tuple(float(x) for x in z) for z in self.xpoint_refinement))

    @property
    def sigmas(self):
        return self.sigma_B, self.sigma_f, self.sigma_s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bank_grid"] = list(self.bank_grid)
        d["bank_center"] = None if self.bank_center is None else list(self.bank_center)
        d["xpoint_refinement"] = [list(z) for z in self.xpoint_refinement]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def updated(self, **overrides) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def radius(self, limiter: LimiterContour) -> float:
        return self.radius_fraction * limiter.minor_radius

    def centers(self, limiter: LimiterContour) -> list:
        c = limiter.barycenter if self.bank_center is None else self.bank_center
        nr, nz = self.bank_grid
        dr = (np.arange(nr) - 0.5 * (nr - 1)) * self.bank_spacing
        dz = (np.arange(nz) - 0.5 * (nz - 1)) * self.bank_spacing
        return [(c[0] + a, c[1] + b) for a in dr for b in dz]


def build_bank(machine: MachineDescription, config: PipelineConfig, workers: int = 1) -> MeshBank:
    outer = machine.outer_contour().points
    return mesh_bank_build(outer, config.centers(machine.limiter), config.radius(machine.limiter),
                           config.h, config.epsilon, refinement=list(config.xpoint_refinement) or None,
                           workers=workers)


@dataclass
class ReconstructionResult:
    seq: int = 0
    time: float | None = None
    coeffs: HarmonicCoeffs | None = None
    fit: FitResult | None = None
    cauchy: CauchyData | None = None
    center: CurrentCenter | None = None
    bank_index: int | None = None
    control: np.ndarray | None = None
    psi_field: FemField | None = None
    boundary: PlasmaBoundary | None = None
    J: float | None = None
    timings: dict = field(default_factory=dict)
    error: dict | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_record(self) -> dict:
        """JSON-serializable record (one line of the results stream)."""
        rec = {"schema_version": 1, "seq": self.seq, "time": self.time,
               "timings_ms": {k: 1e3 * v for k, v in self.timings.items()}}
        if self.error is not None:
            rec["error"] = self.error
        if self.coeffs is not None:
            c = self.coeffs
            rec["coeffs"] = {"pole": [c.pole.r0, c.pole.z0], "n_e": c.n_e, "n_i": c.n_i,
                             "u": c.vector.tolist()}
        if self.fit is not None:
            rec["fit_rms"] = dict(self.fit.rms)
            rec["sensor_counts"] = list(self.fit.counts)
            rec["fit_residuals"] = self.fit.residuals.tolist()
        if self.cauchy is not None:
            rec["cauchy"] = {"r": self.cauchy.contour.r.tolist(), "z": self.cauchy.contour.z.tolist(),
                             "f": np.asarray(self.cauchy.f).tolist(), "g": np.asarray(self.cauchy.g).tolist()}
        if self.center is not None:
            rec["current_center"] = {"r_c": self.center.r_c, "z_c": self.center.z_c, "I_p": self.center.I_p}
        if self.bank_index is not None:
            rec["bank_index"] = self.bank_index
        if self.control is not None:
            rec["control"] = np.asarray(self.control).tolist()
        if self.boundary is not None:
            b = self.boundary
            rec["boundary"] = {"r": b.r.tolist(), "z": b.z.tolist(), "psi_p": b.psi_p, "kind": b.kind,
                               "xpoint": None if b.xpoint is None else list(b.xpoint),
                               "flagged_xpoints": [list(x) for x in b.flagged]}
        if self.J is not None:
            rec["J"] = self.J
        return rec


class _EntryCache:
    """Per-bank-entry data that depend on geometry only."""

    def __init__(self, machine: MachineDescription, entry):
        mesh = entry.mesh
        pts = mesh.nodes[mesh.outer]
        self.contour = Contour(pts, vertex_normals(pts))
        coils = machine.coils
        if coils.filaments:
            self.coil_psi = coil_psi_matrix(coils, pts[:, 0], pts[:, 1])
            self.coil_br, self.coil_bz = coil_B_matrix(coils, pts[:, 0], pts[:, 1])
        else:
            self.coil_psi = self.coil_br = self.coil_bz = np.zeros((len(pts), 0))
        # fill the lazy topology caches now so slices only read them
        sys = entry.system
        for which in ("interior", "dn", "inner"):
            sys.rows(which)
        mesh.locator()
        prepare_topology(mesh)


class Reconstructor:
    """
    Holds the machine, configuration and mesh bank; ``run`` processes one
    measurement set. Everything that depends on geometry only is prepared
    in the constructor.
    """

    def __init__(self, machine: MachineDescription, config: PipelineConfig, bank: MeshBank):
        self.machine = machine
        self.config = config
        self.bank = bank
        self.contour = machine.outer_contour()
        self.entries = [_EntryCache(machine, e) for e in bank.entries]
        c = machine.coils
        if c.filaments:
            self._gamma_coil = (coil_psi_matrix(c, self.contour.r, self.contour.z),
                                *coil_B_matrix(c, self.contour.r, self.contour.z))
        self.response = coil_response_matrix(machine.sensors, c) if c.filaments else None
        self.hull = geometry.convex_hull(machine.sensors.all_positions())

    def _coil_vector(self, currents):
        return coil_vector(self.machine.coils, currents)

    def _cauchy(self, coeffs, contour, coil_mats, ic):
        r, z = contour.r, contour.z
        basis, b_r, b_z = harmonic_basis(coeffs.pole, coeffs.n_e, coeffs.n_i, r, z, gradient=True)
        u = coeffs.vector
        psi, dr, dz = basis @ u, b_r @ u, b_z @ u
        if ic.size:
            gp, gbr, gbz = coil_mats
            psi = psi + gp @ ic
            dr = dr + r * (gbz @ ic)
            dz = dz - r * (gbr @ ic)
        n, t = contour.normals, contour.tangents
        return CauchyData(contour, psi, (dr * n[:, 0] + dz * n[:, 1]) / r, dr * t[:, 0] + dz * t[:, 1])

    def fit(self, meas: MeasurementSet, currents, pole: ToroidalPole, n_e=None, n_i=None):
        cfg = self.config
        sensors = self.machine.sensors
        adjusted = subtract_coil_contributions(meas, sensors, self.machine.coils, currents, self.response)
        design = build_design_matrix(sensors, pole, cfg.n_e if n_e is None else n_e,
                                     cfg.n_i if n_i is None else n_i, meas.sigmas, hull=self.hull)
        return fit_coefficients(design, adjusted)

    def run(self, meas: MeasurementSet, currents, seq: int = 0, time_stamp=None, pole=None,
            center_override=None) -> ReconstructionResult:
        res = ReconstructionResult(seq=seq, time=time_stamp)
        stage = "fit"
        clock = time.perf_counter
        t_all = clock()
        try:
            ic = self._coil_vector(currents) if self.machine.coils.filaments else np.zeros(0)
            if pole is None:
                pole = ToroidalPole(*self.machine.limiter.barycenter)
            t0 = clock()
            fit = self.fit(meas, currents, pole)
            res.timings["fit"] = clock() - t0

            stage = "current_center"
            t0 = clock()
            coil_g = self._gamma_coil if ic.size else None
            cauchy = self._cauchy(fit.coeffs, self.contour, coil_g, ic)
            cc = current_center(cauchy)
            res.timings["current_center"] = clock() - t0
            if self.config.two_pass:
                stage = "fit"
                t0 = clock()
                fit = self.fit(meas, currents, ToroidalPole(cc.r_c, cc.z_c))
                cauchy = self._cauchy(fit.coeffs, self.contour, coil_g, ic)
                res.timings["refit"] = clock() - t0
                stage = "current_center"
                cc = current_center(cauchy)
            res.coeffs, res.fit, res.center = fit.coeffs, fit, cc

            stage = "bank_select"
            t0 = clock()
            target = cc.point if center_override is None else center_override
            entry = mesh_bank_select(self.bank, target)
            k = self.bank.entries.index(entry)
            res.bank_index = k
            ec = self.entries[k]
            res.timings["bank_select"] = clock() - t0

            stage = "cauchy"
            t0 = clock()
            mats = (ec.coil_psi, ec.coil_br, ec.coil_bz)
            res.cauchy = self._cauchy(fit.coeffs, ec.contour, mats, ic)
            res.timings["cauchy"] = clock() - t0

            stage = "control"
            sys = entry.system
            t0 = clock()
            l, c = assemble_rhs_with_constant(sys, res.cauchy.f, res.cauchy.g)
            res.timings["rhs"] = clock() - t0
            t0 = clock()
            u = scipy.linalg.cho_solve(sys.S_factor, l)
            res.control = u
            res.J = quadratic_value(sys, u, l, c)
            res.timings["control"] = clock() - t0
            t0 = clock()
            res.psi_field = solve_dirichlet(sys, u, res.cauchy.f)
            res.timings["field"] = clock() - t0

            stage = "boundary"
            t0 = clock()
            res.boundary = plasma_boundary(res.psi_field, self.machine.limiter, cc.point,
                                           orientation_from_current(cc.I_p), n_out=self.config.n_out)
            res.timings["boundary"] = clock() - t0
        except PlasmaBoundError as exc:
            res.error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        except (ValueError, KeyError, np.linalg.LinAlgError) as exc:
            res.error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        res.timings["total"] = clock() - t_all
        return res

    def run_many(self, slices, workers: int = 1) -> list:
        """
        Process ``(seq, time, meas, currents)`` tuples, optionally on a thread
        pool. Slices share only read-only data; output order follows input.
        """
        def one(item):
            seq, t, meas, currents = item
            return self.run(meas, currents, seq=seq, time_stamp=t)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                return list(pool.map(one, slices))
        return [one(item) for item in slices]


def reconstruct(machine: MachineDescription, config: PipelineConfig, bank: MeshBank,
                meas: MeasurementSet, currents, **kw) -> ReconstructionResult:
    return Reconstructor(machine, config, bank).run(meas, currents, **kw)


def harmonic_only_boundary(result: ReconstructionResult, machine: MachineDescription, currents,
                           h: float = 0.01, n_out: int = 256) -> PlasmaBoundary:
    """
    Boundary of the fitted expansion alone (plus coils), contoured on a
    triangulated grid over the annulus region of the selected bank entry.
    """
    lim = machine.limiter
    lo = lim.points.min(axis=0) - 4 * h
    hi = lim.points.max(axis=0) + 4 * h
    nr = int(np.ceil((hi[0] - lo[0]) / h)) + 1
    nz = int(np.ceil((hi[1] - lo[1]) / h)) + 1
    grid = structured_mesh((lo[0], lo[0] + (nr - 1) * h), (lo[1], lo[1] + (nz - 1) * h), nr, nz)
    cc = result.center
    coeffs = result.coeffs
    r, z = grid.r, grid.z
    # keep away from the pole where internal harmonics are singular
    far = np.hypot(r - coeffs.pole.r0, z - coeffs.pole.z0) > 2 * h
    psi = np.full(grid.n_nodes, np.nan)
    basis = harmonic_basis(coeffs.pole, coeffs.n_e, coeffs.n_i, r[far], z[far])
    psi[far] = basis @ coeffs.vector
    if machine.coils.filaments:
        ic = np.array([float(currents[k]) for k in machine.coils.labels])
        psi[far] += coil_psi_matrix(machine.coils, r[far], z[far]) @ ic
    orient = orientation_from_current(cc.I_p)
    fill = orient * np.nanmax(orient * psi)
    psi = np.where(np.isfinite(psi), psi, fill)
    fld = FemField(grid, psi)
    inner = np.hypot(r - cc.r_c, z - cc.z_c) < 0.4 * lim.minor_radius
    axis_value = float(orient * np.max(orient * psi[inner]))
    xps = [x for x in find_xpoints(fld, region=lim.points)
           if np.hypot(x.r - cc.r_c, x.z - cc.z_c) > 0.4 * lim.minor_radius]
    return plasma_boundary(fld, lim, cc.point, orient, xpoints=xps, axis_value=axis_value, n_out=n_out)

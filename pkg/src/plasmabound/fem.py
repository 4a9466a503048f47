"""
P1 finite elements for ``L psi = 0`` on the annulus and the Kohn-Vogelius
control problem for the Dirichlet trace on the inner boundary.

Notation
--------
``K``      full stiffness matrix, ``K_ij = int (1/r) grad phi_i . grad phi_j``
           with the 1/r weight taken at triangle centroids.
``A_DD``   ``K`` restricted to interior nodes (Dirichlet on both boundaries).
``A_DN``   ``K`` restricted to interior + outer nodes (Dirichlet on the inner
           boundary, Neumann on the outer one).
``S``      ``(1 + eps) S_D - S_N`` on inner-boundary nodes.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import EmptyBank, SingularControlSystem, SingularMatrix
from .mesh import InnerContour, TriMesh, build_annulus_mesh

DEFAULT_EPSILON = 5e-4

# degree-4 Dunavant rule: barycentric points and weights (sum to 1)
_Q_A = (0.445948490915965, 0.091576213509771)
_Q_W = (0.223381589678011, 0.109951743655322)


def _quadrature_rule():
    pts, wts = [], []
    for a, w in zip(_Q_A, _Q_W):
        b = 1.0 - 2.0 * a
        for lam in ((a, a, b), (a, b, a), (b, a, a)):
            pts.append(lam)
            wts.append(w)
    return np.array(pts), np.array(wts)


def gradients(mesh: TriMesh):
    """Per-triangle gradients of the three hat functions, shape ``(ntri, 3, 2)``."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.areas()
    # grad phi_k = perp(edge opposite k) / (2 area)
    g = np.empty((len(p), 3, 2))
    for k in range(3):
        a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        g[:, k, 0] = (a[:, 1] - b[:, 1]) / (2 * area)
        g[:, k, 1] = (b[:, 0] - a[:, 0]) / (2 * area)
    return g, area


def assemble_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    g, area = gradients(mesh)
    weight = area / mesh.centroids()[:, 0]
    local = np.einsum("tik,tjk->tij", g, g) * weight[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
    K.sum_duplicates()
    return K


def outer_boundary_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix of the outer boundary edges (``int phi_i phi_j ds``)."""
    e = mesh.outer_edges()
    length = np.linalg.norm(mesh.nodes[e[:, 0]] - mesh.nodes[e[:, 1]], axis=1)
    rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
    vals = np.concatenate([length / 3, length / 3, length / 6, length / 6])
    return sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()


class _SPDFactor:
    """Sparse LU with symmetric ordering and no off-diagonal pivoting."""

    def __init__(self, A: sp.spmatrix, name: str):
        A = sp.csc_matrix(A)
        try:
            self.lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SingularMatrix(f"{name} factorization failed: {exc}") from exc
        pivots = self.lu.U.diagonal()
        self.min_pivot = float(pivots.min()) if pivots.size else np.inf
        if not self.min_pivot > 0:
            raise SingularMatrix(f"{name} is not positive definite (pivot {self.min_pivot:.3g})")
        self.shape = A.shape

    def solve(self, b):
        return self.lu.solve(np.asarray(b, dtype=float))


@dataclass
class FemField:
    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("one value per mesh node is required")

    def __call__(self, points, fill=np.nan):
        return self.mesh.locator().interpolate(self.values, points, fill)

    def __add__(self, other):
        return FemField(self.mesh, self.values + other.values)

    def __sub__(self, other):
        return FemField(self.mesh, self.values - other.values)

    def __mul__(self, alpha):
        return FemField(self.mesh, alpha * self.values)

    __rmul__ = __mul__

    def gradient(self) -> np.ndarray:
        """Piecewise-constant gradient per triangle, shape ``(ntri, 2)``."""
        g, _ = gradients(self.mesh)
        return np.einsum("tk,tkd->td", self.values[self.mesh.triangles], g)

    def l2_error(self, exact) -> float:
        """``|| psi_h - exact ||_{L2}`` with a degree-4 quadrature per triangle."""
        lam, w = _quadrature_rule()
        p = self.mesh.nodes[self.mesh.triangles]
        qp = np.einsum("qk,tkd->tqd", lam, p)
        vh = np.einsum("qk,tk->tq", lam, self.values[self.mesh.triangles])
        ve = np.asarray(exact(qp[..., 0].ravel(), qp[..., 1].ravel())).reshape(vh.shape)
        return float(np.sqrt(np.sum(self.mesh.areas()[:, None] * w[None, :] * (vh - ve) ** 2)))

    def l2_norm(self) -> float:
        return self.l2_error(lambda r, z: np.zeros_like(r))


@dataclass
class FemSystem:
    mesh: TriMesh
    K: sp.csr_matrix
    Mb: sp.csr_matrix
    dd: _SPDFactor
    dn: _SPDFactor
    epsilon: float = DEFAULT_EPSILON
    S: np.ndarray | None = None
    S_D: np.ndarray | None = None
    S_N: np.ndarray | None = None
    S_factor: tuple | None = None
    inertia: tuple | None = None
    timings: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def A_DD(self):
        i = self.mesh.interior
        return self.K[i][:, i]

    @property
    def A_DN(self):
        i = self.dn_nodes
        return self.K[i][:, i]

    @property
    def dn_nodes(self):
        if "dn_nodes" not in self.cache:
            self.cache["dn_nodes"] = np.concatenate([self.mesh.interior, self.mesh.outer])
        return self.cache["dn_nodes"]

    def rows(self, which: str) -> sp.csr_matrix:
        """Row block of ``K`` for ``interior``, ``dn`` or ``inner`` nodes (cached)."""
        key = "rows_" + which
        if key not in self.cache:
            idx = {"interior": self.mesh.interior, "dn": self.dn_nodes, "inner": self.mesh.inner}[which]
            self.cache[key] = self.K[idx]
        return self.cache[key]


def assemble_operators(mesh: TriMesh) -> FemSystem:
    """Stiffness matrix and factorizations of ``A_DD`` and ``A_DN``."""
    K = assemble_stiffness(mesh)
    interior = mesh.interior
    dn = np.concatenate([interior, mesh.outer])
    A_DD = K[interior][:, interior]
    A_DN = K[dn][:, dn]
    return FemSystem(mesh, K, outer_boundary_mass(mesh),
                     _SPDFactor(A_DD, "A_DD"), _SPDFactor(A_DN, "A_DN"))


def _check_len(name, arr, n):
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have {n} values, got shape {arr.shape}")
    return arr


def solve_dirichlet(sys: FemSystem, v, f) -> FemField:
    """``psi = v`` on the inner boundary, ``psi = f`` on the outer one."""
    m = sys.mesh
    v = _check_len("v", v, m.n_inner)
    f = _check_len("f", f, len(m.outer))
    psi = np.zeros(m.n_nodes)
    psi[m.inner] = v
    psi[m.outer] = f
    rhs = -(sys.rows("interior") @ psi)
    psi[m.interior] = sys.dd.solve(rhs)
    return FemField(m, psi)


def solve_neumann(sys: FemSystem, v, g) -> FemField:
    """``psi = v`` on the inner boundary, ``(1/r) dpsi/dn = g`` on the outer one."""
    m = sys.mesh
    v = _check_len("v", v, m.n_inner)
    g = _check_len("g", g, len(m.outer))
    psi = np.zeros(m.n_nodes)
    psi[m.inner] = v
    load = np.zeros(m.n_nodes)
    load[m.outer] = g
    nodes = sys.dn_nodes
    rhs = (sys.Mb @ load)[nodes] - sys.rows("dn") @ psi
    psi[nodes] = sys.dn.solve(rhs)
    return FemField(m, psi)


def _inner_extensions(sys: FemSystem):
    """Discrete harmonic extensions of every inner-boundary hat function."""
    m = sys.mesh
    KI = sys.K[:, m.inner].toarray()
    xd = np.zeros((m.n_nodes, m.n_inner))
    xd[m.inner] = np.eye(m.n_inner)
    xd[m.interior] = sys.dd.solve(-KI[m.interior])
    xn = np.zeros((m.n_nodes, m.n_inner))
    xn[m.inner] = np.eye(m.n_inner)
    nodes = sys.dn_nodes
    xn[nodes] = sys.dn.solve(-KI[nodes])
    return xd, xn


def assemble_control_system(sys: FemSystem, epsilon: float = DEFAULT_EPSILON) -> FemSystem:
    """
    ``S_ij = (1+eps) s_D(phi_i, phi_j) - s_N(phi_i, phi_j)`` with the forms
    tested against the trivial extension of ``phi_j``: column ``j`` of
    ``S_D`` is the inner-boundary rows of ``K @ psi_D(phi_j)``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    t0 = time.perf_counter()
    m = sys.mesh
    xd, xn = _inner_extensions(sys)
    KI_rows = sys.rows("inner")
    S_D = np.asarray(KI_rows @ xd)
    S_N = np.asarray(KI_rows @ xn)
    S_D = 0.5 * (S_D + S_D.T)
    S_N = 0.5 * (S_N + S_N.T)
    S = (1.0 + epsilon) * S_D - S_N
    _, d, _ = scipy.linalg.ldl(S)
    eig = np.linalg.eigvalsh(d) if d.size else d
    inertia = (int(np.sum(eig > 0)), int(np.sum(eig < 0)), int(np.sum(eig == 0)))
    if inertia[0] != len(S):
        raise SingularControlSystem(f"S is not positive definite at eps={epsilon:g}: inertia {inertia}")
    try:
        factor = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise SingularControlSystem(str(exc)) from exc
    sys.epsilon = float(epsilon)
    sys.S, sys.S_D, sys.S_N, sys.S_factor, sys.inertia = S, S_D, S_N, factor, inertia
    sys.timings["control_system"] = time.perf_counter() - t0
    return sys


def tilde_fields(sys: FemSystem, f, g):
    """``psi_D(0, f)`` and ``psi_N(0, g)``."""
    zero = np.zeros(sys.mesh.n_inner)
    return solve_dirichlet(sys, zero, f), solve_neumann(sys, zero, g)


def assemble_rhs(sys: FemSystem, f, g) -> np.ndarray:
    """``l_i = -int (1/r) grad(psi_D(0,f) - psi_N(0,g)) . grad R(phi_i)``."""
    return assemble_rhs_with_constant(sys, f, g)[0]


def assemble_rhs_with_constant(sys: FemSystem, f, g):
    """``l`` together with the data-only constant ``c = |psi_D(0,f) - psi_N(0,g)|^2 / 2``."""
    tD, tN = tilde_fields(sys, f, g)
    d = tD.values - tN.values
    l = -np.asarray(sys.rows("inner") @ d)
    c = 0.5 * float(d @ (sys.K @ d))
    return l, c


def quadratic_value(sys: FemSystem, u, l, c) -> float:
    """``J(u) = u.S.u / 2 - l.u + c``, equal to the functional evaluated from its definition."""
    u = np.asarray(u, dtype=float)
    return 0.5 * float(u @ (sys.S @ u)) - float(l @ u) + c


@dataclass(frozen=True)
class ControlSolution:
    u: np.ndarray
    J: float | None
    c: float | None
    misfit: float | None
    regularization: float | None
    residual: float


def kv_functional(sys: FemSystem, v, f, g, epsilon: float | None = None):
    """
    Regularized Kohn-Vogelius functional evaluated from its definition.

    Returns ``(J, misfit, regularization, c)`` where
    ``J = misfit + regularization`` and ``c`` is the data-only constant.
    """
    eps = sys.epsilon if epsilon is None else epsilon
    K = sys.K
    pd = solve_dirichlet(sys, v, f).values
    pn = solve_neumann(sys, v, g).values
    pd0 = solve_dirichlet(sys, v, np.zeros(len(sys.mesh.outer))).values
    d = pd - pn
    misfit = 0.5 * float(d @ (K @ d))
    reg = 0.5 * eps * float(pd0 @ (K @ pd0))
    tD, tN = tilde_fields(sys, f, g)
    dt = tD.values - tN.values
    c = 0.5 * float(dt @ (K @ dt))
    return misfit + reg, misfit, reg, c


def solve_control(sys: FemSystem, l, f=None, g=None) -> ControlSolution:
    """Solve ``S u = l``; with Cauchy data given, also evaluate ``J(u)``."""
    if sys.S_factor is None:
        raise SingularControlSystem("control system has not been assembled")
    l = np.asarray(l, dtype=float)
    u = scipy.linalg.cho_solve(sys.S_factor, l)
    norm_l = np.linalg.norm(l)
    residual = float(np.linalg.norm(sys.S @ u - l) / norm_l) if norm_l > 0 else float(np.linalg.norm(sys.S @ u))
    if f is None or g is None:
        return ControlSolution(u, None, None, None, None, residual)
    J, misfit, reg, c = kv_functional(sys, u, f, g)
    return ControlSolution(u, J, c, misfit, reg, residual)


def build_system(mesh: TriMesh, epsilon: float = DEFAULT_EPSILON) -> FemSystem:
    t0 = time.perf_counter()
    sys = assemble_operators(mesh)
    sys.timings["operators"] = time.perf_counter() - t0
    return assemble_control_system(sys, epsilon)


# ---------------------------------------------------------------------------
# mesh bank
# ---------------------------------------------------------------------------

@dataclass
class BankEntry:
    center: tuple
    inner: InnerContour
    mesh: TriMesh
    system: FemSystem


@dataclass
class MeshBank:
    entries: list
    h: float
    epsilon: float
    radius: float

    def __len__(self):
        return len(self.entries)

    @property
    def centers(self) -> np.ndarray:
        return np.array([e.center for e in self.entries], dtype=float).reshape(-1, 2)


def mesh_bank_build(outer, centers, radius: float, h: float, epsilon: float = DEFAULT_EPSILON,
                    refinement=None, workers: int = 1, semi_axes=None) -> MeshBank:
    """
    Precompute a mesh and its factorized operators for an inner circle (or
    ellipse when ``semi_axes`` is given) around each center.
    """
    centers = [tuple(map(float, c)) for c in centers]
    if not centers:
        raise EmptyBank("no bank centers given")

    def make(center):
        inner = (InnerContour(center, tuple(semi_axes), "ellipse") if semi_axes is not None
                 else InnerContour.circle(center, radius))
        mesh = build_annulus_mesh(outer, inner, h, refinement=refinement)
        return BankEntry(center, inner, mesh, build_system(mesh, epsilon))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(make, centers))
    else:
        entries = [make(c) for c in centers]
    return MeshBank(entries, float(h), float(epsilon), float(radius))


def mesh_bank_select(bank: MeshBank, point) -> BankEntry:
    """Entry whose center is closest to ``point``; ties go to the lowest index."""
    if len(bank) == 0:
        raise EmptyBank("mesh bank is empty")
    p = np.asarray(getattr(point, "point", point), dtype=float)
    d = np.linalg.norm(bank.centers - p[None, :], axis=1)
    return bank.entries[int(np.argmin(d))]

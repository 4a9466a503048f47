"""
Toroidal coordinates and order-one toroidal harmonics.

Coordinates about a pole ``(r0, z0)``::

    r      = r0 * sinh(zeta) / (cosh(zeta) - cos(eta))
    z - z0 = r0 * sin(eta)   / (cosh(zeta) - cos(eta))

``zeta -> inf`` at the pole, ``zeta -> 0`` on the symmetry axis and at
infinity. The flux expansion is

    psi = r0 sinh(zeta) / sqrt(cosh(zeta) - cos(eta))
          * sum_n (a_n cos(n eta) + b_n sin(n eta)) F_n(cosh(zeta))

with ``F_n = Q^1_{n-1/2}`` (external family, regular at the pole) or
``F_n = P^1_{n-1/2}`` (internal family, singular at the pole). Legendre
functions follow the ``x > 1`` convention ``F^1_nu = sqrt(x^2-1) dF_nu/dx``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AxisDomain, DomainError, OverflowWarning, PoleSingularity
from .magnetostatics import ellip_KE

MAX_ORDER = 12
POLE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ToroidalPole:
    r0: float
    z0: float

    def __post_init__(self):
        if not self.r0 > 0:
            raise ValueError(f"pole radius must be positive, got {self.r0}")


class ToroidalCoords(NamedTuple):
    zeta: np.ndarray
    eta: np.ndarray


def to_toroidal(r, z, pole: ToroidalPole) -> ToroidalCoords:
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(r <= 0):
        raise AxisDomain("toroidal coordinates need r > 0")
    dz = z - pole.z0
    d_near = (r - pole.r0) ** 2 + dz * dz
    if np.any(d_near <= POLE_TOLERANCE**2):
        raise PoleSingularity("point coincides with the toroidal pole")
    d_far = (r + pole.r0) ** 2 + dz * dz
    zeta = 0.5 * np.log(d_far / d_near)
    eta = np.arctan2(2.0 * pole.r0 * dz, r * r + dz * dz - pole.r0**2)
    eta = np.mod(eta, 2.0 * np.pi)
    return ToroidalCoords(zeta, eta)


def from_toroidal(coords, pole: ToroidalPole):
    zeta, eta = (np.asarray(c, dtype=float) for c in coords)
    if np.any(zeta <= 0) or not np.all(np.isfinite(zeta)):
        raise DomainError("zeta must be positive and finite")
    w = np.cosh(zeta) - np.cos(eta)
    return pole.r0 * np.sinh(zeta) / w, pole.z0 + pole.r0 * np.sin(eta) / w


# ---------------------------------------------------------------------------
# Legendre functions P^1_{n-1/2}, Q^1_{n-1/2} for x > 1
# ---------------------------------------------------------------------------

def _seeds(kind: str, x: np.ndarray):
    """Order-one members n = 0, 1 from complete elliptic integrals."""
    s = np.sqrt((x - 1.0) * (x + 1.0))
    if kind == "Q":
        m = 2.0 / (x + 1.0)
        K, E = ellip_KE(m)
        lo = np.sqrt(m) * K                               # Q_{-1/2}
        hi = x * np.sqrt(m) * K - np.sqrt(2.0 * (x + 1.0)) * E  # Q_{1/2}
    else:
        K, _ = ellip_KE((x - 1.0) / (x + 1.0))
        lo = 2.0 / np.pi * np.sqrt(2.0 / (x + 1.0)) * K   # P_{-1/2}
        t = x + s
        _, E = ellip_KE(2.0 * s / t)
        hi = 2.0 / np.pi * np.sqrt(t) * E                 # P_{1/2}
    f0 = 0.5 * (hi - x * lo) / s
    f1 = 0.5 * (x * hi - lo) / s
    return f0, f1


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 1.0 + 1e-14) or not np.all(np.isfinite(x)):
        raise DomainError("Legendre argument must satisfy x > 1")
    return x


def legendre_table(kind: str, nmax: int, x) -> np.ndarray:
    """
    ``F_n(x)`` for ``n = 0 .. nmax`` stacked along the first axis.

    P is the dominant solution of the degree recurrence and is run forward.
    Q is the minimal solution; it is obtained by a backward (Miller) sweep
    started far enough above ``nmax`` and normalized to the n = 0 seed.
    """
    if kind not in ("P", "Q"):
        raise ValueError("kind must be 'P' or 'Q'")
    if nmax < 0:
        raise ValueError("nmax must be non-negative")
    x = _check_x(x)
    f0, f1 = _seeds(kind, x)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = f0
    if nmax == 0:
        return out
    out[1] = f1
    if kind == "P":
        for n in range(1, nmax):
            out[n + 1] = (2.0 * n * x * out[n] - (n + 0.5) * out[n - 1]) / (n - 0.5)
        if not np.all(np.isfinite(out)):
            warnings.warn("P-kind Legendre value overflowed", OverflowWarning, stacklevel=2)
        return out
    zeta_min = float(np.min(np.arccosh(x)))
    start = nmax + 12 + int(np.ceil(20.0 / max(zeta_min, 1e-3)))
    hi = np.zeros_like(x)
    lo = np.ones_like(x)
    for n in range(start, nmax, -1):
        # lo = F_n, hi = F_{n+1}  ->  F_{n-1}
        nxt = (2.0 * n * x * lo - (n - 0.5) * hi) / (n + 0.5)
        scale = np.abs(nxt)
        hi, lo = lo / scale, nxt / scale
    out[nmax] = lo
    upper = hi
    for n in range(nmax, 0, -1):
        above = out[n + 1] if n < nmax else upper
        out[n - 1] = (2.0 * n * x * out[n] - (n - 0.5) * above) / (n + 0.5)
    out *= f0 / out[0]
    return out


def legendre_half(kind: str, n: int, x, max_order: int = MAX_ORDER):
    """Single member ``P^1_{n-1/2}(x)`` or ``Q^1_{n-1/2}(x)``."""
    if n < 0 or n > max_order:
        raise DomainError(f"order n must be in [0, {max_order}]")
    return legendre_table(kind, n, x)[n][()]


def legendre_derivative_table(kind: str, nmax: int, x):
    """Values and x-derivatives of ``F_n`` for ``n = 0 .. nmax``."""
    x = _check_x(x)
    f = legendre_table(kind, nmax + 1, x)
    n = np.arange(nmax + 1, dtype=float).reshape((-1,) + (1,) * x.ndim)
    df = ((n - 0.5) * f[1:] - (n + 0.5) * x * f[:-1]) / ((x - 1.0) * (x + 1.0))
    return f[:-1], df


# ---------------------------------------------------------------------------
# Truncated expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HarmonicCoeffs:
    """
    Coefficients of the truncated expansion.

    The flat vector layout is ``(a_e[0..n_e], b_e[1..n_e], a_i[0..n_i],
    b_i[1..n_i])``.
    """

    pole: ToroidalPole
    n_e: int
    n_i: int
    a_e: np.ndarray
    b_e: np.ndarray
    a_i: np.ndarray
    b_i: np.ndarray

    def __post_init__(self):
        shapes = {"a_e": self.n_e + 1, "b_e": self.n_e, "a_i": self.n_i + 1, "b_i": self.n_i}
        for name, size in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (size,):
                raise ValueError(f"{name} must have length {size}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    @staticmethod
    def size(n_e: int, n_i: int) -> int:
        return 2 * n_e + 1 + 2 * n_i + 1

    @classmethod
    def zeros(cls, pole, n_e, n_i):
        return cls.from_vector(pole, n_e, n_i, np.zeros(cls.size(n_e, n_i)))

    @classmethod
    def from_vector(cls, pole, n_e, n_i, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (cls.size(n_e, n_i),):
            raise ValueError("coefficient vector has the wrong length")
        i = np.cumsum([0, n_e + 1, n_e, n_i + 1, n_i])
        return cls(pole, n_e, n_i, u[i[0]:i[1]], u[i[1]:i[2]], u[i[2]:i[3]], u[i[3]:i[4]])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.a_e, self.b_e, self.a_i, self.b_i])

    def column_labels(self):
        return (
            [f"a_e{n}" for n in range(self.n_e + 1)] + [f"b_e{n}" for n in range(1, self.n_e + 1)]
            + [f"a_i{n}" for n in range(self.n_i + 1)] + [f"b_i{n}" for n in range(1, self.n_i + 1)]
        )


def harmonic_basis(pole: ToroidalPole, n_e: int, n_i: int, r, z, gradient: bool = False):
    """
    Flux of every unit coefficient at the points ``(r, z)``.

    Returns an array of shape ``(npoints, size)`` in the coefficient-vector
    layout; with ``gradient=True`` also the ``d/dr`` and ``d/dz`` arrays.
    """
    for n in (n_e, n_i):
        if n < 0 or n > MAX_ORDER:
            raise DomainError(f"truncation order must be in [0, {MAX_ORDER}]")
    r = np.atleast_1d(np.asarray(r, dtype=float)).ravel()
    z = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
    zeta, eta = to_toroidal(r, z, pole)
    ch, sh = np.cosh(zeta), np.sinh(zeta)
    w = ch - np.cos(eta)
    pref = pole.r0 * sh / np.sqrt(w)
    nmax = max(n_e, n_i)
    orders = np.arange(nmax + 1)[:, None]
    cos_n, sin_n = np.cos(orders * eta), np.sin(orders * eta)

    blocks, dz_blocks, de_blocks = [], [], []
    for kind, order in (("Q", n_e), ("P", n_i)):
        if gradient:
            f, df = legendre_derivative_table(kind, order, ch)
        else:
            f = legendre_table(kind, order, ch)
        cols = [pref * f[n] * cos_n[n] for n in range(order + 1)]
        cols += [pref * f[n] * sin_n[n] for n in range(1, order + 1)]
        blocks.extend(cols)
        if gradient:
            dpref_dzeta = pole.r0 * (ch * w - 0.5 * sh * sh) / w**1.5
            dpref_deta = -0.5 * pole.r0 * sh * np.sin(eta) / w**1.5
            df_dzeta = df * sh
            for n in range(order + 1):
                dz_blocks.append((dpref_dzeta * f[n] + pref * df_dzeta[n]) * cos_n[n])
                de_blocks.append(dpref_deta * f[n] * cos_n[n] - pref * f[n] * n * sin_n[n])
            for n in range(1, order + 1):
                dz_blocks.append((dpref_dzeta * f[n] + pref * df_dzeta[n]) * sin_n[n])
                de_blocks.append(dpref_deta * f[n] * sin_n[n] + pref * f[n] * n * cos_n[n])
    basis = np.column_stack(blocks)
    if not gradient:
        return basis
    d_zeta = np.column_stack(dz_blocks)
    d_eta = np.column_stack(de_blocks)
    a = (1.0 - ch * np.cos(eta))[:, None] / pole.r0
    b = (sh * np.sin(eta))[:, None] / pole.r0
    d_r = d_zeta * a - d_eta * b
    d_z = -d_zeta * b - d_eta * a
    return basis, d_r, d_z


def _points(r, z):
    r, z = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(z, dtype=float))
    return r.shape, r.ravel(), z.ravel()


def eval_psi_th(coeffs: HarmonicCoeffs, r, z):
    shape, rr, zz = _points(r, z)
    basis = harmonic_basis(coeffs.pole, coeffs.n_e, coeffs.n_i, rr, zz)
    return (basis @ coeffs.vector).reshape(shape)[()]


def eval_grad_psi_th(coeffs: HarmonicCoeffs, r, z):
    shape, rr, zz = _points(r, z)
    _, d_r, d_z = harmonic_basis(coeffs.pole, coeffs.n_e, coeffs.n_i, rr, zz, gradient=True)
    u = coeffs.vector
    return (d_r @ u).reshape(shape)[()], (d_z @ u).reshape(shape)[()]


def eval_B_th(coeffs: HarmonicCoeffs, r, z):
    if np.any(np.asarray(r) <= 0):
        raise AxisDomain("field evaluation needs r > 0")
    dpsi_dr, dpsi_dz = eval_grad_psi_th(coeffs, r, z)
    r = np.asarray(r, dtype=float)
    return -dpsi_dz / r, dpsi_dr / r

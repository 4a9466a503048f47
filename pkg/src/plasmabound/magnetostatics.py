"""
Flux and field of axisymmetric circular current filaments.

Conventions
-----------
The poloidal flux is ``psi = r * A_phi`` (Wb/rad) and the field follows

    B_r = -(1/r) dpsi/dz,    B_z = (1/r) dpsi/dr

Inputs ``r, z`` may be scalars or arrays; results broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, FilamentSingularity, MissingCurrent

MU0 = 4e-7 * np.pi
SINGULAR_DISTANCE = 1e-10


def ellip_KE(k2):
    """
    Complete elliptic integrals ``K(m)`` and ``E(m)`` with parameter ``m = k^2``.

    Evaluated with the arithmetic-geometric mean; converges quadratically so
    a handful of sweeps reach machine precision for ``m < 1 - 1e-15``.
    """
    m = np.asarray(k2, dtype=float)
    if np.any(m < 0) or np.any(m >= 1.0 - 1e-15) or not np.all(np.isfinite(m)):
        raise DomainError("elliptic parameter k2 must lie in [0, 1 - 1e-15)")
    a = np.ones_like(m)
    b = np.sqrt(1.0 - m)
    c2_sum = 0.5 * m  # 2**(n-1) c_n**2 at n = 0
    power = 0.5
    for _ in range(40):
        c = 0.5 * (a - b)
        a, b = 0.5 * (a + b), np.sqrt(a * b)
        power *= 2.0
        c2_sum = c2_sum + power * c * c
        # c stalls at half an ulp once a and b agree to rounding
        if np.all(np.abs(c) <= 4e-16 * a):
            break
    K = np.pi / (2.0 * a)
    E = K * (1.0 - c2_sum)
    return K, E


@dataclass(frozen=True)
class Filament:
    r: float
    z: float
    current: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"filament radius must be positive, got {self.r}")
        if not np.isfinite(self.current):
            raise ValueError("filament current must be finite")


@dataclass(frozen=True)
class CoilSet:
    """
    Filaments grouped into labelled coils.

    ``groups`` maps each label to the indices of its filaments. The filament
    ``current`` fields hold the current *per unit coil current* (turn
    fraction), so the flux for coil currents ``I_c`` is ``sum_c I_c * psi_c``.
    """

    filaments: tuple = ()
    labels: tuple = ()
    groups: tuple = ()

    def __post_init__(self):
        if len(self.labels) != len(self.groups):
            raise ValueError("labels and groups must have equal length")
        seen = set()
        for g in self.groups:
            for i in g:
                if i < 0 or i >= len(self.filaments):
                    raise ValueError("coil group index out of range")
                seen.add(i)
        if self.labels and len(seen) != len(self.filaments):
            raise ValueError("every filament must belong to exactly one coil")

    @classmethod
    def from_coils(cls, coils: Mapping[str, Sequence[tuple]]) -> "CoilSet":
        """Build from ``{label: [(r, z, turns), ...]}``."""
        filaments, labels, groups = [], [], []
        for label, fils in coils.items():
            start = len(filaments)
            filaments.extend(Filament(float(r), float(z), float(w)) for r, z, w in fils)
            labels.append(str(label))
            groups.append(tuple(range(start, len(filaments))))
        return cls(tuple(filaments), tuple(labels), tuple(groups))

    def __len__(self):
        return len(self.labels)

    def filament_currents(self, currents: Mapping[str, float]) -> np.ndarray:
        """Per-filament ampere-turns for the given coil currents."""
        out = np.zeros(len(self.filaments))
        for label, group in zip(self.labels, self.groups):
            if label not in currents:
                raise MissingCurrent(f"no current given for coil {label!r}")
            for i in group:
                out[i] = self.filaments[i].current * float(currents[label])
        return out

    def arrays(self):
        r = np.array([f.r for f in self.filaments], dtype=float)
        z = np.array([f.z for f in self.filaments], dtype=float)
        return r, z


def _check_off_filament(r, z, rf, zf):
    d = np.hypot(r - rf, z - zf)
    if np.any(d <= SINGULAR_DISTANCE):
        raise FilamentSingularity("evaluation point lies on a current filament")


def green_psi(rf, zf, r, z):
    """Flux at ``(r, z)`` per ampere in a filament at ``(rf, zf)``; broadcasts."""
    rf, zf, r, z = np.broadcast_arrays(*map(lambda a: np.asarray(a, float), (rf, zf, r, z)))
    _check_off_filament(r, z, rf, zf)
    dz = z - zf
    big = (r + rf) ** 2 + dz * dz
    k2 = 4.0 * r * rf / big
    K, E = ellip_KE(k2)
    # sqrt(r rf)/k == sqrt(big)/2, finite on the axis
    return MU0 / np.pi * 0.5 * np.sqrt(big) * ((1.0 - 0.5 * k2) * K - E)


def green_B(rf, zf, r, z):
    """Field ``(B_r, B_z)`` at ``(r, z)`` per ampere in a filament at ``(rf, zf)``."""
    rf, zf, r, z = np.broadcast_arrays(*map(lambda a: np.asarray(a, float), (rf, zf, r, z)))
    _check_off_filament(r, z, rf, zf)
    dz = z - zf
    big = (r + rf) ** 2 + dz * dz
    small = (rf - r) ** 2 + dz * dz
    k2 = 4.0 * r * rf / big
    K, E = ellip_KE(k2)
    root = np.sqrt(big)
    pref = MU0 / (2.0 * np.pi)
    bz = pref / root * (K + (rf * rf - r * r - dz * dz) / small * E)
    with np.errstate(divide="ignore", invalid="ignore"):
        br = pref * dz / (r * root) * (-K + (rf * rf + r * r + dz * dz) / small * E)
    br = np.where(r > 0, br, 0.0)
    return br, bz


def psi_filament(f: Filament, r, z):
    return f.current * green_psi(f.r, f.z, r, z)


def B_filament(f: Filament, r, z):
    br, bz = green_B(f.r, f.z, r, z)
    return f.current * br, f.current * bz


def psi_filaments(rf, zf, current, r, z):
    """Summed flux of a filament set at points ``r, z`` (1-D arrays)."""
    r = np.atleast_1d(np.asarray(r, float))
    z = np.atleast_1d(np.asarray(z, float))
    rf, zf, current = (np.atleast_1d(np.asarray(a, float)) for a in (rf, zf, current))
    if rf.size == 0:
        return np.zeros(r.shape)
    g = green_psi(rf[None, :], zf[None, :], r.ravel()[:, None], z.ravel()[:, None])
    return (g @ current).reshape(r.shape)


def B_filaments(rf, zf, current, r, z):
    r = np.atleast_1d(np.asarray(r, float))
    z = np.atleast_1d(np.asarray(z, float))
    rf, zf, current = (np.atleast_1d(np.asarray(a, float)) for a in (rf, zf, current))
    if rf.size == 0:
        return np.zeros(r.shape), np.zeros(r.shape)
    br, bz = green_B(rf[None, :], zf[None, :], r.ravel()[:, None], z.ravel()[:, None])
    return (br @ current).reshape(r.shape), (bz @ current).reshape(r.shape)


def _flat(r, z):
    r, z = np.broadcast_arrays(np.asarray(r, float), np.asarray(z, float))
    return r.shape, r.ravel(), z.ravel()


def psi_coils(coils: CoilSet, currents: Mapping[str, float], r, z):
    """Flux of all coils at the given coil currents."""
    shape, rr, zz = _flat(r, z)
    if not coils.filaments:
        return np.zeros(shape)[()]
    rf, zf = coils.arrays()
    return psi_filaments(rf, zf, coils.filament_currents(currents), rr, zz).reshape(shape)[()]


def B_coils(coils: CoilSet, currents: Mapping[str, float], r, z):
    shape, rr, zz = _flat(r, z)
    if not coils.filaments:
        return np.zeros(shape)[()], np.zeros(shape)[()]
    rf, zf = coils.arrays()
    br, bz = B_filaments(rf, zf, coils.filament_currents(currents), rr, zz)
    return br.reshape(shape)[()], bz.reshape(shape)[()]


def coil_psi_matrix(coils: CoilSet, r, z) -> np.ndarray:
    """Flux at each point per unit current of each coil, shape ``(npoints, ncoils)``."""
    r = np.atleast_1d(np.asarray(r, float)).ravel()
    z = np.atleast_1d(np.asarray(z, float)).ravel()
    out = np.zeros((r.size, len(coils)))
    for j, group in enumerate(coils.groups):
        for i in group:
            f = coils.filaments[i]
            out[:, j] += f.current * green_psi(f.r, f.z, r, z)
    return out


def coil_B_matrix(coils: CoilSet, r, z):
    r = np.atleast_1d(np.asarray(r, float)).ravel()
    z = np.atleast_1d(np.asarray(z, float)).ravel()
    br = np.zeros((r.size, len(coils)))
    bz = np.zeros((r.size, len(coils)))
    for j, group in enumerate(coils.groups):
        for i in group:
            f = coils.filaments[i]
            gr, gz = green_B(f.r, f.z, r, z)
            br[:, j] += f.current * gr
            bz[:, j] += f.current * gz
    return br, bz

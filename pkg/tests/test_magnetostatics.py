import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

import oracles
from plasmabound.errors import DomainError, FilamentSingularity, MissingCurrent
from plasmabound.magnetostatics import (MU0, B_coils, B_filament, CoilSet, Filament, coil_B_matrix,
                                        coil_psi_matrix, ellip_KE, psi_coils, psi_filament)

F = Filament(2.2, 0.3, 1.5e4)


def test_elliptic_degenerate():
    K, E = ellip_KE(0.0)
    assert K == pytest.approx(np.pi / 2, rel=1e-15)
    assert E == pytest.approx(np.pi / 2, rel=1e-15)


def test_elliptic_limit():
    _, E = ellip_KE(1 - 1e-12)
    assert abs(E - 1.0) < 1e-5


def test_elliptic_quadrature():
    K, _ = ellip_KE(0.5)
    assert K == pytest.approx(oracles.ellipk_quad(0.5), rel=1e-12)


@given(st.floats(0.0, 0.999999))
def test_elliptic_against_scipy(m):
    K, E = ellip_KE(m)
    assert K == pytest.approx(special.ellipk(m), rel=1e-13)
    assert E == pytest.approx(special.ellipe(m), rel=1e-13)


def test_elliptic_domain():
    for bad in (-0.1, 1.0, np.nan):
        with pytest.raises(DomainError):
            ellip_KE(bad)


def test_flux_vanishes_on_axis():
    assert psi_filament(F, 0.0, 1.0) == 0.0
    assert psi_filament(F, 0.0, -3.0) == 0.0


def test_flux_quadratic_near_axis():
    r = np.array([1e-3, 2e-3])
    p = psi_filament(F, r, 0.1)
    assert p[1] / p[0] == pytest.approx(4.0, rel=1e-5)


def test_flux_against_biot_savart(rng):
    r, z = rng.uniform(0.5, 4.0, 8), rng.uniform(-1.5, 1.5, 8)
    ref = oracles.loop_psi_biot_savart(F.r, F.z, F.current, r, z)
    assert np.allclose(psi_filament(F, r, z), ref, rtol=1e-10, atol=0)


def test_flux_homogeneous_equation():
    f = lambda r, z: psi_filament(F, r, z)
    res = [abs(oracles.gs_operator(f, 2.9, -0.2, h)) for h in (1e-2, 5e-3, 2.5e-3)]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.3)


def test_flux_mirror_symmetry():
    d = 0.41
    assert psi_filament(F, 2.7, F.z + d) == pytest.approx(psi_filament(F, 2.7, F.z - d), rel=1e-14)


def test_radial_field_vanishes_on_filament_plane():
    br, _ = B_filament(F, np.array([0.5, 1.5, 3.0]), F.z)
    assert np.all(np.abs(br) < 1e-18)


def test_field_against_finite_differences(rng):
    r, z = rng.uniform(0.8, 3.5, 20), rng.uniform(-1.0, 1.0, 20)
    br, bz = B_filament(F, r, z)
    gr, gz = oracles.fd_grad(lambda a, b: psi_filament(F, a, b), r, z)
    assert np.allclose(br, -gz / r, rtol=1e-6, atol=0)
    assert np.allclose(bz, gr / r, rtol=1e-6, atol=0)


def test_on_axis_field():
    z = np.array([-1.0, 0.0, 0.3, 2.0])
    _, bz = B_filament(F, 0.0, z)
    ref = MU0 * F.current * F.r**2 / (2 * (F.r**2 + (z - F.z) ** 2) ** 1.5)
    assert np.allclose(bz, ref, rtol=1e-10, atol=0)


def test_singularity_guard():
    with pytest.raises(FilamentSingularity):
        psi_filament(F, F.r, F.z)


COILS = CoilSet.from_coils({"A": [(1.5, 1.0, 1.0), (1.6, 1.0, 1.0)], "B": [(3.5, -0.8, 0.5)]})


def test_empty_coilset():
    empty = CoilSet()
    assert psi_coils(empty, {}, 2.0, 0.1) == 0.0
    assert B_coils(empty, {}, 2.0, 0.1) == (0.0, 0.0)


@settings(max_examples=25)
@given(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5), st.floats(0.1, 10))
def test_coil_linearity(ia, ib, alpha):
    p1 = psi_coils(COILS, {"A": ia, "B": ib}, 2.5, 0.2)
    p2 = psi_coils(COILS, {"A": alpha * ia, "B": alpha * ib}, 2.5, 0.2)
    assert p2 == pytest.approx(alpha * p1, rel=1e-12, abs=1e-300)


def test_coil_matrices_match_direct():
    cur = {"A": 1.2e4, "B": -3e3}
    r, z = np.array([2.0, 2.5, 3.0]), np.array([0.0, 0.3, -0.4])
    ic = np.array([cur["A"], cur["B"]])
    assert np.allclose(coil_psi_matrix(COILS, r, z) @ ic, psi_coils(COILS, cur, r, z), rtol=1e-14)
    br, bz = coil_B_matrix(COILS, r, z)
    dbr, dbz = B_coils(COILS, cur, r, z)
    assert np.allclose(br @ ic, dbr, rtol=1e-14)
    assert np.allclose(bz @ ic, dbz, rtol=1e-14)


def test_mirror_pair_midplane():
    pair = CoilSet.from_coils({"U": [(2.0, 0.5, 1.0)], "L": [(2.0, -0.5, 1.0)]})
    br, _ = B_coils(pair, {"U": 1e4, "L": 1e4}, np.array([1.0, 2.5, 3.3]), 0.0)
    assert np.all(np.abs(br) < 1e-18)


def test_missing_current():
    with pytest.raises(MissingCurrent):
        psi_coils(COILS, {"A": 1.0}, 2.0, 0.0)

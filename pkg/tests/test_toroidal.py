import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from plasmabound.errors import AxisDomain, DomainError, OverflowWarning, PoleSingularity
from plasmabound.toroidal import (HarmonicCoeffs, ToroidalPole, eval_B_th, eval_grad_psi_th, eval_psi_th,
                                  from_toroidal, harmonic_basis, legendre_half, legendre_table, to_toroidal)

POLE = ToroidalPole(2.5, 0.1)


def random_coeffs(rng, n_e=4, n_i=4, scale=1.0):
    return HarmonicCoeffs.from_vector(POLE, n_e, n_i, scale * rng.standard_normal(HarmonicCoeffs.size(n_e, n_i)))


# -- coordinates --------------------------------------------------------------

@given(st.floats(0.1, 10.0), st.floats(0.0, 2 * np.pi, exclude_max=True))
def test_round_trip_from_coordinates(zeta, eta):
    r, z = from_toroidal((zeta, eta), POLE)
    back = to_toroidal(r, z, POLE)
    assert back.zeta == pytest.approx(zeta, rel=1e-12, abs=1e-12)
    d = abs(back.eta - eta)
    assert min(d, 2 * np.pi - d) < 1e-12 * max(1.0, eta) + 1e-12


@given(st.floats(0.3, 5.0), st.floats(-2.0, 2.0))
def test_round_trip_from_points(r, z):
    if np.hypot(r - POLE.r0, z - POLE.z0) < 1e-3:
        return
    rr, zz = from_toroidal(to_toroidal(r, z, POLE), POLE)
    assert rr == pytest.approx(r, rel=1e-12)
    assert zz == pytest.approx(z, rel=1e-12, abs=1e-12)


def test_eta_zero_line():
    r0, z0 = POLE.r0, POLE.z0
    c = to_toroidal(r0 * np.sinh(1) / (np.cosh(1) - 1), z0, POLE)
    assert c.zeta == pytest.approx(1.0, rel=1e-14)
    assert c.eta == pytest.approx(0.0, abs=1e-14)


def test_against_root_finding(rng):
    for _ in range(20):
        r, z = rng.uniform(0.5, 4.5), rng.uniform(-1.5, 1.5)
        zeta, eta = oracles.toroidal_inverse(r, z, POLE.r0, POLE.z0)
        c = to_toroidal(r, z, POLE)
        assert c.zeta == pytest.approx(zeta, abs=1e-10)
        d = abs(c.eta - eta)
        assert min(d, 2 * np.pi - d) < 1e-10


def test_large_zeta_approaches_pole():
    r, z = from_toroidal((30.0, 1.3), POLE)
    assert np.hypot(r - POLE.r0, z - POLE.z0) < 1e-6


def test_eta_pi_substitution():
    r, z = from_toroidal((1.0, np.pi), POLE)
    assert r == pytest.approx(POLE.r0 * np.sinh(1) / (np.cosh(1) + 1), rel=1e-14)
    assert z == pytest.approx(POLE.z0, abs=1e-14)


def test_coordinate_errors():
    with pytest.raises(PoleSingularity):
        to_toroidal(POLE.r0, POLE.z0, POLE)
    with pytest.raises(AxisDomain):
        to_toroidal(0.0, 0.0, POLE)
    with pytest.raises(DomainError):
        from_toroidal((0.0, 1.0), POLE)


# -- Legendre functions ---------------------------------------------------------

@pytest.mark.parametrize("kind", ["P", "Q"])
def test_legendre_quadrature_point(kind):
    ref = oracles.legendre_P1(3, 1.5) if kind == "P" else oracles.legendre_Q1(3, 1.5)
    assert legendre_half(kind, 3, 1.5) == pytest.approx(ref, rel=1e-9)


def test_frozen_values():
    # mpmath quadrature at 30 digits
    assert legendre_half("P", 3, 2.0) == pytest.approx(22.981872605034344, rel=1e-12)
    assert legendre_half("Q", 3, 2.0) == pytest.approx(-0.036026715954448875, rel=1e-12)
    assert legendre_half("Q", 8, 10.0) == pytest.approx(-4.6861203188875516e-11, rel=1e-12)


@pytest.mark.parametrize("kind", ["P", "Q"])
@pytest.mark.parametrize("x", [1.1, 2.0, 10.0])
def test_degree_recurrence(kind, x):
    # (nu + 3/2) F_{n+1} = 2 (nu + 1) x F_n - (nu + 1/2) F_{n-1} with order one, nu = n - 1/2
    f = legendre_table(kind, 9, x)
    for n in range(1, 9):
        lhs = (n - 0.5) * f[n + 1]
        rhs = 2 * n * x * f[n] - (n + 0.5) * f[n - 1]
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), abs(2 * n * x * f[n]))


def test_monotone_in_degree():
    q = np.abs(legendre_table("Q", 8, 2.0))
    p = legendre_table("P", 8, 2.0)
    assert np.all(np.diff(q) < 0)
    assert np.all(np.diff(p) > 0)


def test_legendre_domain():
    with pytest.raises(DomainError):
        legendre_half("P", 2, 1.0)
    with pytest.raises(DomainError):
        legendre_half("Q", 2, 0.5)


def test_overflow_warning():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        legendre_table("P", 80, 1e5)
    assert any(issubclass(x.category, OverflowWarning) for x in w)


# -- expansion --------------------------------------------------------------------

def test_zero_coefficients():
    c = HarmonicCoeffs.zeros(POLE, 4, 4)
    r, z = np.array([2.0, 3.1]), np.array([0.4, -0.5])
    assert np.all(eval_psi_th(c, r, z) == 0)
    assert np.all(np.array(eval_grad_psi_th(c, r, z)) == 0)
    assert np.all(np.array(eval_B_th(c, r, z)) == 0)


def test_single_term():
    u = np.zeros(HarmonicCoeffs.size(3, 3))
    u[0] = 1.0
    c = HarmonicCoeffs.from_vector(POLE, 3, 3, u)
    r, z = 3.0, 0.45
    zeta, eta = oracles.toroidal_inverse(r, z, POLE.r0, POLE.z0)
    expected = POLE.r0 * np.sinh(zeta) / np.sqrt(np.cosh(zeta) - np.cos(eta)) * oracles.legendre_Q1(0, np.cosh(zeta))
    assert eval_psi_th(c, r, z) == pytest.approx(expected, rel=1e-12)


def test_gradient_finite_differences(rng):
    c = random_coeffs(rng)
    pts = np.column_stack([rng.uniform(1.8, 3.3, 100), rng.uniform(-0.9, 0.9, 100)])
    pts = pts[np.hypot(pts[:, 0] - POLE.r0, pts[:, 1] - POLE.z0) > 0.3]
    gr, gz = eval_grad_psi_th(c, pts[:, 0], pts[:, 1])
    fr, fz = oracles.fd_grad(lambda r, z: eval_psi_th(c, r, z), pts[:, 0], pts[:, 1])
    scale = np.max(np.abs(np.concatenate([fr, fz])))
    assert np.max(np.abs(gr - fr)) < 1e-6 * scale
    assert np.max(np.abs(gz - fz)) < 1e-6 * scale


def test_a0_gradient_parity():
    u = np.zeros(HarmonicCoeffs.size(2, 2))
    u[0] = 1.0
    c = HarmonicCoeffs.from_vector(POLE, 2, 2, u)
    d = 0.37
    gr1, gz1 = eval_grad_psi_th(c, 3.0, POLE.z0 + d)
    gr2, gz2 = eval_grad_psi_th(c, 3.0, POLE.z0 - d)
    assert gr1 == pytest.approx(gr2, rel=1e-12)
    assert gz1 == pytest.approx(-gz2, rel=1e-12)


def test_field_definition(rng):
    c = random_coeffs(rng)
    r, z = rng.uniform(2.9, 3.3, 10), rng.uniform(-0.5, 0.5, 10)
    br, bz = eval_B_th(c, r, z)
    gr, gz = eval_grad_psi_th(c, r, z)
    assert np.allclose(r * bz - gr, 0, atol=1e-14 * np.abs(gr).max())
    assert np.allclose(r * br + gz, 0, atol=1e-14 * np.abs(gz).max())


def test_divergence_free(rng):
    c = random_coeffs(rng)
    r, z = 3.1, 0.35

    def div(h):
        rbr = lambda rr, zz: rr * eval_B_th(c, rr, zz)[0]
        rbz = lambda rr, zz: rr * eval_B_th(c, rr, zz)[1]
        return abs((rbr(r + h, z) - rbr(r - h, z)) / (2 * h) + (rbz(r, z + h) - rbz(r, z - h)) / (2 * h))

    d1, d2 = div(1e-2), div(5e-3)
    assert d2 < d1
    assert np.log2(d1 / d2) == pytest.approx(2.0, abs=0.3)


@settings(max_examples=25)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, HarmonicCoeffs.size(4, 4)))
    r, z = rng.uniform(1.8, 3.3, 5), rng.uniform(-0.9, 0.9, 5)
    f = lambda w: eval_psi_th(HarmonicCoeffs.from_vector(POLE, 4, 4, w), r, z)
    lhs = f(alpha * u + beta * v)
    rhs = alpha * f(u) + beta * f(v)
    scale = abs(alpha) * np.abs(f(u)).max() + abs(beta) * np.abs(f(v)).max() + 1e-300
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@settings(max_examples=25)
@given(st.integers(0, 2**31))
def test_parity_without_sine_terms(seed):
    rng = np.random.default_rng(seed)
    c = random_coeffs(rng)
    c = HarmonicCoeffs(POLE, 4, 4, c.a_e, 0 * c.b_e, c.a_i, 0 * c.b_i)
    r, d = rng.uniform(1.9, 3.2), rng.uniform(0.05, 0.8)
    up, down = eval_psi_th(c, r, POLE.z0 + d), eval_psi_th(c, r, POLE.z0 - d)
    assert up == pytest.approx(down, rel=1e-11, abs=1e-13)


def test_harmonic_residual_second_order(rng):
    c = random_coeffs(rng)
    f = lambda r, z: eval_psi_th(c, r, z)
    res = [abs(oracles.gs_operator(f, 3.0, 0.4, h)) for h in (1e-2, 5e-3, 2.5e-3)]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.3)


def test_basis_shape_and_order_cap():
    b = harmonic_basis(POLE, 2, 3, [3.0, 2.0], [0.2, 0.1])
    assert b.shape == (2, HarmonicCoeffs.size(2, 3))
    with pytest.raises(DomainError):
        harmonic_basis(POLE, 13, 0, [3.0], [0.0])

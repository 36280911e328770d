"""Tests for the smoothing regularizer and its factorized normal solve."""

import numpy as np
import pytest

from gowave.regularizer import build

LAM, NU, H = 0.37, 4.2e-9, 2400.0


def small_op(nx=8, ny=8, lam=LAM, nu=NU, m0=None):
    if m0 is None:
        m0 = np.zeros(nx * ny)
    return build(nx, ny, H, lam, nu, m0)


def test_constant_vector_is_eigenvector_of_d():
    op = small_op()
    v = np.ones(op.p)
    np.testing.assert_allclose(op.D @ v, op.lam * op.nu * v, rtol=1e-12)


def test_min_eigenvalue_is_the_constant_mode():
    op = small_op()
    dtd = (op.D.T @ op.D).toarray()
    ev = np.linalg.eigvalsh(dtd)
    assert ev[0] >= op.mu * (1.0 - 1e-9)
    assert ev[0] == pytest.approx(op.mu, rel=1e-9)


def test_large_nu_limit_approaches_scaled_identity():
    # keep lam * nu fixed while nu grows; the Laplacian term becomes negligible
    target = LAM * NU
    nu = 1e6
    op = build(8, 8, H, target / nu, nu, np.zeros(64))
    rng = np.random.default_rng(2)
    v = rng.standard_normal(op.p)
    rel = np.linalg.norm(op.D @ v - target * v) / np.linalg.norm(target * v)
    assert rel <= 8.0 / (nu * H**2) * 1.01  # largest Laplacian eigenvalue / nu


def test_value_and_grad_vanish_at_reference():
    rng = np.random.default_rng(3)
    m0 = rng.standard_normal(96)
    op = build(8, 12, H, LAM, NU, m0)
    assert op.value(m0) == 0.0
    np.testing.assert_array_equal(op.grad(m0), np.zeros(96))


def test_value_is_half_quadratic_form():
    rng = np.random.default_rng(4)
    op = small_op(m0=rng.standard_normal(64))
    m = rng.standard_normal(64)
    delta = m - op.m0
    quad = 0.5 * float(np.dot(op.hess_vec(delta), delta))
    assert op.value(m) == pytest.approx(quad, rel=1e-12)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(5)
    op = small_op(m0=rng.standard_normal(64))
    m = rng.standard_normal(64)
    g = op.grad(m)
    v = rng.standard_normal(64)
    eps = 1e-6
    fd = (op.value(m + eps * v) - op.value(m - eps * v)) / (2 * eps)
    assert float(np.dot(g, v)) == pytest.approx(fd, rel=1e-8)


def test_solve_normal_round_trip():
    rng = np.random.default_rng(6)
    op = small_op(nx=12, ny=10, m0=np.zeros(120))
    x = rng.standard_normal(op.p)
    b = op.hess_vec(x)
    np.testing.assert_allclose(op.solve_normal(b), x, rtol=0, atol=1e-9 * np.linalg.norm(x))


def test_solve_normal_constant_mode():
    op = small_op()
    b = np.full(op.p, 3.7)
    np.testing.assert_allclose(op.solve_normal(b), b / op.mu, rtol=1e-9)


def test_solve_normal_is_linear():
    rng = np.random.default_rng(7)
    op = small_op()
    b1, b2 = rng.standard_normal(op.p), rng.standard_normal(op.p)
    alpha = 2.75
    lhs = op.solve_normal(alpha * b1 + b2)
    rhs = alpha * op.solve_normal(b1) + op.solve_normal(b2)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10 * np.linalg.norm(rhs))


def test_quadratic_form_bounded_below_by_mu():
    rng = np.random.default_rng(8)
    op = small_op(nx=10, ny=10, m0=np.zeros(100))
    for _ in range(25):
        v = rng.standard_normal(op.p)
        quad = float(np.dot(op.hess_vec(v), v))
        assert quad >= op.mu * float(np.dot(v, v)) * (1.0 - 1e-9)


def test_solve_normal_inverts_hess_vec():
    rng = np.random.default_rng(9)
    op = small_op()
    v = rng.standard_normal(op.p)
    np.testing.assert_allclose(op.solve_normal(op.hess_vec(v)), v,
                               rtol=0, atol=1e-9 * np.linalg.norm(v))


def test_smoothing_concentrates_spectrum_at_low_frequency():
    rng = np.random.default_rng(10)
    nx = ny = 32
    op = build(nx, ny, H, LAM, NU, np.zeros(nx * ny))
    b = rng.standard_normal(nx * ny)
    x = op.solve_normal(b)

    def low_band_fraction(v):
        power = np.abs(np.fft.fft2(v.reshape(nx, ny))) ** 2
        kx = np.minimum(np.arange(nx), nx - np.arange(nx))
        ky = np.minimum(np.arange(ny), ny - np.arange(ny))
        radius = np.add.outer(kx**2, ky**2)
        low = radius <= (nx // 8) ** 2
        return power[low].sum() / power.sum()

    assert low_band_fraction(x) > 0.9
    assert low_band_fraction(x) > 5 * low_band_fraction(b)


def test_build_rejects_bad_parameters():
    with pytest.raises(ValueError):
        build(8, 8, H, 0.0, NU, np.zeros(64))
    with pytest.raises(ValueError):
        build(8, 8, H, LAM, -1.0, np.zeros(64))
    with pytest.raises(ValueError):
        build(8, 8, H, LAM, NU, np.zeros(64), bc="dirichlet")
    with pytest.raises(ValueError):
        build(8, 8, H, LAM, NU, np.zeros(63))


def test_operator_accepts_model_grids():
    from gowave.wave import ModelGrid

    m0 = ModelGrid.zeros(8, 8)
    op = build(8, 8, H, LAM, NU, m0)
    m = ModelGrid(0.01 * np.ones(64), 8, 8)
    assert op.value(m) == pytest.approx(0.0, abs=1e-12)  # constant shift is smooth
    assert op.value(m) == pytest.approx(0.5 * op.mu * 64 * 0.01**2, rel=1e-12)

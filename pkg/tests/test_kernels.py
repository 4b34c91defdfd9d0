import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beltrami import kernels

lams = st.floats(0.05, 5.0)
coords = st.floats(-4.0, 4.0)
points = st.tuples(coords, coords, coords).filter(lambda p: 0.05 < math.sqrt(sum(c * c for c in p)))


def test_newtonian_value():
    assert kernels.gamma(0.0, [2.0, 0.0, 0.0]) == pytest.approx(1.0 / (8.0 * math.pi), rel=1e-15)


def test_singular_point_rejected():
    with pytest.raises(ValueError):
        kernels.gamma(1.0, np.zeros(3))
    with pytest.raises(ValueError):
        kernels.grad_gamma(1.0, np.ones((2, 2)))


def test_broadcasting_shapes():
    z = np.ones((4, 5, 3))
    assert np.shape(kernels.gamma(1.0, z)) == (4, 5)
    assert kernels.grad_gamma(1.0, z).shape == (4, 5, 3)
    assert kernels.hessian_gamma(1.0, z).shape == (4, 5, 3, 3)


@given(lams, points)
def test_even_in_z(lam, p):
    z = np.array(p)
    assert kernels.gamma(lam, z) == pytest.approx(kernels.gamma(lam, -z), rel=1e-14)
    np.testing.assert_allclose(kernels.grad_gamma(lam, z), -kernels.grad_gamma(lam, -z), rtol=1e-13, atol=0)


@given(lams, points)
def test_split_reconstructs_kernel(lam, p):
    z = np.array(p)
    s = kernels.kernel_split(lam, z)
    assert abs(s.total - kernels.gamma(lam, z)) <= 8 * np.spacing(abs(kernels.gamma(lam, z)))


@given(lams, st.floats(0.0, 1e-6))
def test_psi_bounded_near_origin(lam, r):
    assert abs(kernels.psi(lam, r) - 1j * lam / (4.0 * math.pi)) <= lam**2 * r + 1e-16


@given(lams, points)
def test_gradient_matches_finite_differences(lam, p):
    z = np.array(p)
    h = 1e-5 * max(1.0, np.linalg.norm(z))
    fd = np.array([(kernels.gamma(lam, z + h * e) - kernels.gamma(lam, z - h * e)) / (2 * h) for e in np.eye(3)])
    g = kernels.grad_gamma(lam, z)
    assert np.max(np.abs(fd - g)) <= 1e-6 * np.max(np.abs(g)) + 1e-9


@given(lams, points)
def test_helmholtz_equation(lam, p):
    z = np.array(p)
    lap = np.trace(kernels.hessian_gamma(lam, z))
    g = kernels.gamma(lam, z)
    assert abs(lap + lam**2 * g) <= 1e-10 * (abs(lam**2 * g) + abs(g) / np.dot(z, z))


@given(lams, points)
def test_sommerfeld_residual_of_kernel(lam, p):
    z = np.array(p)
    g = kernels.gamma(lam, z)
    res = kernels.sommerfeld_residual(lam, g, kernels.grad_gamma(lam, z), z)
    assert res == pytest.approx(-g / np.linalg.norm(z), rel=1e-12)


def test_smb_residual_of_outgoing_wave_decays():
    # u = curl(Gamma e3) + lam Gamma e3 style outgoing field
    lam = 1.0
    e3 = np.array([0.0, 0.0, 1.0])
    out = []
    for R in (10.0, 20.0, 40.0):
        x = R * np.array([0.6, 0.0, 0.8])
        g = kernels.gamma(lam, x)
        u = np.cross(kernels.grad_gamma(lam, x), e3) + lam * g * e3
        # a Beltrami field with curl u = lam u up to the gradient part; check the O(1/R^2) decay
        out.append(np.linalg.norm(kernels.smb_residual(lam, u, x)) * R)
    assert out[2] < out[1] < out[0]

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beltrami import potentials as pot
from beltrami.potentials import DomainError, LayerDensity, VolumeDensity
from beltrami.surface import make_sphere_grid


def _dirs(n, seed=0):
    d = np.random.default_rng(seed).normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1)[:, None]


def test_newtonian_single_layer_of_unit_density(grid16, grid32):
    # int_S dS / (4 pi |x - y|) = 1 / |x| outside and 1 inside the unit sphere;
    # plain quadrature is spectral away from S and loses digits close to it
    far = _dirs(10) * np.linspace(2.0, 4.0, 10)[:, None]
    near = _dirs(10, 1) * np.linspace(1.3, 1.6, 10)[:, None]
    for grid, x, tol in ((grid16, far, 1e-10), (grid32, near, 2e-6)):
        got = pot.single_layer(0.0, LayerDensity(grid, np.ones(grid.n)), x).real
        np.testing.assert_allclose(got, 1.0 / np.linalg.norm(x, axis=1), rtol=tol)
    inner = pot.single_layer(0.0, LayerDensity(grid32, np.ones(grid32.n)), 0.5 * _dirs(5)).real
    np.testing.assert_allclose(inner, 1.0, rtol=1e-12)


@given(st.floats(0.3, 3.0))
def test_helmholtz_single_layer_matches_addition_theorem(lam):
    # only the l = 0 term survives: S[1](x) = sin(lam) e^{i lam r} / (lam r)
    g = make_sphere_grid(n_theta=16, n_phi=32)
    x = _dirs(6, 1) * np.array([2.0, 2.5, 3.0, 4.0, 5.0, 6.0])[:, None]
    r = np.linalg.norm(x, axis=1)
    exact = math.sin(lam) * np.exp(1j * lam * r) / (lam * r)
    got = pot.single_layer(lam, LayerDensity(g, np.ones(g.n)), x)
    assert np.max(np.abs(got - exact)) < 1e-6 * np.max(np.abs(exact))


def test_gradient_of_single_layer_is_radial(grid16):
    dens = LayerDensity(grid16, np.ones(grid16.n))
    x = _dirs(8, 2) * 2.0
    grad = pot.grad_single_layer(0.0, dens, x).real
    np.testing.assert_allclose(grad, -x / 8.0, atol=1e-6)


def test_vector_density_is_componentwise(grid16):
    vals = np.stack([grid16.nodes[:, 2], np.ones(grid16.n), np.zeros(grid16.n)], axis=1)
    x = _dirs(4, 3) * 1.7
    vec = pot.single_layer(0.8, LayerDensity(grid16, vals), x)
    for k in range(3):
        np.testing.assert_allclose(vec[:, k], pot.single_layer(0.8, LayerDensity(grid16, vals[:, k]), x), rtol=1e-13,
                                   atol=1e-15)


def test_on_surface_targets_rejected(grid16):
    with pytest.raises(DomainError):
        pot.single_layer(1.0, LayerDensity(grid16, np.ones(grid16.n)), grid16.nodes[:3])


def test_density_shape_validated(grid16):
    with pytest.raises(ValueError):
        LayerDensity(grid16, np.ones(grid16.n + 1))
    with pytest.raises(ValueError):
        LayerDensity(grid16, np.full(grid16.n, np.nan))


def test_normal_derivative_jump(grid32):
    # exterior normal derivative of the Newtonian S[1] is -1, interior 0
    idx = np.arange(0, grid32.n, 37)
    X, N = grid32.nodes[idx], grid32.normals[idx]
    h = 0.5 * grid32.spacing

    def dn(p):
        m = pot.layer_moments(0.0, grid32, scal=np.ones((grid32.n, 1)), targets=p)
        return np.einsum("ti,ti->t", m.G[:, 0].real, N)

    ext = pot.richardson_limit(dn, X, N, h, "exterior")
    intr = pot.richardson_limit(dn, X, N, h, "interior")
    assert np.max(np.abs(ext - intr + 1.0)) < 5e-3


def test_velocity_jump_matches_side_terms(grid32):
    g = grid32
    idx = np.arange(0, g.n, 41)
    X, N = g.nodes[idx], g.normals[idx]
    gd = np.exp(g.nodes[:, 0]) * (1.0 + g.nodes[:, 2])
    V = np.stack([g.nodes[:, 1], g.nodes[:, 2] ** 2, np.cos(g.nodes[:, 0])], axis=1)
    xi = V - np.sum(V * g.normals, axis=1)[:, None] * g.normals

    def u(p):
        m = pot.layer_moments(0.0, g, scal=gd[:, None], vec=xi[:, None, :], targets=p)
        return (-m.G[:, 0] + m.C[:, 0]).real

    h = 0.5 * g.spacing
    jump = pot.richardson_limit(u, X, N, h, "exterior") - pot.richardson_limit(u, X, N, h, "interior")
    exact = gd[idx, None] * N - np.cross(N, xi[idx])
    assert np.max(np.linalg.norm(jump - exact, axis=1)) / np.max(np.linalg.norm(exact, axis=1)) < 1e-2


def test_boundary_limit_side_terms_differ_by_jump(grid16):
    g = grid16
    gd = g.nodes[:, 2].astype(complex)
    xi = np.cross(g.normals, np.tile([1.0, 0.0, 0.0], (g.n, 1))).astype(complex)
    ext = pot.boundary_limit_velocity(1.0, gd, xi, None, g, side="exterior")
    intr = pot.boundary_limit_velocity(1.0, gd, xi, None, g, side="interior")
    np.testing.assert_allclose(ext - intr, gd[:, None] * g.normals - np.cross(g.normals, xi), atol=1e-12)
    with pytest.raises(DomainError):
        pot.boundary_limit_velocity(1.0, gd, xi, None, g, nodes=[g.n])


def _ball_rule(center, a, n_r=8):
    sph = make_sphere_grid(n_theta=12, n_phi=24)
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * a * (xg + 1.0)
    wr = 0.5 * a * wg * r**2
    nodes = (np.asarray(center) + r[:, None, None] * sph.dirs[None]).reshape(-1, 3)
    weights = (wr[:, None] * sph.weights[None]).ravel()
    return nodes, weights


def test_volume_potential_of_uniform_ball():
    c, a = np.array([0.0, 0.0, 3.0]), 0.5
    nodes, w = _ball_rule(c, a)
    dens = VolumeDensity(nodes, w, np.ones(len(w)))
    assert dens.volume == pytest.approx(4.0 * math.pi * a**3 / 3.0, rel=1e-12)
    x = c + _dirs(6, 4) * 2.0
    exact = a**3 / (3.0 * np.linalg.norm(x - c, axis=1))
    np.testing.assert_allclose(pot.volume_potential(0.0, dens, x).real, exact, rtol=1e-8)
    grad = pot.grad_volume_potential(0.0, dens, x).real
    np.testing.assert_allclose(grad, -exact[:, None] * (x - c) / np.linalg.norm(x - c, axis=1)[:, None] ** 2,
                               rtol=1e-7, atol=1e-12)


def test_volume_density_validation():
    with pytest.raises(ValueError):
        VolumeDensity(np.zeros((2, 3)), np.array([1.0, -1.0]), np.zeros(2))
    with pytest.raises(ValueError):
        VolumeDensity(np.zeros((2, 3)), np.ones(3), np.zeros(2))
    assert VolumeDensity.empty().size == 0


@given(st.floats(0.5, 3.5))
def test_decay_fit_recovers_power(p):
    f = lambda x: np.linalg.norm(x, axis=1) ** (-p)
    assert pot.decay_exponent_fit(f, [5.0, 10.0, 20.0, 40.0], _dirs(10)) == pytest.approx(p, rel=1e-10)


def test_decay_fit_rejects_short_range():
    with pytest.raises(ValueError):
        pot.decay_exponent_fit(lambda x: np.ones(len(x)), [1.0, 2.0, 3.0], _dirs(4))


def test_newtonian_monopole_control(grid32):
    # the lam = 0 gradient of a unit-density layer decays like |x|^-2
    dens = LayerDensity(grid32, np.ones(grid32.n))
    p = pot.decay_exponent_fit(lambda x: pot.grad_single_layer(0.0, dens, x), [5.0, 10.0, 20.0, 40.0], _dirs(16))
    assert p == pytest.approx(2.0, abs=1e-6)


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_richardson_exact_for_quadratics(a, b, c):
    f = lambda p: a + b * p[:, 0] + c * p[:, 0] ** 2
    pts = np.array([[1.0, 0.0, 0.0], [0.5, 0.2, 0.1]])
    nrm = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    got = pot.richardson_limit(f, pts, nrm, 1e-2)
    np.testing.assert_allclose(got, f(pts), atol=1e-12)

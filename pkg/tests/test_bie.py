import math

import numpy as np
import pytest

from beltrami import bie
from beltrami.seeds import seed_field
from beltrami.surface import make_sphere_grid


@pytest.fixture(scope="module")
def op16(grid16):
    return bie.assemble_T(1.0, grid16)


def test_regular_lambda_heuristic(grid16):
    assert bie.is_regular_lambda(1.0, grid16)
    assert not bie.is_regular_lambda(math.pi, grid16)  # first zero of j_0
    hits = bie.ball_dirichlet_eigen_check(4.4934094579, 1.0)
    assert (1, pytest.approx(4.4934094579, rel=1e-9)) in hits


def test_zero_lambda_rejected(grid16):
    with pytest.raises(ValueError):
        bie.assemble_T(0.0, grid16)


def test_tangent_density_checks(grid16):
    with pytest.raises(ValueError):
        bie.TangentDensity(grid16, grid16.normals.astype(complex))
    t = bie.TangentDensity.project(grid16, np.ones((grid16.n, 3)))
    assert np.max(np.abs(np.sum(t.xi * grid16.normals, axis=1))) < 1e-14
    np.testing.assert_allclose(bie.to_ambient(grid16, t.to_local()), t.xi, atol=1e-14)


def test_operator_shape_and_identity_part(op16, grid16):
    assert op16.size == 2 * grid16.n
    assert op16.matrix.shape == (2 * grid16.n, 2 * grid16.n)
    assert np.all(np.isfinite(op16.matrix))


def test_exact_traces_satisfy_the_equation(op16, grid16, low_degree_spec):
    # xi = eta x u of a radiating Beltrami field solves (1/2 - T) xi = mu(g)
    v = seed_field(low_degree_spec, radiating=True)
    u = v(grid16.nodes)
    g = np.sum(u * grid16.normals, axis=1)
    xi = bie.TangentDensity.project(grid16, np.cross(grid16.normals, u))
    mu = bie.assemble_mu(1.0, grid16, None, g)
    assert bie.linear_residual(op16, xi, mu) < 5e-3
    sol = bie.solve_bie(op16, mu)
    err = np.max(np.linalg.norm(sol.xi - xi.xi, axis=1)) / np.max(np.linalg.norm(xi.xi, axis=1))
    assert err < 5e-3
    assert bie.linear_residual(op16, sol, mu) < 1e-10
    assert 0.0 < bie.stability_ratio(sol, mu) < 100.0


def test_zero_data_gives_zero_density(op16, grid16):
    sol = bie.solve_bie(op16, np.zeros((grid16.n, 3), complex))
    assert not np.any(sol.xi)


def test_trace_error_converges(low_degree_spec):
    v = seed_field(low_degree_spec, radiating=True)
    errs = []
    for nt in (8, 16):
        g = make_sphere_grid(n_theta=nt, n_phi=2 * nt)
        u = v(g.nodes)
        mu = bie.assemble_mu(1.0, g, None, np.sum(u * g.normals, axis=1))
        sol = bie.solve_bie(bie.assemble_T(1.0, g), mu)
        xi = np.cross(g.normals, u)
        errs.append(np.max(np.linalg.norm(sol.xi - xi, axis=1)) / np.max(np.linalg.norm(xi, axis=1)))
    assert errs[1] < errs[0] / 4.0

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beltrami import flow
from beltrami.flow import Controls, Event
from beltrami.seeds import seed_field
from beltrami.surface import make_cap_patch, make_sphere_grid

TIGHT = Controls(rtol=1e-11, atol=1e-13)


def rotation(x):
    return np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)


def test_constant_field_is_exact():
    s = flow.integrate_streamline(lambda x: np.tile([0.0, 0.0, 1.0], (len(x), 1)), [2.0, 0.0, 0.0], 5.0)
    np.testing.assert_allclose(s.points[-1], [2.0, 0.0, 5.0], atol=1e-14)
    assert s.event == "max_time"


@given(st.floats(0.1, 3.0), st.floats(-1.0, 1.0), st.floats(0.5, 12.0))
def test_rotation_preserves_radius(r, z, T):
    s = flow.integrate_streamline(rotation, [r, 0.0, z], T, TIGHT)
    p = s.dense(np.linspace(0.0, T, 200))
    assert np.max(np.abs(np.linalg.norm(p[:, :2], axis=1) - r)) < 1e-9 * max(r, 1.0)
    np.testing.assert_allclose(p[:, 2], z, atol=1e-14)
    np.testing.assert_allclose(s.points[-1][:2], [r * math.cos(T), r * math.sin(T)], atol=1e-8 * r)


def test_batch_matches_single_lines():
    # step control is per line; batched BLAS reductions may differ in the last bit,
    # so agreement is at the integrator tolerance rather than bitwise
    x0 = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 1.0], [0.5, 0.5, -1.0]])
    batch = flow.integrate_streamlines(rotation, x0, 3.0)
    for k in range(3):
        one = flow.integrate_streamline(rotation, x0[k], 3.0)
        np.testing.assert_allclose(batch[k].dense(np.linspace(0, 3, 50)), one.dense(np.linspace(0, 3, 50)),
                                   atol=1e-7)
        assert batch[k].points[-1] == pytest.approx(one.points[-1], abs=1e-7)


def test_plane_event_located_precisely():
    ev = Event(lambda y: 0.5 - y[:, 1], direction=-1, name="plane")
    res = flow.integrate_batch(rotation, np.array([[1.0, 0.0, 0.0]]), 10.0, Controls(), [ev])
    assert res.status[0] == "plane"
    assert res.t_final[0] == pytest.approx(math.asin(0.5), abs=1e-10)


def test_surface_event_and_backward_tracing():
    g = make_sphere_grid(n_theta=16, n_phi=32)
    inward = lambda x: -x / np.linalg.norm(x, axis=1)[:, None]
    s = flow.integrate_streamline(inward, [0.0, 0.0, 3.0], 10.0, surface=g)
    assert s.event == "surface"
    assert s.event_time == pytest.approx(2.0, abs=1e-10)
    b = flow.integrate_streamline(inward, [0.0, 0.0, 3.0], 1.0, backward=True)
    np.testing.assert_allclose(b.points[-1], [0.0, 0.0, 4.0], atol=1e-12)


def test_disk_rule_integrates_polynomials():
    s, w = flow.disk_rule(4, 8)
    assert w.sum() == pytest.approx(math.pi, rel=1e-14)
    assert np.sum(w * (s[:, 0] ** 2 + s[:, 1] ** 2)) == pytest.approx(math.pi / 2, rel=1e-14)


@pytest.fixture(scope="module")
def scenario_tube(scenario_spec):
    g = make_sphere_grid(n_theta=16, n_phi=32)
    patch = make_cap_patch(g, (math.sin(0.9), 0.0, math.cos(0.9)), 0.2)
    u0 = seed_field(scenario_spec).real()
    tube = flow.build_stream_tube(u0, patch, TIGHT, n_rho=3, n_beta=6)
    return u0, patch, tube


def test_scenario_tube_is_classified(scenario_tube):
    _, _, tube = scenario_tube
    tc = flow.classify_tube(tube)
    assert tc.rho0 > 0.0 and tc.delta > 0.0 and np.isfinite(tc.T)
    assert np.all(tube.T0 < tc.T)
    assert flow.tube_diameter(tube) > 0.0


def test_non_returning_tube_rejected(scenario_spec):
    g = make_sphere_grid(n_theta=16, n_phi=32)
    patch = make_cap_patch(g, (math.sin(0.9), 0.0, math.cos(0.9)), 0.2)
    tube = flow.build_stream_tube(seed_field(scenario_spec).real(), patch, n_rho=2, n_beta=4, max_time=1.0)
    with pytest.raises(flow.TubeClassificationError):
        flow.classify_tube(tube)


def test_transport_is_a_first_integral(scenario_tube):
    u0, patch, tube = scenario_tube
    phi0 = flow.bump(0.05, 0.8)
    phi = flow.transport_solve(u0, tube, phi0, controls=TIGHT)
    for k in range(0, len(tube.s_nodes), 4):
        pts = tube.position(k, np.linspace(0.05, 0.95, 7) * tube.T0[k])
        vals = phi(pts)
        assert np.max(np.abs(vals - phi0(tube.s_nodes[k]))) < 1e-8 * 0.05


def test_transport_vanishes_off_support(scenario_tube):
    u0, patch, tube = scenario_tube
    phi = flow.transport_solve(u0, tube, flow.bump(0.05, 0.8))
    far = np.array([[0.0, 0.0, -3.0], [-2.0, -2.0, 0.5]])
    assert np.all(phi(far) == 0.0)
    inside_obstacle = np.array([[0.1, 0.0, 0.0]])
    assert phi(inside_obstacle)[0] == 0.0


def test_proximity_screen_keeps_tube_points(scenario_tube):
    u0, patch, tube = scenario_tube
    phi = flow.transport_solve(u0, tube, flow.bump(0.05, 0.8))
    pts = tube.sample_points(13)
    assert np.all(phi.near_tube(pts))


def test_tube_quadrature_volume(scenario_tube):
    # int phi0 over the tube equals int_D phi0 (u.eta) det dmu T0 ds; compare to the explicit sum
    u0, patch, tube = scenario_tube
    w = flow.tube_quadrature(tube, flow.bump(0.05, 0.8), u0, n_t=24)
    assert w.size > 0
    assert np.all(w.weights > 0.0)
    assert np.all(np.linalg.norm(w.nodes, axis=1) >= 1.0 - 1e-12)

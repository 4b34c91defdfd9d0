import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beltrami import bie, flow
from beltrami import gradrubin as gr
from beltrami.seeds import seed_field
from beltrami.surface import make_cap_patch, make_sphere_grid

CAP = (math.sin(0.9), 0.0, math.cos(0.9))
SMALL = dict(n_rho=3, n_beta=6, n_t=12, n_probes=40, n_pairs=20)


@pytest.fixture(scope="module")
def setting():
    g = make_sphere_grid(n_theta=16, n_phi=32)
    return g, make_cap_patch(g, CAP, 0.2), bie.assemble_T(1.0, g)


def test_controls_validation():
    with pytest.raises(ValueError):
        gr.IterationControls(eps_stop=0.0)
    with pytest.raises(ValueError):
        gr.IterationControls(alarm=1.0)
    with pytest.raises(ValueError):
        gr.IterationControls(max_iters=0)
    with pytest.raises(ValueError):
        gr.IterationControls(support=1.5)
    with pytest.raises(ValueError):
        gr.IterationControls(probe_radii=(2.0, 1.5))


def test_probe_set_geometry(grid16):
    p = gr.ProbeSet.build(grid16, np.random.default_rng(0), 300, 50, (1.2, 3.0), 1e-3, 0.5)
    r = np.linalg.norm(p.points, axis=1)
    assert r.min() >= 1.2 and r.max() <= 3.0
    sep = np.linalg.norm(p.pair_b - p.pair_a, axis=1)
    assert np.all(sep >= grid16.spacing * (1 - 1e-12)) and np.all(sep <= 10 * grid16.spacing * (1 + 1e-12))
    assert np.all(grid16.implicit(p.pair_b) > 4e-3)
    q = gr.ProbeSet.build(grid16, np.random.default_rng(0), 300, 50, (1.2, 3.0), 1e-3, 0.5)
    np.testing.assert_array_equal(p.all_points, q.all_points)


def test_discrete_norm_of_linear_field(grid16):
    p = gr.ProbeSet.build(grid16, np.random.default_rng(1), 50, 20)
    M = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 2.0], [0.5, 0.0, 0.0]])
    n = gr.DiscreteNorm.of(gr.FieldSamples.of(lambda x: x @ M.T, p), p)
    assert n.grad == pytest.approx(np.linalg.norm(M, 2), rel=1e-9)
    assert n.c0 == pytest.approx(np.max(np.linalg.norm(p.points @ M.T, axis=1)), rel=1e-14)
    assert n.c1 == n.c0 + n.grad


@given(st.floats(0.05, 0.95), st.floats(1e-6, 1.0), st.integers(3, 8))
def test_contraction_report_geometric(r, a, k):
    norms = [gr.DiscreteNorm(a * r**n, a * r**n, 0.0) for n in range(k)]
    t = gr.contraction_report(norms)
    assert t.complete
    assert t.rows[0].ratio is None
    np.testing.assert_allclose(t.ratios, r, rtol=1e-12)
    assert t.non_monotone == []


def test_contraction_report_flags_and_incomplete():
    vals = [1.0, 0.5, 0.4, 0.1]
    t = gr.contraction_report([gr.DiscreteNorm(v, 0.0, 0.0) for v in vals])
    assert t.non_monotone == [2]
    assert not gr.contraction_report([gr.DiscreteNorm(1.0, 0.0, 0.0)] * 2).complete


def test_zero_amplitude_stops_at_the_seed(setting, scenario_spec):
    g, patch, op = setting
    st_ = gr.run_iteration(1.0, g, patch, scenario_spec, gr.IterationControls(amplitude=0.0, **SMALL), op=op)
    assert st_.converged and not st_.flagged
    assert len(st_.entries) == 1
    e = st_.entries[0]
    assert e.representation is None and e.delta.c0 == 0.0 and e.delta.c1 == 0.0
    x = st_.probes.points
    np.testing.assert_array_equal(st_.field()(x), seed_field(scenario_spec).real()(x))
    cert = gr.certify(st_)
    assert cert.n_inside == 0
    assert cert.residual.beltrami == cert.seed_residual
    assert cert.residual.beltrami < gr.SEED_RESIDUAL_FLOOR * cert.residual.scale
    assert cert.distance_to_seed == 0.0


def test_lambda_mismatch_rejected(setting, scenario_spec):
    g, patch, op = setting
    with pytest.raises(ValueError):
        gr.run_iteration(2.0, g, patch, scenario_spec, gr.IterationControls(**SMALL), op=op)


def test_first_step_is_linear_in_phi0(setting, scenario_spec):
    g, patch, op = setting
    u0 = seed_field(scenario_spec).real()
    # the coarse grid resolves the exit flux to a few percent only
    ctl = gr.IterationControls(compat_tol=0.05, **SMALL)
    x = gr.ProbeSet.build(g, np.random.default_rng(2), 30, 5).points
    out = []
    for amp in (0.02, 0.04):
        _, _, _, rep, _, size = gr._step(1.0, g, patch, u0, flow.bump(amp, 0.8), ctl, op, None)
        assert size > 0
        out.append(np.real(rep.eval_u(x)))
    np.testing.assert_allclose(out[1], 2.0 * out[0], rtol=1e-9, atol=1e-12 * np.abs(out[1]).max())


def test_append_invariants(setting, scenario_spec):
    g, patch, _ = setting
    ctl = gr.IterationControls(**SMALL)
    probes = gr.ProbeSet.build(g, np.random.default_rng(0), 5, 2)
    s = gr.IterationState(1.0, scenario_spec, g, patch, ctl, probes)
    zero = gr.DiscreteNorm(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        s.append(gr.IterationEntry(1, None, None, None, None, zero, 0.5))
    with pytest.raises(ValueError):
        s.append(gr.IterationEntry(0, None, None, None, None, zero, 0.5))
    s.append(gr.IterationEntry(0, None, None, None, None, zero, None))
    assert s.ratios == []


def test_tube_probes_are_in_the_support(setting, scenario_spec):
    g, patch, _ = setting
    u0 = seed_field(scenario_spec).real()
    tube = flow.build_stream_tube(u0, patch, n_rho=3, n_beta=6)
    phi0 = flow.bump(0.05, 0.8)
    pts = gr.tube_probes(tube, phi0, 3, 4e-3)
    assert len(pts) > 0
    assert np.all(g.implicit(pts) > 4e-3)
    phi = flow.transport_solve(u0, tube, phi0)
    assert np.all(phi(pts) != 0.0)
    assert gr.first_integral_defect(u0, phi, pts[:6]) < 1e-3


def test_seed_residual_certificate(scenario_spec, low_degree_spec):
    x = np.random.default_rng(4).normal(size=(20, 3))
    x = x / np.linalg.norm(x, axis=1)[:, None] * 2.0
    for spec in (scenario_spec, low_degree_spec):
        c = gr.residual_certificate(seed_field(spec).real(), None, 1.0, x)
        assert c.beltrami_rel < 1e-5 and c.divergence_rel < 1e-5
    wrong = gr.residual_certificate(seed_field(low_degree_spec).real(), np.full(20, 0.5), 1.0, x)
    assert wrong.beltrami_rel > 0.1

"""The numba kernels and their numpy fallbacks must agree to rounding."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beltrami import _accel, _hot, bie
from beltrami.potentials import VolumeDensity, layer_moments, volume_moments
from beltrami.surface import make_sphere_grid

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")

RTOL = 1e-12


def both(fn, monkeypatch):
    out = {}
    for name in ("numba", "numpy"):
        monkeypatch.setattr(_accel, "DEFAULT_BACKEND", name)
        out[name] = fn()
    return out["numba"], out["numpy"]


def close(a, b):
    # moments can cancel to ~0, so rounding is judged against the largest moment of the call
    scale = max(np.max(np.abs(y), initial=0.0) for y in b)
    for x, y in zip(a, b):
        assert np.max(np.abs(np.asarray(x) - np.asarray(y)), initial=0.0) <= RTOL * max(scale, 1e-300)


def test_resolve():
    assert _accel.resolve("numpy") == "numpy"
    assert _accel.resolve("NUMBA") == "numba"
    with pytest.raises(ValueError):
        _accel.resolve("cuda")


@given(st.integers(1, 30), st.integers(1, 40), st.floats(0.0, 3.0), st.integers(0, 2**31))
def test_shared_sum(nt, ns, lam, seed):
    rng = np.random.default_rng(seed)
    tx = rng.normal(size=(nt, 3))
    sy = rng.normal(size=(ns, 3))
    sw = rng.uniform(0.1, 1.0, ns)
    scal = rng.normal(size=(ns, 2)) + 1j * rng.normal(size=(ns, 2))
    vec = rng.normal(size=(ns, 1, 3)) + 0j
    blob = rng.uniform(0.0, 0.3, ns)
    kw = dict(blob=blob)
    a = _hot.shared_sum(tx, sy, sw, scal, vec, lam, backend="numba", **kw)
    b = _hot.shared_sum(tx, sy, sw, scal, vec, lam, backend="numpy", **kw)
    close(a, b)


@given(st.integers(1, 10), st.integers(1, 12), st.floats(0.1, 3.0), st.integers(0, 2**31))
def test_own_sum(nt, m, lam, seed):
    rng = np.random.default_rng(seed)
    tx = rng.normal(size=(nt, 3))
    sy = tx[:, None, :] + rng.normal(size=(nt, m, 3))
    sw = rng.uniform(0.1, 1.0, (nt, m))
    scal = rng.normal(size=(nt, m, 1)) + 0j
    vec = rng.normal(size=(nt, m, 2, 3)) + 1j * rng.normal(size=(nt, m, 2, 3))
    close(_hot.own_sum(tx, sy, sw, scal, vec, lam, backend="numba"),
          _hot.own_sum(tx, sy, sw, scal, vec, lam, backend="numpy"))


@given(st.integers(0, 2**31))
def test_gather(seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(50, 3)) + 1j * rng.normal(size=(50, 3))
    idx = rng.integers(0, 50, size=(7, 9))
    wts = rng.normal(size=(7, 9))
    a = _hot.gather(vals, idx, wts, backend="numba")
    b = _hot.gather(vals, idx, wts, backend="numpy")
    np.testing.assert_allclose(a, b, rtol=RTOL, atol=1e-15)
    np.testing.assert_allclose(a, np.einsum("ik,ikc->ic", wts, vals[idx]), rtol=1e-12, atol=1e-14)


def test_stencil(monkeypatch, grid16):
    d = np.random.default_rng(0).normal(size=(40, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    d[0] = [0.0, 0.0, 1.0]
    (i1, w1), (i2, w2) = both(lambda: grid16.stencil(d), monkeypatch)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_allclose(w1, w2, rtol=RTOL, atol=1e-14)


def test_assembled_operator(monkeypatch):
    g = make_sphere_grid(n_theta=8, n_phi=16)
    a, b = both(lambda: bie.assemble_T(1.3, g).matrix, monkeypatch)
    assert np.max(np.abs(a - b)) <= RTOL * np.max(np.abs(b))


def test_layer_moments_all_paths(monkeypatch, grid16):
    g = grid16
    scal = np.stack([g.nodes[:, 0], np.ones(g.n)], axis=1) + 0j
    vec = np.cross(g.normals, np.tile([0.0, 1.0, 1.0], (g.n, 1)))[:, None, :] + 0j
    x = np.array([[0.0, 0.0, 1.05], [2.0, 1.0, 0.0], [0.3, 0.1, 0.2]])

    def run():
        off = layer_moments(1.0, g, scal=scal, vec=vec, targets=x)
        on = layer_moments(1.0, g, scal=scal, vec=vec, node_targets=np.arange(0, g.n, 7), side=1.0)
        return [off.P, off.G, off.A, off.C, off.D, on.P, on.G, on.A, on.C, on.D]

    close(*both(run, monkeypatch))


def test_volume_moments(monkeypatch):
    rng = np.random.default_rng(1)
    dens = VolumeDensity(rng.normal(size=(30, 3)) + [0, 0, 3], rng.uniform(0.01, 0.1, 30),
                         rng.normal(size=(30, 3)) + 0j)
    x = rng.normal(size=(10, 3)) + [0, 0, 3]

    def run():
        m = volume_moments(0.7, dens, x, vec=np.asarray(dens.values)[:, None, :])
        return [m.A, m.C, m.D]

    close(*both(run, monkeypatch))

import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given
from hypothesis import strategies as st

from beltrami import seeds
from beltrami.seeds import FourierBesselSpec, SeedSpecError


@given(st.integers(0, 12), st.floats(0.05, 40.0))
def test_bessel_against_reference(l, x):
    assert seeds.sph_bessel("j", l, x) == pytest.approx(scipy.special.spherical_jn(l, x), rel=1e-10, abs=1e-300)
    assert seeds.sph_bessel("y", l, x) == pytest.approx(scipy.special.spherical_yn(l, x), rel=1e-10)


def test_wronskian():
    t = seeds.special_function_table(15, np.linspace(0.1, 50.0, 200))
    assert np.max(t.wronskian_residual()) < 1e-9


@given(st.integers(0, 4), st.integers(-4, 4))
def test_harmonic_orthonormality(l, m):
    if abs(m) > l:
        return
    from beltrami.surface import make_sphere_grid

    g = make_sphere_grid(n_theta=24, n_phi=48)
    Y = seeds.spherical_harmonic(l, m, g.dirs)
    assert np.sum(g.weights * np.abs(Y) ** 2) == pytest.approx(1.0, rel=1e-10)
    R = seeds.real_spherical_harmonic(l, m, g.dirs)
    assert np.sum(g.weights * R * R) == pytest.approx(1.0, rel=1e-10)


def test_harmonic_matches_scipy():
    d = np.array([[0.3, -0.4, math.sqrt(1 - 0.25)]])
    theta = math.acos(d[0, 2])
    phi = math.atan2(d[0, 1], d[0, 0])
    for l in range(4):
        for m in range(-l, l + 1):
            ref = scipy.special.sph_harm_y(l, m, theta, phi)
            assert seeds.spherical_harmonic(l, m, d)[0] == pytest.approx(ref, abs=1e-13)


@pytest.mark.parametrize("radiating", [False, True])
def test_seed_is_beltrami_and_solenoidal(low_degree_spec, radiating):
    f = seeds.seed_field(low_degree_spec, radiating)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 3))
    x *= (1.3 + rng.uniform(size=20))[:, None] / np.linalg.norm(x, axis=1)[:, None]
    u = f(x)
    assert np.max(np.abs(seeds.fd_curl(f, x) - u)) < 1e-8 * np.max(np.abs(u))
    assert np.max(np.abs(seeds.fd_divergence(f, x))) < 1e-8 * np.max(np.abs(u))


def test_entire_seed_is_real_for_real_coefficients(scenario_spec):
    f = seeds.seed_field(scenario_spec)
    x = np.array([[0.2, 0.5, -1.0], [1.5, 0.0, 0.3]])
    assert np.max(np.abs(f(x).imag)) == 0.0


def test_radiating_seed_singular_at_origin(low_degree_spec):
    with pytest.raises(ValueError):
        seeds.seed_field(low_degree_spec, True)(np.zeros((1, 3)))


def test_complex_basis_conversion_agrees():
    c = np.array([0.3 + 0.2j, 0.0, 1.0 - 0.5j])
    cm = (-1) ** 1 * np.conj(c)
    spec_c = FourierBesselSpec.from_complex_basis(1.0, {(1, 1): c, (1, -1): cm})
    # direct evaluation on the complex basis
    x = np.array([[0.4, -0.7, 1.1]])
    direct = np.zeros((1, 3), complex)
    for (l, m), cc in ((1, 1), c), ((1, -1), cm):
        spec_one = {(l, m): cc}
        direct += _complex_basis_field(1.0, spec_one, x)
    np.testing.assert_allclose(seeds.seed_field(spec_c)(x), direct, atol=1e-13)


def _complex_basis_field(lam, coeffs, x, h=1e-4):
    # independent route: (curl curl + lam curl) (psi c) / (2 lam^2) with psi = j_l(lam r) Y_lm, by finite differences
    def psi_c(y):
        r = np.linalg.norm(y, axis=1)
        out = np.zeros((len(y), 3), complex)
        for (l, m), c in coeffs.items():
            Y = seeds.spherical_harmonic(l, m, y / r[:, None])
            out += (scipy.special.spherical_jn(l, lam * r) * Y)[:, None] * c
        return out

    curl = lambda f: (lambda y: seeds.fd_curl(f, y, 1e-3))
    cc = curl(curl(psi_c))(x)
    return (cc + lam * curl(psi_c)(x)) / (2.0 * lam**2)


def test_spec_yaml_round_trip(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("lambda: 2.0\nterms:\n  - {l: 1, m: -1, component: y, re: 0.5}\n")
    spec = seeds.load_seed_spec(str(p))
    assert spec.lam == 2.0
    np.testing.assert_array_equal(spec.coefficients[(1, -1)], [0, 0.5, 0])


@pytest.mark.parametrize("text", ["terms: []\n", "lambda: 0\n", "lambda: 1\nterms:\n  - {l: 1, m: 2, component: x, re: 1}\n",
                                  "lambda: 1\nbasis: real\nterms:\n  - {l: 1, m: 0, component: x, im: 1}\n",
                                  "lambda: 1\nbasis: complex\nterms:\n  - {l: 1, m: 1, component: x, re: 1}\n"])
def test_invalid_specs_rejected(text):
    with pytest.raises(SeedSpecError):
        seeds.load_seed_spec(text)

"""Spherical special functions and Fourier-Bessel seed fields.

Seeds are strong Beltrami fields (curl u = lam u) built from

    W(x) = sum_{l,m} c_lm f_l(lam |x|) Y_lm(x/|x|),     c_lm in C^3,

by u = (curl curl W + lam curl W) / (2 lam^2), with f_l = j_l for the entire
field u_0 and f_l = h_l^(1) for its radiating companion v_0.  Harmonics use a
real orthonormal basis, so real coefficients give a real u_0 and
Re v_0 = u_0 exactly.

Every term is evaluated in closed form.  Writing psi = g_l(r) R_lm(x) with
R_lm = r^l Y_lm the solid harmonic (an exact polynomial here) and
g_l(r) = lam^l F_l(lam r), F_l(z) = f_l(z) / z^l, the identity
F_l'(z) = -z F_{l+1}(z) gives the gradient and Hessian of psi without any
differencing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import yaml

logger = logging.getLogger(__name__)

KINDS = ("j", "y", "h1")


class SeedSpecError(ValueError):
    """Invalid Fourier-Bessel specification."""


# ---------------------------------------------------------------- Bessel
def _j_miller(lmax: int, x: np.ndarray) -> np.ndarray:
    """j_0..j_lmax by downward recurrence normalised against j_0 or j_1."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return _j_miller(lmax, x[None])[:, 0]
    out = np.zeros((lmax + 1,) + x.shape)
    pos = x > 0.0
    out[0][~pos] = 1.0
    if not np.any(pos):
        return out
    xp = x[pos]
    start = int(max(lmax, np.max(xp))) + 20 + int(math.sqrt(40.0 * max(lmax, float(np.max(xp)), 1.0)))
    f_next = np.zeros_like(xp)
    f_cur = np.full_like(xp, 1e-300)
    vals = np.zeros((lmax + 1,) + xp.shape)
    for l in range(start, 0, -1):
        f_prev = (2 * l + 1) / xp * f_cur - f_next
        f_next, f_cur = f_cur, f_prev
        # rescale to avoid overflow
        big = np.abs(f_cur) > 1e250
        if np.any(big):
            f_cur = np.where(big, f_cur * 1e-250, f_cur)
            f_next = np.where(big, f_next * 1e-250, f_next)
            vals = np.where(big, vals * 1e-250, vals)
        if l - 1 <= lmax:
            vals[l - 1] = f_cur
        if l <= lmax:
            vals[l] = f_next
    j0 = np.sin(xp) / xp
    j1 = np.sin(xp) / xp**2 - np.cos(xp) / xp
    use0 = np.abs(j0) >= np.abs(j1)
    scale = np.where(use0, j0 / vals[0], j1 / np.where(vals[1] == 0.0, 1.0, vals[1]) if lmax >= 1 else 0.0)
    if lmax == 0:
        scale = j0 / vals[0]
    out[:, pos] = vals * scale
    return out


def _y_upward(lmax: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((lmax + 1,) + x.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[0] = -np.cos(x) / x
        if lmax >= 1:
            out[1] = -np.cos(x) / x**2 - np.sin(x) / x
        for l in range(1, lmax):
            out[l + 1] = (2 * l + 1) / x * out[l] - out[l - 1]
    return out


def _derivatives(f: np.ndarray, x: np.ndarray, f_minus1: np.ndarray) -> np.ndarray:
    """f_l' = f_{l-1} - (l+1)/x f_l (f_minus1 supplies the l = 0 case)."""
    d = np.empty_like(f)
    lmax = f.shape[0] - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        for l in range(lmax + 1):
            prev = f_minus1 if l == 0 else f[l - 1]
            d[l] = prev - (l + 1) / x * f[l]
    return d


@dataclass(frozen=True)
class SpecialFunctionTable:
    """j_l, y_l, h_l^(1) and their derivatives for l = 0..lmax at points x."""

    lmax: int
    x: np.ndarray
    j: np.ndarray
    y: np.ndarray
    dj: np.ndarray
    dy: np.ndarray

    @property
    def h1(self) -> np.ndarray:
        return self.j + 1j * self.y

    @property
    def dh1(self) -> np.ndarray:
        return self.dj + 1j * self.dy

    def wronskian_residual(self) -> np.ndarray:
        """|j_l y_l' - j_l' y_l - 1/x^2| * x^2 for every l and x."""
        w = self.j * self.dy - self.dj * self.y
        return np.abs(w * self.x**2 - 1.0)


def special_function_table(lmax: int, x) -> SpecialFunctionTable:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0.0):
        raise ValueError("table requires x > 0")
    j = _j_miller(lmax, x)
    y = _y_upward(lmax, x)
    # j_{-1} = cos x / x, y_{-1} = sin x / x
    dj = _derivatives(j, x, np.cos(x) / x)
    dy = _derivatives(y, x, np.sin(x) / x)
    return SpecialFunctionTable(lmax, x, j, y, dj, dy)


def sph_bessel(kind: str, l: int, x):
    """Spherical Bessel j_l, y_l or Hankel h_l^(1) = j_l + i y_l."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if l < 0:
        raise ValueError("order must be non-negative")
    xa = np.asarray(x, dtype=float)
    if kind == "j":
        if np.any(xa < 0.0):
            raise ValueError("j_l requires x >= 0")
        out = _j_miller(l, xa)[l]
    else:
        if np.any(xa <= 0.0):
            raise ValueError("y_l and h_l require x > 0")
        out = _y_upward(l, xa)[l]
        if kind == "h1":
            out = _j_miller(l, xa)[l] + 1j * out
    return out.item() if np.ndim(out) == 0 else out


def _double_factorial(n: int) -> float:
    return float(np.prod(np.arange(n, 0, -2))) if n > 0 else 1.0


def _scaled_radial(kind: str, lmax: int, z: np.ndarray) -> np.ndarray:
    """F_l(z) = f_l(z) / z^l for l = 0..lmax (series for the regular kind at small z)."""
    z = np.asarray(z, dtype=float)
    if kind == "j":
        small = z < 1e-3
        zs = np.where(small, 1.0, z)
        f = _j_miller(lmax, zs)
        out = np.empty_like(f)
        for l in range(lmax + 1):
            df = _double_factorial(2 * l + 1)
            ser = (1.0 - z * z / (2 * (2 * l + 3)) + z**4 / (8 * (2 * l + 3) * (2 * l + 5))) / df
            out[l] = np.where(small, ser, f[l] / zs**l)
        return out.astype(complex)
    f = _j_miller(lmax, z) + 1j * _y_upward(lmax, z)
    powers = z[None, ...] ** np.arange(lmax + 1).reshape((-1,) + (1,) * z.ndim)
    return f / powers


# ------------------------------------------------------- harmonic polynomials
class Polynomial:
    """Sparse polynomial in (x, y, z): {(a, b, c): coefficient}."""

    def __init__(self, terms: dict | None = None):
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0}

    def __add__(self, other: "Polynomial") -> "Polynomial":
        t = dict(self.terms)
        for k, v in other.terms.items():
            t[k] = t.get(k, 0) + v
        return Polynomial(t)

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial({k: v * other for k, v in self.terms.items()})
        t: dict = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = (k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2])
                t[k] = t.get(k, 0) + v1 * v2
        return Polynomial(t)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Polynomial":
        out = Polynomial({(0, 0, 0): 1})
        for _ in range(n):
            out = out * self
        return out

    def diff(self, axis: int) -> "Polynomial":
        t: dict = {}
        for k, v in self.terms.items():
            if k[axis] > 0:
                nk = list(k)
                nk[axis] -= 1
                t[tuple(nk)] = t.get(tuple(nk), 0) + v * k[axis]
        return Polynomial(t)

    def map_coeffs(self, fn) -> "Polynomial":
        return Polynomial({k: fn(v) for k, v in self.terms.items()})

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=complex)
        for (a, b, c), v in self.terms.items():
            out += v * x[..., 0] ** a * x[..., 1] ** b * x[..., 2] ** c
        return out


_X = Polynomial({(1, 0, 0): 1})
_Y = Polynomial({(0, 1, 0): 1})
_Z = Polynomial({(0, 0, 1): 1})


def _legendre_derivative_coeffs(l: int, m: int) -> dict[int, float]:
    """Monomial coefficients of d^m/dt^m P_l(t)."""
    coeffs = {}
    for k in range(l // 2 + 1):
        p = l - 2 * k
        c = (-1) ** k * math.comb(l, k) * math.comb(2 * l - 2 * k, l) / 2.0**l
        coeffs[p] = c
    for _ in range(m):
        coeffs = {p - 1: c * p for p, c in coeffs.items() if p > 0}
    return coeffs


@lru_cache(maxsize=None)
def complex_solid_harmonic(l: int, m: int) -> Polynomial:
    """r^l Y_l^m (orthonormal, Condon-Shortley phase) as a polynomial."""
    if abs(m) > l:
        raise ValueError("|m| must not exceed l")
    if m < 0:
        return complex_solid_harmonic(l, -m).map_coeffs(lambda v: (-1) ** m * np.conj(v))
    norm = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - m) / math.factorial(l + m))
    r2 = _X * _X + _Y * _Y + _Z * _Z
    q = Polynomial()
    for p, c in _legendre_derivative_coeffs(l, m).items():
        # r^{l-m} t^p with t = z/r and l - m - p even
        q = q + (_Z**p) * (r2 ** ((l - m - p) // 2)) * c
    xy = _X + _Y * 1j
    return (xy**m) * q * ((-1) ** m * norm)


@lru_cache(maxsize=None)
def real_solid_harmonic(l: int, m: int) -> Polynomial:
    """r^l times the real orthonormal harmonic of index (l, m)."""
    if abs(m) > l:
        raise ValueError("|m| must not exceed l")
    if m == 0:
        return complex_solid_harmonic(l, 0).map_coeffs(lambda v: complex(v.real, 0.0))
    base = complex_solid_harmonic(l, abs(m))
    s = math.sqrt(2.0) * (-1) ** m
    if m > 0:
        return base.map_coeffs(lambda v: complex(s * v.real, 0.0))
    return base.map_coeffs(lambda v: complex(s * v.imag, 0.0))


def _unit(direction):
    d = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(nrm - 1.0) > 1e-9):
        raise ValueError("direction must be a unit vector")
    return d


def spherical_harmonic(l: int, m: int, direction):
    """Orthonormal complex Y_l^m at unit directions."""
    if abs(m) > l:
        raise ValueError("|m| must not exceed l")
    out = complex_solid_harmonic(l, m)(_unit(direction))
    return out.item() if np.ndim(out) == 0 else out


def real_spherical_harmonic(l: int, m: int, direction):
    out = real_solid_harmonic(l, m)(_unit(direction)).real
    return out.item() if np.ndim(out) == 0 else out


# ------------------------------------------------------------------ specs
@dataclass(frozen=True)
class FourierBesselSpec:
    """Coefficients c_lm in C^3 on the real harmonic basis."""

    lam: float
    coefficients: dict = field(default_factory=dict)  # (l, m) -> complex (3,)

    def __post_init__(self):
        if self.lam == 0.0 or not np.isfinite(self.lam):
            raise SeedSpecError("lambda must be finite and nonzero")
        for (l, m), c in self.coefficients.items():
            if l < 0 or abs(m) > l:
                raise SeedSpecError(f"invalid index (l={l}, m={m})")
            if np.asarray(c).shape != (3,):
                raise SeedSpecError("each coefficient must be a 3-vector")

    @property
    def degree(self) -> int:
        return max((l for l, _ in self.coefficients), default=0)

    @property
    def is_real(self) -> bool:
        return all(np.all(np.asarray(c).imag == 0) for c in self.coefficients.values())

    @classmethod
    def from_complex_basis(cls, lam: float, coefficients: dict) -> "FourierBesselSpec":
        """Convert coefficients on Y_l^m, checking c_{l,-m} = (-1)^m conj(c_{l,m})."""
        out = {}
        for (l, m), c in coefficients.items():
            c = np.asarray(c, dtype=complex)
            partner = np.asarray(coefficients.get((l, -m), np.zeros(3)), dtype=complex)
            if not np.allclose(partner, (-1) ** m * np.conj(c), atol=1e-12, rtol=1e-12):
                raise SeedSpecError(f"coefficients at (l={l}, m={m}) break conjugate symmetry")
            if m == 0:
                out[(l, 0)] = c.real.astype(complex)
            elif m > 0:
                s = math.sqrt(2.0) * (-1) ** m
                out[(l, m)] = (s * c.real).astype(complex)
                out[(l, -m)] = (-s * c.imag).astype(complex)
        return cls(lam, {k: v for k, v in out.items() if np.any(v != 0)})

    @classmethod
    def random(cls, lam: float, degree: int, rng: np.random.Generator) -> "FourierBesselSpec":
        coeffs = {(l, m): rng.normal(size=3).astype(complex)
                  for l in range(degree + 1) for m in range(-l, l + 1)}
        return cls(lam, coeffs)


def load_seed_spec(path_or_text) -> FourierBesselSpec:
    """Read a YAML seed spec.

    Keys: ``lambda``; ``basis`` (real | complex, default real); ``terms``, a
    list of ``{l, m, component (x|y|z), re, im}``.
    """
    text = path_or_text
    if not isinstance(text, str) or "\n" not in text and not text.strip().startswith("{"):
        with open(path_or_text, "r", encoding="utf-8") as fh:
            text = fh.read()
    data = yaml.safe_load(text)
    return seed_spec_from_dict(data)


def seed_spec_from_dict(data: dict) -> FourierBesselSpec:
    if not isinstance(data, dict) or "lambda" not in data:
        raise SeedSpecError("seed spec needs a 'lambda' entry")
    basis = data.get("basis", "real")
    if basis not in ("real", "complex"):
        raise SeedSpecError("basis must be 'real' or 'complex'")
    comp = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}
    coeffs: dict = {}
    for i, t in enumerate(data.get("terms", [])):
        try:
            l, m, k = int(t["l"]), int(t["m"]), comp[t["component"]]
            val = complex(float(t.get("re", 0.0)), float(t.get("im", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SeedSpecError(f"terms[{i}]: {exc}") from exc
        if basis == "real" and val.imag != 0.0:
            raise SeedSpecError(f"terms[{i}]: real basis takes real coefficients")
        c = coeffs.setdefault((l, m), np.zeros(3, complex))
        c[k] += val
    lam = float(data["lambda"])
    if basis == "complex":
        return FourierBesselSpec.from_complex_basis(lam, coeffs)
    return FourierBesselSpec(lam, coeffs)


# ---------------------------------------------------------------- fields
def _scalar_jets(spec: FourierBesselSpec, kind: str, x: np.ndarray):
    """Per-term psi, grad psi, Hessian psi at x (n, 3)."""
    lam = spec.lam
    r = np.linalg.norm(x, axis=1)
    L = spec.degree
    F = _scaled_radial(kind, L + 2, lam * r)
    out = []
    for (l, m), c in spec.coefficients.items():
        R = real_solid_harmonic(l, m)
        dR = [R.diff(i) for i in range(3)]
        Rv = R(x)
        gR = np.stack([d(x) for d in dR], axis=1)
        hR = np.stack([np.stack([dR[i].diff(j)(x) for j in range(3)], axis=1) for i in range(3)], axis=1)
        g = lam**l * F[l]
        g1 = -lam ** (l + 2) * F[l + 1]
        g2 = lam ** (l + 4) * F[l + 2]
        psi = g * Rv
        grad = g1[:, None] * x * Rv[:, None] + g[:, None] * gR
        xx = x[:, :, None] * x[:, None, :]
        hess = (g2 * Rv)[:, None, None] * xx + (g1 * Rv)[:, None, None] * np.eye(3) \
            + g1[:, None, None] * (x[:, :, None] * gR[:, None, :] + gR[:, :, None] * x[:, None, :]) \
            + g[:, None, None] * hR
        out.append((np.asarray(c, dtype=complex), psi, grad, hess))
    return out


class SeedField:
    """Closed-form sampler of a Fourier-Bessel Beltrami field.

    Call with points (..., 3); returns complex (..., 3).
    """

    def __init__(self, spec: FourierBesselSpec, radiating: bool = False):
        self.spec = spec
        self.radiating = radiating
        self.lam = spec.lam

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = x.shape
        xs = x.reshape(-1, 3)
        if self.radiating and np.any(np.linalg.norm(xs, axis=1) == 0.0):
            raise ValueError("radiating seed is singular at the origin")
        lam = self.lam
        u = np.zeros(xs.shape, complex)
        for c, psi, grad, hess in _scalar_jets(self.spec, "h1" if self.radiating else "j", xs):
            u += np.einsum("nij,j->ni", hess, c) + lam**2 * psi[:, None] * c + lam * np.cross(grad, c)
        return (u / (2.0 * lam**2)).reshape(shape)

    def real(self) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: self(x).real

    def jacobian(self, x, h: float = 1e-4) -> np.ndarray:
        """4th-order central-difference Jacobian J[..., i, k] = d_k u_i."""
        return fd_jacobian(self, x, h)


def seed_field(spec: FourierBesselSpec, radiating: bool = False) -> SeedField:
    return SeedField(spec, radiating)


def fd_jacobian(field: Callable, x, h: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        d = (8.0 * (field(x + e) - field(x - e)) - (field(x + 2 * e) - field(x - 2 * e))) / (12.0 * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


def fd_curl(field: Callable, x, h: float = 1e-3) -> np.ndarray:
    J = fd_jacobian(field, x, h)
    return np.stack([J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]], axis=-1)


def fd_divergence(field: Callable, x, h: float = 1e-3) -> np.ndarray:
    J = fd_jacobian(field, x, h)
    return J[..., 0, 0] + J[..., 1, 1] + J[..., 2, 2]


def helmholtz_to_beltrami(lam: float, u_hat: Callable, curl: Callable | None = None,
                          h: float = 1e-3) -> Callable[[np.ndarray], np.ndarray]:
    """(curl u_hat + lam u_hat) / (2 lam) for a divergence-free Helmholtz field u_hat."""
    if lam == 0.0:
        raise ValueError("lambda must be nonzero")

    def sampler(x):
        c = curl(x) if curl is not None else fd_curl(u_hat, x, h)
        return (c + lam * np.asarray(u_hat(x))) / (2.0 * lam)

    return sampler

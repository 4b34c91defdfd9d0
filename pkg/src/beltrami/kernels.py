"""Helmholtz fundamental solution and radiation residuals.

The outgoing kernel is

    Gamma_lam(z) = exp(i lam |z|) / (4 pi |z|),

split as Gamma_0 + psi_lam with Gamma_0 = 1/(4 pi |z|) the Newtonian part and
psi_lam = (exp(i lam r) - 1)/(4 pi r) a bounded remainder.  Every function
accepts either a single 3-vector or a stack of shape (..., 3) and broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * np.pi


def _radius(z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {z.shape}")
    r = np.sqrt(np.sum(z * z, axis=-1))
    if np.any(r == 0.0):
        raise ValueError("kernel evaluated at its singular point z = 0")
    return z, r


def _scalar_out(value):
    return value.item() if np.ndim(value) == 0 else value


def psi(lam: float, r):
    """Remainder (exp(i lam r) - 1)/(4 pi r), stable for small lam*r.

    Written as i lam exp(i t) sin(t)/t / (4 pi) with t = lam r / 2, which never
    divides by r and gives the limit i lam / (4 pi) at r = 0.
    """
    r = np.asarray(r, dtype=float)
    # extended precision so that Gamma_0 + psi reproduces Gamma to a few ulps
    half = np.longdouble(0.5) * np.longdouble(lam) * r.astype(np.longdouble)
    small = np.abs(half) < 1e-8
    sinc = np.where(small, 1.0 - half * half / 6.0, np.sin(half) / np.where(small, 1.0, half))
    out = 1j * np.longdouble(lam) * (np.cos(half) + 1j * np.sin(half)) * sinc / np.longdouble(FOUR_PI)
    return _scalar_out(out.astype(complex))


def _outgoing(lam: float, r):
    """exp(i lam r)/(4 pi r) in extended precision (the phase lam r is not rounded to double)."""
    rl = r.astype(np.longdouble)
    ph = np.longdouble(lam) * rl
    return (np.cos(ph) + 1j * np.sin(ph)) / (np.longdouble(FOUR_PI) * rl), rl


def gamma(lam: float, z):
    """Outgoing Helmholtz kernel exp(i lam |z|)/(4 pi |z|)."""
    _, r = _radius(z)
    g, _ = _outgoing(lam, r)
    return _scalar_out(g.astype(complex))


def grad_gamma(lam: float, z):
    """Gradient (i lam - 1/|z|) Gamma_lam(z) z/|z|."""
    z, r = _radius(z)
    # extended precision keeps the radial derivative consistent with Gamma up
    # to the final rounding, which the Sommerfeld identity relies on
    g, rl = _outgoing(lam, r)
    factor = (1j * np.longdouble(lam) - 1.0 / rl) * g / rl
    return (factor[..., None] * z).astype(complex)


def hessian_gamma(lam: float, z):
    """Analytic Hessian of Gamma_lam, shape (..., 3, 3).

    With Gamma(r) radial, H = Gamma'' zhat zhat^T + (Gamma'/r)(I - zhat zhat^T),
    where Gamma' = (i lam - 1/r) Gamma and Gamma'' = (1/r^2 + (i lam - 1/r)^2) Gamma.
    """
    z, r = _radius(z)
    g = np.exp(1j * lam * r) / (FOUR_PI * r)
    a = 1j * lam - 1.0 / r
    d1 = a * g
    d2 = (1.0 / r**2 + a * a) * g
    zh = z / r[..., None]
    outer = zh[..., :, None] * zh[..., None, :]
    eye = np.eye(3)
    return d2[..., None, None] * outer + (d1 / r)[..., None, None] * (eye - outer)


@dataclass(frozen=True)
class KernelSplit:
    homogeneous: complex | np.ndarray
    remainder: complex | np.ndarray
    psi: complex | np.ndarray

    @property
    def total(self):
        return self.homogeneous + self.remainder


def kernel_split(lam: float, z) -> KernelSplit:
    """Newtonian part plus bounded remainder of Gamma_lam."""
    _, r = _radius(z)
    hom = 1.0 / (FOUR_PI * r) + 0j
    rem = np.asarray(psi(lam, r))
    return KernelSplit(_scalar_out(hom), _scalar_out(rem), _scalar_out(rem))


def sommerfeld_residual(lam: float, a, grad_a, x):
    """grad_a . x/|x| - i lam a."""
    x, _ = _radius(x)
    # the difference cancels when lam |x| > 1; accumulate it in extended precision
    xl = x.astype(np.longdouble)
    rl = np.sqrt(np.sum(xl * xl, axis=-1))
    radial = np.sum(np.asarray(grad_a).astype(np.clongdouble) * xl, axis=-1) / rl
    res = radial - 1j * lam * np.asarray(a).astype(np.clongdouble)
    return _scalar_out(res.astype(complex))


def smb_residual(lam: float, u, x):
    """Silver-Mueller-Beltrami residual i xhat x u - u.

    ``lam`` is accepted for signature symmetry with ``sommerfeld_residual``;
    the Beltrami form of the condition does not involve it.
    """
    x, r = _radius(x)
    u = np.asarray(u, dtype=complex)
    xh = x / r[..., None]
    return 1j * np.cross(xh, u) - u

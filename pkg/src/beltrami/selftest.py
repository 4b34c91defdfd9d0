"""Fast identity checks over kernels, surface calculus and special functions.

Each check returns a measured defect and its tolerance; ``run_checks`` never
raises on a failed identity, it records it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.special

from . import kernels, seeds, surface

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and bool(np.isfinite(self.value)) and self.value <= self.tol


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def _points(n: int = 20, seed: int = 7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.uniform(0.3, 3.0, size=n)[:, None]


def _fd_grad(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        cols.append((8.0 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12.0 * h))
    return np.stack(cols, axis=-1)


# ------------------------------------------------------------------ kernel
def check_newtonian_value():
    r = np.array([0.5, 1.0, 2.0])
    z = np.stack([r, 0 * r, 0 * r], axis=1)
    return _rel(kernels.gamma(0.0, z), 1.0 / (4.0 * math.pi * r)), 1e-14


def check_gradient_fd():
    x = _points()
    lam = 1.3
    return _rel(kernels.grad_gamma(lam, x), _fd_grad(lambda y: kernels.gamma(lam, y), x, 1e-4)), 1e-6


def check_hessian_fd():
    x = _points()
    lam = 1.3
    fd = _fd_grad(lambda y: kernels.grad_gamma(lam, y), x, 1e-4)
    return _rel(kernels.hessian_gamma(lam, x), fd), 1e-6


def check_helmholtz():
    x = _points()
    lam = 2.0
    g = kernels.gamma(lam, x)
    lap = np.trace(kernels.hessian_gamma(lam, x), axis1=-2, axis2=-1)
    return float(np.max(np.abs(lap + lam**2 * g) / np.abs(lam**2 * g))), 1e-12


def check_sommerfeld():
    x = _points()
    lam = 1.0
    g = kernels.gamma(lam, x)
    res = kernels.sommerfeld_residual(lam, g, kernels.grad_gamma(lam, x), x)
    return _rel(res, -g / np.linalg.norm(x, axis=1)), 1e-14


def check_split():
    x = _points()
    return _rel(kernels.kernel_split(0.7, x).total, kernels.gamma(0.7, x)), 1e-14


def check_split_limit():
    lam = 1.5
    return abs(kernels.psi(lam, 0.0) - 1j * lam / (4.0 * math.pi)) / (lam / (4.0 * math.pi)), 1e-15


# ------------------------------------------------------------------ surface
def _f(x):
    return x[:, 0] * x[:, 1] + x[:, 2] ** 2 + np.sin(x[:, 0])


def check_sphere_area():
    g = surface.make_sphere_grid(n_theta=16, n_phi=32)
    return abs(g.area - 4.0 * math.pi) / (4.0 * math.pi), 1e-12


def check_curl_of_gradient():
    g = surface.make_sphere_grid(n_theta=32, n_phi=64)
    grad = surface.surface_gradient(g, _f(g.nodes))
    return float(np.max(np.abs(surface.surface_curl(g, grad)))), 1e-6


def check_rotated_divergence():
    g = surface.make_sphere_grid(n_theta=32, n_phi=64)
    X = surface.project_tangent(g, np.stack([g.nodes[:, 1], g.nodes[:, 2] ** 2, g.nodes[:, 0]], axis=1))
    d = surface.surface_curl(g, X) + surface.surface_divergence(g, np.cross(g.normals, X))
    return float(np.max(np.abs(d))), 1e-8


def check_divergence_theorem():
    g = surface.make_sphere_grid(n_theta=32, n_phi=64)
    X = surface.project_tangent(g, np.stack([g.nodes[:, 1], g.nodes[:, 2] ** 2, g.nodes[:, 0]], axis=1))
    return abs(float(surface.integrate_surface(g, surface.surface_divergence(g, X)))), 1e-8


def check_laplace_eigen():
    # Delta_S Y_2 = -6 Y_2 on the unit sphere; the composed operator is least
    # accurate next to the poles, so this bounds it at the finest desk grid
    g = surface.make_sphere_grid(n_theta=64, n_phi=128)
    y = 3.0 * g.nodes[:, 2] ** 2 - 1.0
    lap = surface.surface_divergence(g, surface.surface_gradient(g, y))
    return float(np.max(np.abs(lap + 6.0 * y))) / 6.0, 1e-3


def check_patch_chart():
    g = surface.make_sphere_grid(n_theta=16, n_phi=32)
    p = surface.make_cap_patch(g, (0.3, -0.2, 1.0), 0.4)
    rng = np.random.default_rng(3)
    s = rng.uniform(-0.7, 0.7, size=(50, 2))
    s2, inside = p.inverse(p.chart_dirs(s))
    return float(np.max(np.abs(s2 - s))) + float(not np.all(inside)), 1e-12


def check_deformed_normals():
    prof = lambda d: 1.0 + 0.1 * d[:, 2] ** 2
    g = surface.make_deformed_sphere_grid(prof, n_theta=16, n_phi=32)
    unit = float(np.max(np.abs(np.linalg.norm(g.normals, axis=1) - 1.0)))
    outward = float(np.min(np.sum(g.normals * (g.nodes - g.center), axis=1)))
    tangent = float(np.max(np.abs(np.sum(g.normals * g.d_theta, axis=1))))
    return unit + tangent + (0.0 if outward > 0 else 1.0), 1e-12


# ------------------------------------------------------------------ special functions
def check_wronskian():
    t = seeds.special_function_table(10, np.linspace(0.5, 30.0, 60))
    return float(np.max(t.wronskian_residual())), 1e-10


def check_bessel_reference():
    x = np.linspace(0.2, 25.0, 50)
    err = 0.0
    for l in range(8):
        err = max(err, _rel(seeds.sph_bessel("j", l, x), scipy.special.spherical_jn(l, x)))
        err = max(err, _rel(seeds.sph_bessel("y", l, x), scipy.special.spherical_yn(l, x)))
    return err, 1e-12


def check_addition_theorem():
    rng = np.random.default_rng(5)
    d = rng.normal(size=(20, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    err = 0.0
    for l in range(5):
        s = sum(np.abs(seeds.spherical_harmonic(l, m, d)) ** 2 for m in range(-l, l + 1))
        err = max(err, float(np.max(np.abs(s - (2 * l + 1) / (4.0 * math.pi)))))
    return err, 1e-13


def check_seed_beltrami():
    spec = seeds.FourierBesselSpec(1.0, {(1, 0): np.array([0.3, 1.0, -0.5], complex),
                                          (2, 1): np.array([1.0, 0.0, 0.2], complex)})
    f = seeds.seed_field(spec)
    x = _points(10) + 0.2
    return _rel(seeds.fd_curl(f, x, 1e-3), spec.lam * f(x)), 1e-8


CHECKS: dict[str, Callable[[], tuple[float, float]]] = {
    "kernel.newtonian_value": check_newtonian_value,
    "kernel.gradient_fd": check_gradient_fd,
    "kernel.hessian_fd": check_hessian_fd,
    "kernel.helmholtz_equation": check_helmholtz,
    "kernel.sommerfeld_identity": check_sommerfeld,
    "kernel.split_reconstruction": check_split,
    "kernel.split_limit": check_split_limit,
    "surface.sphere_area": check_sphere_area,
    "surface.curl_of_gradient": check_curl_of_gradient,
    "surface.rotated_divergence": check_rotated_divergence,
    "surface.divergence_theorem": check_divergence_theorem,
    "surface.laplace_eigenvalue": check_laplace_eigen,
    "surface.patch_chart_roundtrip": check_patch_chart,
    "surface.deformed_normals": check_deformed_normals,
    "special.wronskian": check_wronskian,
    "special.bessel_reference": check_bessel_reference,
    "special.addition_theorem": check_addition_theorem,
    "special.seed_beltrami": check_seed_beltrami,
}


def run_checks(names=None) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        if names is not None and name not in names:
            continue
        try:
            value, tol = fn()
            out.append(CheckResult(name, float(value), float(tol)))
        except Exception as exc:  # a crashing check is a failed check
            logger.exception("check %s raised", name)
            out.append(CheckResult(name, float("nan"), 0.0, f"{type(exc).__name__}: {exc}"))
    return out

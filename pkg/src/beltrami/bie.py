"""Boundary integral equation (1/2 I - T) xi = mu for the tangential density.

T xi(x) = eta(x) x PV curl S[xi](x) + lam eta(x) x S[xi](x).  Using
eta_x x (grad Gamma x xi) = ((eta_x - eta_y) . xi) grad Gamma - (eta_x . grad Gamma) xi
for tangent xi, the kernel is only weakly singular.  Nystrom assembly keeps
2 unknowns per node in the local tangent basis (t1, t2) of the grid; the
near-diagonal part comes from the same polar cap rule used for on-surface
layer potentials, scattered back to the nodes through interpolation stencils.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from . import _hot
from .potentials import CAP_ANGULAR, CAP_GAUSS, VolumeDensity, build_cap, layer_moments, volume_velocity
from .seeds import sph_bessel
from .surface import SurfaceGrid

logger = logging.getLogger(__name__)

TANGENT_TOL = 1e-10
SOLVE_TOL = 1e-10
PIVOT_COLLAPSE = 1e-12


class BIEError(RuntimeError):
    """Factorisation or solve failure (lambda likely irregular for G)."""


@dataclass(frozen=True, eq=False)
class TangentDensity:
    """Complex tangent vectors at grid nodes, stored in ambient coordinates."""

    grid: SurfaceGrid
    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi)
        if xi.shape != (self.grid.n, 3):
            raise ValueError("density must have shape (N, 3)")
        normal = np.abs(np.sum(xi * self.grid.normals, axis=1))
        if np.any(normal > TANGENT_TOL * (1.0 + np.linalg.norm(xi, axis=1))):
            raise ValueError("density is not tangent to the surface")

    @classmethod
    def project(cls, grid: SurfaceGrid, X) -> "TangentDensity":
        X = np.asarray(X, dtype=complex)
        return cls(grid, X - np.sum(X * grid.normals, axis=1)[:, None] * grid.normals)

    def to_local(self) -> np.ndarray:
        return to_local(self.grid, self.xi)


def to_local(grid: SurfaceGrid, X) -> np.ndarray:
    """Stack (X . t1, X . t2) per node into a 2N vector."""
    X = np.asarray(X)
    c = np.empty(2 * grid.n, dtype=complex)
    c[0::2] = np.sum(X * grid.t1, axis=1)
    c[1::2] = np.sum(X * grid.t2, axis=1)
    return c


def to_ambient(grid: SurfaceGrid, c) -> np.ndarray:
    c = np.asarray(c)
    return c[0::2, None] * grid.t1 + c[1::2, None] * grid.t2


@dataclass(eq=False)
class BoundaryOperator:
    """Dense matrix of 1/2 I - T in local tangent coordinates."""

    lam: float
    grid: SurfaceGrid
    matrix: np.ndarray
    irregular_flag: bool = False
    _lu: tuple | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def apply(self, xi) -> np.ndarray:
        """(1/2 I - T) xi for an ambient tangent field, returned in ambient form."""
        return to_ambient(self.grid, self.matrix @ to_local(self.grid, xi))

    def apply_T(self, xi) -> np.ndarray:
        """T xi alone, in ambient form."""
        xi = np.asarray(xi, dtype=complex)
        return 0.5 * to_ambient(self.grid, to_local(self.grid, xi)) - self.apply(xi)

    def factor(self):
        if self._lu is None:
            lu, piv = scipy.linalg.lu_factor(self.matrix, check_finite=True)
            diag = np.abs(np.diag(lu))
            if diag.min() <= PIVOT_COLLAPSE * diag.max():
                self.irregular_flag = True
                raise BIEError(f"pivot collapse (min/max |U_ii| = {diag.min() / diag.max():.2e}); "
                               "lambda is likely a Dirichlet eigenvalue of the interior domain")
            self._lu = (lu, piv)
        return self._lu

    def dump(self, path) -> None:
        """Write the matrix row-major as little-endian (re, im) float64 pairs."""
        np.ascontiguousarray(self.matrix, dtype="<c16").tofile(path)


def ball_dirichlet_eigen_check(lam: float, radius: float, lmax: int = 10, rel_tol: float = 1e-3) -> list[tuple[int, float]]:
    """Zeros z of j_l (l <= lmax) with |lam a - z| < rel_tol z."""
    t = abs(lam) * radius
    hits = []
    grid = np.linspace(0.5, t * (1.0 + 2 * rel_tol) + 1.0, int(200 * (t + 2)))
    for l in range(lmax + 1):
        vals = sph_bessel("j", l, grid)
        for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
            if fa == 0.0 or fa * fb < 0.0:
                z = scipy.optimize.brentq(lambda s: sph_bessel("j", l, s), a, b) if fa != 0.0 else a
                if abs(t - z) < rel_tol * z:
                    hits.append((l, float(z)))
    return hits


def is_regular_lambda(lam: float, grid: SurfaceGrid) -> bool:
    """Heuristic regularity check; spheres only (others are checked at factorisation)."""
    if not grid.is_sphere:
        return True
    hits = ball_dirichlet_eigen_check(lam, grid.radius)
    if hits:
        logger.warning("lambda=%g is within 0.1%% of ball Dirichlet eigenvalues %s", lam, hits)
    return not hits


def assemble_T(lam: float, grid: SurfaceGrid, backend: str | None = None) -> BoundaryOperator:
    """Assemble 1/2 I - T on the grid."""
    if lam == 0.0:
        raise ValueError("lambda = 0 is not supported by the boundary equation")
    flagged = not is_regular_lambda(lam, grid)
    n = grid.n
    tc = grid.cap_angle
    M = np.zeros((2 * n, 2 * n), dtype=complex)
    _hot.assemble_far(grid.nodes, grid.normals, grid.t1, grid.t2, grid.weights, grid.dirs,
                      lam, 0.25 * tc, tc, M, backend=backend)
    m_per = 3 * CAP_GAUSS * CAP_ANGULAR
    step = max(1, 60_000 // m_per)
    for lo in range(0, n, step):
        part = np.arange(lo, min(n, lo + step))
        cap = build_cap(grid, grid.dirs[part], 2)
        _hot.assemble_cap(part, grid.nodes[part], grid.normals[part], grid.t1[part], grid.t2[part],
                          cap.points, cap.normals, cap.weights, cap.idx, cap.wts, grid.t1, grid.t2,
                          lam, M, backend=backend)
    M[np.arange(2 * n), np.arange(2 * n)] += 0.5
    if not np.all(np.isfinite(M)):
        raise BIEError("non-finite entries in the boundary operator")
    logger.info("assembled boundary operator: %d x %d, lambda=%g", 2 * n, 2 * n, lam)
    return BoundaryOperator(lam, grid, M, irregular_flag=flagged)


def assemble_mu(lam: float, grid: SurfaceGrid, w: VolumeDensity | None, g, divergence_free: bool = True,
                backend: str | None = None) -> TangentDensity:
    """Right-hand side eta x [-PV grad S[g] + curl N[w] + lam N[w] + grad N[div w]/lam] at nodes."""
    g = np.asarray(g, dtype=complex)
    V = np.zeros((grid.n, 3), complex)
    if np.any(g != 0):
        m = layer_moments(lam, grid, scal=g[:, None], node_targets=np.arange(grid.n), backend=backend)
        V -= m.G[:, 0]
    if w is not None and w.size:
        V += volume_velocity(lam, w, grid.nodes, divergence_free, backend=backend)
    mu = np.cross(grid.normals, V)
    return TangentDensity.project(grid, mu)


def solve_bie(op: BoundaryOperator, mu: TangentDensity | np.ndarray) -> TangentDensity:
    """Dense LU solve with one step of iterative refinement."""
    grid = op.grid
    mu_x = mu.xi if isinstance(mu, TangentDensity) else np.asarray(mu, dtype=complex)
    b = to_local(grid, mu_x)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return TangentDensity(grid, np.zeros((grid.n, 3), complex))
    lu = op.factor()
    c = scipy.linalg.lu_solve(lu, b)
    r = b - op.matrix @ c
    c = c + scipy.linalg.lu_solve(lu, r)
    res = np.linalg.norm(b - op.matrix @ c) / nb
    if not np.isfinite(res) or res > SOLVE_TOL:
        raise BIEError(f"linear residual {res:.2e} above tolerance {SOLVE_TOL:.0e}")
    logger.debug("BIE solved, relative residual %.2e", res)
    return TangentDensity.project(grid, to_ambient(grid, c))


def linear_residual(op: BoundaryOperator, xi: TangentDensity, mu: TangentDensity) -> float:
    b = to_local(op.grid, mu.xi)
    return float(np.linalg.norm(op.matrix @ to_local(op.grid, xi.xi) - b) / max(np.linalg.norm(b), 1e-300))


def stability_ratio(xi: TangentDensity, mu: TangentDensity) -> float:
    """Discrete ||xi|| / ||mu|| in the area-weighted L2 norm."""
    w = xi.grid.weights
    nx = math.sqrt(float(np.sum(w * np.sum(np.abs(xi.xi) ** 2, axis=1))))
    nm = math.sqrt(float(np.sum(w * np.sum(np.abs(mu.xi) ** 2, axis=1))))
    return nx / nm

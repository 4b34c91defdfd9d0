"""Exterior Neumann problem for the inhomogeneous Beltrami equation.

Given lam != 0, a compactly supported w in Omega and normal data g on S, the
radiating solution of curl u - lam u = w, u . eta = g is represented as

    u = -grad phi + curl A + lam A,
    phi = S[g] - N[div w] / lam,    A = S[xi] + N[w],

with S the single layer on S, N the volume potential over Omega and xi the
tangent density solving the boundary equation of ``bie``.  This module wires
the pieces together and provides radiation, decay and far-field diagnostics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import bie
from .kernels import smb_residual
from .potentials import VolumeDensity, layer_moments, volume_moments, volume_velocity
from .seeds import fd_jacobian
from .surface import SurfaceGrid, integrate_surface

logger = logging.getLogger(__name__)

COMPAT_TOL = 1e-8


class CompatibilityError(ValueError):
    """Data violate the flux condition integral_S (lam g + w . eta) dS = 0."""


def check_compatibility(lam: float, grid: SurfaceGrid, g=None, w_trace=None) -> float:
    """|integral_S (lam g + w . eta) dS|.

    ``w_trace`` holds nodal values of w on S (None when supp w misses S).
    """
    f = np.zeros(grid.n, dtype=complex)
    if g is not None:
        f += lam * np.asarray(g)
    if w_trace is not None:
        f += np.sum(np.asarray(w_trace) * grid.normals, axis=1)
    return float(abs(integrate_surface(grid, f)))


def data_scale(grid: SurfaceGrid, g=None, w: VolumeDensity | None = None) -> float:
    s = 0.0
    if g is not None:
        s += float(np.sum(grid.weights * np.abs(g)))
    if w is not None and w.size:
        vals = np.asarray(w.values)
        mag = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals, axis=1)
        s += float(np.sum(w.weights * mag))
    return s


@dataclass(eq=False)
class FieldRepresentation:
    """Layer/volume representation of a complex Beltrami-type field."""

    lam: float
    grid: SurfaceGrid
    g: np.ndarray
    xi: bie.TangentDensity
    w: VolumeDensity = field(default_factory=VolumeDensity.empty)
    divergence_free: bool = True
    backend: str | None = None

    def _moments(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        surf = layer_moments(self.lam, self.grid, scal=self.g[:, None], vec=self.xi.xi[:, None, :],
                             targets=x, backend=self.backend)
        vol = None
        if self.w.size:
            use_div = (not self.divergence_free) and self.w.div_values is not None
            vol = volume_moments(self.lam, self.w, x,
                                 scal=np.asarray(self.w.div_values)[:, None] if use_div else None,
                                 vec=np.asarray(self.w.values)[:, None, :], backend=self.backend)
        return surf, vol

    def eval_phi(self, x) -> np.ndarray:
        shape = np.shape(x)[:-1]
        surf, vol = self._moments(x)
        phi = surf.P[:, 0].copy()
        if vol is not None and vol.P.shape[1]:
            phi -= vol.P[:, 0] / self.lam
        return phi.reshape(shape)

    def eval_A(self, x) -> np.ndarray:
        shape = np.shape(x)[:-1]
        surf, vol = self._moments(x)
        A = surf.A[:, 0].copy()
        if vol is not None:
            A += vol.A[:, 0]
        return A.reshape(shape + (3,))

    def eval_u(self, x) -> np.ndarray:
        shape = np.shape(x)[:-1]
        surf, vol = self._moments(x)
        u = -surf.G[:, 0] + surf.C[:, 0] + self.lam * surf.A[:, 0]
        if vol is not None:
            u += vol.C[:, 0] + self.lam * vol.A[:, 0]
            if vol.G.shape[1]:
                u += vol.G[:, 0] / self.lam
        return u.reshape(shape + (3,))

    __call__ = eval_u

    def eval_layer(self, x) -> np.ndarray:
        """Surface-density part -grad S[g] + curl S[xi] + lam S[xi] alone."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        m = layer_moments(self.lam, self.grid, scal=self.g[:, None], vec=self.xi.xi[:, None, :],
                          targets=x, backend=self.backend)
        return -m.G[:, 0] + m.C[:, 0] + self.lam * m.A[:, 0]

    def eval_volume(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        if not self.w.size:
            return np.zeros((len(x), 3), complex)
        return volume_velocity(self.lam, self.w, x, self.divergence_free, backend=self.backend)

    def tabulated(self, n_r: int = 10, depth: float | None = None) -> "TabulatedField":
        """Fast sampler of u with the near-surface layer part read from a table."""
        return TabulatedField(self, NearFieldTable.build(self, n_r, depth))

    def trace(self, side: str = "exterior") -> np.ndarray:
        """One-sided boundary values of u at every grid node."""
        from .potentials import boundary_limit_velocity

        return boundary_limit_velocity(self.lam, self.g, self.xi.xi, self.w, self.grid, side=side,
                                       divergence_free=self.divergence_free, backend=self.backend)

    def jacobian(self, x, h: float = 1e-4) -> np.ndarray:
        return fd_jacobian(self.eval_u, x, h)


def _cheb_lobatto(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Lobatto points on [0, 1] (0 first) and barycentric weights."""
    k = np.arange(n)
    x = 0.5 * (1.0 - np.cos(np.pi * k / (n - 1)))
    w = (-1.0) ** k
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


MAX_TABLE_DEPTH = 0.75


@dataclass(eq=False)
class NearFieldTable:
    """Tabulated layer part of a representation in thin shells on both sides of S.

    Points are parametrised as x = c + t r(sigma) sigma.  Values at
    Chebyshev-Lobatto depths t in [1, 1 + D] (exterior) and [1 - D, 1]
    (interior) are stored per grid direction, the t = 1 rows holding the
    one-sided traces.  Lookups use the grid's Lagrange stencil in angle and
    barycentric interpolation in depth, so near-surface evaluation no longer
    pays for singular quadrature.  Columns are filled on first use.  The
    volume part is not tabulated.
    """

    rep: "FieldRepresentation"
    depth: float
    nodes01: np.ndarray
    bary: np.ndarray
    values: dict = field(repr=False)  # side -> (n_r, N, 3)
    ready: dict = field(repr=False)   # side -> (N,) bool

    @classmethod
    def build(cls, rep: "FieldRepresentation", n_r: int = 10, depth: float | None = None) -> "NearFieldTable":
        grid = rep.grid
        # coarse grids have near angles close to 1; deeper points use direct evaluation
        D = min(1.25 * grid.near_angle, MAX_TABLE_DEPTH) if depth is None else float(depth)
        if not 0.0 < D < 1.0:
            raise ValueError("table depth must lie in (0, 1)")
        if n_r < 3:
            raise ValueError("need at least 3 depth nodes")
        x01, bw = _cheb_lobatto(n_r)
        values = {s: np.zeros((n_r, grid.n, 3), complex) for s in (1, -1)}
        ready = {s: np.zeros(grid.n, dtype=bool) for s in (1, -1)}
        return cls(rep, D, x01, bw, values, ready)

    def fill(self, side: int, nodes=None) -> None:
        """Compute table columns for grid nodes (all when None) on one side."""
        rep, grid = self.rep, self.rep.grid
        nodes = np.arange(grid.n) if nodes is None else np.asarray(nodes, dtype=np.int64)
        nodes = nodes[~self.ready[side][nodes]]
        if nodes.size == 0:
            return
        m = layer_moments(rep.lam, grid, scal=rep.g[:, None], vec=rep.xi.xi[:, None, :],
                          node_targets=nodes, side=float(side), backend=rep.backend)
        tab = self.values[side]
        tab[0, nodes] = -m.G[:, 0] + m.C[:, 0] + rep.lam * m.A[:, 0]
        t = 1.0 + side * self.depth * self.nodes01[1:]
        r = grid.radial(grid.dirs[nodes])
        pts = grid.center + (t[:, None, None] * r[None, :, None]) * grid.dirs[nodes][None, :, :]
        tab[1:, nodes] = rep.eval_layer(pts.reshape(-1, 3)).reshape(len(t), nodes.size, 3)
        self.ready[side][nodes] = True

    def locate(self, x):
        """Depth coordinate t and direction of each point, plus table membership (+1, -1 or 0)."""
        grid = self.rep.grid
        rel = np.asarray(x, dtype=float).reshape(-1, 3) - grid.center
        rho = np.linalg.norm(rel, axis=1)
        sig = rel / np.where(rho == 0.0, 1.0, rho)[:, None]
        t = rho / grid.radial(sig)
        side = np.where((t >= 1.0) & (t <= 1.0 + self.depth), 1, 0)
        side = np.where((t < 1.0) & (t >= 1.0 - self.depth), -1, side)
        return t, sig, side

    def lookup(self, t, sig, side) -> np.ndarray:
        from ._hot import gather

        grid = self.rep.grid
        out = np.empty((len(t), 3), complex)
        for sgn in (1, -1):
            sel = side == sgn
            if not np.any(sel):
                continue
            idx, wts = grid.stencil(sig[sel])
            self.fill(sgn, np.unique(idx))
            tab = self.values[sgn]
            s = np.abs(t[sel] - 1.0) / self.depth
            diff = s[:, None] - self.nodes01[None, :]
            exact = diff == 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                c = self.bary[None, :] / diff
            hit = np.any(exact, axis=1)
            c[hit] = exact[hit].astype(float)
            c /= np.sum(c, axis=1)[:, None]
            # angular interpolation of every depth row, then the depth combination
            rows = gather(np.moveaxis(tab, 0, 1).reshape(grid.n, -1), idx, wts)
            out[sel] = np.einsum("tk,tkc->tc", c, rows.reshape(-1, tab.shape[0], 3))
        return out


@dataclass(eq=False)
class TabulatedField:
    """u of a representation with table lookups inside the near shells."""

    rep: FieldRepresentation
    table: NearFieldTable

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = x.shape
        xs = x.reshape(-1, 3)
        t, sig, side = self.table.locate(xs)
        u = self.rep.eval_volume(xs)
        near = side != 0
        if np.any(near):
            u[near] += self.table.lookup(t[near], sig[near], side[near])
        if np.any(~near):
            u[~near] += self.rep.eval_layer(xs[~near])
        return u.reshape(shape)


def solve_nib(lam: float, grid: SurfaceGrid, w: VolumeDensity | None = None, g=None, *,
              divergence_free: bool = True, op: bie.BoundaryOperator | None = None,
              w_trace=None, tol_c: float = COMPAT_TOL, backend: str | None = None) -> FieldRepresentation:
    """Solve curl u - lam u = w in Omega, u . eta = g on S, radiating at infinity."""
    if lam == 0.0:
        raise ValueError("lambda must be nonzero")
    g = np.zeros(grid.n, complex) if g is None else np.asarray(g, dtype=complex)
    w = VolumeDensity.empty() if w is None else w
    resid = check_compatibility(lam, grid, g, w_trace)
    scale = max(data_scale(grid, g, w), 1.0)
    if resid > tol_c * scale:
        raise CompatibilityError(f"flux residual {resid:.3e} exceeds {tol_c:.1e} x data scale {scale:.3e}")
    if op is None:
        op = bie.assemble_T(lam, grid, backend=backend)
    elif op.lam != lam or op.grid is not grid:
        raise ValueError("boundary operator was assembled for a different lambda or grid")
    mu = bie.assemble_mu(lam, grid, w, g, divergence_free, backend=backend)
    xi = bie.solve_bie(op, mu)
    return FieldRepresentation(lam, grid, g, xi, w, divergence_free, backend)


def representation_from_traces(lam: float, grid: SurfaceGrid, sampler: Callable) -> FieldRepresentation:
    """Representation built from g = u . eta and xi = eta x u of a sampled field on S."""
    u = np.asarray(sampler(grid.nodes), dtype=complex)
    g = np.sum(u * grid.normals, axis=1)
    xi = bie.TangentDensity.project(grid, np.cross(grid.normals, u))
    return FieldRepresentation(lam, grid, g, xi)


def relative_error(approx, exact) -> float:
    """max_i |approx_i - exact_i| / max_i |exact_i| for vector samples."""
    approx = np.asarray(approx)
    exact = np.asarray(exact)
    num = np.max(np.linalg.norm(np.atleast_2d(approx - exact), axis=-1))
    den = np.max(np.linalg.norm(np.atleast_2d(exact), axis=-1))
    return float(num / den) if den > 0 else float(num)


def verify_representation(sampler: Callable, grid: SurfaceGrid, lam: float, probes) -> float:
    """Max relative error of the trace-only representation of a radiating Beltrami field."""
    rep = representation_from_traces(lam, grid, sampler)
    exact = np.asarray(sampler(probes))
    if np.max(np.abs(exact)) == 0.0:
        return float(np.max(np.abs(rep.eval_u(probes))))
    return relative_error(rep.eval_u(probes), exact)


def shell_probes(n: int, rng: np.random.Generator, r_min: float = 1.2, r_max: float = 3.0,
                 center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Seeded probe points uniformly distributed in a spherical shell."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = np.cbrt(rng.uniform(r_min**3, r_max**3, size=n))
    return np.asarray(center) + r[:, None] * d


def fibonacci_directions(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5**0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


# ------------------------------------------------------------------ far field
@dataclass(frozen=True)
class FarFieldPattern:
    directions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.directions)
        if d.shape[0] < 32:
            raise ValueError("a far-field pattern needs at least 32 directions")
        if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-12):
            raise ValueError("directions must be unit vectors")


def scalar_far_field(lam: float, grid: SurfaceGrid, a_trace, dn_a_trace, directions,
                     source: VolumeDensity | None = None) -> FarFieldPattern:
    """a_inf(sigma) = int_Omega e^{-i lam sigma.y} f + int_S [a d_eta e^{..} - e^{..} d_eta a].

    ``a_trace`` and ``dn_a_trace`` are nodal values of a and its normal
    derivative on S; ``source`` carries f with (Delta + lam^2) a = -f.
    """
    sig = np.asarray(directions, dtype=float)
    ph = np.exp(-1j * lam * sig @ grid.nodes.T)  # (nd, N)
    dn_ph = ph * (-1j * lam) * (sig @ grid.normals.T)
    vals = (dn_ph * np.asarray(a_trace)[None, :] - ph * np.asarray(dn_a_trace)[None, :]) @ grid.weights
    if source is not None and source.size:
        vals = vals + np.exp(-1j * lam * sig @ source.nodes.T) @ (source.weights * source.values)
    return FarFieldPattern(sig, vals)


def representation_far_field(rep: FieldRepresentation, directions) -> FarFieldPattern:
    """u_inf = -i lam sigma phi_inf + i lam sigma x A_inf + lam A_inf."""
    lam = rep.lam
    sig = np.asarray(directions, dtype=float)
    ph = np.exp(-1j * lam * sig @ rep.grid.nodes.T) * rep.grid.weights[None, :]
    phi_inf = ph @ rep.g
    A_inf = ph @ rep.xi.xi
    if rep.w.size:
        pv = np.exp(-1j * lam * sig @ rep.w.nodes.T) * rep.w.weights[None, :]
        A_inf = A_inf + pv @ rep.w.values
        if not rep.divergence_free and rep.w.div_values is not None:
            phi_inf = phi_inf - (pv @ rep.w.div_values) / lam
    u_inf = -1j * lam * sig * phi_inf[:, None] + 1j * lam * np.cross(sig, A_inf) + lam * A_inf
    return FarFieldPattern(sig, u_inf)


def far_field(obj, directions, lam: float | None = None, **kwargs) -> FarFieldPattern:
    """Far-field pattern of a representation, or of scalar traces via ``scalar_far_field``."""
    if isinstance(obj, FieldRepresentation):
        return representation_far_field(obj, directions)
    if lam is None:
        raise ValueError("lambda required for scalar far fields")
    grid, a_trace, dn_a_trace = obj
    return scalar_far_field(lam, grid, a_trace, dn_a_trace, directions, **kwargs)


def extract_far_field(sampler: Callable, lam: float, directions, R: float,
                      center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Finite-R estimate a(R sigma) 4 pi R e^{-i lam R}."""
    sig = np.asarray(directions, dtype=float)
    vals = np.asarray(sampler(np.asarray(center) + R * sig))
    fac = 4.0 * np.pi * R * np.exp(-1j * lam * R)
    return vals * fac


def parseval_check(sampler: Callable, lam: float, R: float, pattern: FarFieldPattern,
                   n_theta: int = 48, n_phi: int = 96) -> float:
    """Relative gap between int_{|x|=R} |a|^2 and int |a_inf|^2 / (16 pi^2).

    The far-field integral uses the pattern's own directions as an equal-area
    rule, so the pattern should come from ``fibonacci_directions``.
    """
    from .surface import make_sphere_grid

    sph = make_sphere_grid(radius=R, n_theta=n_theta, n_phi=n_phi)
    vals = np.asarray(sampler(sph.nodes))
    mag2 = np.abs(vals) ** 2 if vals.ndim == 1 else np.sum(np.abs(vals) ** 2, axis=1)
    lhs = float(np.sum(sph.weights * mag2))
    pv = np.asarray(pattern.values)
    pm2 = np.abs(pv) ** 2 if pv.ndim == 1 else np.sum(np.abs(pv) ** 2, axis=1)
    rhs = float(4.0 * np.pi * np.mean(pm2) / (16.0 * np.pi**2))
    return abs(lhs - rhs) / rhs


def far_field_gradient_check(sampler: Callable, grad_sampler: Callable, lam: float, directions,
                             R: float = 40.0) -> float:
    """max |(grad a)_inf - i lam a_inf sigma| / max |lam a_inf| from samples at radius R."""
    sig = np.asarray(directions, dtype=float)
    a_inf = extract_far_field(sampler, lam, sig, R)
    g_inf = extract_far_field(grad_sampler, lam, sig, R)
    dev = np.linalg.norm(g_inf - 1j * lam * a_inf[:, None] * sig, axis=1)
    return float(np.max(dev) / np.max(np.abs(lam * a_inf)))


def radiation_scan(sampler: Callable, lam: float, radii, directions, center=(0.0, 0.0, 0.0)) -> list[dict]:
    """Rows {R, smb_R = max|i xhat x u - u| R, amp_R = max|u| R} over increasing radii."""
    radii = [float(r) for r in radii]
    if len(radii) < 3 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("need at least 3 increasing radii")
    sig = np.asarray(directions, dtype=float)
    rows = []
    for R in radii:
        x = np.asarray(center) + R * sig
        u = np.asarray(sampler(x))
        res = smb_residual(lam, u, x - np.asarray(center))
        rows.append({"R": R, "smb_R": float(np.max(np.linalg.norm(res, axis=1)) * R),
                     "amp_R": float(np.max(np.linalg.norm(u, axis=1)) * R)})
    return rows

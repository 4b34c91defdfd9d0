"""Structured (theta, phi) grids on star-shaped genus-0 surfaces.

A surface is the radial graph y(sigma) = c + r(sigma) sigma over unit
directions sigma.  Nodes sit at Gauss-Legendre points in cos(theta) times
uniform phi, so no node lies on a pole.  Surface derivatives use 4th-order
finite differences in the chart: periodic in phi, Fornberg weights on the
(non-uniform) theta nodes with one-sided stencils near the ends.

Besides the node data, a grid can evaluate its geometry at arbitrary
directions and interpolate nodal data there (tensor Lagrange stencils, with
theta continued across the poles by sigma(-theta, phi) = sigma(theta, phi+pi)).
Those two facilities drive the near-singular quadrature in ``_nearfield``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Profile = Callable[[np.ndarray], np.ndarray]

TANGENCY_TOL = 1e-10
_FD_STEP = 1e-3


class ConfigurationError(ValueError):
    """Invalid construction parameters."""


class TangencyError(ValueError):
    """A field declared tangent has a normal component above tolerance."""


def fornberg_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at x0."""
    n = len(nodes)
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _theta_diff_matrix(theta: np.ndarray, width: int = 5) -> np.ndarray:
    n = len(theta)
    half = width // 2
    D = np.zeros((n, n))
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = np.arange(lo, lo + width)
        D[i, idx] = fornberg_weights(theta[i], theta[idx], 1)
    return D


def _phi_diff_matrix(n_phi: int) -> np.ndarray:
    h = 2.0 * np.pi / n_phi
    D = np.zeros((n_phi, n_phi))
    coef = {-2: 1.0, -1: -8.0, 1: 8.0, 2: -1.0}
    for j in range(n_phi):
        for off, c in coef.items():
            D[j, (j + off) % n_phi] += c / (12.0 * h)
    return D


def _frame(dirs: np.ndarray):
    """Orthonormal tangent pair at each direction (smooth away from the z-axis)."""
    a = np.where(np.abs(dirs[:, 2:3]) < 0.9, np.array([[0.0, 0.0, 1.0]]), np.array([[1.0, 0.0, 0.0]]))
    e1 = a - np.sum(a * dirs, axis=1, keepdims=True) * dirs
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(dirs, e1)
    return e1, e2


def _fd_sphere_gradient(profile: Profile, dirs: np.ndarray) -> np.ndarray:
    """Tangential gradient of a function on the unit sphere by geodesic 4th-order FD."""
    e1, e2 = _frame(dirs)
    h = _FD_STEP
    grad = np.zeros_like(dirs)
    for e in (e1, e2):
        vals = {}
        for k in (-2, -1, 1, 2):
            s = k * h
            vals[k] = np.asarray(profile(np.cos(s) * dirs + np.sin(s) * e), dtype=float)
        d = (8.0 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12.0 * h)
        grad += d[:, None] * e
    return grad


def angles_to_dirs(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(phi)], axis=-1)


def dirs_to_angles(dirs):
    dirs = np.asarray(dirs, dtype=float)
    theta = np.arccos(np.clip(dirs[..., 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(dirs[..., 1], dirs[..., 0]), 2.0 * np.pi)
    return theta, phi


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    """Quadrature discretisation of a star-shaped closed surface.

    Node index k = i * n_phi + j for theta row i and phi column j.  Normals
    point out of the enclosed body G into the exterior Omega.
    """

    center: np.ndarray
    n_theta: int
    n_phi: int
    theta: np.ndarray
    phi: np.ndarray
    theta_weights: np.ndarray
    profile: Profile
    profile_grad: Profile | None
    dirs: np.ndarray
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    d_theta: np.ndarray
    d_phi: np.ndarray
    metric: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    is_sphere: bool
    radius: float
    _Dt: np.ndarray = field(repr=False)
    _Dp: np.ndarray = field(repr=False)

    # ------------------------------------------------------------------ basics
    @property
    def n(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.n_theta, self.n_phi)

    @property
    def chart_coords(self) -> np.ndarray:
        th, ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.stack([th.ravel(), ph.ravel()], axis=1)

    @property
    def spacing(self) -> float:
        """Representative node spacing (mean radius times pi / n_theta)."""
        return float(np.mean(np.linalg.norm(self.nodes - self.center, axis=1)) * np.pi / self.n_theta)

    @property
    def area(self) -> float:
        return float(np.sum(self.weights))

    @property
    def cap_angle(self) -> float:
        """Angular radius (radians) of the near-field cap used by singular quadrature.

        Fixed rather than tied to the spacing so the outer partition-of-unity
        integrand is resolved better and better under refinement.
        """
        return 1.0

    @property
    def near_angle(self) -> float:
        """Angular distance below which off-surface targets need the cap correction."""
        return min(self.cap_angle, 4.5 * np.pi / self.n_theta)

    # ---------------------------------------------------------------- geometry
    def radial(self, dirs: np.ndarray) -> np.ndarray:
        return np.asarray(self.profile(np.asarray(dirs, dtype=float)), dtype=float)

    def _grad_r(self, dirs: np.ndarray) -> np.ndarray:
        if self.is_sphere:
            return np.zeros_like(dirs)
        if self.profile_grad is not None:
            g = np.asarray(self.profile_grad(dirs), dtype=float)
            return g - np.sum(g * dirs, axis=-1, keepdims=True) * dirs
        return _fd_sphere_gradient(self.profile, dirs)

    def geometry(self, dirs: np.ndarray):
        """Points, unit normals and area density dS/dsigma at directions."""
        dirs = np.asarray(dirs, dtype=float)
        shape = dirs.shape[:-1]
        d = dirs.reshape(-1, 3)
        r = self.radial(d).reshape(-1)
        if self.is_sphere:
            y = self.center + r[:, None] * d
            return (y.reshape(shape + (3,)), d.reshape(shape + (3,)).copy(),
                    (r * r).reshape(shape))
        gr = self._grad_r(d)
        nvec = r[:, None] * d - gr
        nn = np.linalg.norm(nvec, axis=1)
        y = self.center + r[:, None] * d
        jac = r * nn
        return (y.reshape(shape + (3,)), (nvec / nn[:, None]).reshape(shape + (3,)),
                jac.reshape(shape))

    def implicit(self, x: np.ndarray) -> np.ndarray:
        """Level function |x-c| - r(dir): zero on S, positive in Omega."""
        x = np.asarray(x, dtype=float)
        rel = x - self.center
        rho = np.linalg.norm(rel, axis=-1)
        dirs = rel / np.where(rho == 0.0, 1.0, rho)[..., None]
        r = self.radial(dirs.reshape(-1, 3)).reshape(rho.shape)
        return rho - r

    def locate(self, x: np.ndarray, iters: int = 40):
        """Foot directions, signed normal distances (>0 in Omega) and foot points.

        Exact for spheres; for radial graphs a fixed-point projection that is
        accurate near the surface, which is the only place it matters.
        """
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        rel = x - self.center
        rho = np.linalg.norm(rel, axis=1)
        sig = rel / np.where(rho == 0.0, 1.0, rho)[:, None]
        sig[rho == 0.0] = (0.0, 0.0, 1.0)
        if self.is_sphere:
            d = rho - self.radius
            return sig, d, self.center + self.radius * sig
        for _ in range(iters):
            y, eta, _ = self.geometry(sig)
            d = np.sum((x - y) * eta, axis=1)
            new = x - self.center - d[:, None] * eta
            new /= np.linalg.norm(new, axis=1)[:, None]
            if np.max(np.abs(new - sig)) < 1e-14:
                sig = new
                break
            sig = new
        y, eta, _ = self.geometry(sig)
        d = np.sum((x - y) * eta, axis=1)
        return sig, d, y

    # ----------------------------------------------------------- interpolation
    def stencil(self, dirs: np.ndarray, order: int = 8):
        """Tensor Lagrange interpolation stencils for nodal data at directions.

        Returns node indices and weights, each of shape (..., order**2).
        """
        dirs = np.asarray(dirs, dtype=float)
        shape = dirs.shape[:-1]
        th, ph = dirs_to_angles(dirs.reshape(-1, 3))
        nt, npz = self.n_theta, self.n_phi
        p = order
        ext = np.concatenate([-self.theta[:p][::-1], self.theta, 2.0 * np.pi - self.theta[-p:][::-1]])
        native = np.concatenate([np.arange(p)[::-1], np.arange(nt), np.arange(nt - p, nt)[::-1]])
        flip = np.concatenate([np.ones(p, bool), np.zeros(nt, bool), np.ones(p, bool)])
        from ._hot import stencil

        idx, wts = stencil(th, ph, ext, native, flip, npz, p)
        return idx.reshape(shape + (p * p,)), wts.reshape(shape + (p * p,))

    def interpolate(self, values: np.ndarray, dirs: np.ndarray, order: int = 8) -> np.ndarray:
        from ._hot import gather

        idx, wts = self.stencil(dirs, order)
        return gather(values, idx, wts)

    # ------------------------------------------------------------- chart calc
    def _reshape(self, f):
        f = np.asarray(f)
        return f.reshape((self.n_theta, self.n_phi) + f.shape[1:])

    def chart_derivatives(self, f):
        """(df/dtheta, df/dphi) of nodal data, flattened like the input."""
        F = self._reshape(f)
        ft = np.tensordot(self._Dt, F, axes=(1, 0))
        fp = np.tensordot(self._Dp, np.moveaxis(F, 1, 0), axes=(1, 0))
        fp = np.moveaxis(fp, 0, 1)
        return ft.reshape(np.shape(f)), fp.reshape(np.shape(f))


def _build_grid(center, profile, profile_grad, n_theta, n_phi, is_sphere, radius) -> SurfaceGrid:
    if n_theta < 8 or n_phi < 16:
        raise ConfigurationError(f"resolution ({n_theta}, {n_phi}) below the minimum (8, 16)")
    if n_phi % 4:
        raise ConfigurationError("n_phi must be divisible by 4 (pole reflection uses phi + pi)")
    center = np.asarray(center, dtype=float).reshape(3)
    xg, wg = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(xg)[::-1].copy()
    wth = wg[::-1].copy()
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    TH, PH = np.meshgrid(theta, phi, indexing="ij")
    dirs = angles_to_dirs(TH.ravel(), PH.ravel())
    r = np.asarray(profile(dirs), dtype=float).reshape(-1)
    if not np.all(np.isfinite(r)) or np.any(r <= 0.0):
        raise ConfigurationError("radial profile must be finite and positive at every node")
    st, ct = np.sin(TH.ravel()), np.cos(TH.ravel())
    cp, sp = np.cos(PH.ravel()), np.sin(PH.ravel())
    s_th = np.stack([ct * cp, ct * sp, -st], axis=1)
    s_ph = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=1)
    if is_sphere:
        gr = np.zeros_like(dirs)
    elif profile_grad is not None:
        gr = np.asarray(profile_grad(dirs), dtype=float)
        gr = gr - np.sum(gr * dirs, axis=1, keepdims=True) * dirs
    else:
        gr = _fd_sphere_gradient(profile, dirs)
    r_th = np.sum(gr * s_th, axis=1)
    r_ph = np.sum(gr * s_ph, axis=1)
    y_th = r_th[:, None] * dirs + r[:, None] * s_th
    y_ph = r_ph[:, None] * dirs + r[:, None] * s_ph
    if is_sphere:
        normals = dirs.copy()
        jac = r * r
    else:
        nvec = r[:, None] * dirs - gr
        nn = np.linalg.norm(nvec, axis=1)
        normals = nvec / nn[:, None]
        jac = r * nn
    nodes = center + r[:, None] * dirs
    weights = np.repeat(wth, n_phi) * (2.0 * np.pi / n_phi) * jac
    E = np.sum(y_th * y_th, axis=1)
    F = np.sum(y_th * y_ph, axis=1)
    G = np.sum(y_ph * y_ph, axis=1)
    t1 = y_th / np.sqrt(E)[:, None]
    t2 = np.cross(normals, t1)
    return SurfaceGrid(
        center=center, n_theta=n_theta, n_phi=n_phi, theta=theta, phi=phi, theta_weights=wth,
        profile=profile, profile_grad=profile_grad, dirs=dirs, nodes=nodes, normals=normals,
        weights=weights, d_theta=y_th, d_phi=y_ph, metric=np.stack([E, F, G], axis=1),
        t1=t1, t2=t2, is_sphere=is_sphere, radius=float(radius),
        _Dt=_theta_diff_matrix(theta), _Dp=_phi_diff_matrix(n_phi),
    )


def make_sphere_grid(center=(0.0, 0.0, 0.0), radius: float = 1.0, n_theta: int = 32,
                     n_phi: int = 64) -> SurfaceGrid:
    """Gauss(cos theta) x uniform(phi) grid on a sphere."""
    if not radius > 0.0:
        raise ConfigurationError("radius must be positive")
    a = float(radius)

    def profile(d):
        return np.full(np.asarray(d).shape[:-1], a)

    return _build_grid(center, profile, None, n_theta, n_phi, True, a)


def make_deformed_sphere_grid(radial_profile: Profile, n_theta: int = 32, n_phi: int = 64,
                              center=(0.0, 0.0, 0.0), profile_grad: Profile | None = None) -> SurfaceGrid:
    """Grid on the radial graph r(sigma) sigma.

    ``radial_profile`` maps unit directions (n, 3) to radii (n,).  The optional
    ``profile_grad`` returns the gradient of r on the unit sphere; without it a
    4th-order geodesic finite difference is used.
    """
    mean_r = float(np.mean(radial_profile(angles_to_dirs(np.array([0.5, 1.5, 2.5]), np.array([0.0, 2.0, 4.0])))))
    return _build_grid(center, radial_profile, profile_grad, n_theta, n_phi, False, mean_r)


# ---------------------------------------------------------------- operators
def _inverse_metric(grid: SurfaceGrid):
    E, F, G = grid.metric.T
    det = E * G - F * F
    return G / det, -F / det, E / det, np.sqrt(det)


def _check_tangent(grid: SurfaceGrid, X: np.ndarray, tol: float = TANGENCY_TOL) -> None:
    X = np.asarray(X)
    scale = max(1.0, float(np.max(np.abs(X)))) if X.size else 1.0
    normal = np.abs(np.sum(X * grid.normals, axis=1))
    if np.max(normal, initial=0.0) > tol * scale:
        raise TangencyError(f"field is not tangent: max |X.eta| = {np.max(normal):.3e}")


def project_tangent(grid: SurfaceGrid, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    return X - np.sum(X * grid.normals, axis=1)[:, None] * grid.normals


def surface_gradient(grid: SurfaceGrid, f) -> np.ndarray:
    """Tangential gradient of nodal scalar data."""
    f = np.asarray(f)
    ft, fp = grid.chart_derivatives(f)
    gtt, gtp, gpp, _ = _inverse_metric(grid)
    ct = gtt * ft + gtp * fp
    cp = gtp * ft + gpp * fp
    return ct[:, None] * grid.d_theta + cp[:, None] * grid.d_phi


def surface_divergence(grid: SurfaceGrid, X, check: bool = True) -> np.ndarray:
    """div_S X = (1/sqrt g) d_a (sqrt g X^a) for tangent X."""
    X = np.asarray(X)
    if check:
        _check_tangent(grid, X)
    gtt, gtp, gpp, sq = _inverse_metric(grid)
    xt = np.sum(X * grid.d_theta, axis=1)
    xp = np.sum(X * grid.d_phi, axis=1)
    ut = sq * (gtt * xt + gtp * xp)
    up = sq * (gtp * xt + gpp * xp)
    dt, _ = grid.chart_derivatives(ut)
    _, dp = grid.chart_derivatives(up)
    return (dt + dp) / sq


def surface_curl(grid: SurfaceGrid, X, check: bool = True) -> np.ndarray:
    """Scalar surface curl (1/sqrt g)(d_theta X_phi - d_phi X_theta) = div_S(X x eta)."""
    X = np.asarray(X)
    if check:
        _check_tangent(grid, X)
    _, _, _, sq = _inverse_metric(grid)
    xt = np.sum(X * grid.d_theta, axis=1)
    xp = np.sum(X * grid.d_phi, axis=1)
    dt, _ = grid.chart_derivatives(xp)
    _, dp = grid.chart_derivatives(xt)
    return (dt - dp) / sq


def integrate_surface(grid: SurfaceGrid, f):
    """Weighted nodal sum; vector data integrates componentwise."""
    f = np.asarray(f)
    return np.tensordot(grid.weights, f, axes=(0, 0))


# ------------------------------------------------------------------ patches
@dataclass(frozen=True, eq=False)
class SurfacePatch:
    """Geodesic-angle cap Sigma on a grid with chart mu from the unit disk.

    mu(s) is the surface point in direction
    cos(alpha |s|) c + sin(alpha |s|) (s1 e1 + s2 e2)/|s|.
    """

    parent: SurfaceGrid
    center_dir: np.ndarray
    angle: float
    e1: np.ndarray
    e2: np.ndarray

    @property
    def node_subset(self) -> np.ndarray:
        c = np.clip(self.parent.dirs @ self.center_dir, -1.0, 1.0)
        return np.nonzero(np.arccos(c) < self.angle)[0]

    def chart_dirs(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        rho = np.linalg.norm(s, axis=-1)
        ang = self.angle * rho
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[..., None] > 0, s / np.where(rho == 0, 1.0, rho)[..., None], 0.0)
        tang = unit[..., :1] * self.e1 + unit[..., 1:2] * self.e2
        return np.cos(ang)[..., None] * self.center_dir + np.sin(ang)[..., None] * tang

    def mu(self, s: np.ndarray) -> np.ndarray:
        y, _, _ = self.parent.geometry(self.chart_dirs(s))
        return y

    def mu_derivatives(self, s: np.ndarray, h: float = 1e-4):
        """(dmu/ds1, dmu/ds2) by 4th-order central differences."""
        s = np.asarray(s, dtype=float)
        out = []
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            d = (8.0 * (self.mu(s + e) - self.mu(s - e)) - (self.mu(s + 2 * e) - self.mu(s - 2 * e))) / (12.0 * h)
            out.append(d)
        return out[0], out[1]

    def inverse(self, dirs: np.ndarray):
        """Chart coordinates s of directions and whether they fall inside the open disk."""
        dirs = np.asarray(dirs, dtype=float)
        a1 = dirs @ self.e1
        a2 = dirs @ self.e2
        nrm = np.hypot(a1, a2)
        # atan2 keeps full precision next to the cap centre, where arccos does not
        ang = np.arctan2(nrm, dirs @ self.center_dir)
        rho = ang / self.angle
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.stack([np.where(nrm > 0, a1 / nrm, 0.0), np.where(nrm > 0, a2 / nrm, 0.0)], axis=-1) * rho[..., None]
        return s, rho < 1.0


def make_cap_patch(grid: SurfaceGrid, center_dir, angle: float) -> SurfacePatch:
    c = np.asarray(center_dir, dtype=float)
    c = c / np.linalg.norm(c)
    if not 0.0 < angle < np.pi / 2:
        raise ConfigurationError("cap angle must lie in (0, pi/2)")
    e1, e2 = _frame(c[None, :])
    patch = SurfacePatch(parent=grid, center_dir=c, angle=float(angle), e1=e1[0], e2=e2[0])
    if patch.node_subset.size == 0:
        raise ConfigurationError("cap contains no grid nodes; enlarge it or refine the grid")
    return patch

"""Single-layer and volume potentials of the Helmholtz kernel.

All evaluations reduce to five kernel moments over a density (see
``_hot.shared_sum``): the potential of scalar densities and its gradient, and
the potential, curl and divergence of vector densities.  ``layer_moments``
computes them for a surface density with a near-field correction:

* targets farther than ``grid.near_angle`` (in foot-point angle) from S use
  the native product rule;
* nearer targets split the integral with a smooth partition of unity
  centred at the foot point.  The outer part keeps the native rule; the inner
  part is integrated on a polar cap grid around the foot, with geometrically
  graded radial panels that resolve the near-singularity, and densities
  interpolated to the cap nodes.  On S itself the symmetric angular rule
  produces principal values of the gradient-type kernels.

Volume densities are carried on explicit quadratures and summed directly,
with each source smeared to a uniform ball of its own volume so that
coincident or very close targets see a bounded kernel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _hot
from .surface import SurfaceGrid, _frame

logger = logging.getLogger(__name__)

CAP_GAUSS = 8
CAP_ANGULAR = 48
CAP_BATCH_NODES = 150_000
ON_SURFACE_REL = 1e-11


class DomainError(ValueError):
    """Evaluation requested where the operation is not defined."""


# ------------------------------------------------------------------ densities
@dataclass(frozen=True, eq=False)
class LayerDensity:
    """Nodal density on a surface grid: shape (N,) scalar or (N, 3) vector."""

    grid: SurfaceGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape[0] != self.grid.n or v.ndim not in (1, 2):
            raise ValueError(f"density shape {v.shape} does not match grid with {self.grid.n} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("density has non-finite values")

    @property
    def is_vector(self) -> bool:
        return np.ndim(self.values) == 2


@dataclass(frozen=True, eq=False)
class VolumeDensity:
    """Explicit volume quadrature: nodes, positive weights and values.

    ``values`` is (M,) or (M, 3).  ``div_values`` optionally carries the
    divergence of a vector density at the same nodes.
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    support_radius: float = 0.0
    div_values: np.ndarray | None = None
    near_surface: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = np.asarray(self.nodes).reshape(-1, 3).shape[0]
        if np.asarray(self.weights).shape != (n,) or np.asarray(self.values).shape[0] != n:
            raise ValueError("volume density arrays have inconsistent lengths")
        if n and np.any(np.asarray(self.weights) <= 0.0):
            raise ValueError("volume weights must be positive")

    @classmethod
    def empty(cls, vector: bool = True) -> "VolumeDensity":
        shape = (0, 3) if vector else (0,)
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(shape, complex))

    @property
    def size(self) -> int:
        return int(np.asarray(self.weights).shape[0])

    @property
    def blob_radii(self) -> np.ndarray:
        return np.cbrt(3.0 * np.asarray(self.weights) / (4.0 * np.pi))

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def integral(self) -> np.ndarray:
        return np.tensordot(np.asarray(self.weights), np.asarray(self.values), axes=(0, 0))


# ------------------------------------------------------------------ cap rule
@dataclass(frozen=True, eq=False)
class CapRule:
    """Per-target polar quadrature over the inner partition-of-unity cap."""

    points: np.ndarray   # (nt, M, 3)
    normals: np.ndarray  # (nt, M, 3)
    weights: np.ndarray  # (nt, M), include the cutoff
    idx: np.ndarray      # (nt, M, P) interpolation stencil nodes
    wts: np.ndarray      # (nt, M, P) interpolation stencil weights


def cap_levels(grid: SurfaceGrid, d_ang: np.ndarray) -> np.ndarray:
    """Number of geometric radial panels needed for angular target distances."""
    tc = grid.cap_angle
    d = np.asarray(d_ang, dtype=float)
    with np.errstate(divide="ignore"):
        k = np.ceil(np.log2(tc / np.maximum(d, 1e-300)))
    k = np.where(d <= 0.0, 2, k)
    return np.clip(k, 2, 40).astype(int)


def build_cap(grid: SurfaceGrid, center_dirs: np.ndarray, levels: int,
              n_gauss: int = CAP_GAUSS, n_ang: int = CAP_ANGULAR) -> CapRule:
    """Cap quadrature around each centre direction with ``levels`` graded panels."""
    if n_ang % 2:
        raise ValueError("angular point count must be even")
    c = np.asarray(center_dirs, dtype=float).reshape(-1, 3)
    tc = grid.cap_angle
    tin = 0.25 * tc
    brk = np.concatenate([[0.0], tc * 2.0 ** -np.arange(levels, -1, -1.0)])
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    th, wth = [], []
    for a, b in zip(brk[:-1], brk[1:]):
        th.append(0.5 * (b - a) * xg + 0.5 * (b + a))
        wth.append(0.5 * (b - a) * wg)
    th = np.concatenate(th)
    wth = np.concatenate(wth)
    wrad = wth * np.sin(th) * _hot.smooth_cut(th, tin, tc) * (2.0 * np.pi / n_ang)
    ph = 2.0 * np.pi * np.arange(n_ang) / n_ang
    e1, e2 = _frame(c)
    ct, st = np.cos(th)[:, None], np.sin(th)[:, None]
    cp, sp = np.cos(ph)[None, :], np.sin(ph)[None, :]
    # dirs[t, a, b] for radial index a, angular index b
    dirs = (ct[None, :, :, None] * c[:, None, None, :]
            + (st * cp)[None, :, :, None] * e1[:, None, None, :]
            + (st * sp)[None, :, :, None] * e2[:, None, None, :])
    nt = c.shape[0]
    dirs = dirs.reshape(nt, -1, 3)
    pts, nrm, jac = grid.geometry(dirs)
    w = np.broadcast_to(np.repeat(wrad, n_ang)[None, :], jac.shape) * jac
    idx, wts = grid.stencil(dirs)
    return CapRule(pts, nrm, np.ascontiguousarray(w), idx, wts)


# --------------------------------------------------------------- moments
@dataclass
class Moments:
    """Kernel moments at targets (see module docstring)."""

    P: np.ndarray
    G: np.ndarray
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __iadd__(self, other: "Moments"):
        self.P += other.P
        self.G += other.G
        self.A += other.A
        self.C += other.C
        self.D += other.D
        return self

    def take(self, sel) -> "Moments":
        return Moments(self.P[sel], self.G[sel], self.A[sel], self.C[sel], self.D[sel])


def _as_densities(n, scal, vec):
    scal = np.zeros((n, 0), complex) if scal is None else np.asarray(scal, dtype=complex).reshape(n, -1)
    vec = np.zeros((n, 0, 3), complex) if vec is None else np.asarray(vec, dtype=complex).reshape(n, -1, 3)
    return scal, vec


def _add_side_terms(m: Moments, normals, scal_x, vec_x, side):
    """One-sided limits from principal values: side=+1 exterior, -1 interior."""
    s = -0.5 * side[:, None]
    m.G += (s[:, :, None] * scal_x[:, :, None]) * normals[:, None, :]
    m.C += s[:, :, None] * np.cross(normals[:, None, :], vec_x)
    m.D += s * np.einsum("ti,tki->tk", normals, vec_x)


def layer_moments(lam: float, grid: SurfaceGrid, scal=None, vec=None, targets=None, *,
                  node_targets: np.ndarray | None = None, side=None, tangent: bool = True,
                  backend: str | None = None) -> Moments:
    """Kernel moments of surface densities at arbitrary targets.

    Parameters
    ----------
    scal, vec : nodal densities of shape (N, ks) and (N, kv, 3).
    targets : (nt, 3) points, or None when ``node_targets`` is given.
    node_targets : indices of grid nodes used as targets.  The gradient-type
        moments there are principal values unless ``side`` is given.
    side : None, or +1 / -1 (scalar or per target) to request the exterior /
        interior limit on S.  Off-surface targets ignore it.
    tangent : project interpolated vector densities onto the tangent plane.
    """
    n = grid.n
    scal, vec = _as_densities(n, scal, vec)
    if node_targets is not None:
        node_targets = np.asarray(node_targets, dtype=np.int64)
        x = grid.nodes[node_targets]
        sig = grid.dirs[node_targets]
        d = np.zeros(len(node_targets))
        rfoot = np.linalg.norm(x - grid.center, axis=1)
    else:
        x = np.asarray(targets, dtype=float).reshape(-1, 3)
        sig, d, foot = grid.locate(x)
        rfoot = np.linalg.norm(foot - grid.center, axis=1)
    nt = x.shape[0]
    d_ang = np.abs(d) / rfoot
    near = d_ang < grid.near_angle
    tc = grid.cap_angle
    out = Moments(*_hot.shared_sum(x, grid.nodes, grid.weights, scal, vec, lam,
                                   cut=(near, sig, grid.dirs, 0.25 * tc, tc), backend=backend))
    on = d_ang <= ON_SURFACE_REL
    if np.any(near):
        lev = cap_levels(grid, np.where(on, 0.0, d_ang))
        for k in np.unique(lev[near]):
            sel = np.nonzero(near & (lev == k))[0]
            m_per = (k + 1) * CAP_GAUSS * CAP_ANGULAR
            step = max(1, CAP_BATCH_NODES // m_per)
            for lo in range(0, len(sel), step):
                part = sel[lo:lo + step]
                cap = build_cap(grid, sig[part], int(k))
                sc = _hot.gather(scal, cap.idx, cap.wts, backend=backend)
                vc = _hot.gather(vec, cap.idx, cap.wts, backend=backend)
                if tangent and vc.shape[2]:
                    vc = vc - np.einsum("tmki,tmi->tmk", vc, cap.normals)[..., None] * cap.normals[:, :, None, :]
                P, G, A, C, D = _hot.own_sum(x[part], cap.points, cap.weights, sc, vc, lam, backend=backend)
                out.P[part] += P
                out.G[part] += G
                out.A[part] += A
                out.C[part] += C
                out.D[part] += D
    # one-sided limits for on-surface targets
    sides = np.zeros(nt)
    if side is not None:
        sides = np.where(on, np.broadcast_to(np.asarray(side, dtype=float), (nt,)), 0.0)
    if node_targets is None:
        # points sitting on S to rounding level take the side of their offset
        auto = on & (sides == 0.0) & (d != 0.0)
        sides = np.where(auto, np.sign(d), sides)
    if np.any(sides != 0.0):
        if node_targets is not None:
            sx = scal[node_targets]
            vx = vec[node_targets]
            nx = grid.normals[node_targets]
        else:
            _, nx, _ = grid.geometry(sig)
            sx = grid.interpolate(scal, sig) if scal.shape[1] else np.zeros((nt, 0), complex)
            vx = grid.interpolate(vec, sig) if vec.shape[1] else np.zeros((nt, 0, 3), complex)
        _add_side_terms(out, nx, sx, vx, sides)
    return out


def volume_moments(lam: float, density: VolumeDensity, targets, scal=None, vec=None,
                   backend: str | None = None) -> Moments:
    """Kernel moments of a volume quadrature with equivalent-ball self cells."""
    x = np.asarray(targets, dtype=float).reshape(-1, 3)
    m = density.size
    scal, vec = _as_densities(m, scal, vec)
    return Moments(*_hot.shared_sum(x, density.nodes, density.weights, scal, vec, lam,
                                    blob=density.blob_radii, backend=backend))


# ------------------------------------------------------------ public API
def _check_off_surface(grid: SurfaceGrid, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, d, foot = grid.locate(x)
    if np.any(np.abs(d) <= ON_SURFACE_REL * np.linalg.norm(foot - grid.center, axis=1)):
        raise DomainError("target lies on S; use boundary_limit_velocity")
    return x


def _squeeze(x_in, arr):
    return arr[0] if np.ndim(x_in) == 1 else arr


def single_layer(lam: float, density: LayerDensity, x, backend: str | None = None):
    """Single-layer potential sum w_i Gamma(x - y_i) zeta_i off S."""
    xs = _check_off_surface(density.grid, x)
    if density.is_vector:
        m = layer_moments(lam, density.grid, vec=density.values[:, None, :], targets=xs,
                          tangent=False, backend=backend)
        return _squeeze(x, m.A[:, 0, :])
    m = layer_moments(lam, density.grid, scal=density.values[:, None], targets=xs, backend=backend)
    return _squeeze(x, m.P[:, 0])


def grad_single_layer(lam: float, density: LayerDensity, x, backend: str | None = None):
    """Gradient of the single layer; (..., 3) for scalar and (..., 3, 3) Jacobian for vector densities.

    For vector densities entry [k, i] is d_i of component k.
    """
    xs = _check_off_surface(density.grid, x)
    vals = density.values if density.is_vector else density.values[:, None]
    m = layer_moments(lam, density.grid, scal=vals, targets=xs, backend=backend)
    out = m.G if density.is_vector else m.G[:, 0, :]
    return _squeeze(x, out)


def volume_potential(lam: float, w: VolumeDensity, x, backend: str | None = None):
    """sum_q v_q Gamma(x - x_q) w_q, ball-smeared near each node."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    vals = np.asarray(w.values)
    if vals.ndim == 2:
        out = volume_moments(lam, w, xs, vec=vals[:, None, :], backend=backend).A[:, 0, :]
    else:
        out = volume_moments(lam, w, xs, scal=vals[:, None], backend=backend).P[:, 0]
    return _squeeze(x, out)


def grad_volume_potential(lam: float, w: VolumeDensity, x, backend: str | None = None):
    """Gradient (scalar values) or Jacobian [k, i] = d_i N[w]_k (vector values)."""
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    vals = np.asarray(w.values)
    vec_case = vals.ndim == 2
    m = volume_moments(lam, w, xs, scal=vals if vec_case else vals[:, None], backend=backend)
    out = m.G if vec_case else m.G[:, 0, :]
    return _squeeze(x, out)


def boundary_limit_velocity(lam: float, g: np.ndarray, xi: np.ndarray, w: VolumeDensity | None,
                            grid: SurfaceGrid, nodes=None, side: str = "exterior",
                            divergence_free: bool = True, backend: str | None = None) -> np.ndarray:
    """One-sided trace of u = -grad phi + curl A + lam A at grid nodes.

    Principal values of the layer terms plus the side term
    +-(g eta - eta x xi)/2 (``side`` is "exterior" or "interior").
    """
    if side not in ("exterior", "interior"):
        raise ValueError("side must be 'exterior' or 'interior'")
    idx = np.arange(grid.n) if nodes is None else np.asarray(nodes, dtype=np.int64)
    if np.any((idx < 0) | (idx >= grid.n)):
        raise DomainError("boundary limits are available at grid nodes only")
    sgn = 1.0 if side == "exterior" else -1.0
    m = layer_moments(lam, grid, scal=np.asarray(g)[:, None], vec=np.asarray(xi)[:, None, :],
                      node_targets=idx, side=sgn, backend=backend)
    u = -m.G[:, 0] + m.C[:, 0] + lam * m.A[:, 0]
    if w is not None and w.size:
        u += volume_velocity(lam, w, grid.nodes[idx], divergence_free, backend=backend)
    return u


def volume_velocity(lam: float, w: VolumeDensity, x, divergence_free: bool = True,
                    backend: str | None = None) -> np.ndarray:
    """Volume part curl N[w] + lam N[w] + (1/lam) grad N[div w] at points."""
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    use_div = not divergence_free and w.div_values is not None
    scal = np.asarray(w.div_values)[:, None] if use_div else None
    m = volume_moments(lam, w, x, scal=scal, vec=np.asarray(w.values)[:, None, :], backend=backend)
    u = m.C[:, 0] + lam * m.A[:, 0]
    if use_div:
        u += m.G[:, 0] / lam
    return u


def richardson_limit(sampler: Callable[[np.ndarray], np.ndarray], points, normals, h: float,
                     side: str = "exterior") -> np.ndarray:
    """One-sided limit from samples at offsets 4h, 2h, h along +-normal.

    Second-order Richardson combination (8 f(h) - 6 f(2h) + f(4h)) / 3.
    """
    s = 1.0 if side == "exterior" else -1.0
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    f = {k: np.asarray(sampler(points + s * k * h * normals)) for k in (1, 2, 4)}
    return (8.0 * f[1] - 6.0 * f[2] + f[4]) / 3.0


def decay_exponent_fit(sampler: Callable[[np.ndarray], np.ndarray], radii, directions,
                       center=(0.0, 0.0, 0.0)) -> float:
    """Negated least-squares slope of log max_sigma |f(R sigma)| against log R."""
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3 or radii.max() / radii.min() < 4.0:
        raise ValueError("need at least 3 radii spanning a factor of 4")
    dirs = np.asarray(directions, dtype=float).reshape(-1, 3)
    dirs = dirs / np.linalg.norm(dirs, axis=1)[:, None]
    amp = []
    for R in radii:
        vals = np.asarray(sampler(np.asarray(center) + R * dirs))
        mag = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals.reshape(len(dirs), -1), axis=1)
        amp.append(np.max(mag))
    amp = np.asarray(amp)
    if np.any(amp == 0.0):
        raise ValueError("field vanishes on a sampling sphere; decay exponent undefined")
    slope = np.polyfit(np.log(radii), np.log(amp), 1)[0]
    return float(-slope)

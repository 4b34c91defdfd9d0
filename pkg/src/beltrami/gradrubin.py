"""Modified Grad-Rubin iteration for generalized Beltrami fields.

Starting from a radiating seed v_0 with u_0 = Re v_0, each step

    (a) transports phi0 from Sigma along the stream tube of u_n  -> phi_n,
    (b) solves curl v - lam v = phi_n u_n in Omega, v . eta = u_0 . eta on S,
    (c) sets u_{n+1} = Re v_{n+1}.

By linearity v_{n+1} = v_0 + p_{n+1}, where p_{n+1} solves the same problem
with zero normal data, so only the perturbation p is computed numerically and
the seed stays analytic.  The boundary operator is assembled and factored
once per run.  Convergence is monitored with discrete C^0, C^1 and Hoelder
surrogates over fixed probe sets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import bie
from .flow import (Controls, StreamTube, TransportedScalar, TubeClass, TubeClassificationError, bump,
                   build_stream_tube, classify_tube, transport_solve, tube_quadrature)
from .neumann_solver import CompatibilityError, FieldRepresentation, check_compatibility, solve_nib
from .seeds import FourierBesselSpec, fd_curl, fd_divergence, fd_jacobian, seed_field
from .surface import SurfaceGrid, SurfacePatch

logger = logging.getLogger(__name__)


class TubeLostError(TubeClassificationError):
    """The iterate no longer carries a classified stream tube from Sigma."""


class ConvergenceAlarm(RuntimeError):
    """Contraction ratios stayed above the alarm threshold after all retries."""


@dataclass(frozen=True)
class IterationControls:
    """Knobs of the outer iteration.

    ``amplitude`` and ``support`` define phi0 = amplitude * bump(|s| / support)
    on the chart disk of Sigma unless an explicit profile is passed to
    ``run_iteration``.
    """

    amplitude: float = 0.05
    support: float = 0.8
    max_iters: int = 8
    eps_stop: float = 1e-6
    alarm: float = 0.9
    max_retries: int = 3
    n_probes: int = 200
    n_pairs: int = 100
    probe_radii: tuple[float, float] = (1.2, 3.0)
    holder_alpha: float = 0.5
    fd_step: float = 1e-3
    n_rho: int = 4
    n_beta: int = 8
    n_t: int = 32
    tube_max_time: float = 200.0
    compat_tol: float = 1e-2
    table_depth_nodes: int = 8
    flow: Controls = Controls()
    seed: int = 0

    def __post_init__(self):
        if self.eps_stop <= 0.0:
            raise ValueError("eps_stop must be positive")
        if not 0.0 < self.alarm < 1.0:
            raise ValueError("alarm threshold must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.support <= 1.0:
            raise ValueError("support must lie in (0, 1]")
        if self.probe_radii[0] <= 0.0 or self.probe_radii[1] <= self.probe_radii[0]:
            raise ValueError("probe radii must be increasing and positive")


# ------------------------------------------------------------------ norms
@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Fixed sample points for discrete norms: probes plus Hoelder pairs."""

    points: np.ndarray
    pair_a: np.ndarray
    pair_b: np.ndarray
    fd_step: float
    alpha: float

    @classmethod
    def build(cls, grid: SurfaceGrid, rng: np.random.Generator, n_probes: int = 200, n_pairs: int = 100,
              radii: tuple[float, float] = (1.2, 3.0), fd_step: float = 1e-3, alpha: float = 0.5) -> "ProbeSet":
        """Probes uniform in the shell radii[0] r(sigma) < |x - c| < radii[1] r(sigma).

        Pair separations are uniform in [h, 10 h] with h the grid spacing.
        """
        def shell(n):
            d = rng.normal(size=(n, 3))
            d /= np.linalg.norm(d, axis=1)[:, None]
            t = np.cbrt(rng.uniform(radii[0] ** 3, radii[1] ** 3, size=n))
            return grid.center + (t * grid.radial(d))[:, None] * d

        pts = shell(n_probes)
        a = shell(n_pairs)
        h = grid.spacing
        b = np.empty_like(a)
        todo = np.arange(n_pairs)
        for _ in range(100):
            e = rng.normal(size=(todo.size, 3))
            e /= np.linalg.norm(e, axis=1)[:, None]
            b[todo] = a[todo] + rng.uniform(h, 10.0 * h, size=todo.size)[:, None] * e
            # partners must stay a few FD steps away from S
            todo = todo[grid.implicit(b[todo]) <= 4.0 * fd_step]
            if todo.size == 0:
                break
        else:
            raise ValueError("could not place Hoelder pairs outside the domain")
        return cls(pts, a, b, fd_step, alpha)

    @property
    def all_points(self) -> np.ndarray:
        return np.concatenate([self.points, self.pair_a, self.pair_b])


@dataclass(frozen=True, eq=False)
class FieldSamples:
    """Values at probes and pair points, plus FD Jacobians at probes."""

    values: np.ndarray
    jacobians: np.ndarray
    pair_a: np.ndarray
    pair_b: np.ndarray

    @classmethod
    def of(cls, f: Callable, probes: ProbeSet) -> "FieldSamples":
        allv = np.real(np.asarray(f(probes.all_points)))
        n, m = len(probes.points), len(probes.pair_a)
        jac = np.real(fd_jacobian(f, probes.points, probes.fd_step))
        return cls(allv[:n], jac, allv[n:n + m], allv[n + m:])

    @classmethod
    def zeros(cls, probes: ProbeSet) -> "FieldSamples":
        n, m = len(probes.points), len(probes.pair_a)
        return cls(np.zeros((n, 3)), np.zeros((n, 3, 3)), np.zeros((m, 3)), np.zeros((m, 3)))

    def __sub__(self, other: "FieldSamples") -> "FieldSamples":
        return FieldSamples(self.values - other.values, self.jacobians - other.jacobians,
                            self.pair_a - other.pair_a, self.pair_b - other.pair_b)


@dataclass(frozen=True)
class DiscreteNorm:
    """Sup of |f|, sup of the FD gradient and the sampled Hoelder quotient."""

    c0: float
    grad: float
    holder: float

    @property
    def c1(self) -> float:
        return self.c0 + self.grad

    @classmethod
    def of(cls, samples: FieldSamples, probes: ProbeSet) -> "DiscreteNorm":
        c0 = float(np.max(np.linalg.norm(samples.values, axis=1)))
        grad = float(np.max(np.linalg.norm(samples.jacobians, ord=2, axis=(1, 2))))
        sep = np.linalg.norm(probes.pair_b - probes.pair_a, axis=1)
        q = np.linalg.norm(samples.pair_b - samples.pair_a, axis=1) / sep**probes.alpha
        return cls(c0, grad, float(np.max(q)))


# ------------------------------------------------------------------ state
@dataclass(eq=False)
class IterationEntry:
    """One step n: phi_n on the tube of u_n and the perturbation of v_{n+1}."""

    n: int
    representation: FieldRepresentation | None
    phi: TransportedScalar | None
    tube: StreamTube | None
    tube_class: TubeClass | None
    delta: DiscreteNorm
    ratio: float | None
    compat_residual: float = 0.0
    density_size: int = 0
    samples: FieldSamples | None = field(default=None, repr=False)
    table: Callable | None = field(default=None, repr=False)


@dataclass(eq=False)
class IterationState:
    """Append-only record of a Grad-Rubin run."""

    lam: float
    seed: FourierBesselSpec
    grid: SurfaceGrid
    patch: SurfacePatch
    controls: IterationControls
    probes: ProbeSet
    amplitude_scale: float = 1.0
    entries: list[IterationEntry] = field(default_factory=list)
    converged: bool = False
    flagged: bool = False
    retries: int = 0
    u0_norm: DiscreteNorm | None = None

    def append(self, entry: IterationEntry) -> None:
        if entry.n != len(self.entries):
            raise ValueError(f"entry index {entry.n} does not follow {len(self.entries) - 1}")
        if entry.n == 0 and entry.ratio is not None:
            raise ValueError("ratio is undefined for the first entry")
        self.entries.append(entry)

    @property
    def ratios(self) -> list[float]:
        return [e.ratio for e in self.entries if e.ratio is not None]

    @property
    def seed_field(self) -> Callable:
        return seed_field(self.seed).real()

    def field(self, n: int | None = None) -> Callable:
        """Real sampler of u_{n+1} (the last iterate by default)."""
        u0 = self.seed_field
        if not self.entries:
            return u0
        e = self.entries[-1 if n is None else n]
        return _iterate_field(u0, e.representation)

    def tracing_field(self, n: int | None = None) -> Callable:
        """u_{n+1} with the near-surface layer part read from a table (used for tracing)."""
        if not self.entries:
            return self.seed_field
        e = self.entries[-1 if n is None else n]
        if e.representation is None:
            return self.seed_field
        if e.table is None:
            e.table = e.representation.tabulated(self.controls.table_depth_nodes)
        return _iterate_field(self.seed_field, e.table)

    def phi(self, n: int | None = None) -> Callable:
        """Transported factor phi_n (the last one by default); zero sampler when phi0 vanishes."""
        if not self.entries:
            return lambda x: np.zeros(np.shape(x)[:-1])
        e = self.entries[-1 if n is None else n]
        if e.phi is None:
            return lambda x: np.zeros(np.shape(x)[:-1])
        return e.phi


def _iterate_field(u0: Callable, pert: Callable | None) -> Callable:
    """u0 + Re p for a perturbation sampler p (a representation or its tabulated form)."""
    if pert is None:
        return u0

    def u(x):
        x = np.asarray(x, dtype=float)
        return u0(x) + np.real(pert(x))

    return u


def _exit_candidates(grid: SurfaceGrid, tube: StreamTube) -> np.ndarray:
    """Outflow nodes that can carry phi: inside the angular hull of the exit points."""
    ex = tube.exit_points[tube.returning] - grid.center
    ex /= np.linalg.norm(ex, axis=1)[:, None]
    c = ex.mean(axis=0)
    c /= np.linalg.norm(c)
    reach = float(np.max(np.arccos(np.clip(ex @ c, -1.0, 1.0))))
    ang = np.arccos(np.clip(grid.dirs @ c, -1.0, 1.0))
    return np.nonzero(ang <= reach + grid.spacing)[0]


def _step(lam, grid, patch, u_n: Callable, phi0: Callable, ctl: IterationControls, op, backend):
    """Transport, tube quadrature and NIB solve for one iterate."""
    tube = build_stream_tube(u_n, patch, ctl.flow, n_rho=ctl.n_rho, n_beta=ctl.n_beta,
                             max_time=ctl.tube_max_time)
    try:
        tc = classify_tube(tube)
    except TubeClassificationError as exc:
        raise TubeLostError(f"iterate lost its stream tube: {exc}", offending=exc.offending) from exc
    phi = transport_solve(u_n, tube, phi0, controls=ctl.flow)
    w = tube_quadrature(tube, phi0, u_n, n_t=ctl.n_t)
    if not w.size:
        return tube, tc, phi, None, 0.0, 0
    phi_s = phi.surface_values(_exit_candidates(grid, tube))
    w_trace = phi_s[:, None] * np.real(np.asarray(u_n(grid.nodes)))
    resid = check_compatibility(lam, grid, None, w_trace)
    flux = float(np.sum(grid.weights * np.abs(np.sum(w_trace * grid.normals, axis=1))))
    if resid > ctl.compat_tol * max(flux, 1e-300):
        raise CompatibilityError(f"flux residual {resid:.3e} exceeds {ctl.compat_tol:.1e} x flux {flux:.3e}")
    logger.info("compatibility residual %.3e (flux scale %.3e)", resid, flux)
    rep = solve_nib(lam, grid, w, None, op=op, w_trace=w_trace, tol_c=math.inf, backend=backend)
    return tube, tc, phi, rep, resid / max(flux, 1e-300), w.size


def run_iteration(lam: float, grid: SurfaceGrid, patch: SurfacePatch, seed: FourierBesselSpec,
                  controls: IterationControls = IterationControls(), phi0: Callable | None = None, *,
                  op: bie.BoundaryOperator | None = None, backend: str | None = None) -> IterationState:
    """Run the modified Grad-Rubin scheme from the seed until the update stalls.

    Stops when the C^0 size of u_{n+1} - u_n drops below eps_stop * |u_0|_0.
    A ratio above the alarm threshold halves the phi0 amplitude and restarts,
    at most ``max_retries`` times; the final state is flagged if the alarm
    persists.
    """
    if lam != seed.lam:
        raise ValueError("seed and iteration use different lambda")
    ctl = controls
    profile = phi0 if phi0 is not None else bump(ctl.amplitude, ctl.support)
    probes = ProbeSet.build(grid, np.random.default_rng(ctl.seed), ctl.n_probes, ctl.n_pairs,
                            ctl.probe_radii, ctl.fd_step, ctl.holder_alpha)
    u0 = seed_field(seed).real()
    u0_norm = DiscreteNorm.of(FieldSamples.of(u0, probes), probes)
    if op is None:
        op = bie.assemble_T(lam, grid, backend=backend)
    op.factor()
    scale = 1.0
    for attempt in range(ctl.max_retries + 1):
        state = IterationState(lam, seed, grid, patch, ctl, probes, scale, retries=attempt, u0_norm=u0_norm)
        phi_n = (lambda s, f=scale: f * profile(s))
        _iterate(state, u0, phi_n, op, backend)
        if not state.flagged or attempt == ctl.max_retries:
            return state
        scale *= 0.5
        logger.warning("contraction alarm; retrying with phi0 amplitude scaled by %g", scale)
    return state


def _iterate(state: IterationState, u0: Callable, phi0: Callable, op, backend) -> None:
    ctl = state.controls
    probes = state.probes
    prev = FieldSamples.zeros(probes)
    u_n = u0
    prev_norm = None
    for n in range(ctl.max_iters):
        tube, tc, phi, rep, compat, size = _step(state.lam, state.grid, state.patch, u_n, phi0, ctl, op, backend)
        cur = FieldSamples.zeros(probes) if rep is None else \
            FieldSamples.of(lambda x, r=rep: np.real(r.eval_u(x)), probes)
        d = DiscreteNorm.of(cur - prev, probes)
        ratio = None
        if n > 0:
            ratio = d.c1 / prev_norm.c1 if prev_norm.c1 > 0.0 else 0.0
        state.append(IterationEntry(n, rep, phi if rep is not None else None, tube, tc, d, ratio,
                                    compat, size, cur))
        logger.info("iterate %d: |du|_0=%.3e |du|_1=%.3e ratio=%s", n, d.c0, d.c1,
                    "-" if ratio is None else f"{ratio:.3f}")
        if ratio is not None and ratio > ctl.alarm:
            state.flagged = True
            logger.warning("ratio %.3f above alarm %.2f at iterate %d", ratio, ctl.alarm, n)
            return
        if d.c0 < ctl.eps_stop * state.u0_norm.c0:
            state.converged = True
            return
        prev, prev_norm = cur, d
        u_n = state.tracing_field(n)
    logger.warning("no convergence after %d iterates", ctl.max_iters)


# ------------------------------------------------------------------ certificate
@dataclass(frozen=True)
class ResidualCertificate:
    """Max Beltrami and divergence residuals at probes, relative to max |u|."""

    beltrami: float
    divergence: float
    scale: float
    beltrami_inside: float | None = None
    beltrami_outside: float | None = None
    fd_step: float = 1e-3

    @property
    def beltrami_rel(self) -> float:
        return self.beltrami / self.scale

    @property
    def divergence_rel(self) -> float:
        return self.divergence / self.scale


def residual_certificate(u: Callable, phi, lam: float, probes, h: float = 1e-3,
                         inside: np.ndarray | None = None) -> ResidualCertificate:
    """|curl u - (lam + phi) u| and |div u| by 4th-order central differences.

    ``phi`` is a callable, an array of its values at the probes, or None for
    phi = 0.  ``inside`` optionally marks probes in the tube so both parts
    are reported.
    """
    x = np.asarray(probes, dtype=float).reshape(-1, 3)
    f = lambda z: np.real(np.asarray(u(z)))
    ux = f(x)
    if phi is None:
        ph = np.zeros(len(x))
    elif callable(phi):
        ph = np.real(np.asarray(phi(x))).reshape(-1)
    else:
        ph = np.asarray(phi, dtype=float).reshape(-1)
    res = np.linalg.norm(fd_curl(f, x, h) - (lam + ph)[:, None] * ux, axis=1)
    div = np.abs(fd_divergence(f, x, h))
    scale = float(np.max(np.linalg.norm(ux, axis=1)))
    kin = kout = None
    if inside is not None:
        inside = np.asarray(inside, dtype=bool)
        kin = float(np.max(res[inside])) if np.any(inside) else 0.0
        kout = float(np.max(res[~inside])) if np.any(~inside) else 0.0
    return ResidualCertificate(float(np.max(res)), float(np.max(div)), scale, kin, kout, h)


def tube_probes(tube: StreamTube, phi0: Callable, n_per_line: int = 5, margin: float = 4e-3) -> np.ndarray:
    """Points inside the support of the transported profile.

    Taken on the tube lines whose chart node has phi0 != 0, at interior
    times, and kept only when they lie more than ``margin`` outside S.
    """
    grid = tube.patch.parent
    amp = phi0(tube.s_nodes)
    frac = (np.arange(n_per_line) + 0.5) / n_per_line
    pts = [tube.position(k, frac * tube.T0[k]) for k in np.nonzero((amp != 0.0) & tube.returning)[0]]
    if not pts:
        return np.zeros((0, 3))
    pts = np.concatenate(pts)
    return pts[grid.implicit(pts) > margin]


@dataclass(frozen=True)
class IterationCertificate:
    """Residual of the final iterate against the seed's finite-difference baseline.

    ``baseline`` is the larger of the seed's measured residual and the seed
    acceptance floor ``SEED_RESIDUAL_FLOOR * scale``; probes with phi != 0 are
    the inside part.
    """

    residual: ResidualCertificate
    seed_residual: float
    baseline: float
    n_inside: int
    n_outside: int
    distance_to_seed: float
    seed_c0: float

    @property
    def residual_ratio(self) -> float:
        return self.residual.beltrami / self.baseline

    @property
    def relative_distance(self) -> float:
        return self.distance_to_seed / self.seed_c0


SEED_RESIDUAL_FLOOR = 1e-5


def certify(state: IterationState, n_per_line: int = 5) -> IterationCertificate:
    """Certificate of the last iterate at the shell probes plus tube-interior probes."""
    ctl = state.controls
    u = state.field()
    u0 = state.seed_field
    shell = state.probes.points
    last = next((e for e in reversed(state.entries) if e.tube is not None), None)
    phi = state.phi()
    phi0 = getattr(phi, "phi0", None)
    extra = np.zeros((0, 3))
    if last is not None and phi0 is not None:
        extra = tube_probes(last.tube, phi0, n_per_line, 4.0 * ctl.fd_step)
    pts = np.concatenate([shell, extra])
    ph = np.real(np.asarray(phi(pts))).reshape(-1)
    inside = ph != 0.0
    res = residual_certificate(u, ph, state.lam, pts, ctl.fd_step, inside)
    seed = residual_certificate(u0, None, state.lam, pts, ctl.fd_step)
    baseline = max(seed.beltrami, SEED_RESIDUAL_FLOOR * seed.scale)
    dist = float(np.max(np.linalg.norm(u(shell) - u0(shell), axis=1)))
    logger.info("certificate: residual %.3e (inside %s, outside %s), baseline %.3e, %d inside probes",
                res.beltrami, res.beltrami_inside, res.beltrami_outside, baseline, int(inside.sum()))
    return IterationCertificate(res, seed.beltrami, baseline, int(inside.sum()), int((~inside).sum()),
                                dist, state.u0_norm.c0)


def first_integral_defect(u: Callable, phi: Callable, points, h: float = 1e-3) -> float:
    """max |u . grad phi| / (max |u| max |grad phi|) by central differences of phi."""
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    grad = np.empty_like(x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        grad[:, k] = (np.asarray(phi(x + e)) - np.asarray(phi(x - e))) / (2.0 * h)
    ux = np.real(np.asarray(u(x)))
    num = np.max(np.abs(np.sum(ux * grad, axis=1)))
    den = np.max(np.linalg.norm(ux, axis=1)) * np.max(np.linalg.norm(grad, axis=1))
    return float(num / den) if den > 0.0 else float(num)


# ------------------------------------------------------------------ report
@dataclass(frozen=True)
class ContractionRow:
    n: int
    du0: float
    du1: float
    ratio: float | None


@dataclass(frozen=True)
class ContractionTable:
    rows: list[ContractionRow]
    non_monotone: list[int]
    complete: bool

    @property
    def ratios(self) -> list[float]:
        return [r.ratio for r in self.rows if r.ratio is not None]


def contraction_report(state) -> ContractionTable:
    """Table {n, |du|_0, |du|_1, r_n}; also flags n where r_n increased over r_{n-1}.

    ``state`` is an IterationState or any sequence of DiscreteNorm values.
    Fewer than 3 iterates give a table marked incomplete.
    """
    norms = [e.delta for e in state.entries] if isinstance(state, IterationState) else list(state)
    rows = []
    for n, d in enumerate(norms):
        r = None
        if n > 0:
            prev = norms[n - 1].c1
            r = d.c1 / prev if prev > 0.0 else 0.0
        rows.append(ContractionRow(n, d.c0, d.c1, r))
    flags = [rows[i].n for i in range(2, len(rows)) if rows[i].ratio > rows[i - 1].ratio * (1.0 + 1e-12)]
    return ContractionTable(rows, flags, len(rows) >= 3)

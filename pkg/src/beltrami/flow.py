"""Streamlines, stream tubes, transport of first integrals and tube quadrature.

Trajectories are integrated in batches by an embedded Dormand-Prince 5(4)
pair with per-trajectory step control and 4th-order dense output, so a whole
family of streamlines costs one field evaluation per stage.  Boundary
crossings are located by bisection on the dense output.

A stream tube is parametrised by (t, s) with s in the unit disk D charting a
cap Sigma of S: phi(t, s) = X(t; mu(s)).  Each line is followed until it
re-enters G through S (time T0(s)) and then on into G to measure how deep it
goes, which is what the (rho0, T, delta) classification needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .potentials import VolumeDensity
from .seeds import fd_jacobian
from .surface import SurfaceGrid, SurfacePatch

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# dense output: y(t0 + th h) = y0 + h K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class TubeClassificationError(RuntimeError):
    """The stream tube from Sigma is not a (rho0, T, delta)-tube."""

    def __init__(self, message: str, offending: np.ndarray | None = None):
        super().__init__(message)
        self.offending = offending


@dataclass(frozen=True)
class Controls:
    """Integrator controls."""

    rtol: float = 1e-9
    atol: float = 1e-11
    h0: float = 1e-2
    h_max: float = 0.5
    max_steps: int = 20000
    locate_tol: float = 1e-12


@dataclass
class DenseTrajectory:
    """Piecewise-quartic dense output of one trajectory."""

    t0: np.ndarray   # (K,) segment start times
    h: np.ndarray    # (K,)
    y0: np.ndarray   # (K, d)
    Q: np.ndarray    # (K, d, 4)

    @property
    def t_end(self) -> float:
        return float(self.t0[-1] + self.h[-1]) if self.t0.size else 0.0

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.t0.size == 0:
            raise ValueError("empty trajectory")
        k = np.clip(np.searchsorted(self.t0, t, side="right") - 1, 0, len(self.t0) - 1)
        th = (t - self.t0[k]) / self.h[k]
        pw = np.stack([th, th**2, th**3, th**4], axis=-1)
        return self.y0[k] + self.h[k][:, None] * np.einsum("kdj,kj->kd", self.Q[k], pw)


@dataclass
class Event:
    """Sign-change detector g(y); direction -1 (+ to -), +1 (- to +) or 0 (either)."""

    fn: Callable[[np.ndarray], np.ndarray]
    direction: int = -1
    terminal: bool = True
    name: str = "event"


@dataclass
class BatchResult:
    """Per-trajectory outcomes of ``integrate_batch``."""

    dense: list[DenseTrajectory]
    t_final: np.ndarray
    y_final: np.ndarray
    status: list[str]
    event_times: list[list[np.ndarray]]   # [traj][event] -> times
    event_points: list[list[np.ndarray]]  # [traj][event] -> points (k, d)
    steps: np.ndarray


def _bisect_events(fn, direction, dense_parts, t_lo, t_hi, tol):
    """Vectorised bisection of g(y(t)) on [t_lo, t_hi] for several trajectories."""
    lo = t_lo.copy()
    hi = t_hi.copy()
    g_lo = fn(dense_parts(lo))
    for _ in range(200):
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
            break
        mid = 0.5 * (lo + hi)
        g_mid = fn(dense_parts(mid))
        same = np.sign(g_mid) == np.sign(g_lo)
        same &= g_mid != 0.0
        lo = np.where(same, mid, lo)
        g_lo = np.where(same, g_mid, g_lo)
        hi = np.where(same, hi, mid)
    return hi


def integrate_batch(f: Field, y0: np.ndarray, t_max, controls: Controls = Controls(),
                    events: Sequence[Event] = ()) -> BatchResult:
    """Integrate y' = f(y) for a batch of initial states up to per-trajectory t_max."""
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    n, d = y0.shape
    t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (n,)).copy()
    t = np.zeros(n)
    y = y0.copy()
    h = np.full(n, controls.h0)
    k1 = np.asarray(f(y), dtype=float).reshape(n, d)
    active = t_max > 0.0
    status = ["done" if not a else "" for a in active]
    steps = np.zeros(n, dtype=int)
    segs: list[list] = [[] for _ in range(n)]
    ev_t = [[[] for _ in events] for _ in range(n)]
    ev_y = [[[] for _ in events] for _ in range(n)]
    g_old = [ev.fn(y[:, :3]) for ev in events]
    while np.any(active):
        idx = np.nonzero(active)[0]
        hi = np.minimum(h[idx], t_max[idx] - t[idx])
        yi = y[idx]
        K = np.empty((7, len(idx), d))
        K[0] = k1[idx]
        for s in range(1, 7):
            ys = yi + hi[:, None] * np.tensordot(np.asarray(_A[s]), K[:s], axes=(0, 0))
            K[s] = np.asarray(f(ys), dtype=float).reshape(len(idx), d)
        y_new = yi + hi[:, None] * np.tensordot(_B[:6], K[:6], axes=(0, 0))
        # K[6] is f at y_new since row 7 of A equals B
        err = hi[:, None] * np.tensordot(_E, K, axes=(0, 0))
        scale = controls.atol + controls.rtol * np.maximum(np.abs(yi), np.abs(y_new))
        en = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        ok = en <= 1.0
        fac = np.where(en == 0.0, 5.0, 0.9 * np.maximum(en, 1e-10) ** -0.2)
        fac = np.where(ok, np.clip(fac, 0.2, 5.0), np.clip(fac, 0.2, 1.0))
        h_next = np.minimum(hi * fac, controls.h_max)
        acc = idx[ok]
        if acc.size:
            Ka = K[:, ok]
            Q = np.einsum("smd,sj->mdj", Ka, _P)
            t_prev = t[acc].copy()
            for j, i in enumerate(acc):
                segs[i].append((t_prev[j], hi[ok][j], yi[ok][j], Q[j]))
            t[acc] = t_prev + hi[ok]
            y[acc] = y_new[ok]
            k1[acc] = K[6][ok]
            steps[acc] += 1
            # events on accepted steps
            stop = np.zeros(acc.size, dtype=bool)
            for e_i, ev in enumerate(events):
                g_new = ev.fn(y[acc][:, :3])
                go = g_old[e_i][acc]
                if ev.direction < 0:
                    cross = (go > 0.0) & (g_new <= 0.0)
                elif ev.direction > 0:
                    cross = (go < 0.0) & (g_new >= 0.0)
                else:
                    cross = ((go > 0.0) & (g_new <= 0.0)) | ((go < 0.0) & (g_new >= 0.0))
                if np.any(cross):
                    ci = np.nonzero(cross)[0]
                    hv = hi[ok][ci]
                    y0s = yi[ok][ci]
                    Qs = Q[ci]
                    t0s = t_prev[ci]

                    def dense_parts(tt, t0s=t0s, hv=hv, y0s=y0s, Qs=Qs):
                        th = (tt - t0s) / hv
                        pw = np.stack([th, th**2, th**3, th**4], axis=-1)
                        return (y0s + hv[:, None] * np.einsum("kdj,kj->kd", Qs, pw))[:, :3]

                    tc = _bisect_events(ev.fn, ev.direction, dense_parts, t0s, t0s + hv, controls.locate_tol)
                    yc = dense_parts(tc)
                    for j, c in enumerate(ci):
                        i = acc[c]
                        ev_t[i][e_i].append(tc[j])
                        ev_y[i][e_i].append(yc[j])
                        if ev.terminal and not stop[c]:
                            stop[c] = True
                            # truncate at the event
                            full = (tc[j] - t0s[j]) / hv[j]
                            th = full
                            pw = np.array([th, th**2, th**3, th**4])
                            y[i] = y0s[j] + hv[j] * Qs[j] @ pw
                            t[i] = tc[j]
                            status[i] = ev.name
                g_old[e_i][acc] = g_new
            finished = (t[acc] >= t_max[acc] * (1 - 1e-15)) & ~stop
            for j in np.nonzero(finished)[0]:
                status[acc[j]] = "max_time"
            over = (steps[acc] >= controls.max_steps) & ~stop & ~finished
            for j in np.nonzero(over)[0]:
                status[acc[j]] = "max_steps"
            active[acc[stop | finished | over]] = False
        h[idx] = h_next
        collapse = active[idx] & (h[idx] < 1e-14 * np.maximum(1.0, np.abs(t[idx])))
        for i in idx[collapse]:
            status[i] = "step_collapse"
            active[i] = False
            logger.warning("step-size collapse at t=%g", t[i])
    dense = []
    for i in range(n):
        if segs[i]:
            t0s, hs, ys, Qs = zip(*segs[i])
            dense.append(DenseTrajectory(np.array(t0s), np.array(hs), np.array(ys), np.array(Qs)))
        else:
            dense.append(DenseTrajectory(np.zeros(0), np.zeros(0), np.zeros((0, d)), np.zeros((0, d, 4))))
    ev_t_arr = [[np.array(v) for v in row] for row in ev_t]
    ev_y_arr = [[np.array(v).reshape(-1, 3) for v in row] for row in ev_y]
    return BatchResult(dense, t, y, status, ev_t_arr, ev_y_arr, steps)


# ---------------------------------------------------------------- streamlines
@dataclass
class Streamline:
    """Accepted-step samples plus the exit event of one trajectory."""

    times: np.ndarray
    points: np.ndarray
    event: str
    event_time: float | None
    event_point: np.ndarray | None
    dense: DenseTrajectory = field(repr=False, default=None)

    def sample(self, n: int) -> np.ndarray:
        ts = np.linspace(0.0, self.times[-1], n)
        return self.dense(ts)[:, :3]


def _signed(f: Field, sign: float) -> Field:
    if sign > 0:
        return lambda x: np.real(np.asarray(f(x)))
    return lambda x: -np.real(np.asarray(f(x)))


def _to_streamlines(res: BatchResult, y0: np.ndarray) -> list[Streamline]:
    out = []
    for i, dt in enumerate(res.dense):
        times = np.concatenate([[0.0], dt.t0 + dt.h]) if dt.t0.size else np.array([0.0])
        pts = np.concatenate([y0[i:i + 1, :3], dt.y0[1:, :3], res.y_final[i:i + 1, :3]]) if dt.t0.size \
            else y0[i:i + 1, :3]
        times[-1] = res.t_final[i]
        ev = res.status[i]
        if ev in ("max_time", "max_steps", "step_collapse", "done"):
            out.append(Streamline(times, pts, ev if ev != "done" else "max_time", None, None, dt))
        else:
            out.append(Streamline(times, pts, ev, float(res.t_final[i]), res.y_final[i, :3].copy(), dt))
    return out


def surface_event(surface, direction: int = -1, name: str = "surface") -> Event:
    """Crossing of S; ``surface`` is a SurfaceGrid or a callable level function."""
    fn = surface.implicit if isinstance(surface, SurfaceGrid) else surface
    return Event(fn, direction, True, name)


def integrate_streamlines(f: Field, x0, max_time: float, controls: Controls = Controls(),
                          surface=None, backward: bool = False, events: Sequence[Event] = ()) -> list[Streamline]:
    """Batched streamlines; stop on entering G through S when ``surface`` is given."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    evs = list(events)
    if surface is not None:
        evs.insert(0, surface_event(surface))
    res = integrate_batch(_signed(f, -1.0 if backward else 1.0), x0, max_time, controls, evs)
    return _to_streamlines(res, x0)


def integrate_streamline(f: Field, x0, max_time: float, controls: Controls = Controls(),
                         surface=None, backward: bool = False) -> Streamline:
    """Single adaptive streamline with optional boundary-crossing event."""
    return integrate_streamlines(f, np.asarray(x0, dtype=float)[None, :], max_time, controls,
                                 surface, backward)[0]


# ---------------------------------------------------------------- tubes
def disk_rule(n_rho: int, n_beta: int):
    """Polar product rule on the unit disk: Gauss in rho, trapezoid in beta."""
    xg, wg = np.polynomial.legendre.leggauss(n_rho)
    rho = 0.5 * (xg + 1.0)
    wr = 0.5 * wg * rho
    beta = 2.0 * np.pi * (np.arange(n_beta) + 0.5) / n_beta
    R, B = np.meshgrid(rho, beta, indexing="ij")
    s = np.stack([(R * np.cos(B)).ravel(), (R * np.sin(B)).ravel()], axis=1)
    w = (wr[:, None] * np.full(n_beta, 2.0 * np.pi / n_beta)[None, :]).ravel()
    return s, w


@dataclass(frozen=True)
class TubeClass:
    rho0: float
    T: float
    delta: float


@dataclass(eq=False)
class StreamTube:
    """(t, s) atlas of the flow from a cap Sigma."""

    patch: SurfacePatch
    s_nodes: np.ndarray
    s_weights: np.ndarray
    starts: np.ndarray
    normal_speed: np.ndarray
    det0: np.ndarray
    T0: np.ndarray
    exit_points: np.ndarray
    depth: np.ndarray
    lines: list[DenseTrajectory] = field(repr=False)
    inner: list[DenseTrajectory | None] = field(repr=False)
    status: list[str] = field(repr=False)
    jacobian_mode: str = "liouville"
    det_ratio_max_dev: float = 0.0

    @property
    def returning(self) -> np.ndarray:
        return np.isfinite(self.T0)

    def position(self, k: int, t) -> np.ndarray:
        return self.lines[k](t)[:, :3]

    def det_jacobian(self, k: int, t) -> np.ndarray:
        t = np.atleast_1d(t)
        if self.jacobian_mode == "variational":
            y = self.lines[k](t)
            return np.abs(np.linalg.det(y[:, 3:].reshape(-1, 3, 3).transpose(0, 2, 1)))
        return np.full(t.shape, self.det0[k])

    def sample_points(self, n_t: int = 20) -> np.ndarray:
        pts = []
        for k in np.nonzero(self.returning)[0]:
            pts.append(self.position(k, np.linspace(0.0, self.T0[k], n_t)))
        return np.concatenate(pts) if pts else np.zeros((0, 3))

    def proximity_radius(self, n_t: int = 40) -> float:
        """Mesh width of the sampled tube: across-line gap plus along-line step.

        Every point of the tube lies within this distance of ``sample_points(n_t)``.
        """
        k = np.nonzero(self.returning)[0]
        if k.size < 2:
            return 0.0
        P = np.stack([self.position(i, np.linspace(0.0, self.T0[i], n_t)) for i in k])  # (L, n_t, 3)
        along = float(np.max(np.linalg.norm(np.diff(P, axis=1), axis=2)))
        D = np.linalg.norm(P[:, None] - P[None, :], axis=3)  # (L, L, n_t)
        D[np.arange(k.size), np.arange(k.size)] = np.inf
        across = float(np.max(np.min(D, axis=1)))
        return across + along


def _variational_field(f: Field, jac: Callable) -> Field:
    def rhs(y):
        x = y[:, :3]
        M = y[:, 3:].reshape(-1, 3, 3)  # columns as rows: M[i, c, :]
        J = np.real(jac(x))
        dM = np.einsum("nij,ncj->nci", J, M)
        return np.concatenate([np.real(f(x)), dM.reshape(-1, 9)], axis=1)

    return rhs


def build_stream_tube(f: Field, patch: SurfacePatch, controls: Controls = Controls(), *,
                      n_rho: int = 6, n_beta: int = 12, max_time: float = 200.0,
                      jacobian: str = "liouville", jac: Callable | None = None,
                      depth_samples: int = 400) -> StreamTube:
    """Flow lines from the disk-rule nodes of Sigma, with return times and depths.

    ``jacobian`` is "liouville" (det constant in t, valid for divergence-free
    fields) or "variational" (columns of Jac(phi) integrated along the flow,
    using ``jac`` or a finite-difference Jacobian of f).
    """
    if jacobian not in ("liouville", "variational"):
        raise ValueError("jacobian must be 'liouville' or 'variational'")
    grid = patch.parent
    s, ws = disk_rule(n_rho, n_beta)
    starts = patch.mu(s)
    _, eta, _ = grid.geometry(patch.chart_dirs(s))
    u0 = np.real(np.asarray(f(starts)))
    un = np.sum(u0 * eta, axis=1)
    m1, m2 = patch.mu_derivatives(s)
    det0 = np.abs(np.sum(u0 * np.cross(m1, m2), axis=1))
    if np.min(un) <= 0.0:
        raise TubeClassificationError("u . eta is not positive on Sigma", offending=s[un <= 0.0])
    ev = surface_event(grid, -1, "enter")
    if jacobian == "variational":
        jf = jac if jac is not None else (lambda x: fd_jacobian(lambda z: np.real(f(z)), x, 1e-5))
        y0 = np.concatenate([starts, np.stack([u0, m1, m2], axis=1).reshape(-1, 9)], axis=1)
        rhs = _variational_field(f, jf)
    else:
        y0 = starts
        rhs = _signed(f, 1.0)
    res = integrate_batch(rhs, y0, max_time, controls, [ev])
    T0 = np.array([res.t_final[i] if res.status[i] == "enter" else np.inf for i in range(len(s))])
    exits = np.array([res.y_final[i, :3] if np.isfinite(T0[i]) else np.full(3, np.nan) for i in range(len(s))])
    # follow returning lines into G until they leave it again
    depth = np.zeros(len(s))
    inner: list = [None] * len(s)
    back = np.nonzero(np.isfinite(T0))[0]
    if back.size:
        out_ev = Event(grid.implicit, +1, True, "leave")
        r2 = integrate_batch(_signed(f, 1.0), exits[back], max_time, controls, [out_ev])
        for j, k in enumerate(back):
            dt = r2.dense[j]
            inner[k] = dt
            if dt.t0.size:
                tt = np.linspace(0.0, r2.t_final[j], depth_samples)
                depth[k] = max(0.0, -float(np.min(grid.implicit(dt(tt)[:, :3]))))
    dev = 0.0
    if jacobian == "variational":
        ratios = []
        for k in back:
            tt = np.linspace(0.0, T0[k], 20)
            yk = res.dense[k](tt)
            dets = np.abs(np.linalg.det(yk[:, 3:].reshape(-1, 3, 3).transpose(0, 2, 1)))
            ratios.append(np.max(np.abs(dets / det0[k] - 1.0)))
        dev = float(max(ratios)) if ratios else 0.0
    return StreamTube(patch, s, ws, starts, un, det0, T0, exits, depth, res.dense, inner,
                      res.status, jacobian, dev)


def classify_tube(tube: StreamTube) -> TubeClass:
    """(rho0, T, delta) constants of a returning tube.

    delta is half the smallest depth reached inside G; T is twice the latest
    time at which a line reaches that depth, so T_delta(s) < T/2 for all s.
    """
    if not np.all(tube.returning):
        bad = tube.s_nodes[~tube.returning]
        raise TubeClassificationError(f"{len(bad)} stream lines do not return to S", offending=bad)
    if np.any(tube.depth <= 0.0):
        raise TubeClassificationError("some lines never go below S", offending=tube.s_nodes[tube.depth <= 0])
    rho0 = float(np.min(tube.normal_speed))
    delta = 0.5 * float(np.min(tube.depth))
    grid = tube.patch.parent
    t_delta = np.empty(len(tube.T0))
    for k, dt in enumerate(tube.inner):
        tt = np.linspace(0.0, dt.t_end, 400)
        F = grid.implicit(dt(tt)[:, :3]) + delta
        j = int(np.argmax(F <= 0.0))
        lo, hi = tt[max(j - 1, 0)], tt[j]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if grid.implicit(dt(mid)[:, :3])[0] + delta > 0.0:
                lo = mid
            else:
                hi = mid
        t_delta[k] = tube.T0[k] + hi
    return TubeClass(rho0, float(2.0 * np.max(t_delta) * (1.0 + 1e-9)), delta)


def tube_diameter(tube: StreamTube, n_t: int = 30) -> float:
    pts = tube.sample_points(n_t)
    if len(pts) < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff**2, axis=-1))))


# ---------------------------------------------------------------- transport
@dataclass(eq=False)
class TransportedScalar:
    """phi(x) = phi0(s(x)) on the tube, 0 elsewhere; evaluated by backward tracing."""

    field: Field
    patch: SurfacePatch
    phi0: Callable[[np.ndarray], np.ndarray]
    max_time: float
    controls: Controls = Controls()
    tube: StreamTube | None = None

    def __post_init__(self):
        self._screen = None

    def near_tube(self, x) -> np.ndarray:
        """Points that can carry a nonzero value; everything without a tube hint."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.tube is None:
            return np.ones(len(x), dtype=bool)
        if self._screen is None:
            self._screen = (cKDTree(self.tube.sample_points(40)), 2.0 * self.tube.proximity_radius(40))
        tree, radius = self._screen
        d, _ = tree.query(x, distance_upper_bound=radius)
        return np.isfinite(d)

    def entry_chart(self, x):
        """Chart coordinates of the backward-traced S hit and whether it lies in Sigma."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        grid = self.patch.parent
        inside = (grid.implicit(x) >= 0.0) & self.near_tube(x)
        s = np.zeros((len(x), 2))
        ok = np.zeros(len(x), dtype=bool)
        if np.any(inside):
            idx = np.nonzero(inside)[0]
            res = integrate_batch(_signed(self.field, -1.0), x[idx], self.max_time, self.controls,
                                  [surface_event(grid, -1, "hit")])
            for j, i in enumerate(idx):
                if res.status[j] == "hit":
                    d = res.y_final[j, :3] - grid.center
                    sj, inn = self.patch.inverse(d / np.linalg.norm(d))
                    s[i] = sj
                    ok[i] = inn
        return s, ok

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        s, ok = self.entry_chart(x.reshape(-1, 3))
        out = np.zeros(len(s))
        if np.any(ok):
            out[ok] = self.phi0(s[ok])
        return out.reshape(shape)

    def surface_values(self, candidates=None) -> np.ndarray:
        """phi at the nodes of S.

        Inflow nodes take phi0 through the chart when they lie in Sigma; outflow
        nodes are traced backward.  ``candidates`` restricts the outflow nodes
        that are traced (all others are 0).
        """
        grid = self.patch.parent
        out = np.zeros(grid.n)
        un = np.sum(np.real(np.asarray(self.field(grid.nodes))) * grid.normals, axis=1)
        s, inside = self.patch.inverse(grid.dirs)
        sel = inside & (un > 0.0)
        if np.any(sel):
            out[sel] = self.phi0(s[sel])
        todo = un < 0.0
        if candidates is not None:
            mask = np.zeros(grid.n, dtype=bool)
            mask[np.asarray(candidates)] = True
            todo &= mask
        idx = np.nonzero(todo)[0]
        if idx.size:
            # start a hair outside S so the backward event sees the crossing
            x = grid.nodes[idx] + 1e-9 * grid.normals[idx]
            out[idx] = self(x)
        return out


def transport_solve(f: Field, tube: StreamTube, phi0: Callable, max_time: float | None = None,
                    controls: Controls = Controls()) -> TransportedScalar:
    """First integral of f equal to phi0 on Sigma (chart coordinates), zero off the tube."""
    if not np.all(tube.returning):
        raise TubeClassificationError("transport requires a classified tube")
    T = max_time if max_time is not None else 1.5 * float(np.max(tube.T0))
    return TransportedScalar(f, tube.patch, phi0, T, controls, tube)


def bump(amplitude: float, radius: float = 0.8) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth compactly supported profile amplitude * exp(1 - 1/(1 - (|s|/radius)^2))."""

    def phi0(s):
        s = np.asarray(s, dtype=float)
        q = np.sum(s * s, axis=-1) / radius**2
        out = np.zeros(q.shape)
        m = q < 1.0
        out[m] = amplitude * np.exp(1.0 - 1.0 / (1.0 - q[m]))
        return out

    return phi0


def tube_quadrature(tube: StreamTube, phi0: Callable, f: Field, n_t: int = 32,
                    near_tol: float | None = None) -> VolumeDensity:
    """Volume rule for phi u on the tube: nodes phi(t_q, s_j), weights w_t w_s |det Jac|.

    phi is constant along lines, so node values are phi0(s_j) u(x_q).  Lines
    with phi0(s_j) = 0 are dropped; nodes that fall inside G are discarded.
    """
    grid = tube.patch.parent
    amp = phi0(tube.s_nodes)
    keep = np.nonzero((amp != 0.0) & tube.returning)[0]
    if keep.size == 0:
        return VolumeDensity.empty()
    xg, wg = np.polynomial.legendre.leggauss(n_t)
    nodes, weights, amps = [], [], []
    for k in keep:
        T0 = tube.T0[k]
        tq = 0.5 * T0 * (xg + 1.0)
        wq = 0.5 * T0 * wg
        nodes.append(tube.position(k, tq))
        weights.append(wq * tube.s_weights[k] * tube.det_jacobian(k, tq))
        amps.append(np.full(n_t, amp[k]))
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    amps = np.concatenate(amps)
    F = grid.implicit(nodes)
    ok = F > 0.0
    if np.any(~ok):
        logger.info("discarding %d tube nodes below S", int(np.sum(~ok)))
    nodes, weights, amps, F = nodes[ok], weights[ok], amps[ok], F[ok]
    u = np.real(np.asarray(f(nodes)))
    tol = 0.5 * grid.spacing if near_tol is None else near_tol
    return VolumeDensity(nodes, weights, (amps[:, None] * u).astype(complex),
                         support_radius=float(np.max(np.linalg.norm(nodes - grid.center, axis=1))),
                         near_surface=F < tol)


# ---------------------------------------------------------------- sections
def poincare_section(f: Field, plane_point, plane_normal, seeds, n_returns: int,
                     max_time: float = 500.0, controls: Controls = Controls()) -> list[np.ndarray]:
    """Successive upward crossings of a plane for each seed (up to n_returns)."""
    p = np.asarray(plane_point, dtype=float)
    nrm = np.asarray(plane_normal, dtype=float)
    nrm = nrm / np.linalg.norm(nrm)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    ev = Event(lambda x: (x - p) @ nrm, +1, False, "section")
    res = integrate_batch(_signed(f, 1.0), seeds, max_time, controls, [ev])
    out = []
    for i in range(len(seeds)):
        pts = res.event_points[i][0]
        if len(pts) == 0:
            logger.info("seed %d never crossed the section", i)
        out.append(pts[:n_returns])
    return out

"""Hot O(N*M) loops: kernel sums, Nystrom block assembly, stencil gathers.

Each routine exists twice: a numba kernel (``*_nb``) and a vectorised numpy
version (``*_np``).  The public wrappers pick one via ``_accel.resolve``.

Conventions shared by all routines
----------------------------------
For a target x and a source y with z = x - y, r = |z|, the kernel returns
``(g, g1)`` with Gamma = g and grad_x Gamma = g1 * z.  Sources with a
positive blob radius rb use the potential of a uniform ball of radius rb for
the Newtonian part when r < rb (bounded, C^1), which is the equivalent-volume
self-cell correction for volume quadratures.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit, resolve

INV4PI = 1.0 / (4.0 * math.pi)
CHUNK = 256


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------
@njit
def _cut_nb(theta, a, b):
    if theta <= a:
        return 1.0
    if theta >= b:
        return 0.0
    s = (theta - a) / (b - a)
    f_in = math.exp(-1.0 / (1.0 - s))
    f_out = math.exp(-1.0 / s)
    return f_in / (f_in + f_out)


def smooth_cut(theta, a, b):
    """C-infinity step: 1 for theta <= a, 0 for theta >= b."""
    theta = np.asarray(theta, dtype=float)
    s = np.clip((theta - a) / (b - a), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f_in = np.where(s < 1.0, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
        f_out = np.where(s > 0.0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
    return f_in / (f_in + f_out)


@njit
def _kern_nb(r, lam, rb):
    if rb > 0.0 and r < rb:
        g0 = (3.0 * rb * rb - r * r) * INV4PI / (2.0 * rb**3)
        g1 = -INV4PI / rb**3 + 0j
        if r > 0.0:
            t = lam * r
            if abs(t) < 1e-2:
                dps = (-lam * lam / 2.0 - 1j * lam**3 * r / 3.0 + lam**4 * r * r / 8.0) * INV4PI
                ps = (1j * lam - lam * lam * r / 2.0 - 1j * lam**3 * r * r / 6.0) * INV4PI
            else:
                e = complex(math.cos(t), math.sin(t))
                ps = (e - 1.0) * INV4PI / r
                dps = (1j * lam * r * e - (e - 1.0)) * INV4PI / (r * r)
            g1 = g1 + dps / r
        else:
            ps = 1j * lam * INV4PI
        return g0 + ps, g1
    t = lam * r
    g = complex(math.cos(t), math.sin(t)) * INV4PI / r
    return g, (1j * lam - 1.0 / r) * g / r


def _kern_np(r, lam, rb):
    """Vectorised twin of ``_kern_nb``; r and rb broadcast together."""
    r = np.asarray(r, dtype=float)
    rb = np.broadcast_to(np.asarray(rb, dtype=float), r.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.exp(1j * lam * r) * INV4PI / r
        g1 = (1j * lam - 1.0 / r) * g / r
    blob = (rb > 0.0) & (r < rb)
    if np.any(blob):
        rr = r[blob]
        b = rb[blob]
        g0 = (3.0 * b * b - rr * rr) * INV4PI / (2.0 * b**3)
        g1b = np.full(rr.shape, -INV4PI, dtype=complex) / b**3
        t = lam * rr
        small = np.abs(t) < 1e-2
        with np.errstate(divide="ignore", invalid="ignore"):
            e = np.exp(1j * t)
            ps = np.where(small, (1j * lam - lam * lam * rr / 2.0 - 1j * lam**3 * rr * rr / 6.0) * INV4PI,
                          (e - 1.0) * INV4PI / rr)
            dps = np.where(small, (-lam * lam / 2.0 - 1j * lam**3 * rr / 3.0 + lam**4 * rr * rr / 8.0) * INV4PI,
                           (1j * lam * rr * e - (e - 1.0)) * INV4PI / (rr * rr))
            g1b = g1b + np.where(rr > 0.0, dps / rr, 0.0)
        g[blob] = g0 + ps
        g1[blob] = g1b
    return g, g1


# ---------------------------------------------------------------------------
# kernel sums with shared sources
# ---------------------------------------------------------------------------
@njit
def _shared_sum_nb(tx, sy, sw, sb, scal, vec, lam, cut_act, cdir, sdir, ca, cb, P, G, A, C, D):
    nt = tx.shape[0]
    ns = sy.shape[0]
    ks = scal.shape[1]
    kv = vec.shape[1]
    for t in range(nt):
        x0 = tx[t, 0]
        x1 = tx[t, 1]
        x2 = tx[t, 2]
        for j in range(ns):
            w = sw[j]
            if cut_act[t]:
                c = cdir[t, 0] * sdir[j, 0] + cdir[t, 1] * sdir[j, 1] + cdir[t, 2] * sdir[j, 2]
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
                ang = math.acos(c)
                if ang <= ca:
                    continue
                w = w * (1.0 - _cut_nb(ang, ca, cb))
            z0 = x0 - sy[j, 0]
            z1 = x1 - sy[j, 1]
            z2 = x2 - sy[j, 2]
            r = math.sqrt(z0 * z0 + z1 * z1 + z2 * z2)
            if r == 0.0 and sb[j] == 0.0:
                continue
            g, g1 = _kern_nb(r, lam, sb[j])
            g = g * w
            g1 = g1 * w
            gx = g1 * z0
            gy = g1 * z1
            gz = g1 * z2
            for k in range(ks):
                s = scal[j, k]
                P[t, k] += g * s
                G[t, k, 0] += gx * s
                G[t, k, 1] += gy * s
                G[t, k, 2] += gz * s
            for k in range(kv):
                v0 = vec[j, k, 0]
                v1 = vec[j, k, 1]
                v2 = vec[j, k, 2]
                A[t, k, 0] += g * v0
                A[t, k, 1] += g * v1
                A[t, k, 2] += g * v2
                C[t, k, 0] += gy * v2 - gz * v1
                C[t, k, 1] += gz * v0 - gx * v2
                C[t, k, 2] += gx * v1 - gy * v0
                D[t, k] += gx * v0 + gy * v1 + gz * v2


def _shared_sum_np(tx, sy, sw, sb, scal, vec, lam, cut_act, cdir, sdir, ca, cb, P, G, A, C, D):
    nt = tx.shape[0]
    for lo in range(0, nt, CHUNK):
        hi = min(nt, lo + CHUNK)
        z = tx[lo:hi, None, :] - sy[None, :, :]
        r = np.sqrt(np.einsum("tsk,tsk->ts", z, z))
        w = np.broadcast_to(sw, r.shape).copy()
        act = cut_act[lo:hi]
        if np.any(act):
            c = np.clip(cdir[lo:hi] @ sdir.T, -1.0, 1.0)
            fac = 1.0 - smooth_cut(np.arccos(c), ca, cb)
            w = np.where(act[:, None], w * fac, w)
        point = (r == 0.0) & (sb[None, :] == 0.0)
        w = np.where(point, 0.0, w)
        rs = np.where(point, 1.0, r)
        g, g1 = _kern_np(rs, lam, sb[None, :])
        g = g * w
        g1 = g1 * w
        grad = g1[..., None] * z
        P[lo:hi] += g @ scal
        G[lo:hi] += np.einsum("tsi,sk->tki", grad, scal)
        A[lo:hi] += np.einsum("ts,ski->tki", g, vec)
        C[lo:hi] += np.cross(grad[:, :, None, :], vec[None, :, :, :]).sum(axis=1)
        D[lo:hi] += np.einsum("tsi,ski->tk", grad, vec)


def shared_sum(targets, src, weights, scal, vec, lam, blob=None, cut=None, backend=None):
    """Sum kernel moments over one shared source set.

    Parameters
    ----------
    targets : (nt, 3) target points.
    src, weights : (ns, 3) source points and (ns,) quadrature weights.
    scal : (ns, ks) complex scalar densities.
    vec : (ns, kv, 3) complex vector densities.
    blob : (ns,) ball radii for volume sources, or None.
    cut : None or (active (nt,), cut_dirs (nt, 3), src_dirs (ns, 3), a, b);
        active targets see weights multiplied by 1 - chi(angle) with chi the
        smooth step between angles a and b.

    Returns
    -------
    P (nt, ks), G (nt, ks, 3), A (nt, kv, 3), C (nt, kv, 3), D (nt, kv) with
    P = sum w Gamma s, G = sum w grad Gamma s, A = sum w Gamma v,
    C = sum w grad Gamma x v, D = sum w grad Gamma . v.
    """
    tx = np.ascontiguousarray(targets, dtype=float).reshape(-1, 3)
    sy = np.ascontiguousarray(src, dtype=float).reshape(-1, 3)
    ns = sy.shape[0]
    sw = np.ascontiguousarray(weights, dtype=float).reshape(ns)
    scal = np.ascontiguousarray(scal, dtype=complex).reshape(ns, -1)
    vec = np.ascontiguousarray(vec, dtype=complex).reshape(ns, -1, 3)
    sb = np.zeros(ns) if blob is None else np.ascontiguousarray(blob, dtype=float).reshape(ns)
    nt = tx.shape[0]
    ks, kv = scal.shape[1], vec.shape[1]
    if cut is None:
        cut_act = np.zeros(nt, dtype=np.bool_)
        cdir = np.zeros((nt, 3))
        sdir = np.zeros((ns, 3))
        ca, cb = 0.0, 1.0
    else:
        cut_act, cdir, sdir, ca, cb = cut
        cut_act = np.ascontiguousarray(cut_act, dtype=np.bool_)
        cdir = np.ascontiguousarray(cdir, dtype=float)
        sdir = np.ascontiguousarray(sdir, dtype=float)
    P = np.zeros((nt, ks), complex)
    G = np.zeros((nt, ks, 3), complex)
    A = np.zeros((nt, kv, 3), complex)
    C = np.zeros((nt, kv, 3), complex)
    D = np.zeros((nt, kv), complex)
    if nt == 0 or ns == 0:
        return P, G, A, C, D
    fn = _shared_sum_nb if resolve(backend) == "numba" else _shared_sum_np
    fn(tx, sy, sw, sb, scal, vec, float(lam), cut_act, cdir, sdir, float(ca), float(cb), P, G, A, C, D)
    return P, G, A, C, D


# ---------------------------------------------------------------------------
# kernel sums with per-target sources (near-field caps)
# ---------------------------------------------------------------------------
@njit
def _own_sum_nb(tx, sy, sw, scal, vec, lam, P, G, A, C, D):
    nt = tx.shape[0]
    m = sy.shape[1]
    ks = scal.shape[2]
    kv = vec.shape[2]
    for t in range(nt):
        for q in range(m):
            w = sw[t, q]
            if w == 0.0:
                continue
            z0 = tx[t, 0] - sy[t, q, 0]
            z1 = tx[t, 1] - sy[t, q, 1]
            z2 = tx[t, 2] - sy[t, q, 2]
            r = math.sqrt(z0 * z0 + z1 * z1 + z2 * z2)
            if r == 0.0:
                continue
            g, g1 = _kern_nb(r, lam, 0.0)
            g = g * w
            g1 = g1 * w
            gx = g1 * z0
            gy = g1 * z1
            gz = g1 * z2
            for k in range(ks):
                s = scal[t, q, k]
                P[t, k] += g * s
                G[t, k, 0] += gx * s
                G[t, k, 1] += gy * s
                G[t, k, 2] += gz * s
            for k in range(kv):
                v0 = vec[t, q, k, 0]
                v1 = vec[t, q, k, 1]
                v2 = vec[t, q, k, 2]
                A[t, k, 0] += g * v0
                A[t, k, 1] += g * v1
                A[t, k, 2] += g * v2
                C[t, k, 0] += gy * v2 - gz * v1
                C[t, k, 1] += gz * v0 - gx * v2
                C[t, k, 2] += gx * v1 - gy * v0
                D[t, k] += gx * v0 + gy * v1 + gz * v2


def _own_sum_np(tx, sy, sw, scal, vec, lam, P, G, A, C, D):
    z = tx[:, None, :] - sy
    r = np.sqrt(np.einsum("tqk,tqk->tq", z, z))
    w = np.where(r == 0.0, 0.0, sw)
    rs = np.where(r == 0.0, 1.0, r)
    g, g1 = _kern_np(rs, lam, 0.0)
    g = g * w
    grad = (g1 * w)[..., None] * z
    P += np.einsum("tq,tqk->tk", g, scal)
    G += np.einsum("tqi,tqk->tki", grad, scal)
    A += np.einsum("tq,tqki->tki", g, vec)
    C += np.cross(grad[:, :, None, :], vec).sum(axis=1)
    D += np.einsum("tqi,tqki->tk", grad, vec)


def own_sum(targets, src, weights, scal, vec, lam, backend=None):
    """Like ``shared_sum`` but each target t has its own sources src[t]."""
    tx = np.ascontiguousarray(targets, dtype=float).reshape(-1, 3)
    nt = tx.shape[0]
    sy = np.ascontiguousarray(src, dtype=float).reshape(nt, -1, 3)
    m = sy.shape[1]
    sw = np.ascontiguousarray(weights, dtype=float).reshape(nt, m)
    scal = np.ascontiguousarray(scal, dtype=complex).reshape(nt, m, -1)
    vec = np.ascontiguousarray(vec, dtype=complex).reshape(nt, m, -1, 3)
    ks, kv = scal.shape[2], vec.shape[2]
    P = np.zeros((nt, ks), complex)
    G = np.zeros((nt, ks, 3), complex)
    A = np.zeros((nt, kv, 3), complex)
    C = np.zeros((nt, kv, 3), complex)
    D = np.zeros((nt, kv), complex)
    if nt == 0 or m == 0:
        return P, G, A, C, D
    fn = _own_sum_nb if resolve(backend) == "numba" else _own_sum_np
    fn(tx, sy, sw, scal, vec, float(lam), P, G, A, C, D)
    return P, G, A, C, D


# ---------------------------------------------------------------------------
# stencil gather
# ---------------------------------------------------------------------------
@njit
def _gather_nb(vals, idx, wts, out):
    n, p = idx.shape
    c = vals.shape[1]
    for i in range(n):
        for k in range(p):
            w = wts[i, k]
            j = idx[i, k]
            for m in range(c):
                out[i, m] += w * vals[j, m]


def _gather_np(vals, idx, wts, out):
    for lo in range(0, idx.shape[0], 4096):
        hi = min(idx.shape[0], lo + 4096)
        out[lo:hi] += np.einsum("np,npc->nc", wts[lo:hi], vals[idx[lo:hi]])


def gather(vals, idx, wts, backend=None):
    """out[i] = sum_k wts[i, k] * vals[idx[i, k]] for (N, c) complex vals."""
    vals = np.ascontiguousarray(vals, dtype=complex)
    shape = vals.shape[1:]
    flat = vals.reshape(vals.shape[0], -1)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    wts = np.ascontiguousarray(wts, dtype=float)
    lead = idx.shape[:-1]
    idx2 = idx.reshape(-1, idx.shape[-1])
    wts2 = wts.reshape(-1, wts.shape[-1])
    out = np.zeros((idx2.shape[0], flat.shape[1]), complex)
    fn = _gather_nb if resolve(backend) == "numba" else _gather_np
    fn(flat, idx2, wts2, out)
    return out.reshape(lead + shape)


# ---------------------------------------------------------------------------
# Nystrom assembly of 1/2 I - T in local tangent bases
# ---------------------------------------------------------------------------
@njit
def _t_rows_nb(x, ex, t1x, t2x, y, ey, lam, rows):
    # rows[a, :] = t_a(x)^T K(x, y) P(y), K xi = ((ex-ey).xi) grad - (ex.grad) xi + lam g ex x xi
    z0 = x[0] - y[0]
    z1 = x[1] - y[1]
    z2 = x[2] - y[2]
    r = math.sqrt(z0 * z0 + z1 * z1 + z2 * z2)
    g, g1 = _kern_nb(r, lam, 0.0)
    gr0 = g1 * z0
    gr1 = g1 * z1
    gr2 = g1 * z2
    d0 = ex[0] - ey[0]
    d1 = ex[1] - ey[1]
    d2 = ex[2] - ey[2]
    eg = ex[0] * gr0 + ex[1] * gr1 + ex[2] * gr2
    lg = lam * g
    for a in range(2):
        if a == 0:
            t0, t1_, t2_ = t1x[0], t1x[1], t1x[2]
        else:
            t0, t1_, t2_ = t2x[0], t2x[1], t2x[2]
        tg = t0 * gr0 + t1_ * gr1 + t2_ * gr2
        # (t x ex)_b picks up lam g t.(ex x xi) = lam g (xi . (t x ex))
        c0 = t1_ * ex[2] - t2_ * ex[1]
        c1 = t2_ * ex[0] - t0 * ex[2]
        c2 = t0 * ex[1] - t1_ * ex[0]
        r0 = tg * d0 - eg * t0 + lg * c0
        r1 = tg * d1 - eg * t1_ + lg * c1
        r2 = tg * d2 - eg * t2_ + lg * c2
        # right-multiply by P(y) = I - ey ey^T
        pr = r0 * ey[0] + r1 * ey[1] + r2 * ey[2]
        rows[a, 0] = r0 - pr * ey[0]
        rows[a, 1] = r1 - pr * ey[1]
        rows[a, 2] = r2 - pr * ey[2]


@njit
def _assemble_far_nb(nodes, normals, t1, t2, w, dirs, lam, ca, cb, out):
    n = nodes.shape[0]
    rows = np.zeros((2, 3), np.complex128)
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            c = dirs[i, 0] * dirs[j, 0] + dirs[i, 1] * dirs[j, 1] + dirs[i, 2] * dirs[j, 2]
            if c > 1.0:
                c = 1.0
            elif c < -1.0:
                c = -1.0
            ang = math.acos(c)
            if ang <= ca:
                continue
            f = w[j] * (1.0 - _cut_nb(ang, ca, cb))
            _t_rows_nb(nodes[i], normals[i], t1[i], t2[i], nodes[j], normals[j], lam, rows)
            for a in range(2):
                out[2 * i + a, 2 * j] -= f * (rows[a, 0] * t1[j, 0] + rows[a, 1] * t1[j, 1] + rows[a, 2] * t1[j, 2])
                out[2 * i + a, 2 * j + 1] -= f * (rows[a, 0] * t2[j, 0] + rows[a, 1] * t2[j, 1] + rows[a, 2] * t2[j, 2])


@njit
def _assemble_cap_nb(tidx, x, ex, t1x, t2x, cy, cey, cw, sidx, swt, t1, t2, lam, out):
    nt = tidx.shape[0]
    m = cy.shape[1]
    p = sidx.shape[2]
    rows = np.zeros((2, 3), np.complex128)
    for t in range(nt):
        i = tidx[t]
        for q in range(m):
            wq = cw[t, q]
            if wq == 0.0:
                continue
            _t_rows_nb(x[t], ex[t], t1x[t], t2x[t], cy[t, q], cey[t, q], lam, rows)
            for k in range(p):
                j = sidx[t, q, k]
                f = wq * swt[t, q, k]
                for a in range(2):
                    out[2 * i + a, 2 * j] -= f * (rows[a, 0] * t1[j, 0] + rows[a, 1] * t1[j, 1] + rows[a, 2] * t1[j, 2])
                    out[2 * i + a, 2 * j + 1] -= f * (rows[a, 0] * t2[j, 0] + rows[a, 1] * t2[j, 1] + rows[a, 2] * t2[j, 2])


def _t_rows_np(x, ex, t1x, t2x, y, ey, lam):
    """Vectorised rows: x-side arrays (..., 3) broadcast against y-side arrays."""
    z = x - y
    r = np.sqrt(np.sum(z * z, axis=-1))
    g, g1 = _kern_np(np.where(r == 0.0, 1.0, r), lam, 0.0)
    grad = g1[..., None] * z
    d = ex - ey
    eg = np.sum(ex * grad, axis=-1)
    out = []
    for t in (t1x, t2x):
        tg = np.sum(t * grad, axis=-1)
        c = np.cross(t, ex)
        row = tg[..., None] * d - eg[..., None] * t + (lam * g)[..., None] * c
        pr = np.sum(row * ey, axis=-1)
        out.append(row - pr[..., None] * ey)
    return np.stack(out, axis=-2)


def _assemble_far_np(nodes, normals, t1, t2, w, dirs, lam, ca, cb, out):
    n = nodes.shape[0]
    basis = np.stack([t1, t2], axis=-1)  # (n, 3, 2)
    for lo in range(0, n, 64):
        hi = min(n, lo + 64)
        sl = slice(lo, hi)
        ang = np.arccos(np.clip(dirs[sl] @ dirs.T, -1.0, 1.0))
        f = w[None, :] * (1.0 - smooth_cut(ang, ca, cb))
        f[ang <= ca] = 0.0
        f[np.arange(hi - lo), np.arange(lo, hi)] = 0.0
        rows = _t_rows_np(nodes[sl, None], normals[sl, None], t1[sl, None], t2[sl, None],
                          nodes[None], normals[None], lam)  # (b, n, 2, 3)
        blk = np.einsum("bnai,nic->bnac", rows, basis) * f[:, :, None, None]
        out[2 * lo:2 * hi, :] -= blk.transpose(0, 2, 1, 3).reshape(2 * (hi - lo), 2 * n)


def _assemble_cap_np(tidx, x, ex, t1x, t2x, cy, cey, cw, sidx, swt, t1, t2, lam, out):
    n2 = out.shape[1]
    basis = np.stack([t1, t2], axis=-1)
    for t in range(tidx.shape[0]):
        rows = _t_rows_np(x[t], ex[t], t1x[t], t2x[t], cy[t], cey[t], lam)  # (m, 2, 3)
        rows = rows * cw[t][:, None, None]
        # coefficient for stencil node j, DOF c: sum_q swt * rows[q] . e_c(j)
        ec = basis[sidx[t]]  # (m, p, 3, 2)
        contrib = np.einsum("mai,mpic,mp->mpac", rows, ec, swt[t])
        j = sidx[t].reshape(-1)
        vals = contrib.reshape(-1, 2, 2)
        i = tidx[t]
        for a in range(2):
            for c in range(2):
                out[2 * i + a, :] -= np.bincount(2 * j + c, weights=vals[:, a, c].real, minlength=n2) \
                    + 1j * np.bincount(2 * j + c, weights=vals[:, a, c].imag, minlength=n2)


def assemble_far(nodes, normals, t1, t2, w, dirs, lam, ca, cb, out, backend=None):
    fn = _assemble_far_nb if resolve(backend) == "numba" else _assemble_far_np
    fn(np.ascontiguousarray(nodes), np.ascontiguousarray(normals), np.ascontiguousarray(t1),
       np.ascontiguousarray(t2), np.ascontiguousarray(w), np.ascontiguousarray(dirs),
       float(lam), float(ca), float(cb), out)


def assemble_cap(tidx, x, ex, t1x, t2x, cy, cey, cw, sidx, swt, t1, t2, lam, out, backend=None):
    fn = _assemble_cap_nb if resolve(backend) == "numba" else _assemble_cap_np
    c = np.ascontiguousarray
    fn(c(tidx, dtype=np.int64), c(x), c(ex), c(t1x), c(t2x), c(cy), c(cey), c(cw),
       c(sidx, dtype=np.int64), c(swt), c(t1), c(t2), float(lam), out)


# ---------------------------------------------------------------------------
# tensor Lagrange stencils on the (theta, phi) grid
# ---------------------------------------------------------------------------
@njit
def _stencil_nb(th, ph, ext, native, flip, n_phi, p, idx, wts):
    half = p // 2
    n_ext = ext.shape[0]
    dphi = 2.0 * math.pi / n_phi
    wt = np.empty(p)
    wp = np.empty(p)
    for q in range(th.shape[0]):
        x = th[q]
        k = np.searchsorted(ext, x)
        lo = min(max(k - half, 0), n_ext - p)
        for a in range(p):
            w = 1.0
            for b in range(p):
                if b != a:
                    w *= (x - ext[lo + b]) / (ext[lo + a] - ext[lo + b])
            wt[a] = w
        j0 = int(math.floor(ph[q] / dphi))
        for a in range(p):
            w = 1.0
            xa = (j0 - half + 1 + a) * dphi
            for b in range(p):
                if b != a:
                    xb = (j0 - half + 1 + b) * dphi
                    w *= (ph[q] - xb) / (xa - xb)
            wp[a] = w
        for a in range(p):
            row = native[lo + a]
            shift = n_phi // 2 if flip[lo + a] else 0
            for b in range(p):
                col = (j0 - half + 1 + b + shift) % n_phi
                idx[q, a * p + b] = row * n_phi + col
                wts[q, a * p + b] = wt[a] * wp[b]


def _lagrange_np(x, nodes):
    n, p = nodes.shape
    w = np.ones((n, p))
    for k in range(p):
        for m in range(p):
            if m != k:
                w[:, k] *= (x - nodes[:, m]) / (nodes[:, k] - nodes[:, m])
    return w


def _stencil_np(th, ph, ext, native, flip, n_phi, p):
    half = p // 2
    k = np.searchsorted(ext, th)
    lo = np.clip(k - half, 0, len(ext) - p)
    ti = lo[:, None] + np.arange(p)[None, :]
    wt = _lagrange_np(th, ext[ti])
    dphi = 2.0 * np.pi / n_phi
    j0 = np.floor(ph / dphi).astype(np.int64)
    pj = j0[:, None] + np.arange(-half + 1, half + 1)[None, :]
    wp = _lagrange_np(ph, pj * dphi)
    rows = native[ti]
    shift = np.where(flip[ti], n_phi // 2, 0)
    cols = np.mod(pj[:, None, :] + shift[:, :, None], n_phi)
    idx = rows[:, :, None] * n_phi + cols
    wts = wt[:, :, None] * wp[:, None, :]
    return idx.reshape(-1, p * p), wts.reshape(-1, p * p)


def stencil(th, ph, ext, native, flip, n_phi, p, backend=None):
    """Indices and weights of p x p Lagrange stencils at chart points (th, ph).

    ``ext`` is the pole-extended theta axis, ``native`` maps its entries to
    grid rows and ``flip`` marks reflected rows (read at phi + pi).
    """
    th = np.ascontiguousarray(th, dtype=float)
    ph = np.ascontiguousarray(ph, dtype=float)
    if resolve(backend) == "numpy":
        return _stencil_np(th, ph, ext, native, flip, n_phi, p)
    n = th.shape[0]
    idx = np.empty((n, p * p), np.int64)
    wts = np.empty((n, p * p))
    _stencil_nb(th, ph, np.ascontiguousarray(ext), np.ascontiguousarray(native, dtype=np.int64),
                np.ascontiguousarray(flip), int(n_phi), int(p), idx, wts)
    return idx, wts

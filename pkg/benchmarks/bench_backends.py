"""Wall-clock comparison of the numba and numpy backends on the hot kernels.

Usage::

    python benchmarks/bench_backends.py [--n-theta 32] [--repeat 3]

Each workload is run once untimed (to exclude JIT compilation), then timed
``--repeat`` times per backend; the best time is reported together with the
largest relative difference between the two results.
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from beltrami import bie
from beltrami._accel import HAVE_NUMBA
from beltrami.potentials import VolumeDensity, layer_moments, volume_moments
from beltrami.surface import make_sphere_grid

logger = logging.getLogger("bench_backends")


def _workloads(n_theta: int):
    grid = make_sphere_grid(n_theta=n_theta, n_phi=2 * n_theta)
    rng = np.random.default_rng(0)
    scal = rng.normal(size=(grid.n, 1)) + 1j * rng.normal(size=(grid.n, 1))
    vec = rng.normal(size=(grid.n, 1, 3)).astype(complex)
    far = 2.0 * grid.nodes[:: max(1, grid.n // 500)]
    near = 1.01 * grid.nodes[:: max(1, grid.n // 200)]
    m = 2000
    d = rng.normal(size=(m, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    vol = VolumeDensity(1.2 * d, np.full(m, 1e-4), rng.normal(size=(m, 3)).astype(complex))
    return {
        "layer moments, far targets": lambda b: layer_moments(1.0, grid, scal, vec, far, backend=b).G,
        "layer moments, near targets": lambda b: layer_moments(1.0, grid, scal, vec, near, backend=b).G,
        "volume moments": lambda b: volume_moments(1.0, vol, far, vec=vol.values[:, None, :], backend=b).C,
        "assemble boundary operator": lambda b: bie.assemble_T(1.0, grid, backend=b).matrix,
    }


def _best(fn, backend, repeat):
    fn(backend)
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(backend)
        best = min(best, time.perf_counter() - t)
    return best, np.asarray(out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-theta", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available")
        return 1
    print(f"grid {args.n_theta}x{2 * args.n_theta}, best of {args.repeat}")
    print(f"{'workload':32s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'max rel diff':>13s}")
    for name, fn in _workloads(args.n_theta).items():
        t_nb, a = _best(fn, "numba", args.repeat)
        t_np, b = _best(fn, "numpy", args.repeat)
        diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
        print(f"{name:32s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.1f} {diff:13.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

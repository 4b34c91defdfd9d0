"""Command-line scenario runner.

    beltrami selftest
    beltrami solve-nib  --config run.yaml --out out/ [--seed N] [--dry-run]
    beltrami grad-rubin --config run.yaml --out out/
    beltrami trace      --config run.yaml --out out/
    beltrami farfield   --config run.yaml --out out/

A config is a YAML file with the sections ``domain``, ``physics``, ``nib``,
``iteration``, ``trace``, ``farfield``, ``output`` and a top-level ``seed``.
Every key is optional; flags override the file.  Exit codes: 0 success,
1 selftest failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import export, kernels
from .bie import BIEError
from .flow import (Controls, TubeClassificationError, integrate_streamlines, tube_diameter)
from .gradrubin import (ConvergenceAlarm, IterationControls, contraction_report,
                        certify, run_iteration)
from .neumann_solver import (CompatibilityError, fibonacci_directions, radiation_scan, relative_error,
                             scalar_far_field, extract_far_field, far_field_gradient_check, shell_probes,
                             solve_nib)
from .potentials import DomainError
from .seeds import FourierBesselSpec, SeedSpecError, load_seed_spec, seed_field, seed_spec_from_dict
from .surface import ConfigurationError, make_cap_patch, make_deformed_sphere_grid, make_sphere_grid

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
NUMERICAL_ERRORS = (BIEError, CompatibilityError, TubeClassificationError, ConvergenceAlarm, DomainError,
                    FloatingPointError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    """Invalid configuration; carries one message per offending field."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ------------------------------------------------------------------ config
@dataclass
class DomainConfig:
    shape: str = "sphere"
    radius: float = 1.0
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    n_theta: int = 32
    n_phi: int = 64
    deformation: float = 0.0

    def problems(self) -> list[str]:
        out = []
        if self.shape not in ("sphere", "deformed"):
            out.append("domain.shape: expected 'sphere' or 'deformed'")
        if self.radius <= 0.0:
            out.append("domain.radius: must be positive")
        if self.n_theta < 8 or self.n_phi < 8:
            out.append("domain.n_theta/n_phi: resolution below 8 is degenerate")
        if self.shape == "deformed" and not abs(self.deformation) < 0.5:
            out.append("domain.deformation: |deformation| must stay below 0.5")
        return out


@dataclass
class PhysicsConfig:
    lam: float = 1.0
    seed_spec: Any = None

    def problems(self) -> list[str]:
        if not math.isfinite(self.lam) or self.lam == 0.0:
            return ["physics.lambda: must be finite and nonzero"]
        return []


@dataclass
class NibConfig:
    n_probes: int = 20
    r_min: float = 1.2
    r_max: float = 3.0

    def problems(self) -> list[str]:
        out = []
        if self.n_probes < 1:
            out.append("nib.n_probes: must be at least 1")
        if not 1.0 < self.r_min < self.r_max:
            out.append("nib.r_min/r_max: need 1 < r_min < r_max (in units of the domain radius)")
        return out


@dataclass
class IterationConfig:
    amplitude: float = 0.05
    support: float = 0.8
    max_iters: int = 8
    eps_stop: float = 1e-6
    alarm: float = 0.9
    max_retries: int = 3
    n_probes: int = 200
    n_pairs: int = 100
    n_rho: int = 3
    n_beta: int = 6
    n_t: int = 24
    cap_center: list = field(default_factory=lambda: [math.sin(0.9), 0.0, math.cos(0.9)])
    cap_angle: float = 0.2
    compat_tol: float = 1e-2
    tube_max_time: float = 200.0
    radiation_radii: list = field(default_factory=lambda: [10.0, 20.0, 40.0])

    def problems(self) -> list[str]:
        out = []
        if self.amplitude < 0.0:
            out.append("iteration.amplitude: must be non-negative")
        if not 0.0 < self.support <= 1.0:
            out.append("iteration.support: must lie in (0, 1]")
        if not 0.0 < self.cap_angle < math.pi / 2:
            out.append("iteration.cap_angle: must lie in (0, pi/2)")
        if len(self.cap_center) != 3 or np.linalg.norm(self.cap_center) == 0.0:
            out.append("iteration.cap_center: expected a nonzero 3-vector")
        if self.max_iters < 1:
            out.append("iteration.max_iters: must be at least 1")
        if self.eps_stop <= 0.0:
            out.append("iteration.eps_stop: must be positive")
        if not 0.0 < self.alarm < 1.0:
            out.append("iteration.alarm: must lie in (0, 1)")
        for k in ("n_rho", "n_beta", "n_t", "n_probes", "n_pairs"):
            if getattr(self, k) < 2:
                out.append(f"iteration.{k}: must be at least 2")
        if len(self.radiation_radii) < 3 or sorted(self.radiation_radii) != list(self.radiation_radii):
            out.append("iteration.radiation_radii: need at least 3 increasing radii")
        return out


@dataclass
class TraceConfig:
    field: str = "rotation"
    starts: list = dataclasses.field(default_factory=lambda: [[1.0, 0.0, 0.0], [0.5, 0.0, 0.2], [2.0, 0.0, -1.0]])
    t_max: float = 6.283185307179586
    n_samples: int = 65
    rtol: float = 1e-11
    atol: float = 1e-13

    def problems(self) -> list[str]:
        out = []
        if self.field not in ("rotation", "constant", "seed"):
            out.append("trace.field: expected 'rotation', 'constant' or 'seed'")
        if not self.starts or any(len(p) != 3 for p in self.starts):
            out.append("trace.starts: expected a non-empty list of 3-vectors")
        if self.t_max <= 0.0:
            out.append("trace.t_max: must be positive")
        if self.n_samples < 2:
            out.append("trace.n_samples: must be at least 2")
        if self.rtol <= 0.0 or self.atol <= 0.0:
            out.append("trace.rtol/atol: must be positive")
        return out


@dataclass
class FarfieldConfig:
    source: str = "shifted"
    shift: list = field(default_factory=lambda: [0.3, -0.1, 0.2])
    n_directions: int = 64
    radii: list = field(default_factory=lambda: [10.0, 20.0, 40.0])

    def problems(self) -> list[str]:
        out = []
        if self.source not in ("point", "shifted"):
            out.append("farfield.source: expected 'point' or 'shifted'")
        if len(self.shift) != 3:
            out.append("farfield.shift: expected a 3-vector")
        if self.n_directions < 32:
            out.append("farfield.n_directions: at least 32 directions are needed")
        if len(self.radii) < 3 or sorted(self.radii) != list(self.radii) or self.radii[0] <= 0:
            out.append("farfield.radii: need at least 3 increasing positive radii")
        return out


@dataclass
class OutputConfig:
    dir: str = "out"
    vtk: bool = True


@dataclass
class ScenarioConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    nib: NibConfig = field(default_factory=NibConfig)
    iteration: IterationConfig = field(default_factory=IterationConfig)
    trace: TraceConfig = field(default_factory=TraceConfig)
    farfield: FarfieldConfig = field(default_factory=FarfieldConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["physics"] = {"lambda": self.physics.lam, "seed_spec": self.physics.seed_spec}
        return d


DEFAULT_SEED_TERMS = {"terms": [{"l": 0, "m": 0, "component": "z", "re": 10.0}]}
_KEY_ALIASES = {("physics", "lambda"): "lam", ("physics", "seed"): "seed_spec"}


def _coerce(path: str, default, value, problems: list[str]):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        problems.append(f"{path}: expected true/false")
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        problems.append(f"{path}: expected an integer")
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        problems.append(f"{path}: expected a number")
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
        problems.append(f"{path}: expected a string")
    elif isinstance(default, list):
        if isinstance(value, list):
            try:
                return [[float(v) for v in p] if isinstance(p, list) else float(p) for p in value]
            except (TypeError, ValueError):
                pass
        problems.append(f"{path}: expected a list of numbers")
    else:
        return value
    return default


def build_config(raw: dict | None, overrides: dict | None = None) -> ScenarioConfig:
    """Validate a parsed YAML mapping; all field problems are collected before raising."""
    raw = dict(raw or {})
    problems: list[str] = []
    cfg = ScenarioConfig()
    for name in raw:
        if name not in {f.name for f in dataclasses.fields(ScenarioConfig)}:
            problems.append(f"{name}: unknown section")
    for sec in ("domain", "physics", "nib", "iteration", "trace", "farfield", "output"):
        data = raw.get(sec) or {}
        if not isinstance(data, dict):
            problems.append(f"{sec}: expected a mapping")
            continue
        obj = getattr(cfg, sec)
        names = {f.name for f in dataclasses.fields(obj)}
        for key, value in data.items():
            attr = _KEY_ALIASES.get((sec, key), key)
            if attr not in names or (sec, attr) in {("physics", "lam"), ("physics", "seed_spec")} and \
                    key not in ("lambda", "seed"):
                problems.append(f"{sec}.{key}: unknown key")
                continue
            setattr(obj, attr, _coerce(f"{sec}.{key}", getattr(obj, attr), value, problems))
    if "seed" in raw:
        cfg.seed = _coerce("seed", 0, raw["seed"], problems)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "seed":
            cfg.seed = int(v)
        elif k == "out":
            cfg.output.dir = str(v)
    if cfg.seed < 0:
        problems.append("seed: must be non-negative")
    for sec in (cfg.domain, cfg.physics, cfg.nib, cfg.iteration, cfg.trace, cfg.farfield):
        problems += sec.problems()
    if not problems:
        try:
            seed_spec(cfg)
        except SeedSpecError as exc:
            problems.append(f"physics.seed: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | None, overrides: dict | None = None) -> ScenarioConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError([f"--config: cannot read {path}: {exc.strerror}"]) from exc
        except yaml.YAMLError as exc:
            raise ConfigError([f"--config: not valid YAML ({exc})"]) from exc
        if not isinstance(raw, dict):
            raise ConfigError(["--config: top level must be a mapping"])
        seed_path = (raw.get("physics") or {}).get("seed") if isinstance(raw.get("physics"), dict) else None
        if isinstance(seed_path, str) and not Path(seed_path).is_absolute():
            # seed spec paths are relative to the config file
            raw["physics"]["seed"] = str(Path(path).parent / seed_path)
    return build_config(raw, overrides)


def seed_spec(cfg: ScenarioConfig) -> FourierBesselSpec:
    """Seed spec from a path, an inline mapping or the built-in default; lambda must agree."""
    src = cfg.physics.seed_spec
    if src is None:
        data = dict(DEFAULT_SEED_TERMS, **{"lambda": cfg.physics.lam})
        return seed_spec_from_dict(data)
    if isinstance(src, dict):
        data = dict(src)
        data.setdefault("lambda", cfg.physics.lam)
        spec = seed_spec_from_dict(data)
    elif isinstance(src, str):
        try:
            spec = load_seed_spec(src)
        except OSError as exc:
            raise SeedSpecError(f"cannot read {src}: {exc.strerror}") from exc
    else:
        raise SeedSpecError("expected a path or a mapping")
    if spec.lam != cfg.physics.lam:
        raise SeedSpecError(f"seed lambda {spec.lam} differs from physics.lambda {cfg.physics.lam}")
    return spec


def make_grid(d: DomainConfig):
    if d.shape == "sphere":
        return make_sphere_grid(d.center, d.radius, d.n_theta, d.n_phi)
    a, R = d.deformation, d.radius
    # R (1 + a P2(cos theta)) about the configured center
    prof = lambda s: R * (1.0 + a * 0.5 * (3.0 * s[:, 2] ** 2 - 1.0))
    grad = lambda s: (R * a * 3.0 * s[:, 2])[:, None] * (np.array([0.0, 0.0, 1.0]) - s[:, 2:3] * s)
    return make_deformed_sphere_grid(prof, d.n_theta, d.n_phi, d.center, grad)


# ------------------------------------------------------------------ plans
def plan(command: str, cfg: ScenarioConfig) -> list[str]:
    d = cfg.domain
    grid = f"{d.shape} grid {d.n_theta}x{d.n_phi} (radius {d.radius:g})"
    out = Path(cfg.output.dir)
    if command == "solve-nib":
        return [f"build {grid}", f"assemble and factor the {2 * d.n_theta * d.n_phi}-unknown boundary operator",
                f"solve the exterior problem with w = 0, g = v0 . eta (lambda {cfg.physics.lam:g})",
                f"compare with v0 at {cfg.nib.n_probes} probes (rng seed {cfg.seed})",
                f"write {out / 'probes.csv'}, {out / 'grid.csv'}, {out / 'report.yaml'}"]
    if command == "grad-rubin":
        it = cfg.iteration
        return [f"build {grid}", f"cap Sigma at {np.round(it.cap_center, 6).tolist()} with angle {it.cap_angle:g}",
                f"phi0 bump amplitude {it.amplitude:g}, support {it.support:g}",
                f"iterate at most {it.max_iters} times (stop below {it.eps_stop:g} relative, alarm {it.alarm:g}, "
                f"{it.max_retries} retries)",
                f"residual certificate at {it.n_probes} probes (rng seed {cfg.seed})",
                f"radiation scan at R = {it.radiation_radii}",
                f"write {out / 'contraction.csv'}, {out / 'radiation.csv'}, {out / 'report.yaml'}"
                + (f", {out / 'tube.vtk'}" if cfg.output.vtk else "")]
    if command == "trace":
        t = cfg.trace
        return [f"field '{t.field}'" + (f" on {grid}" if t.field == "seed" else ""),
                f"integrate {len(t.starts)} streamlines up to t = {t.t_max:g} (rtol {t.rtol:g})",
                f"sample {t.n_samples} points per line",
                f"write {out / 'streamlines.csv'}" + (f", {out / 'streamlines.vtk'}" if cfg.output.vtk else "")
                + f", {out / 'report.yaml'}"]
    if command == "farfield":
        f = cfg.farfield
        return [f"build {grid}", f"{f.source} source, {f.n_directions} directions",
                f"extract finite-R patterns at R = {f.radii}", "radiation scan of the radiating seed",
                f"write {out / 'pattern.csv'}, {out / 'radii.csv'}, {out / 'radiation.csv'}, {out / 'report.yaml'}"]
    raise ValueError(command)


# ------------------------------------------------------------------ commands
@contextlib.contextmanager
def _fault(name: str | None):
    """Test hook: perturb a module constant for the duration of a selftest."""
    if name is None:
        yield
        return
    if name != "kernel-constant":
        raise ConfigError([f"--inject-fault: unknown fault '{name}'"])
    saved = kernels.FOUR_PI
    kernels.FOUR_PI = saved * (1.0 + 1e-6)
    try:
        yield
    finally:
        kernels.FOUR_PI = saved


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    with _fault(args.inject_fault):
        results = run_checks()
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = r.error if r.error else f"defect {r.value:.3e} (tol {r.tol:.1e})"
        print(f"{status}  {r.name:32s} {detail}")
    print(f"{len(results)} checks, {len(failed)} failed" + (": " + ", ".join(r.name for r in failed) if failed else ""))
    if args.out:
        export.write_report(Path(args.out) / "selftest.yaml",
                            {"checks": [{"name": r.name, "passed": r.passed, "value": r.value, "tol": r.tol,
                                         "error": r.error} for r in results]})
    return EXIT_CHECK if failed else EXIT_OK


def cmd_solve_nib(cfg: ScenarioConfig) -> int:
    out = Path(cfg.output.dir)
    lam = cfg.physics.lam
    grid = make_grid(cfg.domain)
    spec = seed_spec(cfg)
    v0 = seed_field(spec, radiating=True)
    g = np.sum(v0(grid.nodes) * grid.normals, axis=1)
    rep = solve_nib(lam, grid, None, g)
    rng = np.random.default_rng(cfg.seed)
    probes = shell_probes(cfg.nib.n_probes, rng, cfg.nib.r_min * cfg.domain.radius,
                          cfg.nib.r_max * cfg.domain.radius, cfg.domain.center)
    u = rep.eval_u(probes)
    exact = v0(probes)
    err = relative_error(u, exact)
    bc = float(np.max(np.abs(np.sum(rep.trace() * grid.normals, axis=1) - g)) / np.max(np.abs(g)))
    n1, c1 = export.complex_columns("u", u)
    n2, c2 = export.complex_columns("exact", exact)
    export.write_csv(out / "probes.csv", ["x", "y", "z"] + n1 + n2, [probes[:, 0], probes[:, 1], probes[:, 2]] + c1 + c2)
    export.write_grid_csv(grid, out / "grid.csv")
    export.write_report(out / "report.yaml", {
        "command": "solve-nib", "config": cfg.as_dict(), "rng_seed": cfg.seed,
        "results": {"probe_rel_error": err, "boundary_residual_rel": bc, "unknowns": 2 * grid.n,
                    "grid_spacing": grid.spacing}})
    print(f"solve-nib: probe relative error {err:.3e}, boundary residual {bc:.3e}")
    return EXIT_OK


def _tube_lines(tube, n: int = 60) -> list[np.ndarray]:
    return [tube.position(k, np.linspace(0.0, tube.T0[k], n)) for k in np.nonzero(tube.returning)[0]]


def cmd_grad_rubin(cfg: ScenarioConfig) -> int:
    out = Path(cfg.output.dir)
    it = cfg.iteration
    lam = cfg.physics.lam
    grid = make_grid(cfg.domain)
    patch = make_cap_patch(grid, it.cap_center, it.cap_angle)
    spec = seed_spec(cfg)
    ctl = IterationControls(amplitude=it.amplitude, support=it.support, max_iters=it.max_iters,
                            eps_stop=it.eps_stop, alarm=it.alarm, max_retries=it.max_retries,
                            n_probes=it.n_probes, n_pairs=it.n_pairs, n_rho=it.n_rho, n_beta=it.n_beta,
                            n_t=it.n_t, tube_max_time=it.tube_max_time, compat_tol=it.compat_tol, seed=cfg.seed)
    state = run_iteration(lam, grid, patch, spec, ctl)
    table = contraction_report(state)
    export.write_csv(out / "contraction.csv", ["n", "du_c0", "du_grad", "du_holder", "du_c1", "ratio"],
                     [np.array([r.n for r in table.rows]),
                      np.array([e.delta.c0 for e in state.entries]),
                      np.array([e.delta.grad for e in state.entries]),
                      np.array([e.delta.holder for e in state.entries]),
                      np.array([e.delta.c1 for e in state.entries]),
                      np.array([math.nan if r.ratio is None else r.ratio for r in table.rows])])
    cert = certify(state)
    last = state.entries[-1]
    radiation = None
    if last.representation is not None:
        dirs = fibonacci_directions(64)
        radiation = radiation_scan(last.representation.eval_u, lam, it.radiation_radii, dirs, grid.center)
        export.write_csv(out / "radiation.csv", ["R", "smb_R", "amp_R"],
                         [np.array([r[k] for r in radiation]) for k in ("R", "smb_R", "amp_R")])
    if cfg.output.vtk and last.tube is not None:
        export.write_polylines(out / "tube.vtk", _tube_lines(last.tube), "stream tube of the last iterate")
    tc = last.tube_class
    sections = {
        "command": "grad-rubin", "config": cfg.as_dict(), "rng_seed": cfg.seed,
        "iteration": {"iterations": len(state.entries), "converged": state.converged, "flagged": state.flagged,
                      "retries": state.retries, "amplitude_scale": state.amplitude_scale,
                      "ratios": state.ratios, "non_monotone": table.non_monotone, "complete": table.complete,
                      "delta_c0": [e.delta.c0 for e in state.entries],
                      "compat_residual_rel": [e.compat_residual for e in state.entries]},
        "tube": None if tc is None else {"rho0": tc.rho0, "T": tc.T, "delta": tc.delta,
                                         "diameter": tube_diameter(last.tube)},
        "certificate": {"beltrami": cert.residual.beltrami, "beltrami_inside": cert.residual.beltrami_inside,
                        "beltrami_outside": cert.residual.beltrami_outside,
                        "divergence": cert.residual.divergence, "scale": cert.residual.scale,
                        "seed_residual": cert.seed_residual, "seed_baseline": cert.baseline,
                        "residual_over_baseline": cert.residual_ratio,
                        "inside_probes": cert.n_inside, "outside_probes": cert.n_outside,
                        "distance_to_seed_c0": cert.distance_to_seed, "seed_c0": cert.seed_c0},
        "radiation": radiation,
    }
    ok = state.converged and not state.flagged
    if not ok:
        sections["diagnostics"] = {"reason": "contraction alarm" if state.flagged else "no convergence",
                                   "last_delta_c0": last.delta.c0, "threshold": ctl.eps_stop * state.u0_norm.c0}
    export.write_report(out / "report.yaml", sections)
    print(f"grad-rubin: {len(state.entries)} iterates, ratios {[round(r, 4) for r in state.ratios]}, "
          f"converged={state.converged}")
    if not ok:
        raise NumericalFailure("Grad-Rubin iteration did not converge", sections["diagnostics"])
    return EXIT_OK


def _trace_field(cfg: ScenarioConfig):
    kind = cfg.trace.field
    if kind == "rotation":
        return (lambda x: np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)), None
    if kind == "constant":
        return (lambda x: np.broadcast_to(np.array([0.0, 0.0, 1.0]), x.shape).copy()), None
    grid = make_grid(cfg.domain)
    return seed_field(seed_spec(cfg)).real(), grid


def cmd_trace(cfg: ScenarioConfig) -> int:
    out = Path(cfg.output.dir)
    t = cfg.trace
    f, grid = _trace_field(cfg)
    starts = np.asarray(t.starts, dtype=float)
    if grid is not None and np.any(grid.implicit(starts) < 0.0):
        raise ConfigError(["trace.starts: every start must lie outside the obstacle"])
    ctl = Controls(rtol=t.rtol, atol=t.atol)
    lines = integrate_streamlines(f, starts, t.t_max, ctl, surface=grid)
    sampled, times = [], []
    for sl in lines:
        ts = np.linspace(0.0, sl.times[-1], t.n_samples)
        sampled.append(sl.dense(ts)[:, :3])
        times.append(ts)
    export.write_streamlines_csv(out / "streamlines.csv", sampled, times)
    if cfg.output.vtk:
        export.write_polylines(out / "streamlines.vtk", sampled, f"streamlines of the {t.field} field")
    rows = [{"start": s.tolist(), "event": sl.event, "t_end": float(sl.times[-1]),
             "end": sampled[k][-1].tolist()} for k, (s, sl) in enumerate(zip(starts, lines))]
    res = {"lines": rows}
    if t.field == "rotation":
        r0 = np.linalg.norm(starts[:, :2], axis=1)
        res["radius_drift"] = float(max(np.max(np.abs(np.linalg.norm(p[:, :2], axis=1) - r)) for p, r in zip(sampled, r0)))
    export.write_report(out / "report.yaml", {"command": "trace", "config": cfg.as_dict(), "results": res})
    print(f"trace: {len(lines)} streamlines written")
    return EXIT_OK


def cmd_farfield(cfg: ScenarioConfig) -> int:
    out = Path(cfg.output.dir)
    ff = cfg.farfield
    lam = cfg.physics.lam
    grid = make_grid(cfg.domain)
    z = np.zeros(3) if ff.source == "point" else np.asarray(ff.shift, dtype=float) + grid.center
    if grid.implicit(z[None, :])[0] >= 0.0:
        raise ConfigError(["farfield.shift: the source must lie inside the obstacle"])
    a = kernels.gamma(lam, grid.nodes - z)
    dn_a = np.sum(kernels.grad_gamma(lam, grid.nodes - z) * grid.normals, axis=1)
    dirs = fibonacci_directions(ff.n_directions)
    pattern = scalar_far_field(lam, grid, a, dn_a, dirs)
    exact = np.exp(-1j * lam * dirs @ z)
    pat_err = float(np.max(np.abs(pattern.values - exact)))
    src = lambda x: kernels.gamma(lam, np.asarray(x) - z)
    grad_src = lambda x: kernels.grad_gamma(lam, np.asarray(x) - z)
    radii_rows = []
    for R in ff.radii:
        est = extract_far_field(src, lam, dirs, R)
        radii_rows.append((R, float(np.max(np.abs(est - exact)))))
    grad_err = far_field_gradient_check(src, grad_src, lam, dirs, ff.radii[-1])
    v0 = seed_field(seed_spec(cfg), radiating=True)
    radiation = radiation_scan(v0, lam, ff.radii, dirs)
    pn, pc = export.complex_columns("a_inf", pattern.values)
    en, ec = export.complex_columns("exact", exact)
    export.write_csv(out / "pattern.csv", ["sx", "sy", "sz"] + pn + en, [dirs[:, 0], dirs[:, 1], dirs[:, 2]] + pc + ec)
    export.write_csv(out / "radii.csv", ["R", "max_abs_error"],
                     [np.array([r for r, _ in radii_rows]), np.array([e for _, e in radii_rows])])
    export.write_csv(out / "radiation.csv", ["R", "smb_R", "amp_R"],
                     [np.array([r[k] for r in radiation]) for k in ("R", "smb_R", "amp_R")])
    export.write_report(out / "report.yaml", {
        "command": "farfield", "config": cfg.as_dict(),
        "results": {"pattern_max_error": pat_err, "finite_R_error": [{"R": r, "error": e} for r, e in radii_rows],
                    "gradient_relation_error": grad_err, "radiation": radiation}})
    print(f"farfield: pattern error {pat_err:.3e}, finite-R error at R={ff.radii[-1]:g}: {radii_rows[-1][1]:.3e}")
    return EXIT_OK


COMMANDS = {"solve-nib": cmd_solve_nib, "grad-rubin": cmd_grad_rubin, "trace": cmd_trace, "farfield": cmd_farfield}


# ------------------------------------------------------------------ entry point
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beltrami", description="Exterior Beltrami field solver scenarios.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    st = sub.add_parser("selftest", help="run the fast identity suite")
    st.add_argument("--out", help="also write selftest.yaml to this directory")
    st.add_argument("--inject-fault", help=argparse.SUPPRESS)
    for name, helptext in (("solve-nib", "manufactured exterior boundary-value problem"),
                           ("grad-rubin", "generalized Beltrami iteration from a seed"),
                           ("trace", "streamlines of an analytic or seed field"),
                           ("farfield", "far-field patterns and radiation scan")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="YAML scenario file")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="rng seed (overrides the config)")
        sp.add_argument("--dry-run", action="store_true", help="validate the config and print the plan only")
    return p


def _print_diagnostics(message: str, diagnostics: dict) -> None:
    print(f"numerical failure: {message}", file=sys.stderr)
    print("diagnostics:", file=sys.stderr)
    for k, v in diagnostics.items():
        print(f"  {k}: {v}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    try:
        if args.command == "selftest":
            return cmd_selftest(args)
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
        if args.dry_run:
            print(f"plan for {args.command}:")
            for step in plan(args.command, cfg):
                print(f"  - {step}")
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except (ConfigError, ConfigurationError, SeedSpecError) as exc:
        problems = exc.problems if isinstance(exc, ConfigError) else [str(exc)]
        print("configuration error:", file=sys.stderr)
        for msg in problems:
            print(f"  {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        _print_diagnostics(str(exc), exc.diagnostics)
        return EXIT_NUMERIC
    except NUMERICAL_ERRORS as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "offending", None) is not None:
            diag["offending"] = np.asarray(exc.offending).tolist()
        _print_diagnostics(str(exc), diag)
        if cfg is not None:
            export.write_report(Path(cfg.output.dir) / "report.yaml",
                                {"command": args.command, "config": cfg.as_dict(), "diagnostics": diag})
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

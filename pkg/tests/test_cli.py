import filecmp
from pathlib import Path

import numpy as np
import yaml

from beltrami import cli
from beltrami.export import read_csv

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).with_name("data") / "trace_rotation_golden.csv"

SMALL_DOMAIN = {"n_theta": 16, "n_phi": 32}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def csv_files(d):
    return sorted(p.name for p in Path(d).glob("*.csv"))


def assert_identical(a, b):
    names = csv_files(a)
    assert names and names == csv_files(b)
    for n in names:
        assert filecmp.cmp(Path(a) / n, Path(b) / n, shallow=False), n


# ------------------------------------------------------------------ selftest
def test_selftest_passes(capsys, tmp_path):
    code, out, _ = run(["selftest", "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    assert "0 failed" in out
    report = yaml.safe_load((tmp_path / "selftest.yaml").read_text())
    assert report


def test_selftest_detects_injected_fault(capsys):
    code, out, _ = run(["selftest", "--inject-fault", "kernel-constant"], capsys)
    assert code == cli.EXIT_CHECK
    assert "FAIL  kernel.newtonian_value" in out
    assert out.rstrip().endswith("2 failed: kernel.newtonian_value, kernel.split_limit")
    from beltrami import kernels
    assert kernels.FOUR_PI == 4.0 * np.pi  # the fault is undone afterwards


# ------------------------------------------------------------------ configuration
def test_config_errors_name_fields(capsys, tmp_path):
    cfg = write_cfg(tmp_path / "bad.yaml", {"domain": {"radius": -1.0, "bogus": 1},
                                             "iteration": {"amplitude": "large"}, "extra": {}})
    code, _, err = run(["grad-rubin", "--config", cfg], capsys)
    assert code == cli.EXIT_CONFIG
    for msg in ("domain.bogus: unknown key", "domain.radius: must be positive",
                "iteration.amplitude: expected a number", "extra"):
        assert msg in err


def test_seed_lambda_must_match(capsys, tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"physics": {"lambda": 2.0,
                                                      "seed": str(CONFIGS / "seeds" / "monopole_z.yaml")}})
    code, _, err = run(["solve-nib", "--config", cfg], capsys)
    assert code == cli.EXIT_CONFIG
    assert "lambda" in err


def test_missing_config_file(capsys, tmp_path):
    code, _, err = run(["trace", "--config", str(tmp_path / "nope.yaml")], capsys)
    assert code == cli.EXIT_CONFIG


def test_dry_run_writes_nothing(capsys, tmp_path):
    out_dir = tmp_path / "o"
    code, out, _ = run(["grad-rubin", "--config", str(CONFIGS / "grad_rubin.yaml"), "--out", str(out_dir),
                        "--dry-run"], capsys)
    assert code == cli.EXIT_OK
    assert out.startswith("plan for grad-rubin:")
    assert not out_dir.exists()


# ------------------------------------------------------------------ trace
def test_trace_rotation_matches_golden(capsys, tmp_path):
    code, _, _ = run(["trace", "--config", str(CONFIGS / "trace_rotation.yaml"), "--out", str(tmp_path)], capsys)
    assert code == cli.EXIT_OK
    h1, got = read_csv(tmp_path / "streamlines.csv")
    h2, ref = read_csv(GOLDEN)
    assert h1 == h2 == ["line", "t", "x", "y", "z"]
    np.testing.assert_array_equal(got[:, :2], ref[:, :2])
    assert np.max(np.abs(got[:, 2:] - ref[:, 2:])) < 1e-9
    rep = yaml.safe_load((tmp_path / "report.yaml").read_text())
    assert rep["results"]["radius_drift"] < 1e-9
    assert (tmp_path / "streamlines.vtk").exists()


def test_trace_seed_start_inside_obstacle(capsys, tmp_path):
    cfg = write_cfg(tmp_path / "t.yaml", {"domain": SMALL_DOMAIN,
                                          "physics": {"seed": str(CONFIGS / "seeds" / "monopole_z.yaml")},
                                          "trace": {"field": "seed", "starts": [[0.2, 0.0, 0.0]]}})
    code, _, err = run(["trace", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == cli.EXIT_CONFIG
    assert "trace.starts" in err


# ------------------------------------------------------------------ numerical failure
def test_lost_tube_exits_with_diagnostics(capsys, tmp_path):
    cfg = write_cfg(tmp_path / "g.yaml", {"domain": SMALL_DOMAIN,
                                          "physics": {"seed": str(CONFIGS / "seeds" / "monopole_z.yaml")},
                                          "iteration": {"tube_max_time": 0.05, "n_probes": 20, "n_pairs": 10}})
    out_dir = tmp_path / "o"
    code, _, err = run(["grad-rubin", "--config", cfg, "--out", str(out_dir)], capsys)
    assert code == cli.EXIT_NUMERIC
    assert "diagnostics:" in err and "TubeLostError" in err
    rep = yaml.safe_load((out_dir / "report.yaml").read_text())
    assert rep["diagnostics"]["error"] == "TubeLostError"
    assert rep["diagnostics"]["offending"]


# ------------------------------------------------------------------ determinism
def _twice(capsys, tmp_path, argv):
    dirs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code, _, err = run(argv + ["--out", str(d)], capsys)
        assert code == cli.EXIT_OK, err
        dirs.append(d)
    assert_identical(*dirs)
    return dirs[0]


def test_trace_is_deterministic(capsys, tmp_path):
    _twice(capsys, tmp_path, ["trace", "--config", str(CONFIGS / "trace_rotation.yaml")])


def test_solve_nib_is_deterministic(capsys, tmp_path):
    cfg = write_cfg(tmp_path / "n.yaml", {"domain": SMALL_DOMAIN,
                                          "physics": {"seed": str(CONFIGS / "seeds" / "low_degree_complex.yaml")},
                                          "nib": {"n_probes": 10}, "seed": 3})
    d = _twice(capsys, tmp_path, ["solve-nib", "--config", cfg])
    rep = yaml.safe_load((d / "report.yaml").read_text())
    assert rep["results"]["probe_rel_error"] < 2e-3


def test_farfield_is_deterministic(capsys, tmp_path):
    cfg = write_cfg(tmp_path / "f.yaml", {"domain": SMALL_DOMAIN, "farfield": {"source": "shifted"}})
    d = _twice(capsys, tmp_path, ["farfield", "--config", cfg])
    assert {"pattern.csv", "radii.csv", "radiation.csv"} <= set(csv_files(d))


def test_grad_rubin_zero_amplitude_is_deterministic(capsys, tmp_path):
    cfg = write_cfg(tmp_path / "g.yaml", {"domain": SMALL_DOMAIN,
                                          "physics": {"seed": str(CONFIGS / "seeds" / "monopole_z.yaml")},
                                          "iteration": {"amplitude": 0.0, "n_probes": 20, "n_pairs": 10}})
    d = _twice(capsys, tmp_path, ["grad-rubin", "--config", cfg])
    h, table = read_csv(d / "contraction.csv")
    assert h == ["n", "du_c0", "du_grad", "du_holder", "du_c1", "ratio"]
    assert table.shape[0] == 1 and table[0, 1] == 0.0

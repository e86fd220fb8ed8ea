import json

import numpy as np

from twoscale.cli import main

CANONICAL = {
    "kind": "saddle",
    "problem": {
        "theta": [[1.0, 0.0], [0.0, 1.0]],
        "C": [[[1.0, 0.0]], [[0.0, 1.0]]],
        "w": [[2.0], [0.0]],
        "kernel": [[0.5, 0.5], [0.5, 0.5]],
        "epsilon": 0.01,
        "radius": 4.0,
        "growth": 2.0,
    },
    "schedule": {"alpha": 0.6, "beta": 0.9},
    "noise": {"kind": "uniform", "fast_scale": 0.1, "slow_scale": 0.0},
    "steps": 2000,
    "seed": 7,
    "diagnostics": {"n_windows": 3, "apt_horizon": 0.5, "window_T": 0.25},
}


def write_config(tmp_path, cfg, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=1))
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[1].split(",")
    data = [row.split(",") for row in lines[2:]]
    return header, data


class TestValidate:
    def test_canonical_passes(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["out"] = str(tmp_path / "out")
        code = main(["validate", "--config", str(write_config(tmp_path, cfg))])
        assert code == 0
        report = (tmp_path / "out" / "validation_report.txt").read_text()
        assert "[FAIL]" not in report

    def test_bad_alpha_named(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["schedule"]["alpha"] = 0.4
        cfg["out"] = str(tmp_path / "out")
        code = main(["validate", "--config", str(write_config(tmp_path, cfg))])
        assert code == 1
        out = capsys.readouterr().out
        assert "schedule" in out and "FAIL" in out

    def test_missing_kernel_row_named(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["problem"]["kernel"] = [[0.5, 0.5]]
        cfg["out"] = str(tmp_path / "out")
        code = main(["validate", "--config", str(write_config(tmp_path, cfg))])
        assert code == 1
        out = capsys.readouterr().out
        assert "problem.kernel" in out

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["validate", "--config", str(tmp_path / "nope.json")])
        assert code == 3

    def test_invalid_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        code = main(["validate", "--config", str(p)])
        assert code == 1
        assert "invalid JSON" in capsys.readouterr().err


class TestRun:
    def test_two_row_trajectory(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["steps"] = 1
        cfg["out"] = str(tmp_path / "out")
        code = main(["run", "--config", str(write_config(tmp_path, cfg))])
        assert code == 0
        lines = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()
        # comment, header, two data rows
        assert len(lines) == 4

    def test_rerun_byte_identical(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["steps"] = 500
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        for out in (out1, out2):
            cfg["out"] = str(out)
            assert main(["run", "--config", str(write_config(tmp_path, cfg))]) == 0
        assert (out1 / "trajectory.csv").read_bytes() == (
            out2 / "trajectory.csv"
        ).read_bytes()

    def test_outputs_exist_and_manifest(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["steps"] = 1500
        cfg["diagnostics"] = {"n_windows": 4, "apt_horizon": 1.0, "window_T": 0.5}
        cfg["out"] = str(tmp_path / "out")
        code = main(["run", "--config", str(write_config(tmp_path, cfg))])
        assert code == 0
        out = tmp_path / "out"
        for name in ("trajectory.csv", "diagnostics.csv", "manifest.json", "report.txt"):
            assert (out / name).exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        header, data = read_csv(out / "diagnostics.csv")
        assert header == [
            "window", "t_slow_start", "interpolation_gap", "apt_metric", "dist_to_lambda",
        ]
        assert len(data) == 4

    def test_manifest_hash_tracks_config(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["steps"] = 50
        cfg["out"] = str(tmp_path / "out")
        hashes = []
        for steps in (50, 50, 60):
            cfg["steps"] = steps
            main(["run", "--config", str(write_config(tmp_path, cfg))])
            manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
            hashes.append(manifest["config_sha256"])
        assert hashes[0] == hashes[1]
        assert hashes[0] != hashes[2]

    def test_generic_two_timescale(self, tmp_path):
        cfg = {
            "kind": "two_timescale",
            "d1": 1,
            "d2": 1,
            "drift_fast": {"name": "negate_x"},
            "drift_slow": {"name": "negate_y"},
            "schedule": {"alpha": 0.6, "beta": 0.9},
            "steps": 1000,
            "seed": 0,
            "x0": [1.0],
            "y0": [1.0],
            "out": str(tmp_path / "out"),
        }
        code = main(["run", "--config", str(write_config(tmp_path, cfg))])
        assert code == 0
        header, data = read_csv(tmp_path / "out" / "trajectory.csv")
        final_x = float(data[-1][header.index("X0")])
        assert abs(final_x) <= 1e-3

    def test_divergence_exit_code(self, tmp_path):
        cfg = {
            "kind": "two_timescale",
            "d1": 1,
            "d2": 1,
            "drift_fast": {"name": "expand_x"},
            "drift_slow": {"name": "negate_y"},
            "schedule": {"alpha": 0.6, "beta": 0.9},
            "steps": 300,
            "seed": 0,
            "x0": [1e9],
            "y0": [0.0],
            "out": str(tmp_path / "out"),
        }
        code = main(["run", "--config", str(write_config(tmp_path, cfg))])
        assert code == 2
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert "divergence_step" in manifest

    def test_replicas(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["steps"] = 200
        cfg["out"] = str(tmp_path / "out")
        code = main(
            ["run", "--config", str(write_config(tmp_path, cfg)), "--replicas", "2"]
        )
        assert code == 0
        assert (tmp_path / "out" / "replica_000" / "trajectory.csv").exists()
        assert (tmp_path / "out" / "replica_001" / "trajectory.csv").exists()
        assert (tmp_path / "out" / "replicas.csv").exists()

    def test_seed_override(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["steps"] = 20
        cfg["out"] = str(tmp_path / "out")
        path = write_config(tmp_path, cfg)
        assert main(["run", "--config", str(path), "--seed", "99"]) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["seed"] == 99


class TestSolveDi:
    def test_sign_field_hits_zero(self, tmp_path):
        cfg = {
            "kind": "di",
            "field": {"name": "sign"},
            "z0": [1.0],
            "T": 2.0,
            "dt": 0.001,
            "out": str(tmp_path / "out"),
        }
        code = main(["solve-di", "--config", str(write_config(tmp_path, cfg))])
        assert code == 0
        header, data = read_csv(tmp_path / "out" / "di_path.csv")
        t = np.array([float(r[0]) for r in data])
        z = np.array([float(r[1]) for r in data])
        near_one = np.argmin(np.abs(t - 1.0))
        assert abs(z[near_one]) <= 5e-3
        assert np.abs(z[t >= 1.01]).max() <= 5e-3

    def test_equilibrium_constant_column(self, tmp_path):
        cfg = {
            "kind": "di",
            "field": {"name": "sign"},
            "z0": [0.0],
            "T": 1.0,
            "dt": 0.01,
            "out": str(tmp_path / "out"),
        }
        assert main(["solve-di", "--config", str(write_config(tmp_path, cfg))]) == 0
        header, data = read_csv(tmp_path / "out" / "di_path.csv")
        assert all(float(r[1]) == 0.0 for r in data)

    def test_envelope_flag(self, tmp_path):
        cfg = {
            "kind": "di",
            "field": {"saddle_dual": CANONICAL["problem"]},
            "z0": [0.0],
            "T": 3.0,
            "dt": 0.005,
            "out": str(tmp_path / "out"),
        }
        code = main(
            ["solve-di", "--config", str(write_config(tmp_path, cfg)), "--envelope"]
        )
        assert code == 0
        header, data = read_csv(tmp_path / "out" / "envelope.csv")
        disc = np.array([abs(float(r[3])) for r in data])
        assert disc.max() <= 1e-3

    def test_envelope_needs_saddle_field(self, tmp_path, capsys):
        cfg = {
            "kind": "di",
            "field": {"name": "sign"},
            "z0": [1.0],
            "T": 1.0,
            "dt": 0.01,
            "out": str(tmp_path / "out"),
        }
        code = main(
            ["solve-di", "--config", str(write_config(tmp_path, cfg)), "--envelope"]
        )
        assert code == 1


class TestSaddleCommand:
    def test_requires_saddle_kind(self, tmp_path, capsys):
        cfg = {
            "kind": "two_timescale",
            "d1": 1,
            "d2": 1,
            "drift_fast": {"name": "negate_x"},
            "drift_slow": {"name": "negate_y"},
            "schedule": {"alpha": 0.6, "beta": 0.9},
            "steps": 5,
            "out": str(tmp_path / "out"),
        }
        code = main(["saddle", "--config", str(write_config(tmp_path, cfg))])
        assert code == 1

    def test_writes_report(self, tmp_path):
        cfg = json.loads(json.dumps(CANONICAL))
        cfg["steps"] = 1500
        cfg["diagnostics"] = {"n_windows": 3, "apt_horizon": 1.0, "window_T": 0.5}
        cfg["out"] = str(tmp_path / "out")
        code = main(["saddle", "--config", str(write_config(tmp_path, cfg))])
        assert code == 0
        report = (tmp_path / "out" / "report.txt").read_text()
        assert "feasibility gap" in report


class TestNamedKernel:
    def test_x_threshold_kernel_runs(self, tmp_path):
        cfg = {
            "kind": "two_timescale",
            "d1": 1,
            "d2": 1,
            "alphabet": 2,
            "drift_fast": {"name": "negate_x"},
            "drift_slow": {"name": "negate_y"},
            "kernel_fast": {"name": "x_threshold"},
            "kernel_slow": {"name": "x_threshold"},
            "schedule": {"alpha": 0.6, "beta": 0.9},
            "steps": 500,
            "seed": 4,
            "x0": [1.0],
            "y0": [1.0],
            "out": str(tmp_path / "out"),
        }
        code = main(["run", "--config", str(write_config(tmp_path, cfg))])
        assert code == 0

    def test_unknown_kernel_named(self, tmp_path, capsys):
        cfg = {
            "kind": "two_timescale",
            "d1": 1,
            "d2": 1,
            "drift_fast": {"name": "negate_x"},
            "drift_slow": {"name": "negate_y"},
            "kernel_fast": {"name": "no_such_kernel"},
            "schedule": {"alpha": 0.6, "beta": 0.9},
            "steps": 5,
            "out": str(tmp_path / "out"),
        }
        code = main(["run", "--config", str(write_config(tmp_path, cfg))])
        assert code == 1
        assert "kernel_fast" in capsys.readouterr().err

import json

import numpy as np

from eqcon.cli import run_cli

GAUSSIAN_SAMPLE_CFG = {
    "constraint": {"A": [[1.0, 1.0]], "k": [0.0]},
    "mean": [1.0, 0.0],
    "cov_diag": [1.0, 1.0],
    "count": 5,
    "seed": 11,
}

DISCRETE_SAMPLE_CFG = {"rates": [1.0, 3.0, 2.0], "total": 6, "count": 8, "seed": 11}

BENCH_CFG = {
    "n_vars": 5,
    "n_constraints": 1,
    "n_param_sets": 2,
    "n_grad_samples": 60,
    "loss_kind": "l2",
    "family": "gaussian",
    "seed": 21,
}

TRAIN_CFG = {
    "task": "cstr",
    "method": "closed_form_l2",
    "epochs": 3,
    "learning_rate": 0.05,
    "batch_size": 64,
    "seed": 31,
    "data": {"n_train": 120, "n_val": 30, "n_test": 40, "noise_scale": 0.02},
    "encoder": {"layer_widths": [3, 8, 6], "activation": "tanh"},
}


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


class TestSampleCommand:
    def test_gaussian_rows_satisfy_constraint(self, tmp_path, capsys):
        cfg = _write(tmp_path, "cfg.json", GAUSSIAN_SAMPLE_CFG)
        out = tmp_path / "samples.csv"
        assert run_cli(["sample", "--config", cfg, "--out", str(out)]) == 0
        raw = out.read_bytes().decode("utf-8")
        assert raw.endswith("\r\n")
        lines = raw.strip().split("\r\n")
        assert lines[0] == "z0,z1"
        assert len(lines) == 6
        for line in lines[1:]:
            z = np.array([float(v) for v in line.split(",")])
            assert abs(z.sum()) <= 1e-9

    def test_discrete_rows_sum_to_total(self, tmp_path):
        cfg = _write(tmp_path, "cfg.json", DISCRETE_SAMPLE_CFG)
        out = tmp_path / "samples.csv"
        assert run_cli(["sample", "--config", cfg, "--out", str(out), "--discrete"]) == 0
        lines = out.read_bytes().decode("utf-8").strip().split("\r\n")
        assert lines[0] == "z0,z1,z2"
        for line in lines[1:]:
            assert sum(int(v) for v in line.split(",")) == 6

    def test_full_covariance_config(self, tmp_path):
        cfg = _write(
            tmp_path,
            "cfg.json",
            {
                "constraint": {"A": [[1.0, 1.0, 1.0]], "k": [3.0]},
                "mean": [0.0, 1.0, 2.0],
                "cov": [[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 1.5]],
                "count": 20,
                "seed": 5,
            },
        )
        out = tmp_path / "samples.csv"
        assert run_cli(["sample", "--config", cfg, "--out", str(out)]) == 0
        lines = out.read_bytes().decode("utf-8").strip().split("\r\n")
        for line in lines[1:]:
            z = np.array([float(v) for v in line.split(",")])
            assert abs(z.sum() - 3.0) <= 1e-9

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _write(tmp_path, "cfg.json", GAUSSIAN_SAMPLE_CFG)
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli(["sample", "--config", cfg, "--out", str(out_a)])
        run_cli(["sample", "--config", cfg, "--out", str(out_b)])
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_seed_override_changes_output(self, tmp_path):
        cfg = _write(tmp_path, "cfg.json", GAUSSIAN_SAMPLE_CFG)
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli(["sample", "--config", cfg, "--out", str(out_a)])
        run_cli(["sample", "--config", cfg, "--out", str(out_b), "--seed", "99"])
        assert out_a.read_bytes() != out_b.read_bytes()

    def test_unknown_key_fails_fast(self, tmp_path, capsys):
        bad = dict(GAUSSIAN_SAMPLE_CFG)
        bad["covv_diag"] = [1.0, 1.0]
        cfg = _write(tmp_path, "cfg.json", bad)
        code = run_cli(["sample", "--config", cfg, "--out", str(tmp_path / "o.csv")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ConfigError"
        assert "covv_diag" in err["message"]

    def test_invalid_json_fails(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        code = run_cli(["sample", "--config", str(path), "--out", str(tmp_path / "o.csv")])
        assert code == 1

    def test_numeric_failure_exit_code(self, tmp_path, capsys):
        cfg = _write(
            tmp_path,
            "cfg.json",
            {
                "constraint": {"A": [[1.0, 0.0], [0.0, 1.0]], "k": [0.0, 0.0]},
                "mean": [0.0, 0.0],
                "cov_diag": [1.0, 1e-14],
                "count": 3,
                "seed": 0,
            },
        )
        code = run_cli(["sample", "--config", cfg, "--out", str(tmp_path / "o.csv")])
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "IllConditioned"

    def test_missing_seed_is_validation_error(self, tmp_path, capsys):
        cfg_payload = dict(GAUSSIAN_SAMPLE_CFG)
        del cfg_payload["seed"]
        cfg = _write(tmp_path, "cfg.json", cfg_payload)
        assert run_cli(["sample", "--config", cfg, "--out", str(tmp_path / "o.csv")]) == 1


class TestBenchCommand:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = _write(tmp_path, "cfg.json", BENCH_CFG)
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run_cli(["bench", "--config", cfg, "--out", str(out_a)]) == 0
        assert run_cli(["bench", "--config", cfg, "--out", str(out_b)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        assert (tmp_path / "a.json").exists()
        assert (tmp_path / "a.png").exists()
        payload = json.loads((tmp_path / "a.json").read_text())
        assert payload["config"]["seed"] == 21

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        cfg = _write(tmp_path, "cfg.json", BENCH_CFG)
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli(["bench", "--config", cfg, "--out", str(out_a), "--threads", "1"])
        run_cli(["bench", "--config", cfg, "--out", str(out_b), "--threads", "3"])
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_unknown_key_named(self, tmp_path, capsys):
        bad = dict(BENCH_CFG)
        bad["n_vras"] = 4
        cfg = _write(tmp_path, "cfg.json", bad)
        assert run_cli(["bench", "--config", cfg, "--out", str(tmp_path / "o.csv")]) == 1
        assert "n_vras" in capsys.readouterr().err

    def test_bad_enum_value(self, tmp_path, capsys):
        bad = dict(BENCH_CFG)
        bad["loss_kind"] = "l3"
        cfg = _write(tmp_path, "cfg.json", bad)
        assert run_cli(["bench", "--config", cfg, "--out", str(tmp_path / "o.csv")]) == 1


class TestTrainCommand:
    def test_report_written(self, tmp_path):
        cfg = _write(tmp_path, "cfg.json", TRAIN_CFG)
        out = tmp_path / "report.json"
        assert run_cli(["train", "--config", cfg, "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["config"]["method"] == "closed_form_l2"
        assert len(payload["report"]["train_mse"]) == 3
        assert payload["report"]["violation_rate"] == 0.0
        assert (tmp_path / "report.png").exists()

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _write(tmp_path, "cfg.json", TRAIN_CFG)
        out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
        run_cli(["train", "--config", cfg, "--out", str(out_a)])
        run_cli(["train", "--config", cfg, "--out", str(out_b)])
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_numeric_failure_exit_code(self, tmp_path, capsys):
        bad = dict(TRAIN_CFG)
        bad["learning_rate"] = 1e6
        bad["epochs"] = 60
        cfg = _write(tmp_path, "cfg.json", bad)
        assert run_cli(["train", "--config", cfg, "--out", str(tmp_path / "o.json")]) == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "NonFiniteLoss"

    def test_nested_unknown_key_named(self, tmp_path, capsys):
        bad = json.loads(json.dumps(TRAIN_CFG))
        bad["data"]["n_trian"] = 50
        cfg = _write(tmp_path, "cfg.json", bad)
        assert run_cli(["train", "--config", cfg, "--out", str(tmp_path / "o.json")]) == 1
        assert "n_trian" in capsys.readouterr().err


class TestVerifyCommand:
    def test_default_verify_passes(self, capsys):
        assert run_cli(["verify"]) == 0
        out = capsys.readouterr().out
        assert "all checks passed" in out

    def test_quick_verify_passes(self, tmp_path, capsys):
        cfg = _write(tmp_path, "cfg.json", {"seed": 0, "n_instances": 2, "mc_count": 20000})
        out = tmp_path / "verify.json"
        code = run_cli(["verify", "--config", cfg, "--out", str(out)])
        captured = capsys.readouterr().out
        assert code == 0
        assert "PASS" in captured
        assert "FAIL" not in captured
        payload = json.loads(out.read_text())
        assert all(check["passed"] for check in payload["checks"])

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from contracert.cli import (
    EXIT_BUDGET,
    EXIT_CONFIG,
    EXIT_FALSIFIED,
    EXIT_INFEASIBLE,
    EXIT_OK,
    EXIT_VERIFY_MISMATCH,
    main,
)
from contracert.config import ConfigError, RunConfig

SCALAR_CONFIG = """\
[run]
seed = 0
out_dir = "{out}"

[system]
name = "scalar_linear"

[region]
lo = [-1.0]
hi = [1.0]
partitions = [2]

[hyper]
metric_lower = 0.01
metric_upper = 100.0
rate = 0.1

[nets]
hidden = [8, 8]

[optimizer]
step_size = 1e-2

[curriculum]
max_steps = 500
"""


def write_config(tmp_path, text=None, **kw):
    out = tmp_path / "run"
    body = (text or SCALAR_CONFIG).format(out=out.as_posix(), **kw)
    path = tmp_path / "config.toml"
    path.write_text(body)
    return path, out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One trained scalar run shared by the read-only CLI tests."""
    tmp_path = tmp_path_factory.mktemp("trained")
    config_path, out = write_config(tmp_path)
    code = main(["train", "--config", str(config_path)])
    assert code == EXIT_OK
    return config_path, out


class TestConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            RunConfig.from_toml(tmp_path / "nope.toml")

    def test_inverted_region_names_coordinate(self, tmp_path):
        path, _ = write_config(tmp_path)
        body = path.read_text().replace("lo = [-1.0]", "lo = [2.0]")
        path.write_text(body)
        with pytest.raises(ConfigError, match=r"region\.lo\[0\]"):
            RunConfig.from_toml(path)

    def test_unknown_key_rejected(self, tmp_path):
        path, _ = write_config(tmp_path)
        path.write_text(path.read_text() + "\n[run2]\nx = 1\n")
        with pytest.raises(ConfigError, match="unknown"):
            RunConfig.from_toml(path)

    def test_wrong_dimension_rejected(self, tmp_path):
        path, _ = write_config(tmp_path)
        body = path.read_text().replace('name = "scalar_linear"', 'name = "planar_nonlinear"')
        path.write_text(body)
        with pytest.raises(ConfigError, match="expected 2 coordinates"):
            RunConfig.from_toml(path)

    def test_bad_metric_bounds(self, tmp_path):
        path, _ = write_config(tmp_path)
        body = path.read_text().replace("metric_upper = 100.0", "metric_upper = 0.001")
        path.write_text(body)
        with pytest.raises(ConfigError, match="metric_lower < metric_upper"):
            RunConfig.from_toml(path)

    def test_unknown_propagator(self, tmp_path):
        path, _ = write_config(tmp_path)
        path.write_text(path.read_text() + '\n[propagation]\ntag = "crown"\n')
        with pytest.raises(ConfigError, match="propagation.tag"):
            RunConfig.from_toml(path)

    def test_roundtrip_to_dict(self, tmp_path):
        path, _ = write_config(tmp_path)
        config = RunConfig.from_toml(path)
        rebuilt = RunConfig.from_dict(config.to_dict())
        assert rebuilt == config


class TestTrainCommand:
    def test_artifacts_and_exit_code(self, trained):
        _, out = trained
        assert (out / "checkpoint.json").exists()
        assert (out / "certificate.json").exists()
        assert (out / "train_log.csv").exists()
        assert (out / "checkpoints" / "stage_100.json").exists()
        with open(out / "train_log.csv") as fh:
            header = next(csv.reader(fh))
        assert header == [
            "step",
            "stage",
            "loss",
            "log_norm_bound",
            "metric_eig_lo",
            "metric_eig_hi",
            "wall_time_s",
        ]

    def test_malformed_config_exits_2(self, tmp_path, capsys):
        path, _ = write_config(tmp_path)
        path.write_text(path.read_text().replace("lo = [-1.0]", "lo = [2.0]"))
        assert main(["train", "--config", str(path)]) == EXIT_CONFIG
        assert "region.lo[0]" in capsys.readouterr().err

    def test_zero_budget_exits_3_with_checkpoint(self, tmp_path):
        path, out = write_config(tmp_path)
        body = path.read_text().replace("max_steps = 500", "max_steps = 0")
        # an unreachable rate makes the first stage fail immediately
        body = body.replace("rate = 0.1", "rate = 50.0")
        path.write_text(body)
        assert main(["train", "--config", str(path)]) == EXIT_BUDGET
        assert (out / "checkpoint.json").exists()


class TestVerifyCommand:
    def test_fresh_certificate_verifies(self, trained):
        config_path, out = trained
        code = main(
            ["verify", "--ckpt", str(out / "checkpoint.json"), "--config", str(config_path)]
        )
        assert code == EXIT_OK

    def test_tampered_bound_detected(self, trained, tmp_path, capsys):
        _, out = trained
        cert = json.loads((out / "certificate.json").read_text())
        blob = bytearray(bytes.fromhex(cert["cell_bounds"]["hex"]))
        # nudge the first stored bound by one ulp step in the mantissa
        value = np.frombuffer(bytes(blob), dtype="<f8").copy()
        value[0] += 1e-6
        cert["cell_bounds"]["hex"] = value.tobytes().hex()
        tampered = tmp_path / "certificate.json"
        tampered.write_text(json.dumps(cert))
        code = main(
            ["verify", "--ckpt", str(out / "checkpoint.json"), "--cert", str(tampered)]
        )
        assert code == EXIT_VERIFY_MISMATCH
        assert "cell 0" in capsys.readouterr().err

    def test_wrong_grid_detected(self, trained, tmp_path, capsys):
        config_path, out = trained
        cert = json.loads((out / "certificate.json").read_text())
        cert["region"]["partitions"] = [7]
        tampered = tmp_path / "certificate.json"
        tampered.write_text(json.dumps(cert))
        code = main(
            [
                "verify",
                "--ckpt",
                str(out / "checkpoint.json"),
                "--cert",
                str(tampered),
                "--config",
                str(config_path),
            ]
        )
        assert code == EXIT_VERIFY_MISMATCH
        assert "grid-mismatch" in capsys.readouterr().err

    def test_missing_certificate_is_config_error(self, trained, tmp_path):
        _, out = trained
        code = main(
            ["verify", "--ckpt", str(out / "checkpoint.json"), "--cert", str(tmp_path / "x.json")]
        )
        assert code == EXIT_CONFIG


class TestFalsifyCommand:
    def test_certified_model_clean(self, trained):
        config_path, out = trained
        code = main(
            [
                "falsify",
                "--ckpt",
                str(out / "checkpoint.json"),
                "--samples",
                "2000",
                "--config",
                str(config_path),
            ]
        )
        assert code == EXIT_OK

    def test_zero_samples_vacuous_with_warning(self, trained, capsys):
        _, out = trained
        code = main(["falsify", "--ckpt", str(out / "checkpoint.json"), "--samples", "0"])
        assert code == EXIT_OK
        assert "vacuous" in capsys.readouterr().out

    def test_violation_detected(self, tmp_path):
        # train with zero budget and an unreachable rate, then sample: the
        # LQR seed cannot deliver rate 50, so sampling must find violations
        path, out = write_config(tmp_path)
        body = path.read_text().replace("max_steps = 500", "max_steps = 0")
        body = body.replace("rate = 0.1", "rate = 50.0")
        path.write_text(body)
        assert main(["train", "--config", str(path)]) == EXIT_BUDGET
        code = main(
            [
                "falsify",
                "--ckpt",
                str(out / "checkpoint.json"),
                "--samples",
                "500",
                "--config",
                str(path),
            ]
        )
        assert code == EXIT_FALSIFIED


class TestSimulateCommand:
    def test_hover_bundle(self, trained, tmp_path):
        _, out = trained
        sim_dir = tmp_path / "sim"
        code = main(
            [
                "simulate",
                "--ckpt",
                str(out / "checkpoint.json"),
                "--shape",
                "hover",
                "--duration",
                "2.0",
                "--dt",
                "0.001",
                "--starts",
                "3",
                "--out",
                str(sim_dir),
            ]
        )
        assert code == EXIT_OK
        for name in ("reference.csv", "trajectories.csv", "errors.csv", "rates.csv", "manifest.json"):
            assert (sim_dir / name).exists()
        manifest = json.loads((sim_dir / "manifest.json").read_text())
        assert manifest["trajectories"] == 3
        # every error trace decays for the certified scalar system
        with open(sim_dir / "errors.csv") as fh:
            rows = list(csv.DictReader(fh))
        for tid in {r["trajectory"] for r in rows}:
            series = [float(r["weighted_error"]) for r in rows if r["trajectory"] == tid]
            assert series[-1] < series[0]

    def test_non_quadrotor_rejects_other_shapes(self, trained, capsys):
        _, out = trained
        code = main(
            ["simulate", "--ckpt", str(out / "checkpoint.json"), "--shape", "trefoil"]
        )
        assert code == EXIT_CONFIG
        assert "hover" in capsys.readouterr().err

    def test_export_plots(self, trained, tmp_path):
        _, out = trained
        sim_dir = tmp_path / "sim"
        assert (
            main(
                [
                    "simulate",
                    "--ckpt",
                    str(out / "checkpoint.json"),
                    "--duration",
                    "1.0",
                    "--starts",
                    "2",
                    "--out",
                    str(sim_dir),
                ]
            )
            == EXIT_OK
        )
        assert main(["export-plots", "--run", str(sim_dir)]) == EXIT_OK
        assert (sim_dir / "plots" / "paths.png").exists()
        assert (sim_dir / "plots" / "errors.png").exists()
        assert (sim_dir / "plots_manifest.json").exists()

    def test_export_plots_without_simulation(self, tmp_path):
        assert main(["export-plots", "--run", str(tmp_path)]) == EXIT_CONFIG


class TestRoundTrip:
    def test_same_seed_reproduces_artifacts(self, tmp_path):
        # one config file, two output directories via --out: the artifacts
        # must match byte for byte
        config_path, _ = write_config(tmp_path)
        results = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert main(["train", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
            results.append(
                (
                    (out / "checkpoint.json").read_bytes(),
                    (out / "certificate.json").read_bytes(),
                    (out / "train_log.csv").read_bytes(),
                )
            )
        assert results[0] == results[1]

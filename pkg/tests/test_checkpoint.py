import json

import numpy as np
import pytest

from contracert.boundprop import Region
from contracert.certify import certify_region
from contracert.checkpoint import (
    FORMAT_VERSION,
    load_certificate,
    load_checkpoint,
    save_certificate,
    save_checkpoint,
)
from contracert.problem import problem_fingerprint, warm_start_problem
from contracert.systems import benchmark_system


@pytest.fixture
def problem():
    return warm_start_problem(
        benchmark_system("planar_nonlinear"),
        rate=0.1,
        metric_lower=0.01,
        metric_upper=100.0,
        hidden=(6, 6),
        seed=3,
    )


class TestCheckpointRoundtrip:
    def test_exact_parameter_roundtrip(self, tmp_path, problem):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, problem, stage=7, seed=3)
        data = load_checkpoint(path)
        assert data.stage == 7 and data.seed == 3
        assert np.array_equal(data.problem.policy.gain, problem.policy.gain)
        assert np.array_equal(data.problem.theta.warm_start, problem.theta.warm_start)
        for (w1, b1), (w2, b2) in zip(
            data.problem.theta.residual.layers, problem.theta.residual.layers
        ):
            assert np.array_equal(w1, w2)
            assert np.array_equal(b1, b2)
        assert problem_fingerprint(data.problem) == problem_fingerprint(problem)

    def test_region_and_config_roundtrip(self, tmp_path, problem):
        path = tmp_path / "ckpt.json"
        lo, hi = -np.ones(2), np.ones(2)
        save_checkpoint(
            path,
            problem,
            config={"hyper": {"rate": 0.1}},
            region_lo=lo,
            region_hi=hi,
            partitions=(3, 3),
        )
        data = load_checkpoint(path)
        assert np.array_equal(data.region_lo, lo)
        assert data.partitions == (3, 3)
        assert data.config == {"hyper": {"rate": 0.1}}

    def test_deterministic_bytes(self, tmp_path, problem):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(p1, problem, stage=1)
        save_checkpoint(p2, problem, stage=1)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_unknown_major_version(self, tmp_path, problem):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, problem)
        payload = json.loads(path.read_text())
        payload["format_version"] = "2.0"
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="format version"):
            load_checkpoint(path)

    def test_accepts_same_major_newer_minor(self, tmp_path, problem):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, problem)
        payload = json.loads(path.read_text())
        payload["format_version"] = FORMAT_VERSION.split(".")[0] + ".9"
        path.write_text(json.dumps(payload))
        load_checkpoint(path)

    def test_tampered_parameters_detected(self, tmp_path, problem):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, problem)
        payload = json.loads(path.read_text())
        blob = payload["policy"]["gain"]["hex"]
        payload["policy"]["gain"]["hex"] = blob[:-2] + ("00" if blob[-2:] != "00" else "3f")
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="fingerprint"):
            load_checkpoint(path)


class TestCertificateRoundtrip:
    def test_roundtrip(self, tmp_path, problem):
        region = Region(np.array([-0.2, -0.2]), np.array([0.2, 0.2]), (2, 2))
        cert = certify_region(problem, region)
        path = tmp_path / "cert.json"
        save_certificate(path, cert)
        loaded = load_certificate(path)
        assert loaded.certified == cert.certified
        assert np.array_equal(loaded.cell_bounds, cert.cell_bounds)
        assert loaded.problem_hash == cert.problem_hash
        assert loaded.partitions == cert.partitions
        assert loaded.metric_eig_lo == cert.metric_eig_lo

    def test_deterministic_bytes(self, tmp_path, problem):
        region = Region(np.array([-0.2, -0.2]), np.array([0.2, 0.2]), (1, 1))
        cert = certify_region(problem, region)
        p1, p2 = tmp_path / "c1.json", tmp_path / "c2.json"
        save_certificate(p1, cert)
        save_certificate(p2, cert)
        assert p1.read_bytes() == p2.read_bytes()

    def test_kind_checked(self, tmp_path, problem):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, problem)
        with pytest.raises(ValueError, match="not a certificate"):
            load_certificate(path)

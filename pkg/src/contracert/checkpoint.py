"""Self-describing JSON artifacts: checkpoints and certificates.

Arrays serialize as little-endian float64 hex blobs with explicit shapes,
so parameters round-trip exactly and identical runs produce byte-identical
files.  Every artifact carries a format version; loading rejects unknown
major versions.  Certificates additionally embed the parameter fingerprint
of the problem they certify.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .certify import Certificate
from .nets import PACKING_TAG, MetricNet, MlpParams, PolicyNet
from .problem import ContractionProblem, problem_fingerprint
from .systems import benchmark_system

__all__ = [
    "FORMAT_VERSION",
    "save_checkpoint",
    "load_checkpoint",
    "save_certificate",
    "load_certificate",
    "CheckpointData",
]

FORMAT_VERSION = "1.0"


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "dtype": "<f8", "hex": arr.tobytes().hex()}


def _decode_array(blob: dict) -> np.ndarray:
    if blob["dtype"] != "<f8":
        raise ValueError(f"unsupported array dtype {blob['dtype']!r}")
    flat = np.frombuffer(bytes.fromhex(blob["hex"]), dtype="<f8")
    return flat.reshape(blob["shape"]).astype(np.float64, copy=True)


def _check_version(payload: dict, path: Path) -> None:
    version = payload.get("format_version", "")
    major = version.split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise ValueError(
            f"{path}: format version {version!r} not supported (expected major "
            f"{FORMAT_VERSION.split('.')[0]})"
        )


def _dump(payload: dict, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def _encode_mlp(net: MlpParams) -> list[dict]:
    return [
        {"weight": _encode_array(w), "bias": _encode_array(b)} for w, b in net.layers
    ]


def _decode_mlp(blobs: list[dict]) -> MlpParams:
    return MlpParams(
        tuple((_decode_array(l["weight"]), _decode_array(l["bias"])) for l in blobs)
    )


@dataclass(frozen=True)
class CheckpointData:
    problem: ContractionProblem
    config: dict | None
    region_lo: np.ndarray | None
    region_hi: np.ndarray | None
    partitions: tuple[int, ...] | None
    stage: int | None
    seed: int | None
    rng_state: dict | None


def save_checkpoint(
    path,
    problem: ContractionProblem,
    *,
    config: dict | None = None,
    region_lo: np.ndarray | None = None,
    region_hi: np.ndarray | None = None,
    partitions: tuple[int, ...] | None = None,
    stage: int | None = None,
    seed: int | None = None,
    rng_state: dict | None = None,
) -> None:
    payload: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "kind": "checkpoint",
        "packing": PACKING_TAG,
        "system": problem.system.name,
        "rate": problem.rate,
        "metric_lower": problem.metric_lower,
        "metric_upper": problem.metric_upper,
        "policy": {
            "gain": _encode_array(problem.policy.gain),
            "x_eq": _encode_array(problem.policy.x_eq),
            "u_eq": _encode_array(problem.policy.u_eq),
            "residual": _encode_mlp(problem.policy.residual),
        },
        "theta": {
            "warm_start": _encode_array(problem.theta.warm_start),
            "input_projection": _encode_array(problem.theta.input_projection),
            "residual": _encode_mlp(problem.theta.residual),
        },
        "fingerprint": problem_fingerprint(problem),
    }
    if config is not None:
        payload["config"] = config
    if region_lo is not None and region_hi is not None:
        payload["region"] = {
            "lo": _encode_array(np.asarray(region_lo)),
            "hi": _encode_array(np.asarray(region_hi)),
        }
        if partitions is not None:
            payload["region"]["partitions"] = list(partitions)
    if stage is not None:
        payload["stage"] = stage
    if seed is not None:
        payload["seed"] = seed
    if rng_state is not None:
        payload["rng_state"] = rng_state
    _dump(payload, Path(path))


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    payload = json.loads(path.read_text())
    _check_version(payload, path)
    if payload.get("kind") != "checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    if payload.get("packing") != PACKING_TAG:
        raise ValueError(f"{path}: unknown packing tag {payload.get('packing')!r}")
    system = benchmark_system(payload["system"])
    policy = PolicyNet(
        gain=_decode_array(payload["policy"]["gain"]),
        x_eq=_decode_array(payload["policy"]["x_eq"]),
        u_eq=_decode_array(payload["policy"]["u_eq"]),
        residual=_decode_mlp(payload["policy"]["residual"]),
    )
    theta = MetricNet(
        warm_start=_decode_array(payload["theta"]["warm_start"]),
        residual=_decode_mlp(payload["theta"]["residual"]),
        input_projection=_decode_array(payload["theta"]["input_projection"]),
    )
    problem = ContractionProblem(
        system=system,
        theta=theta,
        policy=policy,
        rate=payload["rate"],
        metric_lower=payload["metric_lower"],
        metric_upper=payload["metric_upper"],
    )
    if payload["fingerprint"] != problem_fingerprint(problem):
        raise ValueError(f"{path}: parameter fingerprint mismatch")
    region = payload.get("region")
    return CheckpointData(
        problem=problem,
        config=payload.get("config"),
        region_lo=_decode_array(region["lo"]) if region else None,
        region_hi=_decode_array(region["hi"]) if region else None,
        partitions=tuple(region["partitions"]) if region and "partitions" in region else None,
        stage=payload.get("stage"),
        seed=payload.get("seed"),
        rng_state=payload.get("rng_state"),
    )


def save_certificate(path, certificate: Certificate) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "certificate",
        "problem_hash": certificate.problem_hash,
        "region": {
            "lo": _encode_array(certificate.region_lo),
            "hi": _encode_array(certificate.region_hi),
            "partitions": list(certificate.partitions),
        },
        "rate": certificate.rate,
        "metric_lower": certificate.metric_lower,
        "metric_upper": certificate.metric_upper,
        "cell_bounds": _encode_array(certificate.cell_bounds),
        "metric_eig_lo": certificate.metric_eig_lo,
        "metric_eig_hi": certificate.metric_eig_hi,
        "certified": certificate.certified,
        "propagator_tag": certificate.propagator_tag,
        "failure_reason": certificate.failure_reason,
        "timestamp": certificate.timestamp,
    }
    _dump(payload, Path(path))


def load_certificate(path) -> Certificate:
    path = Path(path)
    payload = json.loads(path.read_text())
    _check_version(payload, path)
    if payload.get("kind") != "certificate":
        raise ValueError(f"{path}: not a certificate file")
    return Certificate(
        problem_hash=payload["problem_hash"],
        region_lo=_decode_array(payload["region"]["lo"]),
        region_hi=_decode_array(payload["region"]["hi"]),
        partitions=tuple(payload["region"]["partitions"]),
        rate=payload["rate"],
        metric_lower=payload["metric_lower"],
        metric_upper=payload["metric_upper"],
        cell_bounds=_decode_array(payload["cell_bounds"]),
        metric_eig_lo=payload["metric_eig_lo"],
        metric_eig_hi=payload["metric_eig_hi"],
        certified=payload["certified"],
        propagator_tag=payload["propagator_tag"],
        failure_reason=payload.get("failure_reason"),
        timestamp=payload.get("timestamp"),
    )

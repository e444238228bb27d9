"""Declarative run configuration: one TOML file drives a whole pipeline.

Every key is validated with its full path in the error message, unknown
keys are rejected, and the parsed configuration round-trips into run
artifacts so checkpoints and certificates are self-contained.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .boundprop import PROPAGATOR_TAGS, Region
from .problem import ContractionProblem, warm_start_problem
from .systems import BENCHMARK_NAMES, benchmark_system
from .train import CurriculumConfig, OptimizerConfig

__all__ = ["ConfigError", "RunConfig"]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _require_table(data: dict, name: str) -> dict:
    if name not in data:
        raise ConfigError(f"missing table [{name}]")
    value = data[name]
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _reject_unknown(table: dict, name: str, known: set[str]) -> None:
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {sorted(unknown)}")


def _get(table: dict, name: str, key: str, kind, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"missing required key {name}.{key}")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{name}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _float_list(table: dict, name: str, key: str) -> np.ndarray:
    raw = table.get(key)
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{name}.{key}: expected a non-empty list of numbers")
    out = []
    for idx, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{name}.{key}[{idx}]: expected a number")
        out.append(float(v))
    return np.array(out)


@dataclass(frozen=True)
class RunConfig:
    system_name: str
    region_lo: np.ndarray
    region_hi: np.ndarray
    partitions: tuple[int, ...]
    metric_lower: float
    metric_upper: float
    rate: float
    hidden: tuple[int, ...]
    optimizer: OptimizerConfig
    curriculum: CurriculumConfig
    seed: int = 0
    out_dir: str = "runs/out"
    propagator_tag: str = "ibp"
    outward_rounding: bool = False
    log_timing: bool = False

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _reject_unknown(
            data,
            "",
            {"run", "system", "region", "hyper", "nets", "optimizer", "curriculum", "propagation", "logging"},
        )
        run = data.get("run", {})
        _reject_unknown(run, "run", {"seed", "out_dir"})
        seed = _get(run, "run", "seed", int, default=0)
        out_dir = _get(run, "run", "out_dir", str, default="runs/out")

        system_tbl = _require_table(data, "system")
        _reject_unknown(system_tbl, "system", {"name"})
        system_name = _get(system_tbl, "system", "name", str, required=True)
        if system_name not in BENCHMARK_NAMES:
            raise ConfigError(
                f"system.name: unknown system {system_name!r}; available: {BENCHMARK_NAMES}"
            )
        system = benchmark_system(system_name)

        region_tbl = _require_table(data, "region")
        _reject_unknown(region_tbl, "region", {"lo", "hi", "partitions"})
        lo = _float_list(region_tbl, "region", "lo")
        hi = _float_list(region_tbl, "region", "hi")
        if lo.size != system.n or hi.size != system.n:
            raise ConfigError(
                f"region: expected {system.n} coordinates for {system_name}, got {lo.size}/{hi.size}"
            )
        for idx in range(system.n):
            if lo[idx] > hi[idx]:
                raise ConfigError(f"region.lo[{idx}] = {lo[idx]} exceeds region.hi[{idx}] = {hi[idx]}")
        raw_parts = region_tbl.get("partitions", [1] * system.n)
        if not isinstance(raw_parts, list) or len(raw_parts) != system.n:
            raise ConfigError(f"region.partitions: expected {system.n} integers")
        partitions = []
        for idx, p in enumerate(raw_parts):
            if isinstance(p, bool) or not isinstance(p, int) or p < 1:
                raise ConfigError(f"region.partitions[{idx}]: expected an integer >= 1")
            partitions.append(p)

        hyper = _require_table(data, "hyper")
        _reject_unknown(hyper, "hyper", {"metric_lower", "metric_upper", "rate"})
        metric_lower = _get(hyper, "hyper", "metric_lower", float, required=True)
        metric_upper = _get(hyper, "hyper", "metric_upper", float, required=True)
        rate = _get(hyper, "hyper", "rate", float, required=True)
        if not 0.0 < metric_lower < metric_upper:
            raise ConfigError("hyper: need 0 < metric_lower < metric_upper")
        if rate < 0.0:
            raise ConfigError("hyper.rate: must be >= 0")

        nets = data.get("nets", {})
        _reject_unknown(nets, "nets", {"hidden"})
        raw_hidden = nets.get("hidden", [128, 128])
        if not isinstance(raw_hidden, list) or not all(
            isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in raw_hidden
        ):
            raise ConfigError("nets.hidden: expected a list of integers >= 1")

        opt = data.get("optimizer", {})
        _reject_unknown(opt, "optimizer", {"step_size", "betas", "weight_decay", "residual_step_scale"})
        betas_raw = opt.get("betas", [0.9, 0.999])
        if not isinstance(betas_raw, list) or len(betas_raw) != 2:
            raise ConfigError("optimizer.betas: expected two numbers")
        optimizer = OptimizerConfig(
            step_size=_get(opt, "optimizer", "step_size", float, default=1e-3),
            betas=(float(betas_raw[0]), float(betas_raw[1])),
            weight_decay=_get(opt, "optimizer", "weight_decay", float, default=1e-4),
            residual_step_scale=_get(opt, "optimizer", "residual_step_scale", float, default=1.0),
        )
        if optimizer.step_size <= 0:
            raise ConfigError("optimizer.step_size: must be > 0")
        if optimizer.residual_step_scale < 0:
            raise ConfigError("optimizer.residual_step_scale: must be >= 0")

        cur = data.get("curriculum", {})
        _reject_unknown(cur, "curriculum", {"start", "target", "denominator", "max_steps", "aggregation"})
        try:
            curriculum = CurriculumConfig(
                start=_get(cur, "curriculum", "start", int, default=1),
                target=_get(cur, "curriculum", "target", int, default=100),
                denominator=_get(cur, "curriculum", "denominator", int, default=100),
                max_steps=_get(cur, "curriculum", "max_steps", int, default=2000),
                aggregation=_get(cur, "curriculum", "aggregation", str, default="mean"),
            )
        except ValueError as exc:
            raise ConfigError(f"curriculum: {exc}") from None
        if curriculum.max_steps < 0:
            raise ConfigError("curriculum.max_steps: must be >= 0")

        prop = data.get("propagation", {})
        _reject_unknown(prop, "propagation", {"tag", "outward_rounding"})
        tag = _get(prop, "propagation", "tag", str, default="ibp")
        if tag not in PROPAGATOR_TAGS:
            raise ConfigError(f"propagation.tag: unknown tag {tag!r}; available: {PROPAGATOR_TAGS}")
        outward = _get(prop, "propagation", "outward_rounding", bool, default=False)

        logging_tbl = data.get("logging", {})
        _reject_unknown(logging_tbl, "logging", {"timing"})
        timing = _get(logging_tbl, "logging", "timing", bool, default=False)

        return cls(
            system_name=system_name,
            region_lo=lo,
            region_hi=hi,
            partitions=tuple(partitions),
            metric_lower=metric_lower,
            metric_upper=metric_upper,
            rate=rate,
            hidden=tuple(raw_hidden),
            optimizer=optimizer,
            curriculum=curriculum,
            seed=seed,
            out_dir=out_dir,
            propagator_tag=tag,
            outward_rounding=outward,
            log_timing=timing,
        )

    def build_region(self) -> Region:
        return Region(self.region_lo, self.region_hi, self.partitions)

    def build_problem(self, rng: np.random.Generator | None = None) -> ContractionProblem:
        return warm_start_problem(
            benchmark_system(self.system_name),
            rate=self.rate,
            metric_lower=self.metric_lower,
            metric_upper=self.metric_upper,
            hidden=self.hidden,
            seed=self.seed if rng is None else rng,
        )

    def to_dict(self) -> dict:
        return {
            "run": {"seed": self.seed, "out_dir": self.out_dir},
            "system": {"name": self.system_name},
            "region": {
                "lo": self.region_lo.tolist(),
                "hi": self.region_hi.tolist(),
                "partitions": list(self.partitions),
            },
            "hyper": {
                "metric_lower": self.metric_lower,
                "metric_upper": self.metric_upper,
                "rate": self.rate,
            },
            "nets": {"hidden": list(self.hidden)},
            "optimizer": {
                "step_size": self.optimizer.step_size,
                "betas": list(self.optimizer.betas),
                "weight_decay": self.optimizer.weight_decay,
                "residual_step_scale": self.optimizer.residual_step_scale,
            },
            "curriculum": {
                "start": self.curriculum.start,
                "target": self.curriculum.target,
                "denominator": self.curriculum.denominator,
                "max_steps": self.curriculum.max_steps,
                "aggregation": self.curriculum.aggregation,
            },
            "propagation": {"tag": self.propagator_tag, "outward_rounding": self.outward_rounding},
            "logging": {"timing": self.log_timing},
        }

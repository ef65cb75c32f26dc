"""Pipeline configuration file (JSON) and its defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .kernels import FramePolicy, KernelParams
from .planner import PlannerConfig
from .resolver import ResolverWeights

EXTRACTION_MODES = ("argmax", "topk", "sample")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    mode: str = "argmax"
    top_k: int = 5
    nms_radius: float = 0.5
    num_samples: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.mode not in EXTRACTION_MODES:
            raise ConfigError(f"extraction mode must be one of {EXTRACTION_MODES}, got {self.mode!r}")
        if self.top_k < 1 or self.num_samples < 1:
            raise ConfigError("top_k and num_samples must be >= 1")


@dataclass(frozen=True)
class RetryConfig:
    limit: int = 2
    free_mass_threshold: float = 0.5
    sigma_factor: float = 1.5
    kappa_factor: float = 0.5


@dataclass(frozen=True)
class BenchConfig:
    tsr_distance_threshold: float = 1.0
    top2: bool = False
    synonyms: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    resolver: ResolverWeights = field(default_factory=ResolverWeights)
    kernels: KernelParams = field(default_factory=KernelParams)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    retry: RetryConfig = field(default_factory=RetryConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    density_resolution: float | None = None
    plan_path: bool = False
    similarity_table: str | None = None

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Override every seed in the configuration."""
        return replace(
            self,
            extraction=replace(self.extraction, seed=seed),
            planner=replace(self.planner, seed=seed),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kernels"]["frame_policy"] = self.kernels.frame_policy.value
        out["kernels"]["kappa_by_predicate"] = dict(self.kernels.kappa_by_predicate)
        return out


def _build(cls, data: Mapping[str, Any] | None, section: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}' section: {exc}") from None


def config_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    data = dict(data)
    sections = {"resolver", "kernels", "extraction", "planner", "retry", "bench"}
    top = {f.name for f in fields(PipelineConfig)} - sections
    unknown = sorted(set(data) - sections - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kernels = dict(data.get("kernels") or {})
    if "frame_policy" in kernels:
        try:
            kernels["frame_policy"] = FramePolicy(kernels["frame_policy"])
        except ValueError:
            raise ConfigError(f"unknown frame_policy {kernels['frame_policy']!r}") from None
    bench = dict(data.get("bench") or {})
    table = data.get("similarity_table")
    if base_dir is not None:
        if table:
            table = str((base_dir / table).resolve())
        if bench.get("synonyms"):
            bench["synonyms"] = str((base_dir / bench["synonyms"]).resolve())
    return PipelineConfig(
        resolver=_build(ResolverWeights, data.get("resolver"), "resolver"),
        kernels=_build(KernelParams, kernels, "kernels"),
        extraction=_build(ExtractionConfig, data.get("extraction"), "extraction"),
        planner=_build(PlannerConfig, data.get("planner"), "planner"),
        retry=_build(RetryConfig, data.get("retry"), "retry"),
        bench=_build(BenchConfig, bench, "bench"),
        density_resolution=data.get("density_resolution"),
        plan_path=bool(data.get("plan_path", False)),
        similarity_table=table,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(data, path.parent)

"""YAML run configuration with per-stage sections and a seeded stage hierarchy."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .graph import ConnectionParams, FeatureConfig
from .models import ModelConfig
from .training import TrainConfig

GRAPH_MODES = ("edge_driven", "node_driven", "both", "gabriel", "rng")
SPLITS = ("train", "test")


class ConfigError(ValueError):
    pass


def child_seed(root: int, stage: str) -> int:
    """Stable per-stage seed derived from the run seed and a stage name."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=(zlib.crc32(stage.encode()),))
    return int(ss.generate_state(1)[0])


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class TerrainSection:
    width: int = 400
    height: int = 400
    cell_size: float = 100.0
    roughness: float = 1.0
    decay: float = 0.4


@dataclass(frozen=True)
class GraphSection:
    n_nodes: int = 300
    min_spacing: float = 1500.0
    mode: str = "edge_driven"
    alpha: float = 7.0
    sharpness: float = 6.0
    climb_scale: float = 30.0
    rough_scale: float = 2.5
    beta: float | None = None
    beta_node: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.mode not in GRAPH_MODES:
            raise ValueError(f"mode must be one of {GRAPH_MODES}, got {self.mode!r}")

    def connection(self) -> ConnectionParams:
        return ConnectionParams(alpha=self.alpha, sharpness=self.sharpness, climb_scale=self.climb_scale,
                                rough_scale=self.rough_scale, beta=self.beta, beta_node=self.beta_node,
                                gamma=self.gamma)


@dataclass(frozen=True)
class SourceSection:
    """Existing grid + edge-list files to ingest instead of generating a world."""
    grid: str
    edges: str


@dataclass(frozen=True)
class SamplingSection:
    window: float = 8000.0
    max_nodes: int = 64
    simplify: bool = True


@dataclass(frozen=True)
class EvalSection:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass(frozen=True)
class CompareSection:
    variants: tuple[str, ...] = ("gmu", "rsgcn", "esgcn", "graphsage")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "run"
    features: FeatureConfig = field(default_factory=FeatureConfig)
    terrain: TerrainSection = field(default_factory=TerrainSection)
    graph: GraphSection = field(default_factory=GraphSection)
    sources: dict = field(default_factory=dict)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    compare: CompareSection = field(default_factory=CompareSection)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def stage_seed(self, stage: str) -> int:
        return child_seed(self.seed, stage)

    def model_for(self, variant: str | None) -> ModelConfig:
        if variant is None or variant == self.model.variant:
            return self.model
        d = asdict(self.model)
        d["variant"] = variant
        return ModelConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sources"] = {k: asdict(v) for k, v in self.sources.items()}
        d["compare"]["variants"] = list(self.compare.variants)
        return d


_SECTIONS = {"features": FeatureConfig, "terrain": TerrainSection, "graph": GraphSection,
             "sampling": SamplingSection, "model": ModelConfig, "training": TrainConfig,
             "eval": EvalSection}


def from_dict(data: dict | None, check_paths: bool = True) -> RunConfig:
    data = dict(data or {})
    allowed = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    kw = {}
    for key in ("seed", "out"):
        if key in data:
            kw[key] = data[key]
    if not isinstance(kw.get("seed", 0), int):
        raise ConfigError("seed must be an integer")
    for name, cls in _SECTIONS.items():
        if name in data:
            kw[name] = _build(cls, data[name], name)
    if "compare" in data:
        comp = data["compare"] or {}
        if set(comp) - {"variants"}:
            raise ConfigError(f"compare: unknown key(s) {', '.join(sorted(set(comp) - {'variants'}))}")
        variants = tuple(comp.get("variants", CompareSection.variants))
        if len(variants) < 2:
            raise ConfigError("compare: need at least two variants")
        for v in variants:
            _build(ModelConfig, {"variant": v}, "compare.variants")
        kw["compare"] = CompareSection(variants)
    sources = {}
    for split, src in (data.get("sources") or {}).items():
        if split not in SPLITS:
            raise ConfigError(f"sources: unknown split {split!r}; expected {SPLITS}")
        s = _build(SourceSection, src, f"sources.{split}")
        if check_paths:
            for p in (s.grid, s.edges):
                if not Path(p).exists():
                    raise ConfigError(f"sources.{split}: file not found: {p}")
        sources[split] = s
    kw["sources"] = sources
    model = kw.get("model", ModelConfig())
    feat = kw.get("features", FeatureConfig())
    if model.grid_n != feat.grid_n or model.n_edge_samples != feat.n_edge_samples:
        raise ConfigError("model.grid_n / model.n_edge_samples must match the features section")
    return RunConfig(**kw)


def load(path, check_paths: bool = True) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data, check_paths)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)

"""In-process runs of the whole pipeline for one configuration."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

from . import config as C
from .graph import (SenGraph, connect_gabriel, connect_rng, connect_terrain_conditioned, generate_nodes,
                    read_edgelist)
from .models import SpatialGCN
from .raster import Raster, read_ascii_grid, synth_terrain
from .reconstruction import EvalReport, aggregate, confusion
from .sampling import SampleGraph, sample_all
from .training import TrainReport, train

log = logging.getLogger(__name__)


def build_world(cfg: C.RunConfig, split: str) -> tuple[Raster, SenGraph]:
    """Terrain and network for ``split``, read from sources or generated from stage seeds."""
    src = cfg.sources.get(split)
    if src is not None:
        raster = read_ascii_grid(src.grid)
        return raster, read_edgelist(src.edges, raster, cfg.features)
    t, gs = cfg.terrain, cfg.graph
    raster = synth_terrain(t.width, t.height, t.cell_size, t.roughness, cfg.stage_seed(f"terrain/{split}"), t.decay)
    nodes = generate_nodes(raster, gs.n_nodes, gs.min_spacing, cfg.stage_seed(f"nodes/{split}"), cfg.features)
    if gs.mode == "gabriel":
        return raster, connect_gabriel(nodes, raster, cfg.features)
    if gs.mode == "rng":
        return raster, connect_rng(nodes, raster, cfg.features)
    return raster, connect_terrain_conditioned(nodes, raster, gs.mode, gs.connection(),
                                               cfg.stage_seed(f"edges/{split}"), cfg.features)


def build_samples(cfg: C.RunConfig, raster: Raster, g: SenGraph) -> list[SampleGraph]:
    s = cfg.sampling
    return sample_all(g, raster, s.window, cfg.features, s.max_nodes, s.simplify)


def predict_votes(model: SpatialGCN, samples: list[SampleGraph]):
    return aggregate([[(u, v, p) for (u, v), p in zip(s.global_pairs(), model.predict(s))] for s in samples])


@dataclass
class VariantResult:
    variant: str
    report: EvalReport
    train: TrainReport
    seconds: float


@dataclass
class Prepared:
    cfg: C.RunConfig
    train_graph: SenGraph
    test_graph: SenGraph
    train_samples: list[SampleGraph]
    test_samples: list[SampleGraph]


def prepare(cfg: C.RunConfig) -> Prepared:
    r_tr, g_tr = build_world(cfg, "train")
    r_te, g_te = build_world(cfg, "test")
    return Prepared(cfg, g_tr, g_te, build_samples(cfg, r_tr, g_tr), build_samples(cfg, r_te, g_te))


def run_variant(data: Prepared, variant: str) -> VariantResult:
    """Train ``variant`` on the train split and score the reassembled test network."""
    cfg = data.cfg
    t0 = time.perf_counter()
    tc = replace(cfg.training, seed=cfg.stage_seed("train"))
    model, rep = train(cfg.model_for(variant), data.train_samples, tc)
    votes = predict_votes(model, data.test_samples)
    report = confusion(votes, cfg.eval.threshold, data.test_graph)
    dt = time.perf_counter() - t0
    log.info("%s: f1 %.4f accuracy %.4f (%.1fs)", variant, report.f1, report.accuracy, dt)
    return VariantResult(variant, report, rep, dt)


def run_variants(cfg: C.RunConfig, variants) -> dict[str, VariantResult]:
    data = prepare(cfg)
    return {v: run_variant(data, v) for v in variants}

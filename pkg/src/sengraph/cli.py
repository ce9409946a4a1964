"""``sengraph`` command-line pipeline: generate, sample, train, predict, reconstruct, eval, compare.

Every stage reads its predecessors' files under the output directory and
writes its own, so stages can be rerun independently. Exit codes: 0 success,
1 invalid configuration or input, 2 missing upstream artifact, 3 training
divergence. Set ``SENGRAPH_LOG`` (DEBUG, INFO, WARNING) for log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from .figures import bar_chart, network_plot
from .experiment import build_world
from .graph import (EdgeListParseError, GenerationError, SenGraph, edge_length_stats, parse_topology,
                    read_edgelist, write_edgelist)
from .models import CheckpointError, SpatialGCN, load_checkpoint
from .raster import GridParseError, _atomic_write, read_ascii_grid, write_ascii_grid
from .reconstruction import (EvalReport, aggregate, confusion, read_predictions, read_votes, reassemble,
                             write_geojson, write_network, write_predictions, write_report, write_votes)
from .sampling import SamplingError, prepared_window, read_sample, sample_all, write_sample
from .training import TrainingDivergence, train

log = logging.getLogger("sengraph")

EXIT_OK, EXIT_INVALID, EXIT_MISSING, EXIT_DIVERGED = 0, 1, 2, 3


class MissingArtifact(FileNotFoundError):
    pass


# --------------------------------------------------------------------------
# layout

def world_dir(cfg: C.RunConfig, split: str) -> Path:
    return cfg.out_dir / "world" / split


def sample_dir(cfg: C.RunConfig, split: str) -> Path:
    return cfg.out_dir / "samples" / split


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(str(path))
    return path


def _variant(cfg: C.RunConfig, variant: str | None) -> str:
    return variant or cfg.model.variant


def load_world(cfg: C.RunConfig, split: str, with_features: bool = True):
    d = world_dir(cfg, split)
    raster = read_ascii_grid(_need(d / "terrain.asc"))
    edges = _need(d / "graph.txt")
    if with_features:
        g = read_edgelist(edges, raster, cfg.features)
        # relative to the run directory so runs elsewhere produce the same files
        g.raster_ref = f"world/{split}/graph.txt"
        return raster, g
    return raster, parse_topology(edges.read_text())


def load_samples(cfg: C.RunConfig, split: str):
    d = sample_dir(cfg, split)
    index = _need(d / "index.txt")
    raster = read_ascii_grid(_need(world_dir(cfg, split) / "terrain.asc"))
    names = [ln for ln in index.read_text().splitlines() if ln.strip()]
    return [read_sample(_need(d / n), raster, cfg.features) for n in names]


# --------------------------------------------------------------------------
# tables

def format_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[c if isinstance(c, str) else _num(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.4g}" if abs(v) < 1e4 else f"{v:.0f}"


def graph_rows(split: str, g: SenGraph) -> list:
    deg = np.array(list(g.degree().values()))
    ls = edge_length_stats(g)
    return [split, len(g.nodes), len(g.edges), int(deg.min()), float(deg.mean()), int(deg.max()),
            ls["min"], ls["mean"], ls["max"]]


def window_rows(split: str, g: SenGraph, window: float, simplify_windows: bool) -> list:
    """Per-window node and edge counts, computed from topology alone."""
    ns, complete, real = [], [], []
    adj = g.adjacency()
    for c in g.node_ids:
        sub = prepared_window(g, c, window, simplify_windows, _adj=adj)
        n = len(sub.node_ids)
        ns.append(n)
        complete.append(n * (n - 1) // 2)
        real.append(len(sub.pairs))
    return [split, min(ns), float(np.mean(ns)), max(ns), float(np.mean(complete)), float(np.mean(real))]


# --------------------------------------------------------------------------
# stages

def cmd_generate(cfg: C.RunConfig) -> int:
    graph_table, window_table = [], []
    for split in C.SPLITS:
        d = world_dir(cfg, split)
        raster, g = build_world(cfg, split)
        write_ascii_grid(raster, d / "terrain.asc")
        write_edgelist(g, d / "graph.txt")
        graph_table.append(graph_rows(split, g))
        window_table.append(window_rows(split, g, cfg.sampling.window, cfg.sampling.simplify))
    print(format_table(["split", "nodes", "edges", "deg_min", "deg_mean", "deg_max",
                        "len_min", "len_mean", "len_max"], graph_table))
    print()
    print(format_table(["split", "nodes_min", "nodes_mean", "nodes_max", "complete_edges", "real_edges"],
                       window_table))
    return EXIT_OK


def cmd_sample(cfg: C.RunConfig) -> int:
    rows = []
    for split in C.SPLITS:
        raster, g = load_world(cfg, split)
        s = cfg.sampling
        samples = sample_all(g, raster, s.window, cfg.features, s.max_nodes, s.simplify)
        d = sample_dir(cfg, split)
        names = []
        for k, smp in enumerate(samples):
            name = f"sample_{k:05d}.txt"
            write_sample(smp, d / name)
            names.append(name)
        _atomic_write(d / "index.txt", "\n".join(names) + "\n")
        ns = [smp.n for smp in samples]
        rows.append([split, len(samples), min(ns), float(np.mean(ns)), max(ns),
                     float(np.mean([len(smp.cand) for smp in samples])),
                     float(np.mean([int(smp.labels.sum()) for smp in samples]))])
    print(format_table(["split", "samples", "nodes_min", "nodes_mean", "nodes_max", "complete_edges",
                        "real_edges"], rows))
    return EXIT_OK


def checkpoint_path(cfg: C.RunConfig, variant: str) -> Path:
    return cfg.out_dir / "models" / f"{variant}.json"


def cmd_train(cfg: C.RunConfig, variant: str | None = None, prefix: Path | None = None) -> int:
    variant = _variant(cfg, variant)
    samples = load_samples(cfg, "train")
    mc = cfg.model_for(variant)
    tc = replace(cfg.training, seed=cfg.stage_seed("train"))
    ckpt = prefix / "model.json" if prefix else checkpoint_path(cfg, variant)
    metrics = ckpt.with_suffix(".metrics.jsonl")
    if metrics.exists():
        metrics.unlink()
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    _, report = train(mc, samples, tc, checkpoint=ckpt, metrics_log=metrics)
    last = report.epochs[-1]
    print(f"{variant}: {len(report.epochs)} epochs, final loss {last.loss:.5f}, sample F1 {last.f1:.4f}")
    return EXIT_OK


def predictions_path(cfg: C.RunConfig, variant: str) -> Path:
    return cfg.out_dir / "predictions" / f"{variant}.csv"


def cmd_predict(cfg: C.RunConfig, variant: str | None = None, prefix: Path | None = None) -> int:
    variant = _variant(cfg, variant)
    ckpt = prefix / "model.json" if prefix else checkpoint_path(cfg, variant)
    mc, params, _ = load_checkpoint(_need(ckpt))
    model = SpatialGCN(mc, params)
    samples = load_samples(cfg, "test")
    records = []
    for k, s in enumerate(samples):
        probs = model.predict(s)
        for (u, v), p in zip(s.global_pairs(), probs):
            records.append((k, s.center_node, u, v, p))
    out = prefix / "predictions.csv" if prefix else predictions_path(cfg, variant)
    write_predictions(out, records)
    print(f"{variant}: {len(records)} candidate probabilities over {len(samples)} samples -> {out}")
    return EXIT_OK


def recon_dir(cfg: C.RunConfig, variant: str) -> Path:
    return cfg.out_dir / "reconstruction" / variant


def cmd_reconstruct(cfg: C.RunConfig, variant: str | None = None, prefix: Path | None = None) -> int:
    variant = _variant(cfg, variant)
    pred = prefix / "predictions.csv" if prefix else predictions_path(cfg, variant)
    votes = aggregate(read_predictions(_need(pred)))
    thr = cfg.eval.threshold
    kept = reassemble(votes, thr)
    _, g = load_world(cfg, "test")
    d = prefix or recon_dir(cfg, variant)
    write_votes(d / "votes.csv", votes)
    write_network(d / "network.txt", g, kept)
    write_geojson(d / "network.geojson", g, votes, thr)
    pos = {i: (nd.pos.x, nd.pos.y) for i, nd in g.nodes.items()}
    network_plot(d / "network.svg", pos, g.edges, kept, title=f"{variant} threshold {thr:g}")
    print(f"{variant}: {len(kept)} edges reassembled from {len(votes)} voted pairs")
    return EXIT_OK


def eval_paths(cfg: C.RunConfig, variant: str) -> tuple[Path, Path]:
    d = cfg.out_dir / "eval"
    return d / f"{variant}.json", d / f"{variant}_pairs.csv"


def evaluate(cfg: C.RunConfig, variant: str, prefix: Path | None = None) -> EvalReport:
    votes_file = (prefix or recon_dir(cfg, variant)) / "votes.csv"
    votes = read_votes(_need(votes_file))
    _, (_, truth_pairs, _) = load_world(cfg, "test", with_features=False)
    report = confusion(votes, cfg.eval.threshold, set(truth_pairs))
    if prefix:
        write_report(report, prefix / "report.json", prefix / "pairs.csv")
    else:
        write_report(report, *eval_paths(cfg, variant))
    return report


def cmd_eval(cfg: C.RunConfig, variant: str | None = None) -> int:
    variant = _variant(cfg, variant)
    r = evaluate(cfg, variant)
    print(f"{variant}: F1 {r.f1:.4f}  accuracy {r.accuracy:.4f}  "
          f"(tp {r.tp}, fp {r.fp}, fn {r.fn}, unreachable {r.unreachable})")
    return EXIT_OK


def cmd_compare(cfg: C.RunConfig) -> int:
    rows = []
    for k, variant in enumerate(cfg.compare.variants):
        prefix = cfg.out_dir / "compare" / f"{k}_{variant}"
        cmd_train(cfg, variant, prefix)
        cmd_predict(cfg, variant, prefix)
        cmd_reconstruct(cfg, variant, prefix)
        r = evaluate(cfg, variant, prefix)
        rows.append((variant, r))
    ranked = sorted(rows, key=lambda vr: (-vr[1].f1, -vr[1].accuracy, vr[0]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "variant", "f1", "accuracy", "tp", "fp", "fn", "unreachable"])
    table = []
    for rank, (variant, r) in enumerate(ranked, start=1):
        w.writerow([rank, variant, repr(r.f1), repr(r.accuracy), r.tp, r.fp, r.fn, r.unreachable])
        table.append([str(rank), variant, r.f1, r.accuracy, r.tp, r.fp, r.fn])
    d = cfg.out_dir / "compare"
    _atomic_write(d / "table.csv", buf.getvalue())
    bar_chart(d / "scores.svg", [v for v, _ in rows],
              {"F1": [r.f1 for _, r in rows], "accuracy": [r.accuracy for _, r in rows]},
              title="edge existence prediction")
    print(format_table(["rank", "variant", "f1", "accuracy", "tp", "fp", "fn"], table))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point

COMMANDS = ("generate", "sample", "train", "predict", "reconstruct", "eval", "compare")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sengraph", description="Spatial network reconstruction pipeline.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--variant", help="model variant for train/predict/reconstruct/eval")
    p.add_argument("--threshold", type=float, help="override the reassembly threshold")
    return p


def resolve(args) -> C.RunConfig:
    cfg = C.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.threshold is not None:
        try:
            cfg = replace(cfg, eval=C.EvalSection(args.threshold))
        except ValueError as exc:
            raise C.ConfigError(str(exc)) from None
    if args.variant is not None:
        try:
            cfg.model_for(args.variant)
        except ValueError as exc:
            raise C.ConfigError(str(exc)) from None
    return cfg


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SENGRAPH_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        if not Path(args.config).exists():
            raise MissingArtifact(args.config)
        cfg = resolve(args)
        cmd = args.command
        if cmd == "generate":
            return cmd_generate(cfg)
        if cmd == "sample":
            return cmd_sample(cfg)
        if cmd == "compare":
            return cmd_compare(cfg)
        fn = {"train": cmd_train, "predict": cmd_predict, "reconstruct": cmd_reconstruct, "eval": cmd_eval}[cmd]
        return fn(cfg, args.variant)
    except MissingArtifact as exc:
        print(f"error: missing input {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (C.ConfigError, GridParseError, EdgeListParseError, CheckpointError, GenerationError,
            SamplingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Ingest a river-scale network written in the grid + edge-list file formats.

A synthetic world of about 4,400 edges is written to disk as an ESRI ASCII
grid and an edge list, then ingested as the test split of a CLI run. A small
generated world supplies the training split, so the timing is dominated by
loading, sampling, predicting and scoring the large network.

    python3 scripts/ca_scale_smoke.py [workdir]
"""
import sys
import tempfile
import time
from pathlib import Path

import yaml

from sengraph import config as C
from sengraph.cli import run
from sengraph.experiment import build_world
from sengraph.graph import write_edgelist
from sengraph.raster import write_ascii_grid

WORLD = {
    "seed": 11,
    "terrain": {"width": 1000, "height": 1000, "cell_size": 100.0},
    "graph": {"n_nodes": 1950, "min_spacing": 1500.0, "mode": "edge_driven", "sharpness": 16.0, "alpha": 24.0},
    "features": {"grid_n": 32, "n_edge_samples": 32},
    "model": {"grid_n": 32, "n_edge_samples": 32},
}


def write_sources(dest: Path) -> tuple[Path, Path, int]:
    raster, g = build_world(C.from_dict(WORLD), "test")
    dest.mkdir(parents=True, exist_ok=True)
    grid, edges = dest / "dem.asc", dest / "network.txt"
    write_ascii_grid(raster, grid)
    write_edgelist(g, edges)
    return grid, edges, len(g.edges)


def smoke(workdir: Path, epochs: int = 5) -> dict:
    timings = {}
    t0 = time.perf_counter()
    grid, edges, n_edges = write_sources(workdir / "sources")
    timings["write"] = time.perf_counter() - t0
    src = {"grid": str(grid), "edges": str(edges)}
    cfg = {**WORLD, "terrain": {"width": 120, "height": 120, "cell_size": 100.0},
           "graph": {**WORLD["graph"], "n_nodes": 40},
           "out": str(workdir / "run"), "sources": {"test": src},
           "training": {"epochs": epochs, "pos_weight": 2.0}}
    path = workdir / "ingest.yaml"
    path.write_text(yaml.safe_dump(cfg))
    codes = {}
    for stage in ("generate", "sample", "train", "predict", "reconstruct", "eval"):
        t = time.perf_counter()
        codes[stage] = run([stage, "--config", str(path)])
        timings[stage] = time.perf_counter() - t
        if codes[stage]:
            break
    return {"edges": n_edges, "codes": codes, "timings": timings, "run": workdir / "run",
            "seconds": sum(v for k, v in timings.items() if k != "write")}


if __name__ == "__main__":
    base = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ca_smoke_"))
    res = smoke(base)
    print(f"edges {res['edges']}")
    for stage, dt in res["timings"].items():
        print(f"{stage:12s} {dt:7.1f}s  exit {res['codes'].get(stage, '-')}")
    print(f"ingest total {res['seconds']:.1f}s")

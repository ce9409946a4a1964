"""Train gmu on one generated world and score the reassembled held-out world.

    python3 scripts/learnability.py [configs/learnability.yaml]
"""
import logging
import sys
import time

from sengraph import config as C
from sengraph.experiment import prepare, run_variant


def main(path="configs/learnability.yaml"):
    cfg = C.load(path)
    t0 = time.perf_counter()
    data = prepare(cfg)
    print(f"train {len(data.train_graph.nodes)} nodes / {len(data.train_graph.edges)} edges, "
          f"test {len(data.test_graph.nodes)} nodes / {len(data.test_graph.edges)} edges")
    res = run_variant(data, cfg.model.variant)
    losses = res.train.losses
    print("loss  " + " ".join(f"{x:.4f}" for x in losses[:5]) + f" ... {losses[-1]:.4f}")
    rep = res.report
    print(f"F1 {rep.f1:.4f}  accuracy {rep.accuracy:.4f}  tp {rep.tp} fp {rep.fp} fn {rep.fn}  "
          f"{time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    main(*sys.argv[1:])

"""Probability-averaged network reassembly and F1 / existence-accuracy scoring."""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import SenGraph, canonical, format_edgelist
from .raster import _atomic_write


@dataclass
class EdgeVote:
    pair: tuple[int, int]
    probs: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.probs))


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    unreachable: int
    f1: float
    accuracy: float
    threshold: float
    n_truth: int
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in
                ("tp", "fp", "fn", "tn", "unreachable", "f1", "accuracy", "threshold", "n_truth")}


def aggregate(predictions) -> list[EdgeVote]:
    """Group ``(u, v, prob)`` records by unordered global pair.

    ``predictions`` is an iterable of per-sample iterables. Votes come back
    sorted by pair so the result does not depend on sample order, and each
    vote's probabilities are sorted for the same reason.
    """
    groups: dict[tuple[int, int], list[float]] = {}
    for sample_preds in predictions:
        for u, v, p in sample_preds:
            groups.setdefault(canonical(int(u), int(v)), []).append(float(p))
    return [EdgeVote(pair, sorted(ps)) for pair, ps in sorted(groups.items())]


def reassemble(votes: list[EdgeVote], threshold: float = 0.5) -> set[tuple[int, int]]:
    """Pairs whose mean probability is strictly above ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return {v.pair for v in votes if v.mean > threshold}


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = tp + 0.5 * (fp + fn)
    if denom == 0:
        warnings.warn("F1 undefined with no positives and no predictions; reporting 0", RuntimeWarning)
        return 0.0
    return tp / denom


def accuracy(predicted: set[tuple[int, int]], truth: SenGraph | set) -> float:
    """Share of ground-truth edges present in the prediction."""
    true_pairs = set(truth.edges) if isinstance(truth, SenGraph) else {canonical(*p) for p in truth}
    if not true_pairs:
        raise ValueError("ground truth has no edges")
    found = sum(1 for p in true_pairs if p in predicted)
    return found / len(true_pairs)


def confusion(votes: list[EdgeVote], threshold: float, truth: SenGraph | set) -> EvalReport:
    true_pairs = set(truth.edges) if isinstance(truth, SenGraph) else {canonical(*p) for p in truth}
    predicted = reassemble(votes, threshold)
    tp = fp = fn = tn = 0
    rows = []
    voted = set()
    for v in votes:
        voted.add(v.pair)
        is_true = v.pair in true_pairs
        is_pred = v.pair in predicted
        if is_true and is_pred:
            tp += 1
        elif is_pred:
            fp += 1
        elif is_true:
            fn += 1
        else:
            tn += 1
        rows.append({"u": v.pair[0], "v": v.pair[1], "n_votes": len(v.probs), "mean": v.mean,
                     "truth": int(is_true), "predicted": int(is_pred)})
    unreachable = len(true_pairs - voted)
    fn_total = fn + unreachable
    return EvalReport(tp, fp, fn_total, tn, unreachable, f1_score(tp, fp, fn_total),
                      accuracy(predicted, true_pairs), threshold, len(true_pairs), rows)


# --------------------------------------------------------------------------
# files

def write_predictions(path, records) -> None:
    """``records``: iterable of (sample_index, center, u, v, prob)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "center", "u", "v", "prob"])
    for s, c, u, v, p in records:
        w.writerow([s, c, u, v, repr(float(p))])
    _atomic_write(Path(path), buf.getvalue())


def read_predictions(path) -> list[list[tuple[int, int, float]]]:
    by_sample: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_sample.setdefault(int(row["sample"]), []).append((int(row["u"]), int(row["v"]), float(row["prob"])))
    return [by_sample[k] for k in sorted(by_sample)]


def write_votes(path, votes: list[EdgeVote]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["u", "v", "n_votes", "mean", "probs"])
    for v in votes:
        w.writerow([v.pair[0], v.pair[1], len(v.probs), repr(v.mean), " ".join(repr(p) for p in v.probs)])
    _atomic_write(Path(path), buf.getvalue())


def read_votes(path) -> list[EdgeVote]:
    with open(path, newline="") as fh:
        return [EdgeVote((int(r["u"]), int(r["v"])), [float(x) for x in r["probs"].split()])
                for r in csv.DictReader(fh)]


def write_report(report: EvalReport, json_path, csv_path=None) -> None:
    _atomic_write(Path(json_path), json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    if csv_path is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "v", "n_votes", "mean", "truth", "predicted"])
        for r in report.rows:
            w.writerow([r["u"], r["v"], r["n_votes"], repr(r["mean"]), r["truth"], r["predicted"]])
        _atomic_write(Path(csv_path), buf.getvalue())


def write_network(path, g: SenGraph, pairs) -> None:
    pos = {i: (nd.pos.x, nd.pos.y) for i, nd in g.nodes.items()}
    _atomic_write(Path(path), format_edgelist(pos, pairs))


def write_geojson(path, g: SenGraph, votes: list[EdgeVote], threshold: float) -> None:
    """Line features for every reassembled edge, carrying its mean probability."""
    feats = []
    for v in votes:
        if v.mean <= threshold:
            continue
        a, b = g.nodes[v.pair[0]].pos, g.nodes[v.pair[1]].pos
        feats.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[a.x, a.y], [b.x, b.y]]},
            "properties": {"u": v.pair[0], "v": v.pair[1], "prob": v.mean, "n_votes": len(v.probs)},
        })
    doc = {"type": "FeatureCollection", "features": feats}
    _atomic_write(Path(path), json.dumps(doc, indent=1) + "\n")

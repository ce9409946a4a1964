"""Spatially embedded networks: data model, synthetic generators, edge-list I/O."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .raster import BoundsError, Raster, WorldPoint, _atomic_write, sample_patch, sample_polyline


class GenerationError(RuntimeError):
    pass


class EdgeListParseError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """How node and edge features are read off the raster."""

    grid_n: int = 32
    patch_half_extent: float = 750.0
    n_edge_samples: int = 128


@dataclass(frozen=True, eq=False)
class SenNode:
    id: int
    pos: WorldPoint
    point_feat: float
    region_feat: np.ndarray


@dataclass(frozen=True, eq=False)
class SenEdge:
    u: int
    v: int
    edge_feat: np.ndarray

    def __post_init__(self):
        if self.u >= self.v:
            raise ValueError(f"edge endpoints must satisfy u < v, got ({self.u}, {self.v})")


@dataclass(eq=False)
class SenGraph:
    nodes: dict[int, SenNode]
    edges: dict[tuple[int, int], SenEdge] = field(default_factory=dict)
    raster_ref: str = ""

    def __post_init__(self):
        for (u, v) in self.edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if u not in self.nodes or v not in self.nodes:
                raise ValueError(f"edge ({u}, {v}) references a missing node")

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges)

    def positions(self, ids=None) -> np.ndarray:
        ids = self.node_ids if ids is None else ids
        return np.array([[self.nodes[i].pos.x, self.nodes[i].pos.y] for i in ids], dtype=np.float64).reshape(-1, 2)

    def degree(self) -> dict[int, int]:
        deg = {i: 0 for i in self.nodes}
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def adjacency(self) -> dict[int, set[int]]:
        adj = {i: set() for i in self.nodes}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def edge_length(self, u: int, v: int) -> float:
        a, b = self.nodes[u].pos, self.nodes[v].pos
        return math.hypot(a.x - b.x, a.y - b.y)

    def topology(self) -> "SenGraph":
        """Same nodes and edge pairs; handy for building derived graphs."""
        return SenGraph(dict(self.nodes), dict(self.edges), self.raster_ref)


def canonical(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


# --------------------------------------------------------------------------
# feature attachment

def make_node(raster: Raster, node_id: int, x: float, y: float, feat: FeatureConfig) -> SenNode:
    if not raster.contains(x, y):
        raise BoundsError(f"node {node_id} at ({x}, {y}) lies outside raster extent {raster.extent}")
    p = WorldPoint(float(x), float(y))
    point = float(raster.bilinear(p.x, p.y))
    patch = sample_patch(raster, p, feat.patch_half_extent, feat.grid_n)
    return SenNode(node_id, p, point, patch)


def make_edge(raster: Raster, nodes: dict[int, SenNode], u: int, v: int, feat: FeatureConfig) -> SenEdge:
    u, v = canonical(u, v)
    return SenEdge(u, v, sample_polyline(raster, nodes[u].pos, nodes[v].pos, feat.n_edge_samples))


def build_graph(raster: Raster, nodes: dict[int, SenNode], pairs, feat: FeatureConfig,
                raster_ref: str = "") -> SenGraph:
    edges = {}
    for u, v in pairs:
        e = make_edge(raster, nodes, u, v, feat)
        edges[(e.u, e.v)] = e
    return SenGraph(nodes, dict(sorted(edges.items())), raster_ref)


# --------------------------------------------------------------------------
# generators

def generate_nodes(raster: Raster, n: int, min_spacing: float, seed: int,
                   feat: FeatureConfig = FeatureConfig(), max_attempts: int | None = None) -> dict[int, SenNode]:
    """Rejection-sampled node positions, pairwise at least ``min_spacing`` apart."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    x0, y0, x1, y1 = raster.extent
    area = (x1 - x0) * (y1 - y0)
    if n * min_spacing ** 2 >= area:
        raise GenerationError(f"cannot pack {n} nodes {min_spacing} m apart into {area:.0f} m^2")
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 2000 * n
    pts = np.empty((n, 2))
    # bucket grid with cell = spacing: only 3x3 neighbouring buckets can conflict
    buckets: dict[tuple[int, int], list[int]] = {}
    count = 0
    attempts = 0
    s2 = min_spacing ** 2
    while count < n:
        if attempts >= max_attempts:
            raise GenerationError(f"placed only {count} of {n} nodes after {attempts} attempts")
        attempts += 1
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        bx, by = int((x - x0) // min_spacing), int((y - y0) // min_spacing)
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in buckets.get((bx + dx, by + dy), ()):
                    if (pts[j, 0] - x) ** 2 + (pts[j, 1] - y) ** 2 < s2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            pts[count] = (x, y)
            buckets.setdefault((bx, by), []).append(count)
            count += 1
    return {i: make_node(raster, i, pts[i, 0], pts[i, 1], feat) for i in range(n)}


def _check_distinct(ids, pts) -> None:
    if len(ids) < 2:
        raise ValueError("need at least two nodes")
    uniq = np.unique(pts, axis=0)
    if len(uniq) != len(pts):
        raise ValueError("duplicate node positions")


def gabriel_pairs(ids, pts: np.ndarray) -> list[tuple[int, int]]:
    """Gabriel edges: no third point strictly inside the circle on diameter uv."""
    ids = list(ids)
    pts = np.asarray(pts, dtype=np.float64)
    _check_distinct(ids, pts)
    n = len(ids)
    if n == 2:
        return [canonical(ids[0], ids[1])]
    cand = _delaunay_pairs(pts)
    tree = cKDTree(pts)
    out = []
    for i, j in cand:
        mid = (pts[i] + pts[j]) / 2
        r2 = np.sum((pts[i] - pts[j]) ** 2) / 4
        inside = False
        for k in tree.query_ball_point(mid, math.sqrt(r2) * (1 + 1e-9)):
            if k != i and k != j and np.sum((pts[k] - mid) ** 2) < r2 * (1 - 1e-12):
                inside = True
                break
        if not inside:
            out.append(canonical(ids[i], ids[j]))
    return sorted(out)


def rng_pairs(ids, pts: np.ndarray) -> list[tuple[int, int]]:
    """Relative neighbourhood graph edges (a subset of the Gabriel edges)."""
    ids = list(ids)
    pts = np.asarray(pts, dtype=np.float64)
    index = {v: k for k, v in enumerate(ids)}
    tree = cKDTree(pts)
    out = []
    for u, v in gabriel_pairs(ids, pts):
        i, j = index[u], index[v]
        d = math.dist(pts[i], pts[j])
        blocked = False
        for k in tree.query_ball_point(pts[i], d):
            if k != i and k != j and max(math.dist(pts[i], pts[k]), math.dist(pts[j], pts[k])) < d:
                blocked = True
                break
        if not blocked:
            out.append((u, v))
    return out


def _delaunay_pairs(pts: np.ndarray) -> list[tuple[int, int]]:
    n = len(pts)
    try:
        tri = Delaunay(pts)
    except Exception:
        # degenerate (e.g. collinear) input: fall back to every pair
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    if len(tri.coplanar):
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    simp = tri.simplices
    # cocircular neighbours form one Delaunay face; every chord of a face is a
    # candidate since the triangulation picks its diagonals arbitrarily
    a, b, c = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    dd = 2 * (a[:, 0] * (b[:, 1] - c[:, 1]) + b[:, 0] * (c[:, 1] - a[:, 1]) + c[:, 0] * (a[:, 1] - b[:, 1]))
    sa, sb, sc = (a ** 2).sum(1), (b ** 2).sum(1), (c ** 2).sum(1)
    cx = (sa * (b[:, 1] - c[:, 1]) + sb * (c[:, 1] - a[:, 1]) + sc * (a[:, 1] - b[:, 1])) / dd
    cy = (sa * (c[:, 0] - b[:, 0]) + sb * (a[:, 0] - c[:, 0]) + sc * (b[:, 0] - a[:, 0])) / dd
    radius = np.hypot(a[:, 0] - cx, a[:, 1] - cy)
    faces = UnionFind(range(len(simp)))
    for t, nbrs in enumerate(tri.neighbors):
        for m in nbrs:
            if m > t:
                q = pts[(set(simp[m]) - set(simp[t])).pop()]
                if abs(math.hypot(q[0] - cx[t], q[1] - cy[t]) - radius[t]) <= 1e-9 * radius[t]:
                    faces.union(t, int(m))
    verts: dict[int, set[int]] = {}
    for t, s in enumerate(simp):
        verts.setdefault(faces.find(t), set()).update(int(x) for x in s)
    pairs = set()
    for vs in verts.values():
        pairs.update(itertools.combinations(sorted(vs), 2))
    return sorted(pairs)


def connect_gabriel(nodes: dict[int, SenNode], raster: Raster, feat: FeatureConfig = FeatureConfig()) -> SenGraph:
    ids = sorted(nodes)
    pairs = gabriel_pairs(ids, _pos(nodes, ids))
    return build_graph(raster, nodes, pairs, feat)


def connect_rng(nodes: dict[int, SenNode], raster: Raster, feat: FeatureConfig = FeatureConfig()) -> SenGraph:
    ids = sorted(nodes)
    pairs = rng_pairs(ids, _pos(nodes, ids))
    return build_graph(raster, nodes, pairs, feat)


def _pos(nodes, ids) -> np.ndarray:
    return np.array([[nodes[i].pos.x, nodes[i].pos.y] for i in ids], dtype=np.float64)


@dataclass(frozen=True)
class ConnectionParams:
    """Survival-probability coefficients; ``None`` selects the default.

    ``beta`` defaults to ``sharpness / climb_scale`` and ``beta_node`` to
    ``sharpness / rough_scale``, both per metre, so the same rule applies to
    every raster. The scales are typical Gabriel-candidate values on the
    synthetic 0-1000 m terrain. ``gamma`` defaults to ``1 / mean candidate
    length``. With ``alpha = sharpness + 1`` a candidate at both reference
    scales survives a single term with probability one half.
    """

    alpha: float = 7.0
    sharpness: float = 6.0
    climb_scale: float = 30.0
    rough_scale: float = 2.5
    beta: float | None = None
    beta_node: float | None = None
    gamma: float | None = None


def climb(edge_feat: np.ndarray) -> float:
    """Total absolute elevation change along a sampled chord."""
    return float(np.abs(np.diff(edge_feat)).sum())


def patch_roughness(patch: np.ndarray) -> float:
    return float(np.std(patch))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def survival_probabilities(graph: SenGraph, raster: Raster, mode: str,
                           params: ConnectionParams = ConnectionParams()) -> dict[tuple[int, int], float]:
    """Keep-probability of every edge of ``graph`` (the candidate set) under ``mode``."""
    if mode not in ("edge_driven", "node_driven", "both"):
        raise ValueError(f"unknown connection mode {mode!r}")
    pairs = sorted(graph.edges)
    if not pairs:
        raise GenerationError("empty candidate set")
    lengths = np.array([graph.edge_length(u, v) for u, v in pairs])
    gamma = params.gamma if params.gamma is not None else 1.0 / lengths.mean()
    base = params.alpha - gamma * lengths
    p = np.ones(len(pairs))
    if mode in ("edge_driven", "both"):
        climbs = np.array([climb(graph.edges[e].edge_feat) for e in pairs])
        beta = params.beta if params.beta is not None else params.sharpness / params.climb_scale
        p = p * _sigmoid(base - beta * climbs)
    if mode in ("node_driven", "both"):
        rough = {i: patch_roughness(nd.region_feat) for i, nd in graph.nodes.items()}
        diff = np.array([abs(rough[u] - rough[v]) for u, v in pairs])
        beta_node = params.beta_node if params.beta_node is not None else params.sharpness / params.rough_scale
        p = p * _sigmoid(base - beta_node * diff)
    return dict(zip(pairs, p.tolist()))


def connect_terrain_conditioned(nodes: dict[int, SenNode], raster: Raster, mode: str,
                                params: ConnectionParams = ConnectionParams(), seed: int = 0,
                                feat: FeatureConfig = FeatureConfig()) -> SenGraph:
    """Thin the Gabriel graph with terrain-dependent survival, then repair connectivity.

    Each Gabriel candidate survives with a logistic probability that falls
    with its length and with the terrain it crosses (``edge_driven``), the
    roughness mismatch of its endpoints (``node_driven``) or both. Dropped
    candidates are added back shortest-first wherever they join two
    components, so the result is connected.
    """
    cand = connect_gabriel(nodes, raster, feat)
    probs = survival_probabilities(cand, raster, mode, params)
    rng = np.random.default_rng(seed)
    pairs = sorted(probs)
    draws = rng.uniform(size=len(pairs))
    kept = {e for e, d in zip(pairs, draws) if d < probs[e]}

    uf = UnionFind(nodes)
    for u, v in kept:
        uf.union(u, v)
    by_length = sorted(pairs, key=lambda e: (cand.edge_length(*e), e))
    for u, v in by_length:
        if uf.union(u, v):
            kept.add((u, v))
    edges = {e: cand.edges[e] for e in sorted(kept)}
    return SenGraph(nodes, edges, cand.raster_ref)


class UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True

    def n_components(self) -> int:
        return len({self.find(x) for x in self.parent})


def is_connected(g: SenGraph) -> bool:
    uf = UnionFind(g.nodes)
    for u, v in g.edges:
        uf.union(u, v)
    return uf.n_components() == 1


# --------------------------------------------------------------------------
# statistics

def degree_stats(g: SenGraph) -> dict[int, int]:
    """Histogram ``{degree: node count}``."""
    if not g.nodes:
        raise ValueError("graph has no nodes")
    hist: dict[int, int] = {}
    for d in g.degree().values():
        hist[d] = hist.get(d, 0) + 1
    return dict(sorted(hist.items()))


def edge_length_stats(g: SenGraph) -> dict[str, float]:
    if not g.edges:
        return {"count": 0, "min": 0.0, "mean": 0.0, "max": 0.0, "q25": 0.0, "q50": 0.0, "q75": 0.0}
    lengths = np.array([g.edge_length(u, v) for u, v in g.edges])
    q25, q50, q75 = np.quantile(lengths, [0.25, 0.5, 0.75])
    return {"count": len(lengths), "min": float(lengths.min()), "mean": float(lengths.mean()),
            "max": float(lengths.max()), "q25": float(q25), "q50": float(q50), "q75": float(q75)}


# --------------------------------------------------------------------------
# edge-list files

def format_edgelist(positions: dict[int, tuple[float, float]], pairs, extra: list[str] = ()) -> str:
    lines = ["NODES"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in sorted(positions.items())]
    lines.append("EDGES")
    lines += [f"{u} {v}" for u, v in sorted(pairs)]
    lines += list(extra)
    return "\n".join(lines) + "\n"


def write_edgelist(g: SenGraph, path) -> None:
    pos = {i: (nd.pos.x, nd.pos.y) for i, nd in g.nodes.items()}
    _atomic_write(Path(path), format_edgelist(pos, g.edges))


def parse_sections(text: str, known: tuple[str, ...]) -> dict[str, list[tuple[int, list[str]]]]:
    """Split a sectioned text file into ``{section: [(line_no, tokens), ...]}``."""
    sections: dict[str, list] = {}
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line in known:
            current = line
            sections.setdefault(current, [])
            continue
        if current is None:
            raise EdgeListParseError(f"line {no}: data before any section header")
        sections[current].append((no, line.split()))
    return sections


def parse_topology(text: str, known=("NODES", "EDGES")):
    sec = parse_sections(text, known)
    positions: dict[int, tuple[float, float]] = {}
    for no, tok in sec.get("NODES", []):
        if len(tok) != 3:
            raise EdgeListParseError(f"line {no}: expected 'id x y'")
        try:
            nid, x, y = int(tok[0]), float(tok[1]), float(tok[2])
        except ValueError:
            raise EdgeListParseError(f"line {no}: malformed node line {' '.join(tok)!r}") from None
        if nid in positions:
            raise EdgeListParseError(f"line {no}: duplicate node id {nid}")
        positions[nid] = (x, y)
    pairs = set()
    for no, tok in sec.get("EDGES", []):
        if len(tok) != 2:
            raise EdgeListParseError(f"line {no}: expected 'u v'")
        try:
            u, v = int(tok[0]), int(tok[1])
        except ValueError:
            raise EdgeListParseError(f"line {no}: malformed edge line {' '.join(tok)!r}") from None
        for k in (u, v):
            if k not in positions:
                raise EdgeListParseError(f"line {no}: edge references unknown node id {k}")
        if u == v:
            raise EdgeListParseError(f"line {no}: self-loop on node {u}")
        pairs.add(canonical(u, v))
    return positions, sorted(pairs), sec


def read_edgelist(path, raster: Raster, feat: FeatureConfig = FeatureConfig()) -> SenGraph:
    positions, pairs, _ = parse_topology(Path(path).read_text())
    nodes = {i: make_node(raster, i, x, y, feat) for i, (x, y) in sorted(positions.items())}
    return build_graph(raster, nodes, pairs, feat, raster_ref=str(path))

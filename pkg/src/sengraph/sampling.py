"""Window sampling, middle-node simplification and complete-graph labelling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graph import (EdgeListParseError, FeatureConfig, SenGraph, SenNode, canonical, format_edgelist,
                    make_node, parse_topology)
from .raster import Raster, _atomic_write, sample_polyline

log = logging.getLogger(__name__)

RIVER_WINDOW = 40_000.0
POWER_WINDOW = 20_000.0
MIN_NODES = 3
MIN_EDGES = 2


class SamplingError(RuntimeError):
    pass


@dataclass
class Subgraph:
    center: int
    node_ids: list[int]
    pairs: set[tuple[int, int]]
    bounds: tuple[float, float, float, float]

    def degree(self) -> dict[int, int]:
        deg = {i: 0 for i in self.node_ids}
        for u, v in self.pairs:
            deg[u] += 1
            deg[v] += 1
        return deg


@dataclass(eq=False)
class SampleGraph:
    """Complete graph over one window's (simplified) nodes.

    Arrays are aligned with ``node_ids``; candidate endpoints in ``cand`` are
    local indices into it with ``cand[:, 0] < cand[:, 1]``.
    """

    center_node: int
    node_ids: np.ndarray
    world_pos: np.ndarray
    rel_pos: np.ndarray
    point: np.ndarray
    patches: np.ndarray
    cand: np.ndarray
    labels: np.ndarray
    edge_feats: np.ndarray
    bounds: tuple[float, float, float, float]
    window: float
    value_scale: float
    graph_ref: str = ""

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def nodes(self) -> list[SenNode]:
        from .raster import WorldPoint
        return [SenNode(int(i), WorldPoint(*map(float, p)), float(x), r)
                for i, p, x, r in zip(self.node_ids, self.rel_pos, self.point, self.patches)]

    @property
    def candidate_edges(self) -> list[tuple[int, int, int, np.ndarray]]:
        ids = self.node_ids
        return [(int(ids[a]), int(ids[b]), int(y), f)
                for (a, b), y, f in zip(self.cand, self.labels, self.edge_feats)]

    def global_pairs(self) -> list[tuple[int, int]]:
        ids = self.node_ids
        return [canonical(int(ids[a]), int(ids[b])) for a, b in self.cand]

    def real_pairs(self) -> set[tuple[int, int]]:
        return {p for p, y in zip(self.global_pairs(), self.labels) if y == 1}


def window_bounds(center: SenNode, window: float) -> tuple[float, float, float, float]:
    h = window / 2.0
    return center.pos.x - h, center.pos.y - h, center.pos.x + h, center.pos.y + h


def extract_window(g: SenGraph, center: int, window: float, _pos=None) -> Subgraph:
    """Nodes inside the axis-aligned square of side ``window`` around ``center``."""
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    ids = np.array(g.node_ids) if _pos is None else _pos[0]
    pos = g.positions(ids) if _pos is None else _pos[1]
    x0, y0, x1, y1 = bounds = window_bounds(g.nodes[center], window)
    inside = (pos[:, 0] >= x0) & (pos[:, 0] <= x1) & (pos[:, 1] >= y0) & (pos[:, 1] <= y1)
    members = [int(i) for i in ids[inside]]
    mset = set(members)
    pairs = {(u, v) for (u, v) in g.edges if u in mset and v in mset}
    return Subgraph(center, sorted(members), pairs, bounds)


def simplify(sub: Subgraph, keep=()) -> Subgraph:
    """Remove degree-2 chain nodes, merging their two edges into one.

    A node is left in place if merging would create a self-loop or a
    duplicate edge (so triangles and other short cycles survive), or if it is
    listed in ``keep``.
    """
    keep = set(keep)
    adj = {i: set() for i in sub.node_ids}
    for u, v in sub.pairs:
        adj[u].add(v)
        adj[v].add(u)
    changed = True
    while changed:
        changed = False
        for node in sorted(adj):
            nb = adj[node]
            if node in keep or len(nb) != 2:
                continue
            a, b = sorted(nb)
            if b in adj[a]:
                continue
            adj[a].discard(node)
            adj[b].discard(node)
            adj[a].add(b)
            adj[b].add(a)
            del adj[node]
            changed = True
    pairs = {canonical(u, v) for u in adj for v in adj[u]}
    return Subgraph(sub.center, sorted(adj), pairs, sub.bounds)


def cropped_nodes(sub: Subgraph, g: SenGraph) -> set[int]:
    """Members that lost at least one neighbour to the window border."""
    full = g.degree()
    return {i for i, d in sub.degree().items() if d < full[i]}


class _FeatureCache:
    def __init__(self, g: SenGraph, raster: Raster, feat: FeatureConfig):
        self.g, self.raster, self.feat = g, raster, feat
        self.edges: dict[tuple[int, int], np.ndarray] = {}

    def edge(self, u: int, v: int) -> np.ndarray:
        key = canonical(u, v)
        f = self.edges.get(key)
        if f is None:
            if key in self.g.edges and len(self.g.edges[key].edge_feat) == self.feat.n_edge_samples:
                f = self.g.edges[key].edge_feat
            else:
                a, b = self.g.nodes[key[0]].pos, self.g.nodes[key[1]].pos
                f = sample_polyline(self.raster, a, b, self.feat.n_edge_samples)
            self.edges[key] = f
        return f


def to_sample(sub: Subgraph, g: SenGraph, raster: Raster, window: float,
              feat: FeatureConfig = FeatureConfig(), max_nodes: int = 64,
              _cache: _FeatureCache | None = None) -> SampleGraph | None:
    """Complete-graph sample, or ``None`` when the window is too small or too big."""
    n = len(sub.node_ids)
    if n < MIN_NODES or len(sub.pairs) < MIN_EDGES:
        return None
    if n > max_nodes:
        log.warning("window at node %d holds %d nodes (> %d); skipped", sub.center, n, max_nodes)
        return None
    cache = _cache or _FeatureCache(g, raster, feat)
    ids = np.array(sub.node_ids, dtype=np.int64)
    world = g.positions(ids)
    c = g.nodes[sub.center].pos
    rel = world - np.array([c.x, c.y])
    point = np.array([g.nodes[i].point_feat for i in ids])
    patches = np.stack([g.nodes[i].region_feat for i in ids])
    a, b = np.triu_indices(n, k=1)
    cand = np.stack([a, b], axis=1)
    labels = np.array([1 if (int(ids[i]), int(ids[j])) in sub.pairs else 0 for i, j in cand], dtype=np.int64)
    feats = np.stack([cache.edge(int(ids[i]), int(ids[j])) for i, j in cand])
    _, vmax = raster.value_range()
    return SampleGraph(sub.center, ids, world, rel, point, patches, cand, labels, feats,
                       sub.bounds, float(window), float(vmax) if vmax > 0 else 1.0, g.raster_ref)


def prepared_window(g: SenGraph, center: int, window: float, simplify_windows: bool = True,
                    _pos=None, _adj=None) -> Subgraph:
    """Window around ``center``, simplified the way ``sample_all`` does it.

    The centre node, the centre's neighbours and any node cropped by the
    border are kept; every other degree-2 node is simplified away. Keeping
    the neighbours means each edge reaching no further than ``window / 2``
    along either axis is a positive in at least one sample.
    """
    sub = extract_window(g, center, window, _pos=_pos)
    if simplify_windows:
        adj = _adj if _adj is not None else g.adjacency()
        sub = simplify(sub, keep={center} | adj[center] | cropped_nodes(sub, g))
    return sub


def sample_all(g: SenGraph, raster: Raster, window: float, feat: FeatureConfig = FeatureConfig(),
               max_nodes: int = 64, simplify_windows: bool = True) -> list[SampleGraph]:
    """One window per node of ``g`` (see ``prepared_window``); rejected windows are dropped."""
    ids = np.array(g.node_ids)
    pos = g.positions(ids)
    adj = g.adjacency()
    cache = _FeatureCache(g, raster, feat)
    out = []
    for c in ids.tolist():
        sub = prepared_window(g, c, window, simplify_windows, _pos=(ids, pos), _adj=adj)
        s = to_sample(sub, g, raster, window, feat, max_nodes, cache)
        if s is not None:
            out.append(s)
    if not out:
        raise SamplingError(f"no window of size {window:g} m yielded >= {MIN_NODES} nodes and "
                            f">= {MIN_EDGES} edges; try a larger window")
    return out


def dihedral(s: SampleGraph, k: int) -> SampleGraph:
    """The sample seen after rotating the world by ``k % 4`` quarter turns
    counter-clockwise about the window centre, mirrored east-west first when
    ``k >= 4``.

    Point features and chord profiles do not change; offsets and patches do.
    World positions and bounds are left as they were.
    """
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must lie in [0, 8), got {k}")
    rel, patches = s.rel_pos.copy(), s.patches
    if k >= 4:
        rel[:, 0] = -rel[:, 0]
        patches = patches[:, :, ::-1]
    for _ in range(k % 4):
        rel = np.stack([-rel[:, 1], rel[:, 0]], axis=1)
    patches = np.rot90(patches, k % 4, axes=(1, 2))
    return replace(s, rel_pos=rel, patches=np.ascontiguousarray(patches))


def coverage(samples: list[SampleGraph]) -> set[tuple[int, int]]:
    """Global pairs labelled 1 in at least one sample."""
    out = set()
    for s in samples:
        out |= s.real_pairs()
    return out


# --------------------------------------------------------------------------
# sample files

def write_sample(s: SampleGraph, path) -> None:
    ids = s.node_ids
    pos = {int(i): (float(p[0]), float(p[1])) for i, p in zip(ids, s.world_pos)}
    x0, y0, x1, y1 = s.bounds
    head = ["SAMPLE", f"center {s.center_node}", f"window {s.window!r}",
            f"bounds {x0!r} {y0!r} {x1!r} {y1!r}", f"scale {s.value_scale!r}"]
    if s.graph_ref:
        head.append(f"graph {s.graph_ref}")
    cands = ["CANDIDATES"] + [f"{int(ids[a])} {int(ids[b])} {int(y)}" for (a, b), y in zip(s.cand, s.labels)]
    body = format_edgelist(pos, sorted(s.real_pairs()), cands)
    _atomic_write(Path(path), "\n".join(head) + "\n" + body)


def read_sample(path, raster: Raster, feat: FeatureConfig = FeatureConfig()) -> SampleGraph:
    text = Path(path).read_text()
    positions, pairs, sec = parse_topology(text, ("SAMPLE", "NODES", "EDGES", "CANDIDATES"))
    meta = {tok[0]: tok[1:] for _, tok in sec.get("SAMPLE", [])}
    try:
        center = int(meta["center"][0])
        window = float(meta["window"][0])
        bounds = tuple(float(v) for v in meta["bounds"])
        scale = float(meta["scale"][0])
    except (KeyError, IndexError, ValueError):
        raise EdgeListParseError(f"{path}: incomplete SAMPLE header") from None
    graph_ref = " ".join(meta.get("graph", []))
    ids = sorted(positions)
    nodes = {i: make_node(raster, i, *positions[i], feat) for i in ids}
    g = SenGraph(nodes, {}, graph_ref)
    index = {i: k for k, i in enumerate(ids)}
    listed = {}
    for no, tok in sec.get("CANDIDATES", []):
        if len(tok) != 3:
            raise EdgeListParseError(f"line {no}: expected 'u v label'")
        u, v, y = int(tok[0]), int(tok[1]), int(tok[2])
        if u not in index or v not in index:
            raise EdgeListParseError(f"line {no}: candidate references unknown node id {u if u not in index else v}")
        listed[canonical(u, v)] = y
    sub = Subgraph(center, ids, set(pairs), bounds)
    s = to_sample(sub, g, raster, window, feat, max_nodes=10 ** 9)
    if s is None:
        raise EdgeListParseError(f"{path}: sample below minimum size")
    expect = dict(zip(s.global_pairs(), s.labels.tolist()))
    if listed != expect:
        raise EdgeListParseError(f"{path}: CANDIDATES section disagrees with NODES/EDGES")
    s.value_scale = scale
    return s

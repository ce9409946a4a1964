"""Multimodal spatial GCN layers (gmu), the rsgcn / esgcn variants, a GraphSAGE baseline and the link head."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .raster import _atomic_write
from .sampling import SampleGraph
from .tensor import Tensor

VARIANTS = ("gmu", "rsgcn", "esgcn", "graphsage")
PATCH_INPUTS = ("centered", "slope", "raw")
CHECKPOINT_FORMAT = "sengraph-checkpoint"
CHECKPOINT_VERSION = 1

# which embeddings enter the fused message
_FACTORS = {
    "gmu": ("pos", "point", "region", "edge"),
    "rsgcn": ("pos", "point", "region"),
    "esgcn": ("pos", "edge"),
}


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "gmu"
    layers: int = 2
    d: int = 32
    head_hidden: int = 32
    leaky_slope: float = 0.01
    kernel_size: int = 5
    kernel_stride: int = 2
    grid_n: int = 32
    n_edge_samples: int = 128
    # False drops the edge factor from the gmu message, leaving edges to the head only
    gmu_edge_factor: bool = True
    # "complete": messages over every candidate pair; "labeled": over real edges only
    message_graph: str = "complete"
    # feed each end node's incoming message along the candidate pair into the head
    pair_context: bool = True
    # give the pair messages their own head weights instead of adding them to the node states
    pair_weights: bool = True
    # regional input: "centered" (patch minus the node's own value), "slope" (gradient
    # magnitude map, so per-node relief survives the patch difference) or "raw"
    patch_input: str = "centered"
    # subtract each chord profile's mean, keeping only its shape
    center_edge: bool = True
    # divisor (metres) for the centred patch and chord features; None uses the raster max
    relief_scale: float | None = 50.0
    # biases on the lift, region and edge embeddings; the position embedding never gets one
    embed_bias: bool = True
    # starting bias, 1 makes each non-position factor begin near a pass-through gate
    bias_init: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.layers < 1 or self.d < 1 or self.head_hidden < 1:
            raise ValueError("layers, d and head_hidden must be >= 1")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.patch_input not in PATCH_INPUTS:
            raise ValueError(f"patch_input must be one of {PATCH_INPUTS}, got {self.patch_input!r}")
        if self.message_graph not in ("complete", "labeled"):
            raise ValueError(f"message_graph must be 'complete' or 'labeled', got {self.message_graph!r}")
        if self.relief_scale is not None and not self.relief_scale > 0:
            raise ValueError("relief_scale must be positive")
        if self.kernel_size > self.grid_n:
            raise ValueError("kernel larger than the regional patch")

    @property
    def factors(self) -> tuple[str, ...]:
        f = _FACTORS.get(self.variant, ())
        if self.variant == "gmu" and not self.gmu_edge_factor:
            f = tuple(x for x in f if x != "edge")
        return f

    @property
    def conv_out(self) -> int:
        side = (self.grid_n - self.kernel_size) // self.kernel_stride + 1
        return side * side

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# inputs

@dataclass(eq=False)
class SampleInputs:
    """Normalised, model-ready arrays for one sample."""

    n: int
    pos: np.ndarray        # (n, 2) window-relative offsets / window
    point: np.ndarray      # (n, 1)
    patches: np.ndarray    # (n, g, g)
    cand: np.ndarray       # (m, 2) local indices, a < b
    labels: np.ndarray     # (m,)
    src: np.ndarray        # (M,) message source
    dst: np.ndarray        # (M,) message target
    msg_feat: np.ndarray   # (M, S) chord samples starting at the target
    inc: np.ndarray        # (n, M) sums messages into targets
    mean_adj: np.ndarray   # (n, n) row-normalised neighbour mean
    pair_src: np.ndarray   # (2m,) directed candidate messages: first into a, then into b
    pair_dst: np.ndarray
    pair_feat: np.ndarray
    pair_is_msg: bool      # directed candidate list equals the message list


def slope_map(patches: np.ndarray) -> np.ndarray:
    """Per-pixel gradient magnitude of ``(n, g, g)`` patches, in value units per pixel."""
    gy, gx = np.gradient(patches, axis=(1, 2))
    return np.hypot(gx, gy)


def encode(sample: SampleGraph, cfg: ModelConfig) -> SampleInputs:
    n = sample.n
    scale = sample.value_scale
    pos = sample.rel_pos / sample.window
    point = (sample.point / scale).reshape(n, 1)
    relief = cfg.relief_scale or scale
    if cfg.patch_input == "centered":
        patches = (sample.patches - sample.point[:, None, None]) / relief
    elif cfg.patch_input == "slope":
        patches = slope_map(sample.patches) * (sample.patches.shape[-1] - 1) / relief
    else:
        patches = sample.patches / scale
    cand = sample.cand
    if cfg.center_edge:
        feats = (sample.edge_feats - sample.edge_feats.mean(axis=1, keepdims=True)) / relief
    else:
        feats = sample.edge_feats / scale
    a, b = cand[:, 0], cand[:, 1]
    pair_src = np.concatenate([b, a])
    pair_dst = np.concatenate([a, b])
    pair_feat = np.concatenate([feats, feats[:, ::-1]])
    if cfg.message_graph == "complete":
        src, dst, mfeat = pair_src, pair_dst, pair_feat
    else:
        real = sample.labels == 1
        ra, rb, rf = a[real], b[real], feats[real]
        src = np.concatenate([rb, ra])
        dst = np.concatenate([ra, rb])
        mfeat = np.concatenate([rf, rf[:, ::-1]])
    return _assemble(n, pos, point, patches, cand, sample.labels, src, dst, mfeat,
                     pair_src, pair_dst, pair_feat, cfg.message_graph == "complete")


def _assemble(n, pos, point, patches, cand, labels, src, dst, mfeat, pair_src, pair_dst, pair_feat, same):
    M = len(src)
    inc = np.zeros((n, M))
    inc[dst, np.arange(M)] = 1.0
    adj = np.zeros((n, n))
    adj[dst, src] = 1.0
    deg = adj.sum(axis=1, keepdims=True)
    mean_adj = np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)
    return SampleInputs(n, np.asarray(pos, float), np.asarray(point, float), np.asarray(patches, float),
                        np.asarray(cand), np.asarray(labels), np.asarray(src), np.asarray(dst),
                        np.asarray(mfeat, float).reshape(M, -1), inc, mean_adj,
                        np.asarray(pair_src), np.asarray(pair_dst), np.asarray(pair_feat, float), same)


# --------------------------------------------------------------------------
# embeddings (batched over messages)

def embed_position(p_u: Tensor, p_v: Tensor, w_pos: Tensor, slope: float = T.DEFAULT_SLOPE) -> Tensor:
    """LeakyReLU((p_u - p_v) W); rows are messages, u the receiving node."""
    return T.leaky_relu(T.matmul(T.sub(p_u, p_v), w_pos), slope)


def _affine(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    out = T.matmul(x, w)
    return out if b is None else T.add(out, _rows(b, x.shape[0]))


def embed_edge(e_uv: Tensor, w_edge: Tensor, slope: float = T.DEFAULT_SLOPE, bias: Tensor | None = None) -> Tensor:
    if e_uv.data.ndim == 1:
        e_uv = T.reshape(e_uv, (1, -1))
    if e_uv.shape[1] != w_edge.shape[0]:
        raise T.DimensionError(f"edge feature length {e_uv.shape[1]} does not match weights {w_edge.shape}")
    return T.leaky_relu(_affine(e_uv, w_edge, bias), slope)


def _region_from_conv(conv_diff: Tensor, proj: Tensor, slope: float, bias: Tensor | None = None) -> Tensor:
    act = T.leaky_relu(conv_diff, slope)
    flat = T.reshape(act, (act.shape[0], -1))
    return T.leaky_relu(_affine(flat, proj, bias), slope)


def embed_region(r_u: Tensor, r_v: Tensor, kernel: Tensor, proj: Tensor, stride: int = 1,
                 slope: float = T.DEFAULT_SLOPE, bias: Tensor | None = None) -> Tensor:
    """Convolve the patch difference ``r_v - r_u``, activate, flatten and project.

    Accepts single patches ``(g, g)`` or batches ``(M, g, g)``.
    """
    if r_u.shape != r_v.shape:
        raise T.DimensionError(f"patch shapes differ: {r_u.shape} vs {r_v.shape}")
    diff = T.sub(r_v, r_u)
    if diff.data.ndim == 2:
        diff = T.reshape(diff, (1,) + diff.shape)
    return _region_from_conv(T.conv2d(diff, kernel, stride), proj, slope, bias)


def fuse(parts) -> Tensor:
    """Element-wise product of the per-modality embeddings."""
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = T.mul(out, p)
    return out


def predict_edges(node_repr: Tensor, cand: np.ndarray, head: dict[str, Tensor],
                  pair_msgs: Tensor | None = None, slope: float = T.DEFAULT_SLOPE) -> Tensor:
    """Existence probability per candidate from its two end-node representations.

    The head scores both concatenation orders and averages the probabilities.
    With ``pair_msgs`` (rows: messages into ``a`` then into ``b``) the message
    each end node receives from the other enters the hidden layer too, through
    its own weights ``head.wp`` when present, otherwise added onto the node
    representation.
    """
    m = len(cand)
    a, b = cand[:, 0], cand[:, 1]
    ha, hb = T.take_rows(node_repr, a), T.take_rows(node_repr, b)
    ma = mb = None
    if pair_msgs is not None:
        ma = T.take_rows(pair_msgs, np.arange(m))
        mb = T.take_rows(pair_msgs, np.arange(m, 2 * m))
        if "head.wp" not in head:
            ha, hb = T.add(ha, ma), T.add(hb, mb)
            ma = mb = None
    z = T.concat([T.concat([ha, hb], axis=1), T.concat([hb, ha], axis=1)], axis=0)
    pre = T.matmul(z, head["head.w1"])
    if ma is not None:
        zp = T.concat([T.concat([ma, mb], axis=1), T.concat([mb, ma], axis=1)], axis=0)
        pre = T.add(pre, T.matmul(zp, head["head.wp"]))
    hidden = T.leaky_relu(T.add(pre, _rows(head["head.b1"], 2 * m)), slope)
    logit = T.add(T.matmul(hidden, head["head.w2"]), _rows(head["head.b2"], 2 * m))
    prob = T.sigmoid(T.reshape(logit, (2 * m,)))
    both = T.add(T.take_rows(prob, np.arange(m)), T.take_rows(prob, np.arange(m, 2 * m)))
    return T.scale(both, 0.5)


def _rows(bias: Tensor, k: int) -> Tensor:
    # broadcast a bias row by gathering it k times
    return T.take_rows(T.reshape(bias, (1, -1)), np.zeros(k, dtype=np.intp))


# --------------------------------------------------------------------------
# layers

def gmu_messages(h_prev: Tensor, src, dst, feat: np.ndarray, inp: SampleInputs, lp: dict[str, Tensor],
                 cfg: ModelConfig, conv_nodes: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Fused messages ``src -> dst``; also returns the lifted node states."""
    slope = cfg.leaky_slope
    lifted = T.leaky_relu(_affine(h_prev, lp["lift"], lp.get("lift_b")), slope)
    parts = []
    if "pos" in cfg.factors:
        pos = Tensor(inp.pos)
        parts.append(embed_position(T.take_rows(pos, dst), T.take_rows(pos, src), lp["pos"], slope))
    if "point" in cfg.factors:
        parts.append(T.take_rows(lifted, src))
    if "region" in cfg.factors:
        if conv_nodes is None:
            conv_nodes = T.conv2d(Tensor(inp.patches), lp["kernel"], cfg.kernel_stride)
        # conv is linear: conv(r_src - r_dst) == conv(r_src) - conv(r_dst)
        diff = T.sub(T.take_rows(conv_nodes, src), T.take_rows(conv_nodes, dst))
        parts.append(_region_from_conv(diff, lp["region"], slope, lp.get("region_b")))
    if "edge" in cfg.factors:
        parts.append(embed_edge(Tensor(feat), lp["edge"], slope, lp.get("edge_b")))
    return fuse(parts), lifted


def gmu_layer(inp: SampleInputs, h_prev: Tensor, lp: dict[str, Tensor], cfg: ModelConfig,
              keep_messages: bool = False):
    """``LeakyReLU(lift(h_i) + sum_j m_{j->i})`` over the sample's message graph."""
    msgs, lifted = gmu_messages(h_prev, inp.src, inp.dst, inp.msg_feat, inp, lp, cfg)
    if len(inp.src):
        total = T.add(lifted, T.matmul(Tensor(inp.inc), msgs))
    else:
        total = lifted
    out = T.leaky_relu(total, cfg.leaky_slope)
    return (out, msgs) if keep_messages else out


def graphsage_layer(inp: SampleInputs, h_prev: Tensor, lp: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Mean-aggregation update ``LeakyReLU(h_i W_self + mean_j(h_j) W_nb)``."""
    own = T.matmul(h_prev, lp["self"])
    nb = T.matmul(T.matmul(Tensor(inp.mean_adj), h_prev), lp["nb"])
    return T.leaky_relu(T.add(own, nb), cfg.leaky_slope)


# --------------------------------------------------------------------------
# model

class SpatialGCN:
    """Stacked representation layers plus the two-layer link head."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))

    def layer_params(self, l: int) -> dict[str, Tensor]:
        prefix = f"l{l}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def represent(self, inp: SampleInputs):
        cfg = self.cfg
        if cfg.variant == "graphsage":
            h = Tensor(inp.pos)
            for l in range(cfg.layers):
                h = graphsage_layer(inp, h, self.layer_params(l), cfg)
            return h, None
        h = Tensor(inp.point)
        msgs = None
        for l in range(cfg.layers):
            last = l == cfg.layers - 1
            lp = self.layer_params(l)
            if last and cfg.pair_context:
                h_prev = h
                h, msgs = gmu_layer(inp, h_prev, lp, cfg, keep_messages=True)
                if not inp.pair_is_msg:
                    msgs, _ = gmu_messages(h_prev, inp.pair_src, inp.pair_dst, inp.pair_feat, inp, lp, cfg)
            else:
                h = gmu_layer(inp, h, lp, cfg)
        return h, msgs

    def forward(self, inp: SampleInputs) -> Tensor:
        h, msgs = self.represent(inp)
        return predict_edges(h, inp.cand, self.params, msgs, self.cfg.leaky_slope)

    def predict(self, sample: SampleGraph) -> np.ndarray:
        return self.forward(encode(sample, self.cfg)).data.copy()


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """Name -> (shape, fan_in) for every parameter of ``cfg``.

    Fan-in 0 marks a zero-initialised bias, -1 a bias initialised to
    ``cfg.bias_init``.
    """
    d = cfg.d
    shapes: dict[str, tuple[tuple[int, ...], int]] = {}
    for l in range(cfg.layers):
        if cfg.variant == "graphsage":
            d_in = 2 if l == 0 else d
            shapes[f"l{l}.self"] = ((d_in, d), d_in)
            shapes[f"l{l}.nb"] = ((d_in, d), d_in)
            continue
        d_in = 1 if l == 0 else d
        shapes[f"l{l}.lift"] = ((d_in, d), d_in)
        if cfg.embed_bias:
            shapes[f"l{l}.lift_b"] = ((d,), -1)
        if "pos" in cfg.factors:
            shapes[f"l{l}.pos"] = ((2, d), 2)
        if "region" in cfg.factors:
            k = cfg.kernel_size
            shapes[f"l{l}.kernel"] = ((k, k), k * k)
            shapes[f"l{l}.region"] = ((cfg.conv_out, d), cfg.conv_out)
            if cfg.embed_bias:
                shapes[f"l{l}.region_b"] = ((d,), -1)
        if "edge" in cfg.factors:
            shapes[f"l{l}.edge"] = ((cfg.n_edge_samples, d), cfg.n_edge_samples)
            if cfg.embed_bias:
                shapes[f"l{l}.edge_b"] = ((d,), -1)
    shapes["head.w1"] = ((2 * d, cfg.head_hidden), 2 * d)
    if cfg.variant != "graphsage" and cfg.pair_context and cfg.pair_weights:
        shapes["head.wp"] = ((2 * d, cfg.head_hidden), 2 * d)
    shapes["head.b1"] = ((cfg.head_hidden,), 0)
    shapes["head.w2"] = ((cfg.head_hidden, 1), cfg.head_hidden)
    shapes["head.b2"] = ((1,), 0)
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for name, (shape, fan_in) in param_shapes(cfg).items():
        if fan_in == 0:
            params[name] = Tensor(np.zeros(shape), requires_grad=True)
        elif fan_in == -1:
            params[name] = Tensor(np.full(shape, cfg.bias_init), requires_grad=True)
        else:
            params[name] = T.init_uniform(shape, fan_in, rng)
    return params


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, cfg: ModelConfig, params: dict[str, Tensor], extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "extra": extra or {},
        "tensors": {k: {"shape": list(v.shape), "data": [float(x) for x in v.data.reshape(-1)]}
                    for k, v in sorted(params.items())},
    }
    _atomic_write(Path(path), json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, Tensor], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    cfg = ModelConfig.from_dict(doc["config"])
    expected = param_shapes(cfg)
    tensors = doc["tensors"]
    if set(tensors) != set(expected):
        raise CheckpointError(f"{path}: parameter names do not match the stored config")
    params = {}
    for name, (shape, _) in expected.items():
        rec = tensors[name]
        if tuple(rec["shape"]) != shape or len(rec["data"]) != int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {name} has shape {rec['shape']}, expected {list(shape)}")
        params[name] = Tensor(np.array(rec["data"], dtype=np.float64).reshape(shape), requires_grad=True)
    return cfg, params, doc.get("extra", {})

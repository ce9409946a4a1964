import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sengraph import tensor as T
from sengraph.models import (CheckpointError, ModelConfig, SpatialGCN, VARIANTS, embed_edge, embed_position,
                             embed_region, encode, fuse, gmu_layer, graphsage_layer, load_checkpoint,
                             param_shapes, predict_edges, save_checkpoint, slope_map)
from sengraph.tensor import DimensionError, Tensor

from helpers import gradient_errors, permute_sample, random_sample, rel_err

SMALL = dict(grid_n=8, n_edge_samples=8, kernel_size=3, kernel_stride=2, d=4, head_hidden=4)


def lrelu(x, s=0.01):
    return np.where(x > 0, x, s * x)


def naive_conv(x, k, s):
    m = k.shape[0]
    o = (x.shape[0] - m) // s + 1
    out = np.zeros((o, o))
    for i in range(o):
        for j in range(o):
            out[i, j] = sum(k[a, b] * x[i * s + a, j * s + b] for a in range(m) for b in range(m))
    return out


def randomise(model, seed=1, scale=1.0):
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.data[...] = rng.normal(0, scale, p.shape)


# ---------------------------------------------------------------- embeddings

def test_position_zero_difference():
    w = Tensor(np.random.default_rng(0).normal(size=(2, 6)))
    p = Tensor([[3.0, -2.0]])
    np.testing.assert_array_equal(embed_position(p, p, w).data, 0.0)
    q = Tensor([[1.0, 7.0]])
    np.testing.assert_array_equal(embed_position(p, q, Tensor(np.zeros((2, 6)))).data, 0.0)


def test_position_antisymmetric_preactivation():
    rng = np.random.default_rng(1)
    w = Tensor(rng.normal(size=(2, 5)))
    p, q = Tensor(rng.normal(size=(1, 2))), Tensor(rng.normal(size=(1, 2)))
    pre = (p.data - q.data) @ w.data
    np.testing.assert_allclose(embed_position(p, q, w, 0.2).data, lrelu(pre, 0.2))
    np.testing.assert_allclose(embed_position(q, p, w, 0.2).data, lrelu(-pre, 0.2))


def test_position_gradient():
    rng = np.random.default_rng(2)
    w = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    p, q = Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(3, 2)))
    f = lambda: T.sum_all(embed_position(p, q, w))
    with T.Tape():
        out = f()
    T.backward(out)
    assert rel_err(w.grad, T.numeric_grad(lambda: f().item(), w)) < 1e-6


def test_edge_embedding_closed_forms():
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(8, 5)))
    np.testing.assert_array_equal(embed_edge(Tensor(np.zeros(8)), w).data, 0.0)
    e = Tensor(rng.normal(size=8))
    np.testing.assert_array_equal(embed_edge(e, w).data, embed_edge(Tensor(e.data.copy()), w).data)
    c = -2.5
    np.testing.assert_allclose(embed_edge(Tensor(np.full(8, c)), w).data[0], lrelu(c * w.data.sum(axis=0)),
                               atol=1e-12)
    with pytest.raises(DimensionError):
        embed_edge(Tensor(np.ones(7)), w)


def test_region_relative_difference():
    rng = np.random.default_rng(4)
    k, proj = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=(9, 4)))
    r = Tensor(rng.normal(size=(7, 7)))
    np.testing.assert_array_equal(embed_region(r, r, k, proj, stride=2).data, 0.0)
    with pytest.raises(DimensionError):
        embed_region(r, Tensor(np.zeros((6, 6))), k, proj)


def test_region_identity_kernel():
    out = embed_region(Tensor([[2.0]]), Tensor([[-1.5]]), Tensor([[1.0]]), Tensor([[1.0]]))
    # the inner activation after the convolution leaves positives alone and
    # scales negatives, so the result is lrelu(lrelu(r_v - r_u))
    assert out.data[0, 0] == pytest.approx(lrelu(lrelu(-3.5)))
    out = embed_region(Tensor([[-1.0]]), Tensor([[2.0]]), Tensor([[1.0]]), Tensor([[1.0]]))
    assert out.data[0, 0] == pytest.approx(3.0)


def test_region_gradient():
    rng = np.random.default_rng(5)
    k = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    proj = Tensor(rng.normal(size=(9, 4)), requires_grad=True)
    ru, rv = Tensor(rng.normal(size=(2, 7, 7))), Tensor(rng.normal(size=(2, 7, 7)))
    f = lambda: T.sum_all(embed_region(ru, rv, k, proj, stride=2))
    with T.Tape():
        out = f()
    T.backward(out)
    for x in (k, proj):
        assert rel_err(x.grad, T.numeric_grad(lambda: f().item(), x)) < 1e-4


def test_fuse_hand_values():
    parts = [Tensor([1.0, 2.0]), Tensor([3.0, 1.0]), Tensor([1.0, 1.0]), Tensor([2.0, 0.5])]
    np.testing.assert_array_equal(fuse(parts).data, [6.0, 1.0])
    np.testing.assert_array_equal(fuse([Tensor(np.ones(3))] * 4).data, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(0, 1000))
def test_fuse_annihilation(zero_at, seed):
    rng = np.random.default_rng(seed)
    parts = [Tensor(rng.normal(size=(3, 5))) for _ in range(4)]
    parts[zero_at] = Tensor(np.zeros((3, 5)))
    assert np.all(fuse(parts).data == 0.0)


# ---------------------------------------------------------------- layers

def hand_gmu_layer(inp, h, lp, cfg):
    """Loop-based reference for one gmu-family layer."""
    s = cfg.leaky_slope
    n = inp.n
    lift_b = lp.get("lift_b", np.zeros(cfg.d))
    lifted = lrelu(h @ lp["lift"] + lift_b, s)
    out = np.zeros((n, cfg.d))
    for i in range(n):
        acc = lifted[i].copy()
        for m in range(len(inp.src)):
            if inp.dst[m] != i:
                continue
            j = inp.src[m]
            msg = np.ones(cfg.d)
            if "pos" in cfg.factors:
                msg *= lrelu((inp.pos[i] - inp.pos[j]) @ lp["pos"], s)
            if "point" in cfg.factors:
                msg *= lifted[j]
            if "region" in cfg.factors:
                c = lrelu(naive_conv(inp.patches[j] - inp.patches[i], lp["kernel"], cfg.kernel_stride), s)
                msg *= lrelu(c.reshape(-1) @ lp["region"] + lp.get("region_b", 0.0), s)
            if "edge" in cfg.factors:
                msg *= lrelu(inp.msg_feat[m] @ lp["edge"] + lp.get("edge_b", 0.0), s)
            acc += msg
        out[i] = lrelu(acc, s)
    return out


@pytest.mark.parametrize("variant", ["gmu", "rsgcn", "esgcn"])
@pytest.mark.parametrize("graph", ["labeled", "complete"])
def test_gmu_layer_matches_hand_unroll(variant, graph):
    cfg = ModelConfig(variant=variant, message_graph=graph, **{**SMALL, "d": 2})
    s = random_sample(n=3, grid_n=8, n_edge=8, seed=7, edges=[(0, 1), (1, 2)])
    inp = encode(s, cfg)
    model = SpatialGCN(cfg, seed=3)
    randomise(model, seed=3, scale=0.7)
    lp = model.layer_params(0)
    got = gmu_layer(inp, Tensor(inp.point), lp, cfg).data
    want = hand_gmu_layer(inp, inp.point, {k: v.data for k, v in lp.items()}, cfg)
    np.testing.assert_allclose(got, want, atol=1e-12, rtol=0)


def test_isolated_node_reduces_to_lift():
    cfg = ModelConfig(message_graph="labeled", **SMALL)
    s = random_sample(n=4, seed=2, edges=[(0, 1), (1, 2)])
    inp = encode(s, cfg)
    model = SpatialGCN(cfg, seed=1)
    lp = model.layer_params(0)
    out = gmu_layer(inp, Tensor(inp.point), lp, cfg).data
    lifted = lrelu(inp.point @ lp["lift"].data + lp["lift_b"].data)
    np.testing.assert_allclose(out[3], lrelu(lifted[3]), atol=1e-15)


def test_zero_weights_give_zero_layer():
    cfg = ModelConfig(**SMALL)
    s = random_sample(seed=4)
    inp = encode(s, cfg)
    model = SpatialGCN(cfg)
    for p in model.params.values():
        p.data[...] = 0.0
    np.testing.assert_array_equal(gmu_layer(inp, Tensor(inp.point), model.layer_params(0), cfg).data, 0.0)


def test_graphsage_star_and_single():
    cfg = ModelConfig(variant="graphsage", message_graph="labeled", **SMALL)
    s = random_sample(n=4, seed=6, edges=[(0, 1), (0, 2), (0, 3)])
    inp = encode(s, cfg)
    model = SpatialGCN(cfg, seed=2)
    lp = model.layer_params(0)
    ws, wn = lp["self"].data, lp["nb"].data
    h = inp.pos
    got = graphsage_layer(inp, Tensor(h), lp, cfg).data
    want = np.zeros_like(got)
    want[0] = lrelu(h[0] @ ws + h[1:].mean(axis=0) @ wn)
    for leaf in (1, 2, 3):
        want[leaf] = lrelu(h[leaf] @ ws + h[0] @ wn)
    np.testing.assert_allclose(got, want, atol=1e-12, rtol=0)
    # identical neighbours: the mean is any one of them
    same = np.tile(h[1], (4, 1))
    got = graphsage_layer(inp, Tensor(same), lp, cfg).data
    np.testing.assert_allclose(got[0], lrelu(h[1] @ ws + h[1] @ wn), atol=1e-12)


def test_graphsage_single_node_has_no_neighbour_term():
    cfg = ModelConfig(variant="graphsage", message_graph="labeled", **SMALL)
    s = random_sample(n=4, seed=6, edges=[(0, 1), (1, 2)])
    inp = encode(s, cfg)
    lp = SpatialGCN(cfg, seed=2).layer_params(0)
    got = graphsage_layer(inp, Tensor(inp.pos), lp, cfg).data
    np.testing.assert_allclose(got[3], lrelu(inp.pos[3] @ lp["self"].data), atol=1e-15)


# ---------------------------------------------------------------- head

def test_zero_head_gives_half():
    h = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    cand = np.array([[0, 1], [1, 3], [2, 3]])
    head = {"head.w1": Tensor(np.zeros((6, 5))), "head.b1": Tensor(np.zeros(5)),
            "head.w2": Tensor(np.zeros((5, 1))), "head.b2": Tensor(np.zeros(1))}
    np.testing.assert_array_equal(predict_edges(h, cand, head).data, 0.5)


@pytest.mark.parametrize("variant", VARIANTS)
def test_head_symmetric_and_open_interval(variant):
    cfg = ModelConfig(variant=variant, **SMALL)
    model = SpatialGCN(cfg, seed=5)
    randomise(model, seed=5, scale=0.8)
    s = random_sample(n=6, seed=5)
    inp = encode(s, cfg)
    h, msgs = model.represent(inp)
    p = predict_edges(h, inp.cand, model.params, msgs).data
    assert np.all((p > 0) & (p < 1))
    m = len(inp.cand)
    swapped = None if msgs is None else Tensor(np.concatenate([msgs.data[m:], msgs.data[:m]]))
    q = predict_edges(h, inp.cand[:, ::-1].copy(), model.params, swapped).data
    np.testing.assert_array_equal(p, q)


# ---------------------------------------------------------------- whole-model invariants

@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_permutation_equivariance(variant, seed):
    cfg = ModelConfig(variant=variant, **SMALL)
    model = SpatialGCN(cfg, seed=seed)
    s = random_sample(n=6, seed=seed)
    perm = np.random.default_rng(seed + 10).permutation(6)
    ps, _ = permute_sample(s, perm)
    p = dict(zip(s.global_pairs(), model.predict(s)))
    q = dict(zip(ps.global_pairs(), model.predict(ps)))
    assert p.keys() == q.keys()
    assert max(abs(p[k] - q[k]) for k in p) <= 1e-12


@pytest.mark.parametrize("patch_input", ["centered", "slope"])
@pytest.mark.parametrize("variant", ["gmu", "rsgcn", "esgcn"])
def test_translation_invariance(variant, patch_input):
    cfg = ModelConfig(variant=variant, patch_input=patch_input, **SMALL)
    model = SpatialGCN(cfg, seed=4)
    s = random_sample(n=6, seed=8)
    base = model.predict(s)
    s.rel_pos = s.rel_pos + np.array([1234.5, -987.25])
    np.testing.assert_allclose(model.predict(s), base, atol=1e-12, rtol=0)


def test_graphsage_is_not_translation_invariant():
    cfg = ModelConfig(variant="graphsage", **SMALL)
    model = SpatialGCN(cfg, seed=4)
    s = random_sample(n=6, seed=8)
    base = model.predict(s)
    s.rel_pos = s.rel_pos + np.array([1234.5, -987.25])
    assert np.max(np.abs(model.predict(s) - base)) > 1e-6


@pytest.mark.parametrize("variant", VARIANTS)
def test_end_to_end_gradients(variant):
    cfg = ModelConfig(variant=variant, **SMALL)
    model = SpatialGCN(cfg, seed=11)
    t0 = time.perf_counter()
    errs = gradient_errors(model, random_sample(n=5, seed=11))
    assert time.perf_counter() - t0 < 30
    assert set(errs) == set(param_shapes(cfg))
    assert max(errs.values()) < 1e-4, errs


def test_messages_over_labelled_edges_only():
    cfg = ModelConfig(message_graph="labeled", **SMALL)
    s = random_sample(n=5, seed=3)
    inp = encode(s, cfg)
    assert len(inp.src) == 2 * int(s.labels.sum())
    assert not inp.pair_is_msg


def test_slope_map_of_plane():
    # z = 3 col - 4 row has gradient magnitude 5 per pixel everywhere
    r, c = np.mgrid[0:9, 0:9]
    plane = (3.0 * c - 4.0 * r)[None] + np.array([0.0, 250.0])[:, None, None]
    np.testing.assert_allclose(slope_map(plane), 5.0, atol=1e-12)


def test_slope_input_ignores_offsets():
    s = random_sample(n=4, seed=5)
    cfg = ModelConfig(patch_input="slope", **SMALL)
    base = encode(s, cfg).patches
    s.patches = s.patches + 75.0
    np.testing.assert_allclose(encode(s, cfg).patches, base, atol=1e-12)
    assert np.all(base >= 0)


def test_factor_sets():
    assert ModelConfig().factors == ("pos", "point", "region", "edge")
    assert ModelConfig(gmu_edge_factor=False).factors == ("pos", "point", "region")
    assert ModelConfig(variant="rsgcn").factors == ("pos", "point", "region")
    assert ModelConfig(variant="esgcn").factors == ("pos", "edge")
    assert "l0.pos" not in param_shapes(ModelConfig(variant="graphsage"))


@pytest.mark.parametrize("bad", [dict(variant="gat"), dict(layers=0), dict(d=0), dict(leaky_slope=0.0),
                                 dict(message_graph="knn"), dict(relief_scale=-1.0), dict(kernel_size=40),
                                 dict(patch_input="sobel")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad)


def test_position_embedding_has_no_bias():
    shapes = param_shapes(ModelConfig())
    assert "l0.pos_b" not in shapes and "l0.edge_b" in shapes


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(variant="rsgcn", **SMALL)
    model = SpatialGCN(cfg, seed=9)
    save_checkpoint(tmp_path / "m.json", cfg, model.params, {"epochs": 3})
    cfg2, params, extra = load_checkpoint(tmp_path / "m.json")
    assert cfg2 == cfg and extra == {"epochs": 3}
    for k, v in model.params.items():
        np.testing.assert_array_equal(params[k].data, v.data)
    s = random_sample(seed=1)
    np.testing.assert_array_equal(SpatialGCN(cfg2, params).predict(s), model.predict(s))


def test_checkpoint_errors(tmp_path):
    import json
    cfg = ModelConfig(**SMALL)
    save_checkpoint(tmp_path / "m.json", cfg, SpatialGCN(cfg).params)
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["tensors"]["head.b2"]["shape"] = [2]
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="head.b2"):
        load_checkpoint(tmp_path / "bad.json")
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.json")
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.json")

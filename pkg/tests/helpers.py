"""Shared builders and oracles for the test suite."""
import numpy as np

from sengraph import tensor as T
from sengraph.models import encode
from sengraph.sampling import SampleGraph
from sengraph.tensor import Tape


def rel_err(a, b, floor=1e-6):
    """Largest elementwise relative difference, with ``floor`` guarding tiny entries."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def random_sample(n=5, grid_n=8, n_edge=8, seed=0, window=4000.0, edges=None, relief=200.0):
    """Synthetic SampleGraph with random positions, patches and chord profiles.

    ``edges`` lists real pairs by local index; by default a path 0-1-...-n-1.
    """
    rng = np.random.default_rng(seed)
    ids = np.arange(10, 10 + n, dtype=np.int64)
    world = rng.uniform(1000, 1000 + window, size=(n, 2))
    rel = world - world[0]
    point = rng.uniform(100, 100 + relief, size=n)
    patches = point[:, None, None] + rng.normal(0, relief / 10, size=(n, grid_n, grid_n))
    a, b = np.triu_indices(n, k=1)
    cand = np.stack([a, b], axis=1)
    edges = {(i, i + 1) for i in range(n - 1)} if edges is None else {tuple(sorted(e)) for e in edges}
    labels = np.array([1 if (int(i), int(j)) in edges else 0 for i, j in cand], dtype=np.int64)
    t = np.linspace(0, 1, n_edge)
    feats = np.stack([point[i] * (1 - t) + point[j] * t + rng.normal(0, relief / 10, n_edge) * np.sin(np.pi * t)
                      for i, j in cand])
    bounds = (world[0, 0] - window / 2, world[0, 1] - window / 2, world[0, 0] + window / 2, world[0, 1] + window / 2)
    return SampleGraph(int(ids[0]), ids, world, rel, point, patches, cand, labels, feats, bounds, window,
                       float(point.max()) + relief)


def loss_of(model, inp):
    return T.bce_loss(model.forward(inp), inp.labels)


def gradient_errors(model, sample, eps=1e-6):
    """Per-parameter relative error of tape gradients against central differences."""
    inp = encode(sample, model.cfg)
    for p in model.params.values():
        p.zero_grad()
    with Tape():
        loss = loss_of(model, inp)
    T.backward(loss)
    out = {}
    for name, p in model.params.items():
        analytic = p.grad.copy()
        numeric = T.numeric_grad(lambda: loss_of(model, inp).item(), p, eps)
        out[name] = rel_err(analytic, numeric)
    return out


def permute_sample(s: SampleGraph, perm):
    """Relabel local node order by ``perm`` (new index k holds old node perm[k])."""
    perm = np.asarray(perm)
    inv = np.argsort(perm)
    n = s.n
    a, b = np.triu_indices(n, k=1)
    cand = np.stack([a, b], axis=1)
    old = {(int(x), int(y)): k for k, (x, y) in enumerate(s.cand)}
    labels, feats = [], []
    for i, j in cand:
        oi, oj = int(perm[i]), int(perm[j])
        if oi < oj:
            k = old[(oi, oj)]
            labels.append(s.labels[k])
            feats.append(s.edge_feats[k])
        else:
            k = old[(oj, oi)]
            labels.append(s.labels[k])
            feats.append(s.edge_feats[k][::-1])
    out = SampleGraph(s.center_node, s.node_ids[perm], s.world_pos[perm], s.rel_pos[perm], s.point[perm],
                      s.patches[perm], cand, np.array(labels), np.array(feats), s.bounds, s.window, s.value_scale)
    return out, inv


def sampled_gradient_errors(model, sample, per_param=8, eps=1e-6, seed=0, floor=1e-5):
    """Like ``gradient_errors`` but differences only ``per_param`` random entries of each tensor.

    At full size many entries sit near 1e-7, where round-off in the loss
    (about 1e-10 after dividing by 2 eps) swamps a relative comparison, so the
    default ``floor`` is raised to 1e-5.
    """
    rng = np.random.default_rng(seed)
    inp = encode(sample, model.cfg)
    for p in model.params.values():
        p.zero_grad()
    with Tape():
        loss = loss_of(model, inp)
    T.backward(loss)
    out = {}
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        numeric = []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_of(model, inp).item()
            flat[i] = orig - eps
            fm = loss_of(model, inp).item()
            flat[i] = orig
            numeric.append((fp - fm) / (2 * eps))
        out[name] = rel_err(p.grad.reshape(-1)[idx], numeric, floor)
    return out


# one line per acceptance criterion, printed at the end of the run by conftest
ACCEPTANCE: list[str] = []


def verdict(criterion, ok: bool, detail: str) -> bool:
    ACCEPTANCE.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok

"""Small dense tensor type with tape-based reverse-mode differentiation.

Only the handful of ops the graph layers need are provided. Storage is a
float64 numpy array; ops record onto the active :class:`Tape` whenever one
of their inputs requires a gradient.

Tape contract: a tape is consumed by :func:`backward`. Calling backward a
second time on the same tape raises :class:`TapeError`; record a new forward
pass instead.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

DEFAULT_SLOPE = 0.01
PROB_CLAMP = 1e-7


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise DimensionError("tensor shape must have positive extents")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar, same-shape only
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._tape is not None


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside the ``with`` block record
    themselves here. Nesting is allowed, the innermost tape is active.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record onto a tape that has already been run backward")
        out._tape = self
        self.nodes.append((out, inputs, rule))

    def backward(self, loss: Tensor) -> None:
        backward(loss)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._tape = None
    tape = Tape.active()
    if tape is not None and any(_tracked(t) for t in inputs):
        tape.record(out, inputs, rule)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not produced on an active tape")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, rule in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = rule(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not _tracked(t):
                continue
            if t.requires_grad:
                t.grad += gi
            if t._tape is tape:
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# element-wise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    try:
        fn = {"mul": mul, "add": add, "sub": sub}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def leaky_relu(x: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {slope}")
    factor = np.where(x.data >= 0.0, 1.0, slope)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


# --------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take_rows(x: Tensor, index) -> Tensor:
    """Gather rows ``x[index]``; repeated indices accumulate in backward."""
    idx = np.asarray(index, dtype=np.intp)
    n = x.shape[0]

    def rule(g):
        gx = np.zeros((n,) + g.shape[1:])
        np.add.at(gx, idx, g)
        return (gx,)

    return _result(x.data[idx], (x,), rule)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    datas = [p.data for p in parts]
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]
    return _result(np.concatenate(datas, axis=axis), parts,
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array([x.data.sum()]), (x,), lambda g: (np.full(shape, g[0]),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _result(np.array([x.data.mean()]), (x,), lambda g: (np.full(shape, g[0] / n),))


# --------------------------------------------------------------------------
# convolution

def _windows(x: np.ndarray, m1: int, m2: int, stride: int) -> np.ndarray:
    # (..., oh, ow, m1, m2) view of every kernel placement
    v = np.lib.stride_tricks.sliding_window_view(x, (m1, m2), axis=(-2, -1))
    return v[..., ::stride, ::stride, :, :]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D cross-correlation ``out[i,j] = sum K[k,l] x[i*s+k, j*s+l]``.

    ``x`` may carry leading batch axes; the kernel is shared across them.
    """
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if kernel.data.ndim != 2 or x.data.ndim < 2:
        raise DimensionError(f"conv2d: bad ranks, input {x.shape}, kernel {kernel.shape}")
    h, w = x.shape[-2:]
    m1, m2 = kernel.shape
    if m1 > h or m2 > w:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than input {x.shape}")
    xd, kd = x.data, kernel.data
    win = _windows(xd, m1, m2, stride)
    out = np.tensordot(win, kd, axes=([-2, -1], [0, 1]))
    oh, ow = out.shape[-2:]

    def rule(g):
        gk = np.tensordot(g, win, axes=(list(range(g.ndim)), list(range(g.ndim))))
        gx = np.zeros_like(xd)
        for k in range(m1):
            for l in range(m2):
                gx[..., k:k + stride * (oh - 1) + 1:stride,
                   l:l + stride * (ow - 1) + 1:stride] += g * kd[k, l]
        return gx, gk

    return _result(out, (x, kernel), rule)


# --------------------------------------------------------------------------
# loss

def bce_loss(prob: Tensor, label, weight: tuple[float, float] | None = None) -> Tensor:
    """Mean binary cross-entropy with optional (negative, positive) class weights.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the logarithm.
    """
    y = np.asarray(label.data if isinstance(label, Tensor) else label, dtype=np.float64)
    if y.shape != prob.shape:
        y = y.reshape(prob.shape)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce_loss labels must be 0 or 1")
    w0, w1 = (1.0, 1.0) if weight is None else (float(weight[0]), float(weight[1]))
    p = prob.data
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
    n = p.size
    terms = -(w1 * y * np.log(pc) + w0 * (1.0 - y) * np.log1p(-pc))

    def rule(g):
        d = -(w1 * y / pc - w0 * (1.0 - y) / (1.0 - pc)) / n
        return (g[0] * d * inside,)

    return _result(np.array([terms.sum() / n]), (prob,), rule)


def numeric_grad(f: Callable[[], float], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x``."""
    g = np.zeros_like(x.data)
    flat, gflat = x.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def init_uniform(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True)

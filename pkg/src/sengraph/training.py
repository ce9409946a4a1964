"""Per-sample training loop with weighted BCE, splits, optimisers and metric logs."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .models import ModelConfig, SampleInputs, SpatialGCN, encode, save_checkpoint
from .sampling import SampleGraph, dihedral

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # decoupled weight decay applied with every step (0 disables)
    weight_decay: float = 0.0
    pos_weight: float | str = "auto"
    seed: int = 0
    shuffle: bool = True
    early_stop_patience: int | None = None
    val_fraction: float | None = None
    # show each sample under a random rotation / reflection every epoch
    augment: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if isinstance(self.pos_weight, str) and self.pos_weight != "auto":
            raise ValueError("pos_weight must be a number or 'auto'")
        if self.early_stop_patience is not None and not self.val_fraction:
            raise ValueError("early stopping needs a val_fraction")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    f1: float
    val_f1: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str | None = None
    class_weights: tuple[float, float] = (1.0, 1.0)
    stopped_early: bool = False

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]


def auto_pos_weight(samples: list[SampleGraph]) -> float:
    """Ratio of negative to positive candidates over the whole set."""
    if not samples:
        raise ValueError("no samples")
    pos = sum(int(s.labels.sum()) for s in samples)
    neg = sum(len(s.labels) for s in samples) - pos
    if pos == 0:
        raise ValueError("sample set has no positive candidates")
    return neg / pos


def class_weights(samples: list[SampleGraph], pos_weight: float | str) -> tuple[float, float]:
    """(negative, positive) weights with ``positive / negative == pos_weight``, averaging to 1."""
    pw = auto_pos_weight(samples) if pos_weight == "auto" else float(pos_weight)
    pos = sum(int(s.labels.sum()) for s in samples)
    total = sum(len(s.labels) for s in samples)
    neg = total - pos
    c = total / (neg + pw * pos)
    return c, pw * c


def split(samples: list, fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle split; ``fraction`` of the items go to the first part."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(samples)
    k = int(round(fraction * n))
    if k == 0 or k == n:
        raise ValueError(f"fraction {fraction} leaves one side of a {n}-item split empty")
    order = np.random.default_rng(seed).permutation(n)
    first = sorted(order[:k].tolist())
    second = sorted(order[k:].tolist())
    return [samples[i] for i in first], [samples[i] for i in second]


def f1_at(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    pred = probs > threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    denom = tp + 0.5 * (fp + fn)
    return tp / denom if denom > 0 else 0.0


class SGD:
    def __init__(self, params: dict[str, T.Tensor], lr: float, weight_decay: float = 0.0):
        self.params, self.lr, self.wd = params, lr, weight_decay

    def step(self) -> None:
        for p in self.params.values():
            if self.wd:
                p.data *= 1.0 - self.lr * self.wd
            p.data -= self.lr * p.grad


class Adam:
    def __init__(self, params: dict[str, T.Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay: float = 0.0):
        self.params, self.lr, self.wd = params, lr, weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            if self.wd:
                p.data *= 1.0 - self.lr * self.wd
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.learning_rate, cfg.weight_decay)
    return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)


def sample_loss(model: SpatialGCN, inp: SampleInputs, weights: tuple[float, float]):
    """Forward one sample on a fresh tape; returns (tape, loss, probabilities)."""
    with T.Tape() as tape:
        probs = model.forward(inp)
        loss = T.bce_loss(probs, inp.labels, weights)
    return tape, loss, probs


def dataset_loss(model: SpatialGCN, inputs: list[SampleInputs], weights: tuple[float, float]) -> float:
    """Candidate-weighted mean loss over a set of encoded samples, no gradients."""
    total, count = 0.0, 0
    for inp in inputs:
        probs = model.forward(inp)
        total += T.bce_loss(probs, inp.labels, weights).item() * len(inp.labels)
        count += len(inp.labels)
    return total / count


def train(model_config: ModelConfig, samples: list[SampleGraph], cfg: TrainConfig,
          checkpoint: str | Path | None = None, metrics_log: str | Path | None = None,
          model: SpatialGCN | None = None) -> tuple[SpatialGCN, TrainReport]:
    if not samples:
        raise ValueError("train() needs at least one sample")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = model or SpatialGCN(model_config, seed=int(rng.integers(2 ** 31)))
    train_set, val_set = samples, []
    if cfg.val_fraction:
        train_set, val_set = split(samples, 1 - cfg.val_fraction, cfg.seed)
    weights = class_weights(train_set, cfg.pos_weight)
    inputs = [encode(s, model_config) for s in train_set]
    val_inputs = [encode(s, model_config) for s in val_set]
    opt = make_optimizer(model.params, cfg)
    report = TrainReport(class_weights=weights)
    best_val, best_params, stale = -1.0, None, 0
    log_fh = open(metrics_log, "a") if metrics_log else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(inputs)) if cfg.shuffle else np.arange(len(inputs))
            losses, all_p, all_y = [], [], []
            for idx in order:
                inp = inputs[idx]
                if cfg.augment:
                    inp = encode(dihedral(train_set[idx], int(rng.integers(8))), model_config)
                for p in model.params.values():
                    p.zero_grad()
                tape, loss, probs = sample_loss(model, inp, weights)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergence(f"loss became {value} at epoch {epoch}, sample {int(idx)}")
                T.backward(loss)
                opt.step()
                losses.append(value)
                all_p.append(probs.data)
                all_y.append(inp.labels)
            rec = EpochRecord(epoch, float(np.mean(losses)), f1_at(np.concatenate(all_p), np.concatenate(all_y)))
            if val_inputs:
                vp = np.concatenate([model.forward(i).data for i in val_inputs])
                vy = np.concatenate([i.labels for i in val_inputs])
                rec.val_f1 = f1_at(vp, vy)
            report.epochs.append(rec)
            log.info("epoch %d loss %.5f f1 %.4f%s", epoch, rec.loss, rec.f1,
                     "" if rec.val_f1 is None else f" val_f1 {rec.val_f1:.4f}")
            if log_fh:
                log_fh.write(json.dumps({"epoch": epoch, "loss": rec.loss, "f1": rec.f1, "val_f1": rec.val_f1,
                                         "elapsed": round(time.perf_counter() - start, 3)}) + "\n")
            if cfg.early_stop_patience is not None:
                if rec.val_f1 > best_val:
                    best_val, stale = rec.val_f1, 0
                    best_params = {k: v.data.copy() for k, v in model.params.items()}
                else:
                    stale += 1
                    if stale >= cfg.early_stop_patience:
                        report.stopped_early = True
                        break
    finally:
        if log_fh:
            log_fh.close()
    if best_params is not None:
        for k, v in best_params.items():
            model.params[k].data[...] = v
    report.wall_time = time.perf_counter() - start
    if checkpoint is not None:
        save_checkpoint(checkpoint, model_config, model.params,
                        {"class_weights": list(weights), "train_config": _jsonable(cfg)})
        report.checkpoint = str(checkpoint)
    return model, report


def _jsonable(cfg: TrainConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg)

"""Training, inference and checkpointing."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import DatasetSplit, SamplePair, extract_patches, stitch
from .metrics import binarize, evaluate
from .model import ModelState, forward
from .objective import LossConfig, balance_beta, total_loss


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    loss: LossConfig | None = None  # None: balance beta on the training split
    deterministic: bool = True
    threshold: float = 0.5

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    recall: float | None = None
    f1: float | None = None
    precision: float | None = None
    accuracy: float | None = None


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list, grads: list, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> list:
    """One bias-corrected Adam update on arrays; returns new parameter arrays
    and advances ``state`` in place."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        step = lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)
        out.append((p - step).astype(p.dtype, copy=False))
    return out


def sgd_step(params: list, grads: list, lr: float) -> list:
    return [(p - lr * g).astype(p.dtype, copy=False) for p, g in zip(params, grads)]


def stack_batch(pairs, dtype) -> tuple:
    t1 = np.stack([p.t1 for p in pairs]).astype(dtype, copy=False)
    t2 = np.stack([p.t2 for p in pairs]).astype(dtype, copy=False)
    labels = np.stack([p.label for p in pairs])[:, None].astype(dtype)
    return t1, t2, labels


def batch_loss(model: ModelState, pairs, loss_cfg: LossConfig) -> T.Tensor:
    t1, t2, labels = stack_batch(pairs, model.dtype)
    pred = forward(model, t1, t2)
    return total_loss(labels, pred, loss_cfg.beta, loss_cfg.epsilon)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(seed: int, n: int, batch_size: int):
    """Endless mini-batch index stream; each epoch is a fresh permutation
    keyed by ``(seed, epoch)``."""
    epoch = 0
    while True:
        order = epoch_order(seed, epoch, n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]
        epoch += 1


def _blas_guard(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def _check_geometry(model: ModelState, pairs) -> None:
    cfg = model.config
    for p in pairs:
        if p.t1.shape[0] != cfg.input_channels or p.size != cfg.input_size:
            raise ValueError(
                f"{p.id}: sample {p.t1.shape} does not match model geometry "
                f"{cfg.input_channels}x{cfg.input_size[0]}x{cfg.input_size[1]}"
            )


def train(model: ModelState, data: DatasetSplit, cfg: TrainConfig, callback=None) -> tuple:
    """Optimize ``model`` on ``data.train``; returns ``(model, log)``.

    The model's parameter tensors are replaced step by step; dataset arrays
    are never written.
    """
    if not data.train:
        raise ValueError("training split is empty")
    _check_geometry(model, data.train)
    loss_cfg = cfg.loss or LossConfig(beta=balance_beta(data.train))
    params = model.parameters()
    adam = AdamState.zeros_like([p.data for p in params])
    stream = batches(cfg.seed, len(data.train), cfg.batch_size)
    history = []
    with _blas_guard(cfg.deterministic):
        for step in range(1, cfg.steps + 1):
            chunk = [data.train[i] for i in next(stream)]
            T.zero_grad(params)
            loss = batch_loss(model, chunk, loss_cfg)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at step {step}")
            T.backward(loss)
            grads = [p.grad for p in params]
            if cfg.optimizer == "adam":
                new = adam_step([p.data for p in params], grads, adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
            else:
                new = sgd_step([p.data for p in params], grads, cfg.learning_rate)
            for p, arr in zip(params, new):
                p.data = arr
            entry = TrainLogEntry(step, value)
            if cfg.eval_every and data.test and step % cfg.eval_every == 0:
                s, _ = evaluate_model(model, data.test, cfg.threshold)
                entry.recall, entry.f1, entry.precision, entry.accuracy = s.recall, s.f1, s.precision, s.accuracy
            history.append(entry)
            if callback is not None:
                callback(entry)
    T.zero_grad(params)
    return model, history


def log_csv(history) -> str:
    lines = ["step,loss,recall,f1,precision,accuracy"]
    for e in history:
        vals = [e.recall, e.f1, e.precision, e.accuracy]
        lines.append(",".join([str(e.step), repr(e.loss)] + ["" if v is None else repr(v) for v in vals]))
    return "\n".join(lines) + "\n"


def _predict(model: ModelState, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    return forward(model, t1, t2).data[0]


def infer(model: ModelState, pair: SamplePair, threshold: float = 0.5) -> tuple:
    """Probability map ``[H, W]`` and binary change map for one pair.

    Inputs larger than the model's input size are tiled with non-overlapping
    windows (plus border-flush final windows) and stitched back."""
    cfg = model.config
    if pair.t1.shape[0] != cfg.input_channels:
        raise ValueError(f"{pair.id}: {pair.t1.shape[0]} channels, model expects {cfg.input_channels}")
    if pair.size == cfg.input_size:
        prob = _predict(model, pair.t1, pair.t2)
    else:
        patches = extract_patches(pair, cfg.input_size)
        tiles = [_predict(model, p.t1, p.t2) for p in patches]
        prob = stitch(tiles, [p.meta["origin"] for p in patches], pair.size)
    return prob, binarize(prob, threshold)


def evaluate_model(model: ModelState, pairs, threshold: float = 0.5) -> tuple:
    preds = [infer(model, p, threshold)[1] for p in pairs]
    return evaluate(preds, [p.label for p in pairs])


__all__ = [
    "TrainConfig",
    "TrainLogEntry",
    "AdamState",
    "NumericalError",
    "adam_step",
    "sgd_step",
    "train",
    "infer",
    "evaluate_model",
    "batch_loss",
    "log_csv",
]

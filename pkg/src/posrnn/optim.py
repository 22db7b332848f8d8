"""Loss, learning-rate schedule, Adam, and the training loop."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericsError, ShapeError
from .models import SequenceModel, flat_targets, forward_batch, save_params
from .tasks import TaskConfig, sample_batch


def cross_entropy(logits: T.Tensor, targets: np.ndarray) -> T.Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits`` is (R, K); ``targets`` is (R,).  Fused forward/backward: the
    softmax from the forward pass is reused in the gradient.
    """
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    v = logits.values
    rows = np.arange(v.shape[0])
    vmax = v.max(axis=1)
    picked = v[rows, targets].astype(np.float64)
    expv = v - vmax[:, None]
    np.exp(expv, out=expv)
    sumexp = expv.sum(axis=1)
    loss = float(np.mean(np.log(sumexp) + vmax - picked))
    n = v.shape[0]

    def vjp(g):
        grad = expv / sumexp[:, None]
        grad[rows, targets] -= 1.0
        grad *= float(g) / n
        return (grad.astype(v.dtype, copy=False),)

    return T.custom_op("cross_entropy", np.asarray(loss, dtype=np.float64),
                       (logits,), vjp)


def lr_at(iteration: int, total_iterations: int,
          warmup: int = 1000, peak: float = 1e-3) -> float:
    """Linear warmup from 0 to ``peak`` over ``warmup`` steps, then cosine
    decay to 0 at ``total_iterations``."""
    if total_iterations <= warmup:
        raise ConfigError("total_iterations must exceed warmup")
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    if iteration <= warmup:
        return peak * iteration / warmup
    frac = (iteration - warmup) / (total_iterations - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


class AdamState:
    """First/second moment buffers; complex parameters are updated through
    their real/imaginary coordinates."""

    def __init__(self, params: dict[str, T.Tensor],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}
        for name, p in params.items():
            view = _real_view(p.values)
            self.m[name] = np.zeros_like(view)
            self.v[name] = np.zeros_like(view)


def _real_view(arr: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(arr):
        return arr.view(arr.real.dtype)
    return arr


def adam_step(params: dict[str, T.Tensor], grads: T.Gradients,
              state: AdamState, lr: float):
    """One in-place Adam update with bias correction and no weight decay."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(p)
        if g is None:
            continue
        g = np.asarray(g, dtype=p.values.dtype)
        gv = _real_view(g if g.shape == p.values.shape
                        else np.broadcast_to(g, p.values.shape).copy())
        if not np.all(np.isfinite(gv)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * gv
        v *= b2
        v += (1.0 - b2) * (gv * gv)
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        pv = _real_view(p.values)
        pv -= update.astype(pv.dtype, copy=False)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 64
    warmup: int = 1000
    peak_lr: float = 1e-3
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0        # 0 disables periodic checkpoints
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.iterations <= self.warmup:
            raise ConfigError("iterations must exceed warmup")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class TrainLogEntry:
    iteration: int
    loss: float
    lr: float
    token_accuracy: float
    elapsed_s: float


def train(model: SequenceModel, task: TaskConfig, cfg: TrainConfig,
          log_path: str | None = None,
          callback=None) -> list[TrainLogEntry]:
    """Adam training on freshly sampled batches.

    Writes one JSON line per logged iteration to ``log_path`` when given;
    ``callback(iteration, model)`` fires after every update (the
    gradient-stability sweep hooks in here).  Returns the log entries.
    """
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(model.params)
    entries: list[TrainLogEntry] = []
    log_fh = open(log_path, "a") if log_path else None
    t0 = time.perf_counter()
    try:
        for it in range(1, cfg.iterations + 1):
            batch = sample_batch(task, cfg.batch_size, rng)
            tgt = flat_targets(batch.targets)
            with T.Tape() as tape:
                res = forward_batch(
                    model, batch.inputs,
                    aux_tokens=batch.aux_inputs,
                    query_tokens=batch.queries,
                    n_out=batch.targets.shape[1],
                )
                loss = cross_entropy(res.logits, tgt)
            grads = T.backward_from(tape, loss)
            lr = lr_at(it, cfg.iterations, cfg.warmup, cfg.peak_lr)
            adam_step(model.params, grads, state, lr)

            if it % cfg.log_every == 0 or it == cfg.iterations:
                acc = float((res.predictions() == batch.targets).mean())
                entry = TrainLogEntry(
                    iteration=it, loss=float(loss.values), lr=lr,
                    token_accuracy=acc,
                    elapsed_s=time.perf_counter() - t0,
                )
                entries.append(entry)
                if log_fh:
                    log_fh.write(json.dumps(entry.__dict__) + "\n")
                    log_fh.flush()
            if cfg.checkpoint_every and cfg.checkpoint_dir \
                    and it % cfg.checkpoint_every == 0:
                save_params(model, os.path.join(cfg.checkpoint_dir, f"it{it}"))
            if callback is not None:
                callback(it, model)
    finally:
        if log_fh:
            log_fh.close()
    return entries

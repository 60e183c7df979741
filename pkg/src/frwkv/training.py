"""Objective, metrics, optimiser, schedule and the delayed early-stopping loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DivergenceError, ShapeError
from .gates import ALPHA_MAX
from .model import Forecaster
from .tensor import Tensor

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------


def horizon_weights(horizon: int, alpha_w: float = 0.5) -> np.ndarray:
    # scalar libm pow: numpy's vectorised power can differ by an ulp
    return np.array([math.pow(t + 1.0, -alpha_w) for t in range(horizon)])


def weighted_l1_loss(pred: Tensor, target, alpha_w: float = 0.5) -> Tensor:
    """Mean over ``[B, H, N]`` of ``(t+1)^-alpha_w * |pred - target|``."""
    target = T.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    w = horizon_weights(pred.shape[1], alpha_w)[:, None]
    return T.mean(T.tabs(pred - target) * w)


def mse_mae(pred, target) -> tuple[float, float]:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    err = pred - target
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def repeat_last(inputs: np.ndarray, horizon: int) -> np.ndarray:
    """Naive baseline: carry the last observed value across the horizon."""
    return np.repeat(inputs[:, -1:, :], horizon, axis=1)


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------


def adamw_step(p, g, m, v, t, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    """One decoupled-decay Adam update on arrays. Returns ``(p, m, v)``."""
    b1, b2 = betas
    p = p * (1.0 - lr * weight_decay)
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    return p - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class AdamW:
    """AdamW over :class:`~frwkv.nn.Parameter` objects.

    Parameters with ``decay=False`` (biases, norm scales, mix logits, router
    tokens, the correction strength) are not weight-decayed.
    """

    def __init__(self, params, lr=1e-4, weight_decay=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            wd = self.weight_decay if getattr(p, "decay", True) else 0.0
            p.data, self.m[i], self.v[i] = adamw_step(p.data, p.grad, self.m[i], self.v[i],
                                                      self.t, lr, wd, self.betas, self.eps)


def cosine_lr(epoch: int, epochs_max: int, lr0: float) -> float:
    """Per-epoch cosine annealing from ``lr0`` towards 0, no warmup."""
    if not 0 <= epoch < epochs_max:
        raise ValueError(f"epoch {epoch} outside [0, {epochs_max})")
    return lr0 * (1.0 + math.cos(math.pi * epoch / epochs_max)) / 2.0


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------


@dataclass
class EarlyStopState:
    epochs_max: int
    patience: int
    best_val: float = math.inf
    best_epoch: int = -1
    last_epoch: int = -1


def early_stop_update(state: EarlyStopState, val_loss: float, epoch: int) -> tuple[EarlyStopState, bool]:
    """Track strict improvements; stopping is allowed only from epoch ``epochs_max / 2`` on."""
    if val_loss < state.best_val:
        state.best_val, state.best_epoch = float(val_loss), epoch
    state.last_epoch = epoch
    stop = epoch >= state.epochs_max / 2 and epoch - state.best_epoch >= state.patience
    return state, stop


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    patience: int = 5
    batch_size: int = 32
    loss_alpha: float = 0.5
    seed: int = 2024

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("lr, epochs, patience and batch_size must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass
class TrainResult:
    epochs_run: int
    best_epoch: int
    best_val: float
    stopped_early: bool
    train_seconds: float
    history: list[dict] = field(default_factory=list)


LOG_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "stopped")


def evaluate_loss(model: Forecaster, inputs, targets, alpha_w=0.5, batch_size=256) -> float:
    total, count = 0.0, 0
    with T.no_grad():
        for i in range(0, len(inputs), batch_size):
            xb, yb = inputs[i:i + batch_size], targets[i:i + batch_size]
            total += weighted_l1_loss(model(xb), yb, alpha_w).item() * len(xb)
            count += len(xb)
    return total / max(count, 1)


def fit(model: Forecaster, train, val, cfg: TrainConfig, log_path=None) -> TrainResult:
    """Train on ``train = (inputs, targets)``, early-stop on ``val``, restore the best weights."""
    x_tr, y_tr = train
    x_va, y_va = val
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), cfg.lr, cfg.weight_decay, (cfg.beta1, cfg.beta2), cfg.eps)
    stopper = EarlyStopState(cfg.epochs, cfg.patience)
    best_state = model.state_dict()
    history, stopped = [], False
    has_alpha = hasattr(model.interaction, "alpha")
    writer = None
    fh = open(log_path, "w", newline="") if log_path else None
    if fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
    start = time.perf_counter()
    try:
        for epoch in range(cfg.epochs):
            lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
            order = rng.permutation(len(x_tr))
            losses = []
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                loss = weighted_l1_loss(model(x_tr[idx]), y_tr[idx], cfg.loss_alpha)
                if not np.isfinite(loss.data):
                    raise DivergenceError(f"non-finite training loss at epoch {epoch}")
                model.zero_grad()
                loss.backward()
                opt.step(lr)
                if has_alpha:
                    a = model.interaction.alpha_value().item()
                    assert 0.0 <= a <= ALPHA_MAX
                losses.append(loss.item())
            val_loss = evaluate_loss(model, x_va, y_va, cfg.loss_alpha)
            if not np.isfinite(val_loss):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
            prev_best = stopper.best_val
            stopper, stopped = early_stop_update(stopper, val_loss, epoch)
            if stopper.best_val < prev_best:
                best_state = model.state_dict()
            row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
                   "val_loss": val_loss, "stopped": int(stopped)}
            history.append(row)
            if writer:
                writer.writerow(row)
            log.debug("epoch %d lr %.3g train %.5f val %.5f", epoch, lr, row["train_loss"], val_loss)
            if stopped:
                break
    finally:
        if fh:
            fh.close()
    model.load_state_dict(best_state)
    return TrainResult(len(history), stopper.best_epoch, stopper.best_val, stopped,
                       time.perf_counter() - start, history)

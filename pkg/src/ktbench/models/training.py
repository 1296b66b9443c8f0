"""Training loop: adaptive-moment gradient descent with early stopping on
validation AUC, deterministic given the config seed."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import Dataset, StudentSequence
from ..metrics import UndefinedMetricError
from ..preprocess import Window
from .base import KTModel


@dataclass
class TrainConfig:
    """Optimization settings plus the model hyperparameters of one trial."""

    learning_rate: float = 1e-3
    dropout: float = 0.05
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 42
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.patience < self.max_epochs:
            raise ValueError(f"patience ({self.patience}) must be < max_epochs ({self.max_epochs})")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "dropout": self.dropout,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "model_params": dict(self.model_params),
        }


@dataclass
class WindowBatch:
    items: np.ndarray  # (B, m)
    responses: np.ndarray  # (B, m)
    valid_len: np.ndarray  # (B,)


def make_batch(windows: Sequence[Window]) -> WindowBatch:
    return WindowBatch(
        items=np.stack([w.items for w in windows]),
        responses=np.stack([w.responses for w in windows]),
        valid_len=np.array([w.valid_len for w in windows], dtype=np.int64),
    )


class Adam:
    """Adaptive-moment optimizer; parameters are updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g**2
            p -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


@dataclass
class TrainResult:
    model: KTModel
    history: list[dict]
    best_epoch: int
    best_val_auc: float
    wall_time_s: float


def advance_through(model: KTModel, steps, state=None):
    """Advance a model state through an expanded step list of any length.

    Recurrent models carry state across the whole sequence; fixed-context
    attention models handle long histories inside ``query`` by sliding their
    context window, so plain advancing is correct for both families.
    """
    if state is None:
        state = model.init_state()
    for s in steps:
        state = model.advance(state, s.item_id, s.response)
    return state


def _default_val_metric(model: KTModel, dataset: Dataset, val_sequences) -> float:
    # KC-level AUC of leakage-free grouped predictions on the validation students.
    from .. import protocols

    records = protocols.eval_all_in_one(model, dataset, val_sequences)
    probs, labels = protocols.flatten_kc_predictions(records)
    from ..metrics import auc

    return auc(probs, labels)


def train(
    model: KTModel,
    train_windows: Sequence[Window],
    val_sequences: Sequence[StudentSequence],
    dataset: Dataset,
    config: TrainConfig,
    val_metric: Optional[Callable[[KTModel], float]] = None,
    fold_name: str = "",
) -> TrainResult:
    """Optimize until validation AUC stops improving.

    Stops when the best AUC has not been beaten for ``patience`` consecutive
    epochs or at ``max_epochs``; the returned model carries the best-epoch
    parameters. Two runs with identical data, config and seed produce
    byte-identical parameters.
    """
    if not train_windows:
        raise ValueError("no training windows")
    t0 = time.perf_counter()
    shuffle_rng = np.random.default_rng([config.seed, 101])
    dropout_rng = np.random.default_rng([config.seed, 202])
    optimizer = Adam(model.parameters(), lr=config.learning_rate)

    best_auc = -np.inf
    best_epoch = 0
    best_snap = model.snapshot()
    history: list[dict] = []
    order = np.arange(len(train_windows))

    for epoch in range(1, config.max_epochs + 1):
        shuffle_rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = make_batch([train_windows[i] for i in order[start : start + config.batch_size]])
            loss, _ = model.forward_loss(batch, dropout_rng=dropout_rng, dropout=config.dropout)
            grads = model.backward()
            optimizer.step(grads)
            losses.append(loss)
        try:
            if val_metric is not None:
                val_auc = float(val_metric(model))
            else:
                val_auc = float(_default_val_metric(model, dataset, val_sequences))
        except UndefinedMetricError as exc:
            raise UndefinedMetricError(
                f"validation AUC undefined on {fold_name or 'validation set'}: {exc}"
            ) from exc
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_auc": val_auc})
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_snap = model.snapshot()
        if epoch - best_epoch >= config.patience:
            break

    model.load_snapshot(best_snap)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_auc=float(best_auc),
        wall_time_s=time.perf_counter() - t0,
    )

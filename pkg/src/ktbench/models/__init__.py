"""Model registry and the documented hyperparameter search spaces.

Architectures not implemented here plug in by subclassing
:class:`~ktbench.models.base.KTModel` and registering a builder.
"""

from __future__ import annotations

from .base import CapabilityError, KTModel, MeanRateBaseline
from .checkpoint import load_checkpoint, save_checkpoint
from .dkt import DKT, DKTPlusLoss
from .sakt import SAKT
from .training import Adam, TrainConfig, TrainResult, WindowBatch, advance_through, make_batch, train

__all__ = [
    "CapabilityError", "KTModel", "MeanRateBaseline", "DKT", "DKTPlusLoss", "SAKT",
    "Adam", "TrainConfig", "TrainResult", "WindowBatch", "advance_through", "make_batch",
    "train", "make_model", "save_checkpoint", "load_checkpoint",
    "MODEL_TAGS", "SEARCH_SPACES", "FIXED_PARAMS",
]


def _build_dkt(n_items, context_len=200, dim=64, seed=42, lambda_r=0.0, lambda_w1=0.0, lambda_w2=0.0):
    return DKT(
        n_items, dim=dim, context_len=context_len, seed=seed,
        plus=DKTPlusLoss(lambda_r, lambda_w1, lambda_w2),
    )


def _build_sakt(n_items, context_len=200, dim=64, n_heads=4, n_blocks=1, seed=42):
    return SAKT(
        n_items, dim=dim, n_heads=n_heads, n_blocks=n_blocks, context_len=context_len, seed=seed
    )


def _build_baseline(n_items, context_len=200, **_):
    return MeanRateBaseline(n_items, context_len)


MODEL_TAGS = {
    "dkt": _build_dkt,
    "dkt+": _build_dkt,
    "sakt": _build_sakt,
    "mean-rate": _build_baseline,
}

# Documented tuning spaces per model tag. Learning rate, dropout and seed are
# shared; batch size is fixed per architecture (see FIXED_PARAMS).
_COMMON = {
    "learning_rate": [1e-3, 1e-4, 1e-5],
    "dropout": [0.05, 0.1, 0.3, 0.5],
    "seed": [42, 3407],
}

SEARCH_SPACES = {
    "dkt": {"dim": [64, 256], **_COMMON},
    "dkt+": {
        "dim": [64, 256],
        "lambda_r": [0, 0.05, 0.1, 0.15, 0.2, 0.25],
        "lambda_w1": [0, 0.01, 0.03, 0.1, 0.3, 1],
        "lambda_w2": [0, 0.3, 1, 3, 10, 30, 100],
        **_COMMON,
    },
    "sakt": {"dim": [64, 256], "n_blocks": [1, 2, 4], "n_heads": [4, 8], **_COMMON},
}

FIXED_PARAMS = {"dkt": {"batch_size": 256}, "dkt+": {"batch_size": 256}, "sakt": {"batch_size": 64}}


def make_model(tag: str, n_items: int, **hyper) -> KTModel:
    """Build a registered model; unknown tags list what is available."""
    if tag not in MODEL_TAGS:
        raise ValueError(f"unknown model tag {tag!r}; known: {sorted(MODEL_TAGS)}")
    model = MODEL_TAGS[tag](n_items, **hyper)
    model.arch = tag
    return model

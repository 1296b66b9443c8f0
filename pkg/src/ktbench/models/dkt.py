"""Recurrent knowledge tracing: interaction embedding -> single LSTM layer ->
per-item sigmoid outputs. Forward and backward passes are written out by hand
in numpy; the test suite holds every gradient against central finite
differences.

The optional regularized loss adds three weighted terms on top of next-step
binary cross-entropy: reconstruction of the current step's own response, and
L1/L2 penalties on consecutive output-vector differences. All weights zero
reduces exactly to the plain loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .base import KTModel, squash


@dataclass(frozen=True)
class DKTPlusLoss:
    """Weights of the regularized loss; zero everywhere is the plain model."""

    lambda_r: float = 0.0
    lambda_w1: float = 0.0
    lambda_w2: float = 0.0

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_w1, self.lambda_w2) < 0:
            raise ValueError("loss weights must be >= 0")

    @property
    def active(self) -> bool:
        return self.lambda_r > 0 or self.lambda_w1 > 0 or self.lambda_w2 > 0


def _bce_from_logit(z, r):
    # log(1 + e^z) - r*z, stable for large |z|
    return np.logaddexp(0.0, z) - r * z


class DKT(KTModel):
    """Single-layer LSTM over interaction embeddings with an |items|-wide
    sigmoid output head.

    Interactions are encoded as ``item + response * n_items`` into a 2*n_items
    embedding table. Hidden size equals the embedding size.
    """

    def __init__(
        self,
        n_items: int,
        dim: int = 64,
        context_len: int = 200,
        plus: Optional[DKTPlusLoss] = None,
        seed: int = 42,
    ):
        self.n_items = n_items
        self.dim = dim
        self.context_len = context_len
        self.plus = plus or DKTPlusLoss()
        self.arch = "dkt+" if self.plus.active else "dkt"
        self.seed = seed
        rng = np.random.default_rng(seed)
        H = dim
        bound = 1.0 / np.sqrt(H)
        self.E = rng.uniform(-bound, bound, size=(2 * n_items, H))
        self.Wx = rng.uniform(-bound, bound, size=(H, 4 * H))
        self.Wh = rng.uniform(-bound, bound, size=(H, 4 * H))
        self.b = np.zeros(4 * H)
        self.b[H : 2 * H] = 1.0  # forget-gate bias
        self.Wy = rng.uniform(-bound, bound, size=(H, n_items))
        self.by = np.zeros(n_items)
        self._cache = None

    # -- step-wise interface ------------------------------------------------

    def init_state(self):
        H = self.dim
        return (np.zeros(H), np.zeros(H))

    def _lstm_step(self, x, h, c):
        H = self.dim
        z = x @ self.Wx + h @ self.Wh + self.b
        i = expit(z[..., :H])
        f = expit(z[..., H : 2 * H])
        g = np.tanh(z[..., 2 * H : 3 * H])
        o = expit(z[..., 3 * H :])
        c2 = f * c + i * g
        h2 = o * np.tanh(c2)
        return h2, c2, (i, f, g, o)

    def advance(self, state, item, response):
        h, c = state
        x = self.E[item + response * self.n_items]
        h2, c2, _ = self._lstm_step(x, h, c)
        return (h2, c2)

    def advance_soft(self, state, item, p_response):
        h, c = state
        x = (1.0 - p_response) * self.E[item] + p_response * self.E[item + self.n_items]
        h2, c2, _ = self._lstm_step(x, h, c)
        return (h2, c2)

    def query(self, state, item) -> float:
        h, _ = state
        return squash(h @ self.Wy[:, item] + self.by[item])

    # -- training interface ---------------------------------------------------

    def parameters(self):
        return {"E": self.E, "Wx": self.Wx, "Wh": self.Wh, "b": self.b, "Wy": self.Wy, "by": self.by}

    def hyperparameters(self):
        return {
            "dim": self.dim,
            "context_len": self.context_len,
            "lambda_r": self.plus.lambda_r,
            "lambda_w1": self.plus.lambda_w1,
            "lambda_w2": self.plus.lambda_w2,
            "seed": self.seed,
        }

    def forward_loss(self, batch, dropout_rng=None, dropout: float = 0.0):
        """Mean next-step BCE over valid targets (plus regularizers when active).

        Returns ``(loss, preds)`` where ``preds[b, t]`` is the probability
        predicted for step t from the state after step t-1; position 0 and all
        padded positions are NaN.
        """
        items, resps, valid_len = batch.items, batch.responses, batch.valid_len
        B, m = items.shape
        if B == 0:
            raise ValueError("empty batch")
        H, M = self.dim, self.n_items
        L = int(valid_len.max())
        preds = np.full((B, m), np.nan)
        if L == 0:
            self._cache = None
            self._zero_loss = True
            return 0.0, preds

        step_valid = np.arange(L)[None, :] < valid_len[:, None]  # (B, L)
        safe_items = np.where(step_valid, items[:, :L], 0)
        safe_resps = np.where(step_valid, resps[:, :L], 0)
        enc = safe_items + safe_resps * M

        xs = self.E[enc]  # (B, L, H)
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        h_all = np.empty((B, L, H))
        c_all = np.empty((B, L, H))
        gates = np.empty((B, L, 4 * H))
        for t in range(L):
            h, c, (i, f, g, o) = self._lstm_step(xs[:, t], h, c)
            h_all[:, t] = h
            c_all[:, t] = c
            gates[:, t] = np.concatenate([i, f, g, o], axis=1)

        if dropout_rng is not None and dropout > 0.0:
            keep = (dropout_rng.random(h_all.shape) >= dropout).astype(float) / (1.0 - dropout)
        else:
            keep = None
        h_read = h_all if keep is None else h_all * keep
        logits = h_read @ self.Wy + self.by  # (B, L, M)

        # next-step targets: step t predicted from state after t-1
        tgt_valid = step_valid.copy()
        tgt_valid[:, 0] = False
        n_tgt = int(tgt_valid.sum())
        rows, cols = np.nonzero(tgt_valid)
        z_next = logits[rows, cols - 1, safe_items[rows, cols]]
        r_next = safe_resps[rows, cols].astype(float)
        loss = _bce_from_logit(z_next, r_next).sum() / n_tgt if n_tgt else 0.0
        preds[rows, cols] = expit(z_next)

        extras = None
        if self.plus.active:
            y = expit(logits)
            srows, scols = np.nonzero(step_valid)
            z_own = logits[srows, scols, safe_items[srows, scols]]
            r_own = safe_resps[srows, scols].astype(float)
            n_own = len(srows)
            recon = _bce_from_logit(z_own, r_own).sum() / n_own
            pair_valid = step_valid[:, 1:] & step_valid[:, :-1] if L > 1 else np.zeros((B, 0), bool)
            n_pairs = int(pair_valid.sum())
            if n_pairs:
                diff = (y[:, 1:] - y[:, :-1]) * pair_valid[:, :, None]
                w1 = np.abs(diff).sum() / (n_pairs * M)
                w2 = (diff**2).sum() / (n_pairs * M)
            else:
                diff, w1, w2 = None, 0.0, 0.0
            loss = loss + self.plus.lambda_r * recon + self.plus.lambda_w1 * w1 + self.plus.lambda_w2 * w2
            extras = (y, srows, scols, z_own, r_own, n_own, pair_valid, n_pairs, diff)

        self._zero_loss = False
        self._cache = (
            batch, L, step_valid, safe_items, safe_resps, enc, xs, h_all, c_all, gates,
            keep, logits, rows, cols, z_next, r_next, n_tgt, extras,
        )
        return float(loss), preds

    def backward(self):
        """Analytic gradients of the last ``forward_loss`` for every parameter."""
        if getattr(self, "_zero_loss", False):
            return {k: np.zeros_like(v) for k, v in self.parameters().items()}
        if self._cache is None:
            raise RuntimeError("backward called before forward_loss")
        (
            batch, L, step_valid, safe_items, safe_resps, enc, xs, h_all, c_all, gates,
            keep, logits, rows, cols, z_next, r_next, n_tgt, extras,
        ) = self._cache
        B = batch.items.shape[0]
        H, M = self.dim, self.n_items

        dlogits = np.zeros_like(logits)
        if n_tgt:
            np.add.at(
                dlogits,
                (rows, cols - 1, safe_items[rows, cols]),
                (expit(z_next) - r_next) / n_tgt,
            )
        if extras is not None:
            y, srows, scols, z_own, r_own, n_own, pair_valid, n_pairs, diff = extras
            if self.plus.lambda_r > 0:
                np.add.at(
                    dlogits,
                    (srows, scols, safe_items[srows, scols]),
                    self.plus.lambda_r * (expit(z_own) - r_own) / n_own,
                )
            if n_pairs and (self.plus.lambda_w1 > 0 or self.plus.lambda_w2 > 0):
                dY = np.zeros_like(y)
                gpair = (
                    self.plus.lambda_w1 * np.sign(diff) + self.plus.lambda_w2 * 2.0 * diff
                ) / (n_pairs * M)
                dY[:, 1:] += gpair
                dY[:, :-1] -= gpair
                dlogits += dY * y * (1.0 - y)

        grads = {k: np.zeros_like(v) for k, v in self.parameters().items()}
        h_read = h_all if keep is None else h_all * keep
        grads["Wy"] = np.einsum("bth,btm->hm", h_read, dlogits)
        grads["by"] = dlogits.sum(axis=(0, 1))
        dh_read = dlogits @ self.Wy.T
        if keep is not None:
            dh_read = dh_read * keep

        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dxs = np.empty_like(xs)
        for t in range(L - 1, -1, -1):
            i = gates[:, t, :H]
            f = gates[:, t, H : 2 * H]
            g = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            c_prev = c_all[:, t - 1] if t > 0 else np.zeros((B, H))
            h_prev = h_all[:, t - 1] if t > 0 else np.zeros((B, H))
            tanh_c = np.tanh(c_all[:, t])
            dh = dh_read[:, t] + dh_next
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)], axis=1
            )
            grads["Wx"] += xs[:, t].T @ dz
            grads["Wh"] += h_prev.T @ dz
            grads["b"] += dz.sum(axis=0)
            dxs[:, t] = dz @ self.Wx.T
            dh_next = dz @ self.Wh.T
            dc_next = dc * f
        np.add.at(grads["E"], enc.reshape(-1), dxs.reshape(-1, H))
        return grads

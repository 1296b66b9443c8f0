"""Self-attention knowledge tracing: item-embedding queries attend causally
over past interaction embeddings (with learned positions), followed by a
feed-forward layer and a scalar sigmoid head.

With more than one block, the leading blocks causally self-refine the
interaction memory and the final block cross-attends the query item into it;
a query at position t can therefore only ever see positions strictly before
t. For sequences longer than the trained context length, each query uses a
sliding window of the last context_len-1 steps with relative positions.

All passes are hand-written numpy, gradient-checked against central finite
differences.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .base import KTModel, squash

_LN_EPS = 1e-5
_NEG_INF = -1e30


def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc**2).mean(-1, keepdims=True) + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _ln_backward(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


def _mha_forward(xq, xkv, p, mask, n_heads, keep=None):
    """Causal multi-head scaled-dot-product attention.

    ``mask[i, j]`` says whether query i may attend key j. ``keep`` is an
    optional inverted-dropout mask over the attention probabilities.
    """
    B, Tq, D = xq.shape
    Tk = xkv.shape[1]
    dh = D // n_heads
    Q = (xq @ p["Wq"]).reshape(B, Tq, n_heads, dh).transpose(0, 2, 1, 3)
    K = (xkv @ p["Wk"]).reshape(B, Tk, n_heads, dh).transpose(0, 2, 1, 3)
    V = (xkv @ p["Wv"]).reshape(B, Tk, n_heads, dh).transpose(0, 2, 1, 3)
    S = Q @ K.transpose(0, 1, 3, 2) / np.sqrt(dh)
    S = np.where(mask[None, None], S, _NEG_INF)
    S = S - S.max(-1, keepdims=True)
    expS = np.exp(S)
    A = expS / expS.sum(-1, keepdims=True)
    Ad = A if keep is None else A * keep
    ctx = (Ad @ V).transpose(0, 2, 1, 3).reshape(B, Tq, D)
    out = ctx @ p["Wo"]
    return out, (xq, xkv, Q, K, V, A, keep, ctx, dh)


def _mha_backward(dout, p, cache):
    xq, xkv, Q, K, V, A, keep, ctx, dh = cache
    B, Tq, D = xq.shape
    Tk = xkv.shape[1]
    n_heads = Q.shape[1]
    grads = {"Wo": ctx.reshape(-1, D).T @ dout.reshape(-1, D)}
    dctx = (dout @ p["Wo"].T).reshape(B, Tq, n_heads, dh).transpose(0, 2, 1, 3)
    Ad_grad = dctx @ V.transpose(0, 1, 3, 2)
    dV = (A if keep is None else A * keep).transpose(0, 1, 3, 2) @ dctx
    dA = Ad_grad if keep is None else Ad_grad * keep
    dS = A * (dA - (dA * A).sum(-1, keepdims=True)) / np.sqrt(dh)
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    dQf = dQ.transpose(0, 2, 1, 3).reshape(B, Tq, D)
    dKf = dK.transpose(0, 2, 1, 3).reshape(B, Tk, D)
    dVf = dV.transpose(0, 2, 1, 3).reshape(B, Tk, D)
    grads["Wq"] = xq.reshape(-1, D).T @ dQf.reshape(-1, D)
    grads["Wk"] = xkv.reshape(-1, D).T @ dKf.reshape(-1, D)
    grads["Wv"] = xkv.reshape(-1, D).T @ dVf.reshape(-1, D)
    dxq = dQf @ p["Wq"].T
    dxkv = dKf @ p["Wk"].T + dVf @ p["Wv"].T
    return dxq, dxkv, grads


def _block_forward(p, xq, xkv, mask, n_heads, keeps=(None, None)):
    """Attention + residual + LN, then FFN + residual + LN.

    ``xkv=None`` means an empty context: the attention output is zero and the
    rest of the block still applies (only reachable at evaluation time).
    """
    if xkv is None:
        a, mha_cache = np.zeros_like(xq), None
    else:
        a, mha_cache = _mha_forward(xq, xkv, p, mask, n_heads, keeps[0])
    r1 = xq + a
    x1, ln1_cache = _ln_forward(r1, p["g1"], p["c1"])
    hpre = x1 @ p["W1"] + p["b1"]
    hact = np.maximum(hpre, 0.0)
    f = hact @ p["W2"] + p["b2"]
    fd = f if keeps[1] is None else f * keeps[1]
    x2, ln2_cache = _ln_forward(x1 + fd, p["g2"], p["c2"])
    return x2, (mha_cache, ln1_cache, x1, hpre, hact, keeps[1], ln2_cache)


def _block_backward(dx2, p, cache):
    mha_cache, ln1_cache, x1, hpre, hact, keep_ffn, ln2_cache = cache
    D = x1.shape[-1]
    grads = {}
    dr2, grads["g2"], grads["c2"] = _ln_backward(dx2, p["g2"], ln2_cache)
    dfd = dr2 if keep_ffn is None else dr2 * keep_ffn
    grads["W2"] = hact.reshape(-1, D).T @ dfd.reshape(-1, D)
    grads["b2"] = dfd.reshape(-1, D).sum(axis=0)
    dhact = dfd @ p["W2"].T
    dhpre = dhact * (hpre > 0)
    grads["W1"] = x1.reshape(-1, D).T @ dhpre.reshape(-1, D)
    grads["b1"] = dhpre.reshape(-1, D).sum(axis=0)
    dx1 = dr2 + dhpre @ p["W1"].T
    dr1, grads["g1"], grads["c1"] = _ln_backward(dx1, p["g1"], ln1_cache)
    if mha_cache is None:
        for name in ("Wq", "Wk", "Wv", "Wo"):
            grads[name] = np.zeros_like(p[name])
        return dr1, np.zeros_like(dr1), grads
    da_q, dxkv, mha_grads = _mha_backward(dr1, p, mha_cache)
    grads.update(mha_grads)
    return dr1 + da_q, dxkv, grads


_BLOCK_PARAM_SHAPES = ("Wq", "Wk", "Wv", "Wo", "g1", "c1", "W1", "b1", "W2", "b2", "g2", "c2")


class SAKT(KTModel):
    """Attention-based model over (item, response) histories."""

    def __init__(
        self,
        n_items: int,
        dim: int = 64,
        n_heads: int = 4,
        n_blocks: int = 1,
        context_len: int = 200,
        seed: int = 42,
    ):
        if dim % n_heads:
            raise ValueError(f"dim ({dim}) must be divisible by n_heads ({n_heads})")
        if n_blocks < 1:
            raise ValueError("need at least one attention block")
        self.arch = "sakt"
        self.n_items = n_items
        self.dim = dim
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.context_len = context_len
        self.seed = seed
        self.supports_repr = True
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(dim)

        def u(*shape):
            return rng.uniform(-bound, bound, size=shape)

        self.E_item = u(n_items, dim)
        self.E_inter = u(2 * n_items, dim)
        self.P = u(context_len, dim)
        self.blocks = []
        for _ in range(n_blocks):
            self.blocks.append(
                {
                    "Wq": u(dim, dim), "Wk": u(dim, dim), "Wv": u(dim, dim), "Wo": u(dim, dim),
                    "g1": np.ones(dim), "c1": np.zeros(dim),
                    "W1": u(dim, dim), "b1": np.zeros(dim),
                    "W2": u(dim, dim), "b2": np.zeros(dim),
                    "g2": np.ones(dim), "c2": np.zeros(dim),
                }
            )
        self.head_w = u(dim)
        self.head_b = np.zeros(1)
        self._cache = None

    # -- step-wise interface --------------------------------------------------

    def init_state(self):
        return ()

    def advance(self, state, item, response):
        return state + ((item, response),)

    def advance_soft(self, state, item, p_response):
        return state + ((item, float(p_response)),)

    def _history_embedding(self, hist):
        M = self.n_items
        rows = np.empty((len(hist), self.dim))
        for j, (item, r) in enumerate(hist):
            if isinstance(r, float) and not r.is_integer():
                rows[j] = (1.0 - r) * self.E_inter[item] + r * self.E_inter[item + M]
            else:
                rows[j] = self.E_inter[item + int(r) * M]
        return rows + self.P[: len(hist)]

    def _run_blocks(self, xq, xkv, mask_self, mask_cross):
        mem = xkv
        for blk in self.blocks[:-1]:
            if mem is None:
                break
            mem, _ = _block_forward(blk, mem, mem, mask_self, self.n_heads)
        out, _ = _block_forward(self.blocks[-1], xq, mem, mask_cross, self.n_heads)
        return out

    def query_repr(self, state, item) -> np.ndarray:
        w = min(len(state), self.context_len - 1)
        xq = self.E_item[item][None, None, :]
        if w == 0:
            out = self._run_blocks(xq, None, None, None)
        else:
            hist = state[len(state) - w :]
            kv = self._history_embedding(hist)[None]
            mask_self = np.tril(np.ones((w, w), dtype=bool))
            mask_cross = np.ones((1, w), dtype=bool)
            out = self._run_blocks(xq, kv, mask_self, mask_cross)
        return out[0, 0]

    def prob_from_repr(self, repr_vec) -> float:
        return squash(repr_vec @ self.head_w + self.head_b[0])

    def query(self, state, item) -> float:
        return self.prob_from_repr(self.query_repr(state, item))

    # -- training interface -----------------------------------------------------

    def parameters(self):
        params = {"E_item": self.E_item, "E_inter": self.E_inter, "P": self.P,
                  "head_w": self.head_w, "head_b": self.head_b}
        for i, blk in enumerate(self.blocks):
            for name in _BLOCK_PARAM_SHAPES:
                params[f"blk{i}_{name}"] = blk[name]
        return params

    def hyperparameters(self):
        return {
            "dim": self.dim,
            "n_heads": self.n_heads,
            "n_blocks": self.n_blocks,
            "context_len": self.context_len,
            "seed": self.seed,
        }

    def forward_loss(self, batch, dropout_rng=None, dropout: float = 0.0):
        """Mean next-step BCE over valid targets.

        Query at position i predicts step i+1 and attends interactions 0..i.
        """
        items, resps, valid_len = batch.items, batch.responses, batch.valid_len
        B, m = items.shape
        if B == 0:
            raise ValueError("empty batch")
        M = self.n_items
        L = int(valid_len.max())
        preds = np.full((B, m), np.nan)
        if L < 2:
            self._cache = None
            return 0.0, preds

        T = L - 1
        step_valid = np.arange(L)[None, :] < valid_len[:, None]
        safe_items = np.where(step_valid, items[:, :L], 0)
        safe_resps = np.where(step_valid, resps[:, :L], 0)
        enc = safe_items[:, :T] + safe_resps[:, :T] * M
        kv = self.E_inter[enc] + self.P[:T]
        q_items = safe_items[:, 1:]
        xq = self.E_item[q_items]
        mask = np.tril(np.ones((T, T), dtype=bool))

        def draw_keeps(shape_attn):
            if dropout_rng is None or dropout == 0.0:
                return (None, None)
            ka = (dropout_rng.random(shape_attn) >= dropout) / (1.0 - dropout)
            kf = (dropout_rng.random((B, T, self.dim)) >= dropout) / (1.0 - dropout)
            return (ka, kf)

        mem = kv
        self_caches = []
        self_keeps = []
        for blk in self.blocks[:-1]:
            keeps = draw_keeps((B, self.n_heads, T, T))
            mem, cache = _block_forward(blk, mem, mem, mask, self.n_heads, keeps)
            self_caches.append(cache)
            self_keeps.append(keeps)
        cross_keeps = draw_keeps((B, self.n_heads, T, T))
        out, cross_cache = _block_forward(self.blocks[-1], xq, mem, mask, self.n_heads, cross_keeps)

        logits = out @ self.head_w + self.head_b[0]
        tgt_valid = step_valid[:, 1:]
        n_tgt = int(tgt_valid.sum())
        targets = safe_resps[:, 1:].astype(float)
        if n_tgt:
            z = logits[tgt_valid]
            r = targets[tgt_valid]
            loss = float((np.logaddexp(0.0, z) - r * z).sum() / n_tgt)
            pblock = np.full((B, T), np.nan)
            pblock[tgt_valid] = expit(z)
            preds[:, 1:L] = pblock
        else:
            loss = 0.0
        self._cache = (
            batch, T, enc, q_items, out, logits, tgt_valid, targets, n_tgt,
            self_caches, cross_cache,
        )
        return loss, preds

    def backward(self):
        if self._cache is None:
            return {k: np.zeros_like(v) for k, v in self.parameters().items()}
        (
            batch, T, enc, q_items, out, logits, tgt_valid, targets, n_tgt,
            self_caches, cross_cache,
        ) = self._cache
        grads = {k: np.zeros_like(v) for k, v in self.parameters().items()}
        if n_tgt == 0:
            return grads
        B = batch.items.shape[0]
        D = self.dim

        dlogits = np.zeros((B, T))
        dlogits[tgt_valid] = (expit(logits[tgt_valid]) - targets[tgt_valid]) / n_tgt
        grads["head_w"] = (out * dlogits[:, :, None]).reshape(-1, D).sum(axis=0)
        grads["head_b"][0] = dlogits.sum()
        dout = dlogits[:, :, None] * self.head_w

        dxq, dmem, blk_grads = _block_backward(dout, self.blocks[-1], cross_cache)
        for name, g in blk_grads.items():
            grads[f"blk{self.n_blocks - 1}_{name}"] = g
        for i in range(self.n_blocks - 2, -1, -1):
            dq_i, dkv_i, blk_grads = _block_backward(dmem, self.blocks[i], self_caches[i])
            for name, g in blk_grads.items():
                grads[f"blk{i}_{name}"] = g
            dmem = dq_i + dkv_i

        np.add.at(grads["E_item"], q_items.reshape(-1), dxq.reshape(-1, D))
        np.add.at(grads["E_inter"], enc.reshape(-1), dmem.reshape(-1, D))
        grads["P"][:T] = dmem.sum(axis=0)
        return grads

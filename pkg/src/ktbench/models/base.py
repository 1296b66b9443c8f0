"""Common interface for trainable causal knowledge-tracing models.

A model is advanced step by step through observed (item, response) pairs and
queried for the probability of a correct response on any item. Queries depend
only on steps advanced so far and never see the response being predicted.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Optional

import numpy as np
from scipy.special import expit

# Query outputs stay strictly inside (0, 1) even for saturated logits.
PROB_EPS = 1e-12


class CapabilityError(RuntimeError):
    """The model does not support the requested optional capability."""


def squash(logit) -> float:
    return float(np.clip(expit(logit), PROB_EPS, 1.0 - PROB_EPS))


class KTModel(ABC):
    """Behavioral contract shared by every sequence model in the registry."""

    version = 1
    arch: str = "?"
    n_items: int
    context_len: int
    supports_repr = False

    @abstractmethod
    def init_state(self) -> Any:
        """State before any interaction has been observed."""

    @abstractmethod
    def advance(self, state: Any, item: int, response: int) -> Any:
        """Consume one observed step; the input state is left untouched."""

    @abstractmethod
    def query(self, state: Any, item: int) -> float:
        """P(correct response on ``item``) given the steps advanced so far."""

    def advance_soft(self, state: Any, item: int, p_response: float) -> Any:
        """Consume a step whose response is only known as a probability."""
        raise CapabilityError(f"{self.arch} cannot consume soft responses")

    def query_repr(self, state: Any, item: int) -> np.ndarray:
        """Pre-output representation for ``item``; only models that keep
        per-item hidden states support this."""
        raise CapabilityError(f"{self.arch} has no per-item representations")

    def prob_from_repr(self, repr_vec: np.ndarray) -> float:
        raise CapabilityError(f"{self.arch} has no per-item representations")

    @abstractmethod
    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by name; mutated in place by optimizers."""

    @abstractmethod
    def hyperparameters(self) -> dict:
        """Constructor arguments needed to rebuild the architecture."""

    def forward_loss(self, batch, dropout_rng: Optional[np.random.Generator] = None):
        raise CapabilityError(f"{self.arch} is not trainable")

    def backward(self) -> dict[str, np.ndarray]:
        raise CapabilityError(f"{self.arch} is not trainable")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(snap):
            raise ValueError("snapshot does not match this model's parameters")
        for k, v in params.items():
            v[...] = snap[k]


class MeanRateBaseline(KTModel):
    """Predicts the global training-set correct rate for every query.

    Constant scores make its AUC exactly 0.5; useful as the floor that any
    trained model has to clear.
    """

    arch = "mean-rate"

    def __init__(self, n_items: int, context_len: int = 200):
        self.n_items = n_items
        self.context_len = context_len
        self._rate = np.array([0.5])

    def fit(self, responses) -> "MeanRateBaseline":
        responses = np.asarray(responses, dtype=float)
        if responses.size:
            self._rate[0] = float(np.clip(responses.mean(), PROB_EPS, 1 - PROB_EPS))
        return self

    def init_state(self):
        return None

    def advance(self, state, item, response):
        return None

    def query(self, state, item) -> float:
        return float(self._rate[0])

    def parameters(self):
        return {"rate": self._rate}

    def hyperparameters(self):
        return {}

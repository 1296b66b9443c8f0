import numpy as np
import pytest

from ktbench.core import Dataset, Interaction, StudentSequence
from ktbench.models import make_batch
from ktbench.preprocess import Window


def seq(student_id, rows):
    """rows: list of (question_id, kc_ids tuple, response, timestamp)."""
    return StudentSequence(
        student_id,
        tuple(Interaction(q, tuple(k), r, t) for q, k, r, t in rows),
    )


@pytest.fixture
def tiny_dataset():
    # two students, q1 -> {a, b}, q2 -> {a}; used by the hand-counted stats cases
    return Dataset.build(
        [
            seq("s1", [("q1", ("a", "b"), 1, 10), ("q1", ("a", "b"), 0, 20)]),
            seq("s2", [("q2", ("a",), 1, 15)]),
        ]
    )


@pytest.fixture
def single_kc_dataset():
    rows = []
    rng = np.random.default_rng(11)
    for s in range(8):
        inters = []
        for t in range(12):
            q = int(rng.integers(0, 6))
            inters.append((f"q{q}", (f"k{q}",), int(rng.integers(0, 2)), 1000 + t))
        rows.append(seq(f"s{s}", inters))
    return Dataset.build(rows)


def random_batch(rng, n_items, m, lens):
    windows = []
    for L in lens:
        items = np.full(m, -1, dtype=np.int64)
        resps = np.full(m, -1, dtype=np.int64)
        items[:L] = rng.integers(0, n_items, L)
        resps[:L] = rng.integers(0, 2, L)
        windows.append(Window(items, resps, items.copy(), items.copy(), L))
    return make_batch(windows)


def finite_difference_grads(model, batch, h=1e-5):
    """Central-difference gradient of the batch loss for every parameter."""
    numeric = {}
    for name, p in model.parameters().items():
        num = np.zeros_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = model.forward_loss(batch)
            flat[i] = orig - h
            lm, _ = model.forward_loss(batch)
            flat[i] = orig
            nflat[i] = (lp - lm) / (2 * h)
        numeric[name] = num
    return numeric


def max_rel_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / (np.maximum(np.abs(a), np.abs(n)) + 1e-6)
        worst = max(worst, float(rel.max()))
    return worst

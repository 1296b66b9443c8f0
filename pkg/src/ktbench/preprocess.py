"""Standardized preprocessing: filtering, student splits, KC expansion, windowing.

All functions are pure over immutable inputs and deterministic given a seed,
so reruns from a persisted split file reproduce results bit for bit.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, StudentSequence

PAD = -1
MIN_INTERACTIONS = 3
TEST_FRACTION = 0.2
N_FOLDS = 5


@dataclass(frozen=True)
class ExpandedStep:
    """One KC-level step. All steps expanded from the same interaction share a
    group id, the same response, and the same source position."""

    item_id: int
    group_id: int
    response: int
    source_position: int


@dataclass
class Window:
    """Fixed-length chunk of an expanded sequence; positions >= valid_len are
    padded with -1 in every array."""

    items: np.ndarray
    responses: np.ndarray
    group_ids: np.ndarray
    source_positions: np.ndarray
    valid_len: int


@dataclass(frozen=True)
class Split:
    """Deterministic student partition: one test set plus 5 cross-validation folds."""

    seed: int
    test_ids: tuple[str, ...]
    folds: tuple[tuple[str, ...], ...]

    def train_ids(self, val_fold: int) -> list[str]:
        """Students of every fold except ``val_fold``."""
        return [s for i, fold in enumerate(self.folds) if i != val_fold for s in fold]


def filter_dataset(dataset: Dataset) -> Dataset:
    """Drop incomplete interactions, then students left with < 3 interactions.

    An interaction is incomplete when any 4-tuple field is missing; in a
    dataset that carries KC information anywhere, an empty KC set counts as
    missing too. Vocabularies are rebuilt from the survivors, and the whole
    operation is idempotent.
    """
    kc_bearing = dataset.has_kc_info
    kept_seqs = []
    for seq in dataset.sequences:
        rows = [
            inter
            for inter in seq.interactions
            if inter.question_id
            and inter.response in (0, 1)
            and inter.timestamp is not None
            and (not kc_bearing or inter.kc_ids)
        ]
        if len(rows) >= MIN_INTERACTIONS:
            kept_seqs.append(StudentSequence(seq.student_id, tuple(rows)))
    return Dataset.build(kept_seqs)


def split_students(dataset: Dataset, seed: int) -> Split:
    """Withhold round(20%) of students as the test set and deal the rest into
    5 folds whose sizes differ by at most one.

    The shuffle runs over sorted student ids, so the split depends only on the
    id set and the seed.
    """
    ids = sorted(dataset.student_ids())
    n = len(ids)
    if n < N_FOLDS + 1:
        raise ValueError(f"need at least {N_FOLDS + 1} students to split, got {n}")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_test = (n + 2) // 5  # round(0.2*n) to nearest; .5 never occurs for integers
    test_ids = tuple(ids[:n_test])
    rest = ids[n_test:]
    folds = tuple(tuple(rest[i::N_FOLDS]) for i in range(N_FOLDS))
    return Split(seed=seed, test_ids=test_ids, folds=folds)


def save_split(split: Split, path: str | Path) -> None:
    payload = {
        "seed": split.seed,
        "test_ids": list(split.test_ids),
        "folds": [list(f) for f in split.folds],
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def load_split(path: str | Path) -> Split:
    payload = json.loads(Path(path).read_text())
    return Split(
        seed=payload["seed"],
        test_ids=tuple(payload["test_ids"]),
        folds=tuple(tuple(f) for f in payload["folds"]),
    )


def expand_to_kc(sequence: StudentSequence, dataset: Dataset) -> list[ExpandedStep]:
    """Expand question-level interactions into KC-level steps.

    An interaction with k KCs becomes k steps sharing a fresh group id, in
    ascending KC-index order. When the dataset has no KC information at all,
    the item is the question index and no expansion happens.
    """
    steps: list[ExpandedStep] = []
    if dataset.has_kc_info:
        for pos, inter in enumerate(sequence.interactions):
            if not inter.kc_ids:
                raise ValueError(
                    f"question {inter.question_id!r} has no KCs in a KC-bearing dataset "
                    f"(student={sequence.student_id} pos={pos})"
                )
            for item in sorted(dataset.kc_vocab[k] for k in inter.kc_ids):
                steps.append(ExpandedStep(item, pos, inter.response, pos))
    else:
        for pos, inter in enumerate(sequence.interactions):
            steps.append(
                ExpandedStep(dataset.question_vocab[inter.question_id], pos, inter.response, pos)
            )
    return steps


def make_windows(steps: list[ExpandedStep], m: int) -> list[Window]:
    """Chop an expanded sequence into non-overlapping length-m windows.

    The final window is padded with -1 up to length m. Concatenating the
    windows and stripping the padding recovers the input exactly.
    """
    if m < 2:
        raise ValueError(f"window length must be >= 2, got {m}")
    windows = []
    for start in range(0, len(steps), m):
        chunk = steps[start : start + m]
        valid = len(chunk)
        items = np.full(m, PAD, dtype=np.int64)
        resps = np.full(m, PAD, dtype=np.int64)
        groups = np.full(m, PAD, dtype=np.int64)
        sources = np.full(m, PAD, dtype=np.int64)
        for i, s in enumerate(chunk):
            items[i] = s.item_id
            resps[i] = s.response
            groups[i] = s.group_id
            sources[i] = s.source_position
        windows.append(Window(items, resps, groups, sources, valid))
    return windows


def windows_to_steps(windows: list[Window]) -> list[ExpandedStep]:
    """Inverse of :func:`make_windows` (pads stripped)."""
    steps = []
    for w in windows:
        for i in range(w.valid_len):
            steps.append(
                ExpandedStep(
                    int(w.items[i]), int(w.group_ids[i]), int(w.responses[i]), int(w.source_positions[i])
                )
            )
    return steps

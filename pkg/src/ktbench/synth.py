"""Seeded generative student simulator with analytic oracle probabilities.

Responses follow a logistic model: a question with KC set K is answered
correctly with probability sigmoid(mean ability over K minus question
difficulty). Per-KC ability starts from a seeded draw and grows by a fixed
gain on every practice, so generated histories are genuinely learnable. All
KC steps of one interaction inherit its single response.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .core import Dataset, Interaction, StudentSequence
from .ingest import write_canonical


@dataclass(frozen=True)
class SimConfig:
    n_students: int
    n_questions: int
    n_kcs: int
    kc_min: int = 1
    kc_max: int = 3
    steps_per_student: int = 50
    ability_mean: float = 0.0
    ability_scale: float = 1.0
    practice_gain: float = 0.02
    difficulty_scale: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if min(self.n_students, self.n_questions, self.n_kcs, self.steps_per_student) < 1:
            raise ValueError("all counts must be >= 1")
        if not (1 <= self.kc_min <= self.kc_max <= self.n_kcs):
            raise ValueError(f"need 1 <= kc_min <= kc_max <= n_kcs, got {self.kc_min}..{self.kc_max}")
        if self.practice_gain < 0:
            raise ValueError("practice_gain must be >= 0")


def _simulate(config: SimConfig):
    rng = np.random.default_rng(config.seed)
    q_width = len(str(config.n_questions - 1))
    k_width = len(str(config.n_kcs - 1))
    s_width = len(str(config.n_students - 1))
    kc_ids = [f"k{i:0{k_width}d}" for i in range(config.n_kcs)]

    question_kcs = []
    for _ in range(config.n_questions):
        k = int(rng.integers(config.kc_min, config.kc_max + 1))
        chosen = sorted(rng.choice(config.n_kcs, size=k, replace=False).tolist())
        question_kcs.append(tuple(kc_ids[c] for c in chosen))
    difficulty = rng.normal(0.0, config.difficulty_scale, size=config.n_questions)
    ability0 = rng.normal(
        config.ability_mean, config.ability_scale, size=(config.n_students, config.n_kcs)
    )

    sequences = []
    probs: dict[str, np.ndarray] = {}
    for s in range(config.n_students):
        sid = f"s{s:0{s_width}d}"
        ability = ability0[s].copy()
        inters = []
        p_seq = np.empty(config.steps_per_student)
        for t in range(config.steps_per_student):
            q = int(rng.integers(config.n_questions))
            kcs = question_kcs[q]
            kc_idx = [int(k[1:]) for k in kcs]
            p = float(expit(ability[kc_idx].mean() - difficulty[q]))
            r = int(rng.random() < p)
            p_seq[t] = p
            inters.append(Interaction(f"q{q:0{q_width}d}", kcs, r, 1_000_000 + t * 1000))
            ability[kc_idx] += config.practice_gain
        sequences.append(StudentSequence(sid, tuple(inters)))
        probs[sid] = p_seq
    # the full question bank goes into the map so vocabularies do not depend
    # on which questions happened to be practiced
    full_map = {f"q{q:0{q_width}d}": question_kcs[q] for q in range(config.n_questions)}
    dataset = Dataset.build(sequences, question_kc_map=full_map)
    params = {
        "question_difficulty": {f"q{q:0{q_width}d}": float(difficulty[q]) for q in range(config.n_questions)},
        "initial_ability": {f"s{s:0{s_width}d}": ability0[s].tolist() for s in range(config.n_students)},
    }
    return dataset, probs, params


def generate(config: SimConfig) -> Dataset:
    """Generate a dataset; identical configs produce identical datasets."""
    dataset, _, _ = _simulate(config)
    return dataset


def oracle_probabilities(config: SimConfig, dataset: Dataset) -> dict[str, np.ndarray]:
    """The exact Bernoulli parameters used when ``dataset`` was generated.

    The dataset is regenerated from the config and compared; anything other
    than the verbatim output of :func:`generate` with this config is rejected.
    """
    regenerated, probs, _ = _simulate(config)
    if regenerated != dataset:
        raise ValueError("dataset does not match this config+seed; oracle unavailable")
    return probs


def write_dataset(config: SimConfig, csv_path: str | Path, sidecar_path: str | Path | None = None) -> Dataset:
    """Emit canonical CSV plus a sidecar JSON with the config and oracle parameters."""
    csv_path = Path(csv_path)
    dataset, _, params = _simulate(config)
    write_canonical(dataset, csv_path)
    if sidecar_path is None:
        sidecar_path = csv_path.with_suffix(".oracle.json")
    Path(sidecar_path).write_text(json.dumps({"config": asdict(config), **params}, indent=2))
    return dataset

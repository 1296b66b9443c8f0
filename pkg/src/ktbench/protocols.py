"""Evaluation protocols: grouped (leakage-free) vs. step-by-step KC
prediction, KC fusion into question-level scores, long/short subgrouping, and
one-step / multi-step forecasting.

The central rule: all KCs of one question are predicted from the state
*before* that question ("all-in-one"), never conditioning on a sibling KC's
ground truth. Step-by-step teacher forcing over the expanded sequence
("one-by-one") leaks sibling responses and is implemented only so the
inflation can be audited.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, StudentSequence
from .metrics import MetricResult
from .models.base import CapabilityError, KTModel
from .preprocess import ExpandedStep, expand_to_kc


class FusionMechanism(Enum):
    EF = "ef"              # output head applied to the mean KC representation
    LF_AVG = "lf-avg"      # mean of the KC probabilities
    LF_MV = "lf-mv"        # majority vote of thresholded KC labels
    LF_S = "lf-s"          # positive iff every KC label is positive

    @classmethod
    def from_str(cls, name: str) -> "FusionMechanism":
        for mech in cls:
            if mech.value == name.lower():
                return mech
        raise ValueError(f"unknown fusion mechanism {name!r}; known: {[m.value for m in cls]}")


@dataclass
class PredictionRecord:
    """One evaluated question group: per-KC probabilities plus the fused
    question-level probability and predicted label."""

    student_id: str
    source_position: int
    question_id: str
    kc_probs: list[tuple[str, float]]
    label: int
    fused_prob: Optional[float] = None
    pred_label: Optional[int] = None
    kc_reprs: Optional[list[np.ndarray]] = None


@dataclass(frozen=True)
class StepPrediction:
    """One step of the leaky step-by-step evaluation."""

    student_id: str
    position: int
    item: str
    prob: float
    label: int


@dataclass(frozen=True)
class MultiStepConfig:
    observed_pct: float
    mode: str  # "accumulative" | "non-accumulative"
    feedback: str = "label"  # "label" | "prob"; what accumulative mode feeds back

    def __post_init__(self):
        if not 0.0 < self.observed_pct < 1.0:
            raise ValueError(f"observed_pct must be in (0, 1), got {self.observed_pct}")
        if self.mode not in ("accumulative", "non-accumulative"):
            raise ValueError(f"mode must be accumulative or non-accumulative, got {self.mode!r}")
        if self.feedback not in ("label", "prob"):
            raise ValueError(f"feedback must be label or prob, got {self.feedback!r}")


@dataclass
class EvalReport:
    """Per-protocol metric results, serializable for comparison runs."""

    config: dict
    results: dict[str, Optional[MetricResult]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "results": {k: (v.to_dict() if v is not None else None) for k, v in self.results.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _iter_groups(steps: Sequence[ExpandedStep]):
    group: list[ExpandedStep] = []
    for step in steps:
        if group and step.group_id != group[-1].group_id:
            yield group
            group = []
        group.append(step)
    if group:
        yield group


def _item_names(dataset: Dataset) -> list[str]:
    vocab = dataset.kc_vocab if dataset.has_kc_info else dataset.question_vocab
    names: list[str] = [""] * len(vocab)
    for name, idx in vocab.items():
        names[idx] = name
    return names


def eval_all_in_one(
    model: KTModel,
    dataset: Dataset,
    sequences: Sequence[StudentSequence],
    collect_reprs: bool = False,
) -> list[PredictionRecord]:
    """Grouped, leakage-free prediction over expanded test sequences.

    For every question group the state advanced through all *previous* groups
    is queried once per KC; only afterwards is the state advanced through the
    group with ground-truth responses (teacher forcing between groups).
    Evaluation never mutates the model; repeated calls are bit-identical.
    """
    names = _item_names(dataset)
    records = []
    for seq in sequences:
        steps = expand_to_kc(seq, dataset)
        state = model.init_state()
        for group in _iter_groups(steps):
            probs = [(names[s.item_id], model.query(state, s.item_id)) for s in group]
            reprs = [model.query_repr(state, s.item_id) for s in group] if collect_reprs else None
            records.append(
                PredictionRecord(
                    student_id=seq.student_id,
                    source_position=group[0].source_position,
                    question_id=seq.interactions[group[0].source_position].question_id,
                    kc_probs=probs,
                    label=group[0].response,
                    kc_reprs=reprs,
                )
            )
            for s in group:
                state = model.advance(state, s.item_id, s.response)
    return records


def eval_one_by_one(
    model: KTModel, dataset: Dataset, sequences: Sequence[StudentSequence]
) -> list[StepPrediction]:
    """Teacher-forced next-step prediction over the expanded KC sequence.

    Every step conditions on the ground truth of all previous steps, including
    sibling KCs of the same question; kept for auditing the resulting
    inflation, not for reporting model quality.
    """
    names = _item_names(dataset)
    out = []
    for seq in sequences:
        steps = expand_to_kc(seq, dataset)
        state = model.init_state()
        for pos, step in enumerate(steps):
            prob = model.query(state, step.item_id)
            out.append(StepPrediction(seq.student_id, pos, names[step.item_id], prob, step.response))
            state = model.advance(state, step.item_id, step.response)
    return out


def flatten_kc_predictions(records: Sequence[PredictionRecord]):
    """KC-level (prob, label) arrays from grouped records: every KC of a group
    is one prediction carrying the group's response."""
    probs = np.array([p for rec in records for _, p in rec.kc_probs])
    labels = np.array([rec.label for rec in records for _ in rec.kc_probs], dtype=int)
    return probs, labels


def step_predictions_arrays(steps: Sequence[StepPrediction]):
    return np.array([s.prob for s in steps]), np.array([s.label for s in steps], dtype=int)


def fuse(
    kc_probs: Sequence[float],
    mechanism: FusionMechanism,
    threshold: float = 0.5,
    kc_reprs: Optional[Sequence[np.ndarray]] = None,
    model: Optional[KTModel] = None,
) -> tuple[float, int]:
    """Aggregate per-KC predictions into one question-level (probability, label).

    The early-fusion route averages the per-KC representations and applies the
    model's output head, so it needs a model with that capability. Majority-
    vote ties fall back to the mean probability against the threshold; the
    strict mechanism reports the minimum probability, which is consistent with
    "all labels positive" under any threshold.
    """
    probs = np.asarray(kc_probs, dtype=float)
    if probs.size == 0:
        raise ValueError("cannot fuse an empty KC group")
    if mechanism is FusionMechanism.LF_AVG:
        p = float(probs.mean())
        return p, int(p >= threshold)
    if mechanism is FusionMechanism.LF_S:
        p = float(probs.min())
        return p, int(bool((probs >= threshold).all()))
    if mechanism is FusionMechanism.LF_MV:
        votes = probs >= threshold
        n_pos, n_neg = int(votes.sum()), int((~votes).sum())
        if n_pos > n_neg:
            label = 1
        elif n_neg > n_pos:
            label = 0
        else:
            label = int(probs.mean() >= threshold)
        winners = probs[votes] if label == 1 else probs[~votes]
        return float(winners.mean()), label
    if mechanism is FusionMechanism.EF:
        if model is None or kc_reprs is None:
            raise CapabilityError("early fusion needs per-KC representations and the model head")
        mean_repr = np.mean(np.stack(kc_reprs), axis=0)
        p = model.prob_from_repr(mean_repr)
        return p, int(p >= threshold)
    raise ValueError(f"unhandled mechanism {mechanism}")


def fuse_records(
    records: Sequence[PredictionRecord],
    mechanism: FusionMechanism,
    threshold: float = 0.5,
    model: Optional[KTModel] = None,
) -> None:
    """Fill ``fused_prob``/``pred_label`` on every record in place."""
    for rec in records:
        rec.fused_prob, rec.pred_label = fuse(
            [p for _, p in rec.kc_probs], mechanism, threshold, rec.kc_reprs, model
        )


def fused_arrays(records: Sequence[PredictionRecord]):
    return (
        np.array([r.fused_prob for r in records]),
        np.array([r.label for r in records], dtype=int),
    )


def eval_question_level(
    model: KTModel,
    dataset: Dataset,
    split_or_sequences,
    fusion: FusionMechanism = FusionMechanism.LF_AVG,
    threshold: float = 0.5,
) -> tuple[EvalReport, list[PredictionRecord]]:
    """Question-level metrics: grouped KC predictions fused per question, one
    record per test question-interaction."""
    if hasattr(split_or_sequences, "test_ids"):
        sequences = dataset.sequences_for(split_or_sequences.test_ids)
    else:
        sequences = list(split_or_sequences)
    need_reprs = fusion is FusionMechanism.EF
    if need_reprs and not model.supports_repr:
        raise CapabilityError(f"{model.arch} does not expose per-KC representations for early fusion")
    records = eval_all_in_one(model, dataset, sequences, collect_reprs=need_reprs)
    fuse_records(records, fusion, threshold, model)
    probs, labels = fused_arrays(records)
    report = EvalReport(
        config={
            "protocol": "question-level grouped prediction",
            "fusion": fusion.value,
            "threshold": threshold,
            "long_context_rule": "recurrent state carries; attention slides last context_len-1 steps",
        },
        results={"overall": MetricResult.from_predictions(probs, labels, threshold)},
    )
    return report, records


def split_by_length(sequences: Sequence[StudentSequence], cutoff: int = 200):
    """Partition sequences into (long, short) by interaction count; a sequence
    of exactly ``cutoff`` interactions is short."""
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    long_part = [s for s in sequences if len(s) > cutoff]
    short_part = [s for s in sequences if len(s) <= cutoff]
    return long_part, short_part


def eval_multistep(
    model: KTModel,
    dataset: Dataset,
    sequence: StudentSequence,
    config: MultiStepConfig,
    fusion: FusionMechanism = FusionMechanism.LF_AVG,
    threshold: float = 0.5,
) -> list[PredictionRecord]:
    """Predict the unobserved suffix of one sequence.

    The observed prefix holds floor(observed_pct * group count) question
    groups. Non-accumulative mode freezes the state there and queries every
    future group against it; accumulative mode advances after each predicted
    group, feeding back its own fused prediction (thresholded label by
    default, raw probability behind the feedback switch).
    """
    steps = expand_to_kc(sequence, dataset)
    groups = list(_iter_groups(steps))
    n_groups = len(groups)
    n_obs = int(np.floor(config.observed_pct * n_groups))
    if n_obs < 1:
        raise ValueError(f"observed prefix is empty ({config.observed_pct} of {n_groups} groups)")
    if n_obs >= n_groups:
        raise ValueError(f"no groups left to predict ({config.observed_pct} of {n_groups} groups)")

    state = model.init_state()
    for group in groups[:n_obs]:
        for s in group:
            state = model.advance(state, s.item_id, s.response)

    names = _item_names(dataset)
    need_reprs = fusion is FusionMechanism.EF
    records = []
    for group in groups[n_obs:]:
        probs = [(names[s.item_id], model.query(state, s.item_id)) for s in group]
        reprs = [model.query_repr(state, s.item_id) for s in group] if need_reprs else None
        fused_prob, pred_label = fuse([p for _, p in probs], fusion, threshold, reprs, model)
        records.append(
            PredictionRecord(
                student_id=sequence.student_id,
                source_position=group[0].source_position,
                question_id=sequence.interactions[group[0].source_position].question_id,
                kc_probs=probs,
                label=group[0].response,
                fused_prob=fused_prob,
                pred_label=pred_label,
                kc_reprs=reprs,
            )
        )
        if config.mode == "accumulative":
            for s in group:
                if config.feedback == "label":
                    state = model.advance(state, s.item_id, pred_label)
                else:
                    state = model.advance_soft(state, s.item_id, fused_prob)
    return records


def eval_multistep_dataset(
    model: KTModel,
    dataset: Dataset,
    sequences: Sequence[StudentSequence],
    config: MultiStepConfig,
    fusion: FusionMechanism = FusionMechanism.LF_AVG,
    threshold: float = 0.5,
) -> list[PredictionRecord]:
    """Pooled multi-step records over all sequences long enough to split."""
    records = []
    for seq in sequences:
        n_groups = len(seq.interactions)
        if int(np.floor(config.observed_pct * n_groups)) < 1:
            continue
        if int(np.floor(config.observed_pct * n_groups)) >= n_groups:
            continue
        records.extend(eval_multistep(model, dataset, seq, config, fusion, threshold))
    return records


def audit_leakage(model: KTModel, dataset: Dataset, sequences: Sequence[StudentSequence]) -> dict:
    """KC-level AUC under both protocols plus the inflation delta."""
    from .metrics import auc

    grouped = eval_all_in_one(model, dataset, sequences)
    g_probs, g_labels = flatten_kc_predictions(grouped)
    stepwise = eval_one_by_one(model, dataset, sequences)
    s_probs, s_labels = step_predictions_arrays(stepwise)
    auc_grouped = auc(g_probs, g_labels)
    auc_stepwise = auc(s_probs, s_labels)
    return {
        "kc_auc_all_in_one": auc_grouped,
        "kc_auc_one_by_one": auc_stepwise,
        "delta_gain": auc_stepwise - auc_grouped,
    }


def write_predictions_csv(records: Sequence[PredictionRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "position", "question_id", "fused_prob", "label"])
        for r in records:
            writer.writerow([r.student_id, r.source_position, r.question_id, r.fused_prob, r.label])

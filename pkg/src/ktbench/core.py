"""Canonical data model: interactions, student sequences, datasets, statistics.

Identifiers are opaque strings at this level; dense integer indices live in
the dataset vocabularies and are assigned once, in sorted-id order, so they
are stable under any reordering of the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional


@dataclass(frozen=True)
class Interaction:
    """One learning event: (question, KC set, binary response, timestamp).

    ``response`` and ``timestamp`` may be ``None`` for records coming from
    dirty adapter output; ``validate`` flags them and ``preprocess.filter_dataset``
    drops them. ``kc_ids`` is an ordered tuple without duplicates; empty means
    no KC information for this question.
    """

    question_id: str
    kc_ids: tuple[str, ...]
    response: Optional[int]
    timestamp: Optional[int]


@dataclass(frozen=True)
class StudentSequence:
    """Chronologically ordered interactions of one student."""

    student_id: str
    interactions: tuple[Interaction, ...]

    def __len__(self) -> int:
        return len(self.interactions)


@dataclass(frozen=True)
class Dataset:
    """Immutable container of student sequences plus derived vocabularies.

    ``question_kc_map`` maps every question id to the union of KC ids it was
    seen with. Vocabularies assign contiguous integer indices in sorted-id
    order. Instances are safe to share read-only across workers.
    """

    sequences: tuple[StudentSequence, ...]
    question_kc_map: dict[str, tuple[str, ...]]
    question_vocab: dict[str, int]
    kc_vocab: dict[str, int]

    @classmethod
    def build(
        cls,
        sequences: Iterable[StudentSequence],
        question_kc_map: Optional[dict[str, tuple[str, ...]]] = None,
    ) -> "Dataset":
        """Derive the KC map (union per question) and vocabularies from the data."""
        seqs = tuple(sequences)
        if question_kc_map is None:
            kc_map: dict[str, tuple[str, ...]] = {}
            for seq in seqs:
                for inter in seq.interactions:
                    seen = kc_map.get(inter.question_id, ())
                    extra = tuple(k for k in inter.kc_ids if k not in seen)
                    if extra or inter.question_id not in kc_map:
                        kc_map[inter.question_id] = seen + extra
            question_kc_map = kc_map
        questions = sorted(question_kc_map)
        kcs = sorted({k for kset in question_kc_map.values() for k in kset})
        return cls(
            sequences=seqs,
            question_kc_map=question_kc_map,
            question_vocab={q: i for i, q in enumerate(questions)},
            kc_vocab={k: i for i, k in enumerate(kcs)},
        )

    @property
    def has_kc_info(self) -> bool:
        return any(kset for kset in self.question_kc_map.values())

    @property
    def n_items(self) -> int:
        """Size of the model item vocabulary (KCs, or questions when no KC info)."""
        return len(self.kc_vocab) if self.has_kc_info else len(self.question_vocab)

    def student_ids(self) -> list[str]:
        return [s.student_id for s in self.sequences]

    def sequences_for(self, student_ids: Iterable[str]) -> list[StudentSequence]:
        wanted = set(student_ids)
        return [s for s in self.sequences if s.student_id in wanted]


@dataclass(frozen=True)
class DatasetStats:
    interactions: int
    sequences: int
    questions: int
    kcs: int
    avg_kcs_per_question: Optional[float]

    def __str__(self) -> str:
        avg = "-" if self.avg_kcs_per_question is None else f"{self.avg_kcs_per_question:.4f}"
        return (
            f"interactions={self.interactions} sequences={self.sequences} "
            f"questions={self.questions} kcs={self.kcs} avg_kcs={avg}"
        )


@dataclass(frozen=True)
class ValidationIssue:
    location: str
    message: str
    severity: str = "error"  # "error" | "warning"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def errors(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, location: str, message: str, severity: str = "error") -> None:
        self.issues.append(ValidationIssue(location, message, severity))


def compute_stats(dataset: Dataset) -> DatasetStats:
    """Count distinct students/questions/KCs and the mean KC-set size.

    The mean is taken over distinct questions that carry at least one KC and
    is reported absent when no question does. Counting works over whatever is
    present, so order of sequences never matters.
    """
    n_inter = 0
    questions: set[str] = set()
    kcs: set[str] = set()
    for seq in dataset.sequences:
        n_inter += len(seq.interactions)
        for inter in seq.interactions:
            questions.add(inter.question_id)
            kcs.update(inter.kc_ids)
    sizes = [
        len(dataset.question_kc_map.get(q, ()))
        for q in questions
        if dataset.question_kc_map.get(q)
    ]
    avg = sum(sizes) / len(sizes) if sizes else None
    return DatasetStats(
        interactions=n_inter,
        sequences=len(dataset.sequences),
        questions=len(questions),
        kcs=len(kcs),
        avg_kcs_per_question=avg,
    )


def validate(dataset: Dataset) -> ValidationReport:
    """Check every dataset invariant and report each violation with its location.

    Exact duplicate rows (same student, question, timestamp, response) are kept
    in the data but flagged as warnings.
    """
    report = ValidationReport()
    for seq in dataset.sequences:
        prev_ts: Optional[int] = None
        seen_rows: set[tuple] = set()
        for pos, inter in enumerate(seq.interactions):
            loc = f"student={seq.student_id} pos={pos}"
            if not inter.question_id:
                report.add(loc, "missing question_id")
            if inter.response not in (0, 1):
                report.add(loc, f"response must be 0 or 1, got {inter.response!r}")
            if inter.timestamp is None:
                report.add(loc, "missing timestamp")
            if len(set(inter.kc_ids)) != len(inter.kc_ids):
                report.add(loc, f"duplicate kc ids in {inter.kc_ids}")
            if inter.question_id not in dataset.question_vocab:
                report.add(loc, f"question {inter.question_id!r} not in vocabulary")
            mapped = set(dataset.question_kc_map.get(inter.question_id, ()))
            if not set(inter.kc_ids) <= mapped:
                report.add(
                    loc,
                    f"kc ids {inter.kc_ids} inconsistent with question map {tuple(sorted(mapped))}",
                )
            for k in inter.kc_ids:
                if k not in dataset.kc_vocab:
                    report.add(loc, f"kc {k!r} not in vocabulary")
            if inter.timestamp is not None and prev_ts is not None and inter.timestamp < prev_ts:
                report.add(loc, "timestamps not non-decreasing")
            if inter.timestamp is not None:
                prev_ts = inter.timestamp
            row_key = (inter.question_id, inter.timestamp, inter.response)
            if row_key in seen_rows:
                report.add(loc, "exact duplicate of an earlier row", severity="warning")
            seen_rows.add(row_key)
    return report

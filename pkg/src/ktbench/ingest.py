"""Parsing and serialization of the canonical interaction-log CSV.

Canonical schema (header mandatory, UTF-8):

    student_id,question_id,kc_ids,response,timestamp

``kc_ids`` is a "|"-joined list; an empty cell means no KC information.
``response`` is strictly "0" or "1"; ``timestamp`` an integer (milliseconds,
used as a monotone sort key only). Raw public datasets are converted to this
schema by thin external adapter scripts; only the canonical form is parsed
here.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

from .core import Dataset, Interaction, StudentSequence

CANONICAL_HEADER = ["student_id", "question_id", "kc_ids", "response", "timestamp"]
KC_DELIM = "|"

# Joins problem/step parts into one question id. U+001F never occurs in the
# raw logs' printable fields, and is escaped below if it somehow does.
_QID_SEP = "\x1f"
_ESC = "\\"


class ParseError(ValueError):
    """Malformed canonical file; message carries the 1-based line number."""


def _escape_part(part: str) -> str:
    return part.replace(_ESC, _ESC + _ESC).replace(_QID_SEP, _ESC + "s")


def _unescape_part(part: str) -> str:
    out = []
    i = 0
    while i < len(part):
        ch = part[i]
        if ch == _ESC:
            nxt = part[i + 1]
            out.append(_QID_SEP if nxt == "s" else nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def compose_question_id(problem_name: str, step_name: str) -> str:
    """Join a problem name and step name into one unique question id.

    The join is injective: distinct (problem, step) pairs always produce
    distinct ids, even when the parts contain the separator itself.
    """
    if not problem_name or not step_name:
        raise ValueError("problem_name and step_name must be non-empty")
    return _escape_part(problem_name) + _QID_SEP + _escape_part(step_name)


def split_question_id(question_id: str) -> tuple[str, str]:
    """Inverse of :func:`compose_question_id`."""
    depth = 0
    for i, ch in enumerate(question_id):
        if ch == _ESC and depth == 0:
            depth = 1
        elif depth == 1:
            depth = 0
        elif ch == _QID_SEP:
            return _unescape_part(question_id[:i]), _unescape_part(question_id[i + 1 :])
    raise ValueError(f"not a composed question id: {question_id!r}")


def parse_canonical(path: str | Path) -> Dataset:
    """Parse a canonical CSV into a Dataset.

    Rows are grouped by student and stably sorted by timestamp, so rows that
    share a timestamp keep their file order. The question->KC map is the union
    of KC sets seen per question; a question appearing with differing KC sets
    triggers a warning.
    """
    path = Path(path)
    by_student: dict[str, list[tuple[int, Interaction]]] = {}
    student_order: list[str] = []
    first_kc_set: dict[str, frozenset] = {}
    inconsistent: set[str] = set()

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row is mandatory")
        if header != CANONICAL_HEADER:
            raise ParseError(f"{path}: bad header {header!r}, expected {CANONICAL_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            student_id, question_id, kc_cell, resp_cell, ts_cell = row
            if not student_id:
                raise ParseError(f"{path}:{lineno}: empty student_id")
            if not question_id:
                raise ParseError(f"{path}:{lineno}: empty question_id")
            if resp_cell not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: response must be 0 or 1, got {resp_cell!r}")
            try:
                timestamp = int(ts_cell)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad timestamp {ts_cell!r}")
            kc_ids: tuple[str, ...] = ()
            if kc_cell:
                parts = kc_cell.split(KC_DELIM)
                if any(p == "" for p in parts):
                    raise ParseError(f"{path}:{lineno}: empty kc id in {kc_cell!r}")
                kc_ids = tuple(parts)
            kset = frozenset(kc_ids)
            if question_id in first_kc_set:
                if kset != first_kc_set[question_id] and question_id not in inconsistent:
                    inconsistent.add(question_id)
                    warnings.warn(
                        f"{path}: question {question_id!r} appears with differing KC sets; "
                        "taking the union"
                    )
            else:
                first_kc_set[question_id] = kset
            if student_id not in by_student:
                by_student[student_id] = []
                student_order.append(student_id)
            by_student[student_id].append(
                (lineno, Interaction(question_id, kc_ids, int(resp_cell), timestamp))
            )

    sequences = []
    for sid in student_order:
        rows = by_student[sid]
        rows.sort(key=lambda r: r[1].timestamp)  # stable: file order breaks ties
        sequences.append(StudentSequence(sid, tuple(inter for _, inter in rows)))
    return Dataset.build(sequences)


def write_canonical(dataset: Dataset, path: str | Path) -> None:
    """Serialize a Dataset back to the canonical CSV schema."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANONICAL_HEADER)
        for seq in dataset.sequences:
            for inter in seq.interactions:
                if inter.response is None or inter.timestamp is None:
                    raise ValueError(
                        f"cannot serialize incomplete interaction for student {seq.student_id}"
                    )
                writer.writerow(
                    [
                        seq.student_id,
                        inter.question_id,
                        KC_DELIM.join(inter.kc_ids),
                        str(inter.response),
                        str(inter.timestamp),
                    ]
                )

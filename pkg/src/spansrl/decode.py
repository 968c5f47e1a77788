"""Decoding a score matrix into a labeled span set.

Two decoders over the same per-label span scores. The per-label argmax simply
takes each label's best span and treats the null span (p, p) as "no argument".
The constrained greedy search flattens every (span, label) cell, drops cells
that can never be selected, then scans best-first under two hard rules:

- number rule: a core label is used at most once;
- overlap rule: selected spans never intersect.

Candidates scoring strictly below their label's null score are filtered out;
a candidate tying its null survives. Sort order is total and deterministic:
score descending, then label position in the matrix's label list, then (i, j).
"""

from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np

from .corpus import CORE_LABELS, LabeledSpan, spans_overlap

DEFAULT_CORE_LABELS = CORE_LABELS


class Candidate(NamedTuple):
    i: int
    j: int
    label: str
    score: float


def enumerate_spans(length: int) -> list[tuple[int, int]]:
    """All (i, j) with 1 <= i <= j <= length, lexicographic: T(T+1)/2 spans."""
    if length < 1:
        raise ValueError("sentence length must be at least 1")
    return [(i, j) for i in range(1, length + 1) for j in range(i, length + 1)]


def flatten(matrix) -> list[Candidate]:
    """Every (span, label) cell of a score matrix as one candidate list."""
    out = []
    values = matrix.values
    for r, label in enumerate(matrix.labels):
        row_scores = values[r]
        for s, (i, j) in enumerate(matrix.spans):
            out.append(Candidate(i, j, label, float(row_scores[s])))
    return out


def filter_candidates(cands: Iterable[Candidate], predicate: int) -> list[Candidate]:
    """Drop cells that can never be part of a prediction.

    Removes spans covering the predicate (the null span (p, p) included) and
    candidates scoring strictly below their own label's null-span score. The
    input must contain each label's (p, p) cell so that reference exists.
    """
    cands = list(cands)
    null_score: dict[str, float] = {}
    for c in cands:
        if c.i == predicate and c.j == predicate:
            null_score[c.label] = c.score
    kept = []
    for c in cands:
        if c.i <= predicate <= c.j:
            continue
        if c.label not in null_score:
            raise ValueError(f"candidate list lacks the null-span cell for {c.label!r}")
        if c.score < null_score[c.label]:
            continue
        kept.append(c)
    return kept


def greedy_select(matrix, predicate: int, core_labels=DEFAULT_CORE_LABELS) -> set[LabeledSpan]:
    """Span-consistent greedy search over a score matrix."""
    label_pos = {label: r for r, label in enumerate(matrix.labels)}
    cands = filter_candidates(flatten(matrix), predicate)
    cands.sort(key=lambda c: (-c.score, label_pos[c.label], c.i, c.j))
    selected: list[Candidate] = []
    used_core: set[str] = set()
    for c in cands:
        if c.label in used_core:
            continue
        if any(max(c.i, s.i) <= min(c.j, s.j) for s in selected):
            continue
        selected.append(c)
        if c.label in core_labels:
            used_core.add(c.label)
    return {LabeledSpan(c.i, c.j, c.label) for c in selected}


def argmax_decode(matrix, predicate: int) -> set[LabeledSpan]:
    """Per-label best span; labels whose best span is the null (p, p) emit nothing.

    Ties take the first span in canonical order. The result may violate the
    greedy decoder's structural rules by design.
    """
    out = set()
    values = matrix.values
    for r, label in enumerate(matrix.labels):
        s = int(np.argmax(values[r]))
        i, j = matrix.spans[s]
        if i == predicate and j == predicate:
            continue
        out.add(LabeledSpan(i, j, label))
    return out

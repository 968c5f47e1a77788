"""Span representations, per-label span scores, and the training loss.

A span (i, j) over encoder outputs h is represented as the 2*d vector
[h_i + h_j ; h_i - h_j]; one trainable row per label turns that into a score,
giving a |labels| x |spans| matrix over all T(T+1)/2 spans. Each label's row is
normalized with a softmax over every span, and a sample's loss is the summed
negative log-probability of its target cells: the gold spans of each label, or
the null span (p, p) for labels with no gold span.

Pure-array versions of the scoring pipeline exist alongside the graph builders;
tests use them to cross-check values the differentiable path produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .decode import enumerate_spans


@dataclass
class ScoreMatrix:
    """Scores for every (label, span) cell of one predicate instance."""

    labels: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]
    values: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.spans = tuple(self.spans)
        if self.values.shape != (len(self.labels), len(self.spans)):
            raise ValueError(
                f"score matrix shape {self.values.shape} does not match "
                f"{len(self.labels)} labels x {len(self.spans)} spans"
            )
        self._span_index = {s: k for k, s in enumerate(self.spans)}
        self._label_index = {lab: r for r, lab in enumerate(self.labels)}

    def score(self, i: int, j: int, label: str) -> float:
        return float(self.values[self._label_index[label], self._span_index[(i, j)]])

    def span_column(self, i: int, j: int) -> int:
        return self._span_index[(i, j)]

    def label_row(self, label: str) -> int:
        return self._label_index[label]


class LabelMatrix:
    """One trainable scoring row per label, width 2*d_hidden."""

    def __init__(self, labels, d_hidden: int, rng) -> None:
        self.labels = tuple(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels")
        if not self.labels:
            raise ValueError("empty label inventory")
        self.d_hidden = d_hidden
        self.weight = nc.Parameter("label_rows", nc.glorot_init(len(self.labels), 2 * d_hidden, rng))


def span_representation(h: np.ndarray, i: int, j: int) -> np.ndarray:
    """[h_i + h_j ; h_i - h_j] for one 1-based inclusive span."""
    T = h.shape[0]
    if not (1 <= i <= j <= T):
        raise ValueError(f"span ({i}, {j}) outside sentence of length {T}")
    hi, hj = h[i - 1], h[j - 1]
    return np.concatenate([hi + hj, hi - hj])


def span_feature_matrix(h: np.ndarray, spans) -> np.ndarray:
    """All span representations stacked, |spans| x 2d."""
    idx_i = np.asarray([s[0] - 1 for s in spans], dtype=np.intp)
    idx_j = np.asarray([s[1] - 1 for s in spans], dtype=np.intp)
    a, b = h[idx_i], h[idx_j]
    return np.concatenate([a + b, a - b], axis=1)


def score_matrix(h: np.ndarray, label_matrix: LabelMatrix) -> ScoreMatrix:
    """Pure-array scoring of every span under every label."""
    spans = enumerate_spans(h.shape[0])
    feats = span_feature_matrix(h, spans)
    values = label_matrix.weight.data @ feats.T
    return ScoreMatrix(label_matrix.labels, tuple(spans), values)


def span_log_softmax(matrix: ScoreMatrix, label: str) -> np.ndarray:
    """Log-probabilities over all spans for one label; exps sum to one."""
    row_scores = matrix.values[matrix.label_row(label)]
    m = np.max(row_scores)
    return row_scores - (m + np.log(np.sum(np.exp(row_scores - m))))


def build_targets(labels, gold, predicate: int) -> list[tuple[str, tuple[int, int]]]:
    """The loss's target cells: gold spans per label, null (p, p) otherwise."""
    by_label: dict[str, list] = {lab: [] for lab in labels}
    if gold:
        for s in sorted(gold):
            if s.label not in by_label:
                raise ValueError(f"gold label {s.label!r} not in the model inventory")
            by_label[s.label].append((s.i, s.j))
    out = []
    for lab in labels:
        if by_label[lab]:
            out.extend((lab, span) for span in by_label[lab])
        else:
            out.append((lab, (predicate, predicate)))
    return out


def sample_loss(matrix: ScoreMatrix, gold, predicate: int) -> float:
    """Summed negative log-probability of the target cells (pure-array path)."""
    total = 0.0
    for label, (i, j) in build_targets(matrix.labels, gold, predicate):
        total -= float(span_log_softmax(matrix, label)[matrix.span_column(i, j)])
    return total


# ---------------------------------------------------------------------------
# Graph builders


def span_feature_node(graph: nc.Graph, h_node: nc.Node, spans) -> nc.Node:
    """Differentiable |spans| x 2d span-representation matrix."""
    idx_i = np.asarray([s[0] - 1 for s in spans], dtype=np.intp)
    idx_j = np.asarray([s[1] - 1 for s in spans], dtype=np.intp)
    a = nc.rows(h_node, idx_i)
    b = nc.rows(h_node, idx_j)
    return nc.concat([a + b, a - b], axis=1)


def score_node(graph: nc.Graph, h_node: nc.Node, label_matrix: LabelMatrix, spans) -> nc.Node:
    """Differentiable |labels| x |spans| score matrix."""
    feats = span_feature_node(graph, h_node, spans)
    return nc.matmul(graph.param(label_matrix.weight), nc.transpose(feats))


def loss_node(
    graph: nc.Graph,
    scores: nc.Node,
    spans,
    labels,
    gold,
    predicate: int,
) -> nc.Node:
    """Differentiable sample loss over a score-matrix node.

    sum over targets of (logsumexp of the label row - target score); each label
    row's logsumexp enters once per target in that row.
    """
    span_col = {s: k for k, s in enumerate(spans)}
    label_row_ = {lab: r for r, lab in enumerate(labels)}
    targets = build_targets(labels, gold, predicate)
    counts = np.zeros(len(labels))
    rows_idx, cols_idx = [], []
    for lab, span in targets:
        if span not in span_col:
            raise ValueError(f"target span {span} not enumerable for this sentence")
        counts[label_row_[lab]] += 1.0
        rows_idx.append(label_row_[lab])
        cols_idx.append(span_col[span])
    lse = nc.logsumexp_rows(scores)
    picked = nc.gather(scores, np.asarray(rows_idx), np.asarray(cols_idx))
    return nc.subtract(nc.dot_const(lse, counts), nc.sum_all(picked))

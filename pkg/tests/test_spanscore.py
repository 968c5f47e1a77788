"""Span representations, per-label scores, softmax normalization, and the loss."""

import math

import numpy as np
import pytest

from helpers import finite_diff_grad, max_rel_err
from spansrl import numcore as nc
from spansrl.corpus import LabeledSpan
from spansrl.decode import enumerate_spans
from spansrl.spanscore import (
    LabelMatrix,
    ScoreMatrix,
    build_targets,
    loss_node,
    sample_loss,
    score_matrix,
    score_node,
    span_feature_matrix,
    span_feature_node,
    span_log_softmax,
    span_representation,
)


class TestSpanRepresentation:
    def test_hand_value(self):
        h = np.array([[1.0, 2.0], [10.0, 20.0], [100.0, 200.0]])
        np.testing.assert_array_equal(
            span_representation(h, 1, 3), [101.0, 202.0, -99.0, -198.0]
        )

    def test_single_token_span_has_zero_difference_half(self):
        rng = nc.make_rng(3)
        h = rng.normal(size=(4, 5))
        rep = span_representation(h, 2, 2)
        np.testing.assert_allclose(rep[:5], 2.0 * h[1])
        np.testing.assert_array_equal(rep[5:], np.zeros(5))

    def test_out_of_range(self):
        h = np.zeros((3, 2))
        for i, j in [(0, 1), (2, 1), (1, 4), (4, 4)]:
            with pytest.raises(ValueError):
                span_representation(h, i, j)

    def test_matrix_version_matches_single(self):
        rng = nc.make_rng(8)
        h = rng.normal(size=(5, 3))
        spans = enumerate_spans(5)
        feats = span_feature_matrix(h, spans)
        assert feats.shape == (15, 6)
        for k, (i, j) in enumerate(spans):
            np.testing.assert_array_equal(feats[k], span_representation(h, i, j))


class TestScoreMatrix:
    def make(self):
        rng = nc.make_rng(5)
        h = rng.normal(size=(4, 3))
        lm = LabelMatrix(("A0", "A1"), 3, rng)
        return score_matrix(h, lm), h, lm

    def test_shape_and_lookup(self):
        m, h, lm = self.make()
        assert m.values.shape == (2, 10)
        assert m.labels == ("A0", "A1")
        k = m.span_column(2, 4)
        assert m.spans[k] == (2, 4)
        assert m.score(2, 4, "A1") == float(m.values[1, k])

    def test_values_are_row_dot_products(self):
        m, h, lm = self.make()
        for r, lab in enumerate(m.labels):
            for k, (i, j) in enumerate(m.spans):
                want = float(lm.weight.data[r] @ span_representation(h, i, j))
                assert math.isclose(m.values[r, k], want, rel_tol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            ScoreMatrix(("A0",), ((1, 1), (1, 2)), np.zeros((2, 2)))

    def test_label_matrix_validation(self):
        rng = nc.make_rng(1)
        with pytest.raises(ValueError, match="duplicate"):
            LabelMatrix(("A0", "A0"), 3, rng)
        with pytest.raises(ValueError, match="empty"):
            LabelMatrix((), 3, rng)


class TestNormalization:
    def test_softmax_rows_sum_to_one(self):
        rng = nc.make_rng(42)
        for _ in range(100):
            T = int(rng.integers(1, 21))
            d = int(rng.integers(1, 6))
            n_labels = int(rng.integers(1, 5))
            h = rng.normal(size=(T, d)) * 3.0
            lm = LabelMatrix([f"L{k}" for k in range(n_labels)], d, rng)
            m = score_matrix(h, lm)
            for lab in m.labels:
                total = np.sum(np.exp(span_log_softmax(m, lab)))
                assert abs(total - 1.0) <= 1e-9

    def test_shift_invariance(self):
        spans = tuple(enumerate_spans(3))
        base = np.arange(6, dtype=np.float64)[None, :]
        a = ScoreMatrix(("X",), spans, base)
        b = ScoreMatrix(("X",), spans, base + 1000.0)
        np.testing.assert_allclose(span_log_softmax(a, "X"), span_log_softmax(b, "X"), atol=1e-12)

    def test_extreme_scores_stay_finite(self):
        spans = tuple(enumerate_spans(2))
        m = ScoreMatrix(("X",), spans, np.array([[1e4, -1e4, 0.0]]))
        out = span_log_softmax(m, "X")
        assert np.all(np.isfinite(out))
        assert abs(out[0]) < 1e-9


class TestBuildTargets:
    def test_gold_and_null_mix(self):
        labels = ("A0", "A1", "TMP")
        gold = {LabeledSpan(1, 1, "A0"), LabeledSpan(4, 4, "TMP"), LabeledSpan(6, 6, "TMP")}
        targets = build_targets(labels, gold, predicate=2)
        assert targets == [
            ("A0", (1, 1)),
            ("A1", (2, 2)),
            ("TMP", (4, 4)),
            ("TMP", (6, 6)),
        ]

    def test_no_gold_all_null(self):
        assert build_targets(("A0", "A1"), frozenset(), 3) == [
            ("A0", (3, 3)),
            ("A1", (3, 3)),
        ]

    def test_unknown_gold_label(self):
        with pytest.raises(ValueError, match="not in the model inventory"):
            build_targets(("A0",), {LabeledSpan(1, 1, "A9")}, 2)


class TestSampleLoss:
    def test_uniform_scores_single_target_is_log_span_count(self):
        # T=4 has 10 spans; with all scores equal each label contributes ln 10.
        spans = tuple(enumerate_spans(4))
        m = ScoreMatrix(("A0",), spans, np.zeros((1, 10)))
        loss = sample_loss(m, {LabeledSpan(3, 4, "A0")}, predicate=2)
        assert math.isclose(loss, math.log(10.0), rel_tol=1e-12)

    def test_uniform_scores_two_null_labels(self):
        spans = tuple(enumerate_spans(4))
        m = ScoreMatrix(("A0", "A1"), spans, np.zeros((2, 10)))
        loss = sample_loss(m, frozenset(), predicate=2)
        assert math.isclose(loss, 2.0 * math.log(10.0), rel_tol=1e-12)

    def test_multiple_gold_spans_for_adjunct_label_sum(self):
        spans = tuple(enumerate_spans(4))
        m = ScoreMatrix(("TMP",), spans, np.zeros((1, 10)))
        gold = {LabeledSpan(1, 1, "TMP"), LabeledSpan(3, 3, "TMP")}
        loss = sample_loss(m, gold, predicate=2)
        assert math.isclose(loss, 2.0 * math.log(10.0), rel_tol=1e-12)

    def test_confident_correct_model_has_small_loss(self):
        spans = tuple(enumerate_spans(3))
        values = np.full((1, 6), -30.0)
        m = ScoreMatrix(("A0",), spans, values)
        col = m.span_column(1, 1)
        m.values[0, col] = 30.0
        loss = sample_loss(m, {LabeledSpan(1, 1, "A0")}, predicate=2)
        assert 0.0 <= loss < 1e-9

    def test_loss_decreases_when_target_score_rises(self):
        spans = tuple(enumerate_spans(3))
        lo = ScoreMatrix(("A0",), spans, np.zeros((1, 6)))
        hi = ScoreMatrix(("A0",), spans, np.zeros((1, 6)))
        hi.values[0, hi.span_column(1, 1)] = 2.0
        gold = {LabeledSpan(1, 1, "A0")}
        assert sample_loss(hi, gold, 2) < sample_loss(lo, gold, 2)


def build_graph_loss(h_param, w_param, labels, gold, predicate, length):
    graph = nc.Graph()
    spans = tuple(enumerate_spans(length))
    h_node = graph.param(h_param)
    feats = span_feature_node(graph, h_node, spans)
    scores = nc.matmul(graph.param(w_param), nc.transpose(feats))
    loss = loss_node(graph, scores, spans, labels, gold, predicate)
    return graph, loss


class TestGraphLoss:
    LABELS = ("A0", "A1", "TMP")
    GOLD = frozenset({LabeledSpan(1, 1, "A0"), LabeledSpan(4, 5, "TMP")})

    def test_graph_loss_equals_pure_loss(self):
        rng = nc.make_rng(12)
        for _ in range(10):
            T, d = 5, 3
            h = nc.Parameter("h", rng.normal(size=(T, d)))
            w = nc.Parameter("w", rng.normal(size=(len(self.LABELS), 2 * d)))
            _, loss = build_graph_loss(h, w, self.LABELS, self.GOLD, 2, T)
            m = ScoreMatrix(self.LABELS, tuple(enumerate_spans(T)), w.data @ span_feature_matrix(h.data, enumerate_spans(T)).T)
            assert math.isclose(float(loss.data), sample_loss(m, self.GOLD, 2), rel_tol=1e-12)

    def test_loss_gradients_match_finite_differences(self):
        rng = nc.make_rng(77)
        T, d = 5, 3
        h0 = rng.normal(size=(T, d))
        w0 = rng.normal(size=(len(self.LABELS), 2 * d))
        h = nc.Parameter("h", h0.copy())
        w = nc.Parameter("w", w0.copy())
        graph, loss = build_graph_loss(h, w, self.LABELS, self.GOLD, 2, T)
        grads = graph.backward(loss)

        def f_h(x):
            hp = nc.Parameter("h", x)
            wp = nc.Parameter("w", w0.copy())
            return float(build_graph_loss(hp, wp, self.LABELS, self.GOLD, 2, T)[1].data)

        def f_w(x):
            hp = nc.Parameter("h", h0.copy())
            wp = nc.Parameter("w", x)
            return float(build_graph_loss(hp, wp, self.LABELS, self.GOLD, 2, T)[1].data)

        assert max_rel_err(grads[h], finite_diff_grad(f_h, h0)) < 1e-6
        assert max_rel_err(grads[w], finite_diff_grad(f_w, w0)) < 1e-6

    def test_score_gradient_is_softmax_minus_indicator(self):
        # d loss / d score[r, c] = (targets in row r) * P(c | r) - [cell is a target]
        rng = nc.make_rng(31)
        T = 4
        spans = tuple(enumerate_spans(T))
        raw = rng.normal(size=(len(self.LABELS), len(spans)))
        scores_param = nc.Parameter("scores", raw.copy())
        graph = nc.Graph()
        scores = graph.param(scores_param)
        gold = frozenset({LabeledSpan(1, 1, "A0"), LabeledSpan(3, 3, "TMP"), LabeledSpan(4, 4, "TMP")})
        loss = loss_node(graph, scores, spans, self.LABELS, gold, 2)
        grad = graph.backward(loss)[scores_param]

        m = ScoreMatrix(self.LABELS, spans, raw)
        want = np.zeros_like(raw)
        targets = build_targets(self.LABELS, gold, 2)
        counts = {lab: sum(1 for L, _ in targets if L == lab) for lab in self.LABELS}
        for r, lab in enumerate(self.LABELS):
            want[r] = counts[lab] * np.exp(span_log_softmax(m, lab))
        for lab, (i, j) in targets:
            want[m.label_row(lab), m.span_column(i, j)] -= 1.0
        np.testing.assert_allclose(grad, want, atol=1e-12)

    def test_score_node_matches_pure_matrix(self):
        rng = nc.make_rng(4)
        T, d = 4, 3
        h = nc.Parameter("h", rng.normal(size=(T, d)))
        lm = LabelMatrix(("A0", "A1"), d, rng)
        graph = nc.Graph()
        node = score_node(graph, graph.param(h), lm, enumerate_spans(T))
        pure = score_matrix(h.data, lm)
        np.testing.assert_allclose(node.data, pure.values, atol=1e-13)

    def test_target_outside_sentence_rejected(self):
        graph = nc.Graph()
        spans = tuple(enumerate_spans(3))
        scores = graph.constant(np.zeros((1, len(spans))))
        with pytest.raises(ValueError, match="not enumerable"):
            loss_node(graph, scores, spans, ("A0",), {LabeledSpan(1, 4, "A0")}, 2)

"""Evaluation: micro-averaged span metrics over aligned prediction/gold corpora.

Inputs are two dicts mapping the same instance keys to labeled-span sets.
Labeled P/R/F1 counts exact (i, j, label) matches. The boundary measure ignores
labels and matches (i, j) pairs one-to-one per instance, so duplicate predicted
boundaries earn a single match. Label accuracy and the confusion matrix look
only at boundary-matched pairs; when one boundary carries several predicted
labels, label-correct pairings are preferred so the accuracy equals the
confusion diagonal's share. Empty denominators follow fixed conventions:
precision/recall are 0.0 over empty sets, F1 is 0.0 when P + R = 0, and label
accuracy over zero boundary matches is None rather than a number.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PrfResult:
    precision: float
    recall: float
    f1: float
    matched: int
    predicted: int
    gold: int

    @classmethod
    def from_counts(cls, matched: int, predicted: int, gold: int) -> "PrfResult":
        p = matched / predicted if predicted else 0.0
        r = matched / gold if gold else 0.0
        f1 = 2.0 * p * r / (p + r) if p + r > 0.0 else 0.0
        return cls(p, r, f1, matched, predicted, gold)


def _check_aligned(pred: dict, gold: dict) -> None:
    if set(pred) != set(gold):
        missing = sorted(set(gold) - set(pred))[:5]
        extra = sorted(set(pred) - set(gold))[:5]
        raise DataError(
            f"prediction/gold instances differ (gold-only {missing}, prediction-only {extra})"
        )


def labeled_prf(pred: dict, gold: dict) -> PrfResult:
    """Exact (i, j, label) matching, micro-averaged over all instances."""
    _check_aligned(pred, gold)
    matched = predicted = gold_n = 0
    for key in gold:
        p, g = set(pred[key]), set(gold[key])
        matched += len(p & g)
        predicted += len(p)
        gold_n += len(g)
    return PrfResult.from_counts(matched, predicted, gold_n)


def _boundaries(spans) -> Counter:
    return Counter((s.i, s.j) for s in spans)


def boundary_prf(pred: dict, gold: dict) -> PrfResult:
    """Label-blind (i, j) matching; one-to-one within each instance."""
    _check_aligned(pred, gold)
    matched = predicted = gold_n = 0
    for key in gold:
        pb, gb = _boundaries(pred[key]), _boundaries(gold[key])
        matched += sum((pb & gb).values())
        predicted += sum(pb.values())
        gold_n += sum(gb.values())
    return PrfResult.from_counts(matched, predicted, gold_n)


def _boundary_pairs(pred_spans, gold_spans) -> list[tuple[str, str]]:
    """(gold label, predicted label) for each boundary-matched pair."""
    pred_by_b: dict[tuple[int, int], list[str]] = {}
    for s in sorted(pred_spans):
        pred_by_b.setdefault((s.i, s.j), []).append(s.label)
    pairs: list[tuple[str, str]] = []
    gold_by_b: dict[tuple[int, int], list[str]] = {}
    for s in sorted(gold_spans):
        gold_by_b.setdefault((s.i, s.j), []).append(s.label)
    for b, gold_labels in gold_by_b.items():
        pred_labels = list(pred_by_b.get(b, ()))
        remaining = []
        for gl in gold_labels:
            if gl in pred_labels:
                pairs.append((gl, gl))
                pred_labels.remove(gl)
            else:
                remaining.append(gl)
        for gl, pl in zip(remaining, pred_labels):
            pairs.append((gl, pl))
    return pairs


def _all_pairs(pred: dict, gold: dict) -> list[tuple[str, str]]:
    _check_aligned(pred, gold)
    pairs = []
    for key in sorted(gold):
        pairs.extend(_boundary_pairs(pred[key], gold[key]))
    return pairs


def label_accuracy(pred: dict, gold: dict) -> float | None:
    """Share of boundary-matched pairs with the right label; None when no pairs."""
    pairs = _all_pairs(pred, gold)
    if not pairs:
        return None
    return sum(1 for g, p in pairs if g == p) / len(pairs)


@dataclass
class ConfusionMatrix:
    """Gold rows, predicted columns, over boundary-matched pairs."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def count(self, gold_label: str, pred_label: str) -> int:
        return int(self.counts[self.labels.index(gold_label), self.labels.index(pred_label)])

    def row_percentages(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, 100.0 * self.counts / np.maximum(sums, 1), 0.0)
        return out

    def off_diagonal(self) -> list[tuple[str, str, int]]:
        out = []
        for r, gl in enumerate(self.labels):
            for c, pl in enumerate(self.labels):
                if r != c and self.counts[r, c]:
                    out.append((gl, pl, int(self.counts[r, c])))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("gold\\pred," + ",".join(self.labels) + "\n")
            for r, lab in enumerate(self.labels):
                f.write(lab + "," + ",".join(str(int(v)) for v in self.counts[r]) + "\n")


def confusion_matrix(pred: dict, gold: dict) -> ConfusionMatrix:
    pairs = _all_pairs(pred, gold)
    labels = tuple(sorted({lab for pair in pairs for lab in pair}))
    idx = {lab: k for k, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in pairs:
        counts[idx[g], idx[p]] += 1
    return ConfusionMatrix(labels, counts)


def labelwise_f1(pred: dict, gold: dict) -> dict[str, PrfResult]:
    """Per-label exact-match P/R/F1; labels absent everywhere simply do not appear."""
    _check_aligned(pred, gold)
    matched: Counter = Counter()
    predicted: Counter = Counter()
    gold_n: Counter = Counter()
    for key in gold:
        p, g = set(pred[key]), set(gold[key])
        for s in p & g:
            matched[s.label] += 1
        for s in p:
            predicted[s.label] += 1
        for s in g:
            gold_n[s.label] += 1
    labels = sorted(set(predicted) | set(gold_n))
    return {
        lab: PrfResult.from_counts(matched[lab], predicted[lab], gold_n[lab])
        for lab in labels
    }


def full_report(pred: dict, gold: dict) -> dict:
    """Everything above as one JSON-serializable report."""
    confusion = confusion_matrix(pred, gold)
    return {
        "instances": len(gold),
        "labeled": asdict(labeled_prf(pred, gold)),
        "boundary": asdict(boundary_prf(pred, gold)),
        "label_accuracy": label_accuracy(pred, gold),
        "labelwise": {lab: asdict(res) for lab, res in labelwise_f1(pred, gold).items()},
        "confusion": {
            "labels": list(confusion.labels),
            "counts": confusion.counts.tolist(),
        },
    }


def _prf_line(name: str, d: dict) -> str:
    flag = "  [no gold support]" if d["gold"] == 0 else ""
    return (
        f"{name:<10} P {d['precision']:.4f}  R {d['recall']:.4f}  F1 {d['f1']:.4f}"
        f"  (matched {d['matched']} / predicted {d['predicted']} / gold {d['gold']}){flag}"
    )


def format_report_text(report: dict) -> str:
    lines = [
        f"instances  {report['instances']}",
        _prf_line("labeled", report["labeled"]),
        _prf_line("boundary", report["boundary"]),
    ]
    acc = report["label_accuracy"]
    lines.append(
        "label acc  undefined (no boundary matches)"
        if acc is None
        else f"label acc  {acc:.4f}"
    )
    if report["labelwise"]:
        lines.append("per label:")
        for lab in sorted(report["labelwise"]):
            lines.append("  " + _prf_line(lab, report["labelwise"][lab]))
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_dir) -> None:
    """report.json, report.txt, and confusion.csv under one directory."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as f:
        f.write(format_report_text(report))
    cm = report["confusion"]
    matrix = ConfusionMatrix(tuple(cm["labels"]), np.asarray(cm["counts"], dtype=np.int64))
    if matrix.labels:
        matrix.to_csv(os.path.join(out_dir, "confusion.csv"))
    else:
        with open(os.path.join(out_dir, "confusion.csv"), "w", encoding="utf-8") as f:
            f.write("gold\\pred\n")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)

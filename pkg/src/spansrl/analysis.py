"""Qualitative model inspection.

Two views of a trained model:

* Nearest neighbors: every span the model predicts on a query corpus is
  embedded with the same span representation the scorer uses, then matched by
  cosine similarity against the representations of gold spans from a reference
  corpus. Neighbors that share the predicted label suggest the representation
  space clusters by role.
* Label embeddings: the rows of the label scoring matrix, exported as CSV so
  they can be projected or clustered externally.
"""

from __future__ import annotations

import csv
import json
import os
from typing import NamedTuple

import numpy as np

from .corpus import LabeledSpan
from .errors import DataError
from .model import word_matrix_for
from .spanscore import span_representation


class ReferenceEntry(NamedTuple):
    sentence_id: str
    span: LabeledSpan
    text: str


def span_text(tokens, i: int, j: int) -> str:
    return " ".join(tokens[i - 1 : j])


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


def cosine_nearest(queries: np.ndarray, references: np.ndarray, k: int):
    """Top-k reference rows per query row by cosine similarity.

    Returns (indices, similarities), each queries x k, ordered by descending
    similarity with ties broken by reference index. k is clipped to the pool
    size; callers that care should compare k to references.shape[0].
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    k = min(k, references.shape[0])
    sims = normalize_rows(queries) @ normalize_rows(references).T
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    picked = np.take_along_axis(sims, order, axis=1)
    return order, picked


def build_reference_index(model, instances, source):
    """Embed every gold span of the reference corpus with the model."""
    entries: list[ReferenceEntry] = []
    vectors: list[np.ndarray] = []
    for inst in instances:
        if inst.gold is None:
            raise DataError(f"reference instance {inst.key} has no gold spans")
        if not inst.gold:
            continue
        fwd = model.forward(inst, word_matrix_for(source, inst))
        h = fwd.hidden.data
        for span in sorted(inst.gold):
            entries.append(ReferenceEntry(inst.sentence_id, span, span_text(inst.tokens, span.i, span.j)))
            vectors.append(span_representation(h, span.i, span.j))
    if not entries:
        raise DataError("reference corpus contains no gold spans")
    return entries, np.stack(vectors)


def analyze_model(model, query_instances, ref_instances, source, k: int = 10) -> dict:
    """Nearest-neighbor report for every span predicted on the query corpus."""
    entries, ref_matrix = build_reference_index(model, ref_instances, source)
    records = []
    query_vectors: list[np.ndarray] = []
    slots: list[tuple[dict, LabeledSpan, list]] = []
    for inst in query_instances:
        word_matrix = word_matrix_for(source, inst)
        fwd = model.forward(inst, word_matrix)
        h = fwd.hidden.data
        predicted = model.predict(inst, word_matrix)
        spans_out = []
        for span in sorted(predicted):
            neighbors: list = []
            spans_out.append(
                {
                    "span": [span.i, span.j],
                    "label": span.label,
                    "text": span_text(inst.tokens, span.i, span.j),
                    "neighbors": neighbors,
                }
            )
            query_vectors.append(span_representation(h, span.i, span.j))
            slots.append((spans_out[-1], span, neighbors))
        records.append(
            {
                "sentence_id": inst.sentence_id,
                "predicate": inst.predicate,
                "tokens": list(inst.tokens),
                "spans": spans_out,
            }
        )
    if query_vectors:
        order, sims = cosine_nearest(np.stack(query_vectors), ref_matrix, k)
        for (record, span, neighbors), idx_row, sim_row in zip(slots, order, sims):
            for idx, sim in zip(idx_row, sim_row):
                ref = entries[idx]
                neighbors.append(
                    {
                        "sentence_id": ref.sentence_id,
                        "span": [ref.span.i, ref.span.j],
                        "label": ref.span.label,
                        "text": ref.text,
                        "similarity": float(sim),
                        "label_match": ref.span.label == span.label,
                    }
                )
    matches = [n["label_match"] for r in records for s in r["spans"] for n in s["neighbors"]]
    return {
        "k": min(k, ref_matrix.shape[0]),
        "reference_spans": len(entries),
        "queries": sum(len(r["spans"]) for r in records),
        "neighbor_label_match_rate": (sum(matches) / len(matches)) if matches else None,
        "records": records,
    }


def label_embedding_rows(model) -> list[list]:
    """One CSV row per label: name followed by its scoring-row components."""
    rows = []
    for label, vector in zip(model.labels, model.label_matrix.weight.data):
        rows.append([label] + [float(v) for v in vector])
    return rows


def write_analysis(report: dict, model, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "analysis.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    rows = label_embedding_rows(model)
    width = len(rows[0]) - 1 if rows else 0
    with open(os.path.join(out_dir, "label_embeddings.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label"] + [f"dim_{d}" for d in range(width)])
        writer.writerows(rows)

"""Input features: frozen word vectors, a trainable predicate mark, assembly.

Word vectors come from one of two sources and are never updated by training:
a text embedding table (one token and its floats per line) or precomputed
per-sentence contextual vectors keyed by sentence id. The only trainable piece
here is the two-row mark embedding; row 1 marks the predicate token, row 0
everything else. The first encoder input is per token the concatenation
[word vector ; mark vector].
"""

from __future__ import annotations

import json

import numpy as np

from . import numcore as nc
from .errors import DataError


class EmbeddingTable:
    """Frozen token -> vector table with exact / lowercase / UNK lookup."""

    def __init__(self, index: dict[str, int], matrix: np.ndarray) -> None:
        self.index = index
        self.matrix = matrix  # V+1 rows, last row is the all-zero UNK
        self.unk_index = matrix.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup_index(self, token: str) -> int:
        idx = self.index.get(token)
        if idx is None:
            idx = self.index.get(token.lower(), self.unk_index)
        return idx

    def vectors(self, tokens) -> np.ndarray:
        return self.matrix[[self.lookup_index(t) for t in tokens]]


def load_pretrained(path) -> EmbeddingTable:
    """Read a text embedding file: `token v1 v2 ... vd` per line."""
    index: dict[str, int] = {}
    rows_: list[np.ndarray] = []
    dim = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if not values:
                raise DataError(f"{path}:{lineno}: no vector values for {token!r}")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataError(
                    f"{path}:{lineno}: dimension {len(values)} differs from {dim}"
                )
            if token in index:
                raise DataError(f"{path}:{lineno}: duplicate token {token!r}")
            try:
                row_vals = np.asarray([float(v) for v in values])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric vector value") from None
            index[token] = len(rows_)
            rows_.append(row_vals)
    if dim is None:
        raise DataError(f"{path}: empty embedding file")
    matrix = np.vstack(rows_ + [np.zeros(dim)])
    return EmbeddingTable(index, matrix)


class ContextualVectors:
    """Precomputed per-sentence token vectors, matched to sentences by id."""

    def __init__(self, by_id: dict[str, np.ndarray], dim: int) -> None:
        self.by_id = by_id
        self.dim = dim

    def vectors(self, sentence_id: str, length: int) -> np.ndarray:
        mat = self.by_id.get(sentence_id)
        if mat is None:
            raise DataError(f"no contextual vectors for sentence id {sentence_id!r}")
        if mat.shape[0] != length:
            raise DataError(
                f"contextual vectors for {sentence_id!r} have {mat.shape[0]} rows, "
                f"sentence has {length} tokens"
            )
        return mat


def load_contextual(path) -> ContextualVectors:
    """Read JSON-lines `{"id": ..., "vectors": [[...], ...]}` into memory."""
    by_id: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
                raise DataError(f"{where}: expected an object with a string 'id'")
            sid = obj["id"]
            if sid in by_id:
                raise DataError(f"{where}: duplicate sentence id {sid!r}")
            vecs = obj.get("vectors")
            if not isinstance(vecs, list) or not vecs:
                raise DataError(f"{where}: 'vectors' must be a nonempty list of rows")
            try:
                mat = np.asarray(vecs, dtype=np.float64)
            except (TypeError, ValueError):
                raise DataError(
                    f"{where}: vector rows must be numeric and share one dimension"
                ) from None
            if mat.ndim != 2:
                raise DataError(
                    f"{where}: vector rows must be numeric and share one dimension"
                )
            if dim is None:
                dim = mat.shape[1]
            elif mat.shape[1] != dim:
                raise DataError(f"{where}: dimension {mat.shape[1]} differs from {dim}")
            by_id[sid] = mat
    if dim is None:
        raise DataError(f"{path}: empty contextual vector file")
    return ContextualVectors(by_id, dim)


class MarkEmbedding:
    """Two trainable rows: row 0 for ordinary tokens, row 1 for the predicate."""

    def __init__(self, d_mark: int, rng) -> None:
        if d_mark <= 0:
            raise ValueError("mark dimension must be positive")
        self.d_mark = d_mark
        self.rows = nc.Parameter("mark_rows", nc.glorot_init(2, d_mark, rng))


def mark_indices(length: int, predicate: int) -> np.ndarray:
    if not (1 <= predicate <= length):
        raise ValueError(f"predicate {predicate} outside sentence of length {length}")
    idx = np.zeros(length, dtype=np.intp)
    idx[predicate - 1] = 1
    return idx


def assemble_inputs(
    graph: nc.Graph,
    word_matrix: np.ndarray,
    predicate: int,
    mark: MarkEmbedding,
    word_dropout: float = 0.0,
    rng=None,
) -> nc.Node:
    """Per-token [word ; mark] input matrix as a graph node, T x (d_word + d_mark).

    `word_dropout` is the train-time ratio for contextual vectors; 0.0 leaves the
    word half untouched and makes the assembly a pure function of its inputs.
    """
    length = word_matrix.shape[0]
    idx = mark_indices(length, predicate)
    words = graph.constant(word_matrix)
    if word_dropout > 0.0:
        words = nc.dropout(words, word_dropout, rng)
    marks = nc.rows(graph.param(mark.rows), idx)
    return nc.concat([words, marks], axis=1)

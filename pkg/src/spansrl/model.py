"""The assembled span scorer and its checkpoint format.

`SrlModel` wires mark embedding, encoder stack, and label rows into one forward
pass per (sentence, predicate) instance, producing the differentiable score
matrix the loss and both decoders consume. Checkpoints are .npz containers: a
JSON metadata entry plus one float64 array per parameter, so a save/load round
trip is bitwise exact and reproduces identical predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import features, numcore as nc, spanscore
from .corpus import CORE_LABELS, LabeledSpan, PredicateInstance
from .decode import argmax_decode, enumerate_spans, greedy_select
from .encoder import EncoderStack
from .errors import DataError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ForwardPass:
    """One instance's graph with handles into its interesting nodes."""

    graph: nc.Graph
    spans: tuple[tuple[int, int], ...]
    hidden: nc.Node
    span_features: nc.Node
    scores: nc.Node

    def matrix(self, labels) -> spanscore.ScoreMatrix:
        return spanscore.ScoreMatrix(labels, self.spans, self.scores.data)


class SrlModel:
    def __init__(
        self,
        labels,
        d_word: int,
        d_mark: int,
        d_hidden: int,
        layers: int,
        rng,
        embedding_kind: str = "static",
        core_labels=None,
    ) -> None:
        if embedding_kind not in ("static", "contextual"):
            raise ValueError(f"unknown embedding kind {embedding_kind!r}")
        self.labels = tuple(labels)
        self.core_labels = frozenset(
            core_labels if core_labels is not None else (CORE_LABELS & set(labels))
        )
        self.d_word = d_word
        self.d_mark = d_mark
        self.d_hidden = d_hidden
        self.layers = layers
        self.embedding_kind = embedding_kind
        self.mark = features.MarkEmbedding(d_mark, rng)
        self.encoder = EncoderStack(layers, d_word + d_mark, d_hidden, rng)
        self.label_matrix = spanscore.LabelMatrix(self.labels, d_hidden, rng)

    def parameters(self) -> list[nc.Parameter]:
        return [self.mark.rows] + self.encoder.parameters() + [self.label_matrix.weight]

    def param_dict(self) -> dict[str, nc.Parameter]:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ValueError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def forward(
        self,
        instance: PredicateInstance,
        word_matrix: np.ndarray,
        train: bool = False,
        rng=None,
        graph: nc.Graph | None = None,
        dropout_lstm: float = 0.0,
        dropout_word: float = 0.0,
    ) -> ForwardPass:
        if word_matrix.shape != (instance.length, self.d_word):
            raise ValueError(
                f"word matrix shape {word_matrix.shape} does not match "
                f"length {instance.length} x d_word {self.d_word}"
            )
        g = graph if graph is not None else nc.Graph()
        x = features.assemble_inputs(
            g,
            word_matrix,
            instance.predicate,
            self.mark,
            word_dropout=dropout_word if train else 0.0,
            rng=rng,
        )
        h = self.encoder.encode(
            g, x, train=train, dropout_ratio=dropout_lstm if train else 0.0, rng=rng
        )
        spans = tuple(enumerate_spans(instance.length))
        feats = spanscore.span_feature_node(g, h, spans)
        scores = nc.matmul(g.param(self.label_matrix.weight), nc.transpose(feats))
        return ForwardPass(g, spans, h, feats, scores)

    def score_matrix_for(self, instance, word_matrix) -> spanscore.ScoreMatrix:
        return self.forward(instance, word_matrix).matrix(self.labels)

    def predict(self, instance, word_matrix, mode: str = "greedy") -> set[LabeledSpan]:
        m = self.score_matrix_for(instance, word_matrix)
        if mode == "greedy":
            return greedy_select(m, instance.predicate, self.core_labels)
        if mode == "argmax":
            return argmax_decode(m, instance.predicate)
        raise ValueError(f"unknown decode mode {mode!r}")


def word_matrix_for(source, instance: PredicateInstance) -> np.ndarray:
    """Resolve an instance's word vectors from either source kind."""
    if isinstance(source, features.ContextualVectors):
        return source.vectors(instance.sentence_id, instance.length)
    return source.vectors(instance.tokens)


def source_kind(source) -> str:
    return "contextual" if isinstance(source, features.ContextualVectors) else "static"


def check_source_compatible(model: SrlModel, source) -> None:
    kind = source_kind(source)
    if kind != model.embedding_kind:
        raise DataError(
            f"checkpoint was trained with {model.embedding_kind} word vectors, "
            f"got {kind}"
        )
    if source.dim != model.d_word:
        raise DataError(
            f"word vectors have dimension {source.dim}, checkpoint expects {model.d_word}"
        )


def save_checkpoint(
    path,
    model: SrlModel,
    config: dict | None = None,
    best_dev_f1: float | None = None,
    best_epoch: int | None = None,
    param_data: dict[str, np.ndarray] | None = None,
) -> None:
    """Write metadata + parameter arrays; `param_data` overrides live values."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "model",
        "labels": list(model.labels),
        "core_labels": sorted(model.core_labels),
        "d_word": model.d_word,
        "d_mark": model.d_mark,
        "d_hidden": model.d_hidden,
        "layers": model.layers,
        "embedding_kind": model.embedding_kind,
        "best_dev_f1": best_dev_f1,
        "best_epoch": best_epoch,
        "config": config,
    }
    arrays = {}
    for name, p in model.param_dict().items():
        data = param_data[name] if param_data is not None else p.data
        if data.shape != p.data.shape:
            raise ValueError(f"snapshot for {name} has shape {data.shape}")
        arrays[name] = data
    with open(path, "wb") as f:
        np.savez(f, __meta__=json.dumps(meta), **arrays)


def _read_meta(archive, path, expected_kind: str) -> dict:
    if "__meta__" not in archive:
        raise DataError(f"{path}: not a checkpoint (missing metadata)")
    meta = json.loads(str(archive["__meta__"])) if archive["__meta__"].shape == () else None
    if not isinstance(meta, dict):
        raise DataError(f"{path}: malformed checkpoint metadata")
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint format {meta.get('format_version')!r}"
        )
    if meta.get("kind") != expected_kind:
        raise DataError(f"{path}: expected a {expected_kind} checkpoint, got {meta.get('kind')!r}")
    return meta


def load_checkpoint(path) -> tuple[SrlModel, dict]:
    """Rebuild a model from a checkpoint file; returns (model, metadata)."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: cannot read checkpoint ({e})") from None
    with archive:
        meta = _read_meta(archive, path, "model")
        model = SrlModel(
            labels=meta["labels"],
            d_word=meta["d_word"],
            d_mark=meta["d_mark"],
            d_hidden=meta["d_hidden"],
            layers=meta["layers"],
            rng=nc.make_rng(0),
            embedding_kind=meta["embedding_kind"],
            core_labels=meta["core_labels"],
        )
        params = model.param_dict()
        stored = set(archive.files) - {"__meta__"}
        if stored != set(params):
            missing = sorted(set(params) - stored)
            extra = sorted(stored - set(params))
            raise DataError(f"{path}: parameter mismatch (missing {missing}, extra {extra})")
        for name, p in params.items():
            data = archive[name]
            if data.shape != p.data.shape:
                raise DataError(
                    f"{path}: parameter {name} has shape {data.shape}, expected {p.data.shape}"
                )
            p.data = data.astype(np.float64, copy=True)
    return model, meta

"""Mixture-of-experts ensembling over frozen base models.

M trained base models each produce their span-representation matrix; the
ensemble mixes them with softmax gating weights, applies a square combination
matrix, and scores spans with its own label rows. Initialization makes the
ensemble start as the exact average-of-experts: identity combination, uniform
gating (zero logits), label rows set to the elementwise mean of the bases'.
With M = 1 and no training steps the whole pipeline reduces to the base model
bit for bit.

Only the three ensemble parameters ever train; base parameters are frozen and
enter the training graph as constants. Ensemble checkpoints store the base
checkpoint paths plus content hashes, so silent base modification is detected
at load time.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics, numcore as nc, spanscore
from .decode import argmax_decode, greedy_select
from .errors import DataError, NumericFailure
from .model import (
    CHECKPOINT_FORMAT_VERSION,
    SrlModel,
    _read_meta,
    load_checkpoint,
    word_matrix_for,
)
from .training import make_batches


@dataclass
class EnsembleParams:
    """The only trainable pieces: combination matrix, label rows, gate logits."""

    w_span: nc.Parameter
    w_label: nc.Parameter
    logits: nc.Parameter

    def all(self) -> list[nc.Parameter]:
        return [self.w_span, self.w_label, self.logits]


def combine_span_reps(reps, params: EnsembleParams) -> np.ndarray:
    """One span's mixed representation: W_s @ sum_m alpha_m rep_m."""
    alpha = _softmax(params.logits.data)
    mix = sum(a * r for a, r in zip(alpha, reps))
    return params.w_span.data @ mix


def ensemble_score(h_moe: np.ndarray, label_row: int, params: EnsembleParams) -> float:
    return float(params.w_label.data[label_row] @ h_moe)


def _softmax(v: np.ndarray) -> np.ndarray:
    z = np.exp(v - np.max(v))
    return z / z.sum()


def _check_bases(bases: list[SrlModel]) -> None:
    if not bases:
        raise DataError("ensemble needs at least one base model")
    first = bases[0]
    for b in bases[1:]:
        if (
            b.labels != first.labels
            or b.core_labels != first.core_labels
            or b.d_hidden != first.d_hidden
            or b.d_word != first.d_word
            or b.embedding_kind != first.embedding_kind
        ):
            raise DataError("base models are incompatible (labels or dimensions differ)")


class EnsembleModel:
    def __init__(self, bases: list[SrlModel], params: EnsembleParams) -> None:
        _check_bases(bases)
        first = bases[0]
        if params.logits.data.shape != (len(bases),):
            raise DataError("gating vector length does not match the number of bases")
        self.bases = bases
        self.params = params
        self.labels = first.labels
        self.core_labels = first.core_labels
        self.d_hidden = first.d_hidden

    @classmethod
    def initialize(cls, bases: list[SrlModel]) -> "EnsembleModel":
        """Average-of-experts start: identity W_s, zero logits, mean label rows."""
        _check_bases(bases)
        d2 = 2 * bases[0].d_hidden
        w_span = nc.Parameter("moe_w_span", np.eye(d2))
        w_label = nc.Parameter(
            "moe_w_label",
            np.mean([b.label_matrix.weight.data for b in bases], axis=0),
        )
        logits = nc.Parameter("moe_logits", np.zeros(len(bases)))
        return cls(bases, EnsembleParams(w_span, w_label, logits))

    def mixture_weights(self) -> np.ndarray:
        return _softmax(self.params.logits.data)

    def _base_features(self, instance, word_matrix):
        """Each base's |spans| x 2d span-feature matrix (no gradients kept)."""
        feats = []
        spans = None
        for b in self.bases:
            fwd = b.forward(instance, word_matrix)
            spans = fwd.spans
            feats.append(fwd.span_features.data)
        return spans, feats

    def _matrix_from_features(self, spans, feats) -> spanscore.ScoreMatrix:
        # Inference reuses the training-graph scoring ops so the two paths
        # agree bit for bit (a plain-numpy rewrite drifts in the last ulp
        # through different BLAS layouts).
        values = self._scores_node(nc.Graph(), feats).data
        return spanscore.ScoreMatrix(self.labels, spans, values)

    def score_matrix_for(self, instance, word_matrix) -> spanscore.ScoreMatrix:
        spans, feats = self._base_features(instance, word_matrix)
        return self._matrix_from_features(spans, feats)

    def predict(self, instance, word_matrix, mode: str = "greedy"):
        m = self.score_matrix_for(instance, word_matrix)
        if mode == "greedy":
            return greedy_select(m, instance.predicate, self.core_labels)
        if mode == "argmax":
            return argmax_decode(m, instance.predicate)
        raise ValueError(f"unknown decode mode {mode!r}")

    def _scores_node(self, graph: nc.Graph, feats) -> nc.Node:
        alpha = nc.softmax1d(graph.param(self.params.logits))
        mix = None
        for m, f in enumerate(feats):
            term = nc.smul(nc.element(alpha, m), graph.constant(f))
            mix = term if mix is None else mix + term
        h_moe = nc.matmul(mix, nc.transpose(graph.param(self.params.w_span)))
        return nc.matmul(graph.param(self.params.w_label), nc.transpose(h_moe))


def evaluate_ensemble(ensemble: EnsembleModel, instances, source, mode: str = "greedy"):
    pred, gold = {}, {}
    for inst in instances:
        if inst.gold is None:
            raise DataError(f"instance {inst.key} has no gold spans to evaluate against")
        pred[inst.key] = ensemble.predict(inst, word_matrix_for(source, inst), mode=mode)
        gold[inst.key] = set(inst.gold)
    return metrics.labeled_prf(pred, gold), pred


@dataclass
class EnsembleTrainResult:
    ensemble: EnsembleModel
    best_params: dict[str, np.ndarray]
    best_dev_f1: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def train_ensemble(
    ensemble: EnsembleModel,
    train_instances,
    dev_instances,
    source,
    lr: float = 0.0001,
    batch_size: int = 8,
    epochs: int = 20,
    seed: int = 1,
    log=None,
) -> EnsembleTrainResult:
    """Train the three ensemble parameters; bases stay frozen.

    Epoch 0 (the untouched initialization) participates in best-dev selection,
    so the returned snapshot is never worse on dev than the starting point.
    """
    if not train_instances or not dev_instances:
        raise DataError("ensemble training needs nonempty train and dev corpora")
    for inst in list(train_instances) + list(dev_instances):
        if inst.gold is None:
            raise DataError(f"instance {inst.key} has no gold spans")
    bad = {
        s.label for inst in train_instances for s in inst.gold
    } - set(ensemble.labels)
    if bad:
        raise DataError(f"labels {sorted(bad)} are outside the base models' inventory")

    params = ensemble.params.all()
    opt = nc.Adam(params)
    rng = nc.make_rng(seed)
    batches = make_batches(train_instances, batch_size)

    # Base models are frozen, so their span features per instance never change;
    # compute them once and reuse across every epoch and the dev evaluations.
    feature_cache: dict[int, tuple] = {}

    def features_of(inst):
        if id(inst) not in feature_cache:
            feature_cache[id(inst)] = ensemble._base_features(
                inst, word_matrix_for(source, inst)
            )
        return feature_cache[id(inst)]

    def dev_f1() -> float:
        pred, gold = {}, {}
        for inst in dev_instances:
            spans, feats = features_of(inst)
            m = ensemble._matrix_from_features(spans, feats)
            pred[inst.key] = greedy_select(m, inst.predicate, ensemble.core_labels)
            gold[inst.key] = set(inst.gold)
        return metrics.labeled_prf(pred, gold).f1

    f1_0 = dev_f1()
    best_f1, best_epoch = f1_0, 0
    best_params = {p.name: p.data.copy() for p in params}
    history = [{"epoch": 0, "loss": None, "dev_f1": f1_0}]
    if log is not None:
        log(f"epoch=0 dev_f1={f1_0:.4f}")

    for epoch in range(1, epochs + 1):
        epoch_loss = 0.0
        for b in rng.permutation(len(batches)):
            graph = nc.Graph()
            total = None
            for inst in batches[b]:
                spans, feats = features_of(inst)
                scores = ensemble._scores_node(graph, feats)
                loss = spanscore.loss_node(
                    graph, scores, spans, ensemble.labels, inst.gold, inst.predicate
                )
                total = loss if total is None else total + loss
            value = float(total.data)
            if not math.isfinite(value):
                raise NumericFailure(f"non-finite ensemble loss at epoch {epoch}")
            epoch_loss += value
            opt.step(graph.backward(total), lr)
        f1 = dev_f1()
        history.append({"epoch": epoch, "loss": epoch_loss, "dev_f1": f1})
        if log is not None:
            log(f"epoch={epoch} lr={lr:.10g} loss={epoch_loss:.6f} dev_f1={f1:.4f}")
        if f1 > best_f1:
            best_f1, best_epoch = f1, epoch
            best_params = {p.name: p.data.copy() for p in params}
    return EnsembleTrainResult(ensemble, best_params, best_f1, best_epoch, history)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_ensemble(
    path,
    ensemble: EnsembleModel,
    base_paths: list[str],
    best_dev_f1: float | None = None,
    best_epoch: int | None = None,
    param_data: dict[str, np.ndarray] | None = None,
) -> None:
    """Ensemble checkpoint: the three parameter arrays plus base references.

    Bases are stored as paths relative to the checkpoint's directory together
    with content hashes, so the directory can move as a unit and load detects
    any base that changed underneath the ensemble.
    """
    if len(base_paths) != len(ensemble.bases):
        raise ValueError("one base path per base model required")
    here = os.path.dirname(os.path.abspath(path))
    refs = [os.path.relpath(os.path.abspath(p), start=here) for p in base_paths]
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "ensemble",
        "labels": list(ensemble.labels),
        "core_labels": sorted(ensemble.core_labels),
        "d_hidden": ensemble.d_hidden,
        "base_paths": refs,
        "base_sha256": [_sha256(p) for p in base_paths],
        "best_dev_f1": best_dev_f1,
        "best_epoch": best_epoch,
    }
    arrays = {}
    for p in ensemble.params.all():
        data = param_data[p.name] if param_data is not None else p.data
        arrays[p.name] = data
    with open(path, "wb") as f:
        np.savez(f, __meta__=json.dumps(meta), **arrays)


def load_ensemble(path) -> tuple[EnsembleModel, dict]:
    """Rebuild an ensemble, reloading and hash-verifying every base checkpoint."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: cannot read checkpoint ({e})") from None
    with archive:
        meta = _read_meta(archive, path, "ensemble")
        here = os.path.dirname(os.path.abspath(path))
        bases = []
        for ref, digest in zip(meta["base_paths"], meta["base_sha256"]):
            base_path = ref if os.path.isabs(ref) else os.path.join(here, ref)
            if not os.path.exists(base_path):
                raise DataError(f"{path}: base checkpoint {ref!r} not found")
            if _sha256(base_path) != digest:
                raise DataError(
                    f"{path}: base checkpoint {ref!r} changed since the ensemble was saved"
                )
            bases.append(load_checkpoint(base_path)[0])
        needed = {"moe_w_span", "moe_w_label", "moe_logits"}
        if needed - set(archive.files):
            raise DataError(f"{path}: ensemble parameters missing")
        params = EnsembleParams(
            nc.Parameter("moe_w_span", archive["moe_w_span"]),
            nc.Parameter("moe_w_label", archive["moe_w_label"]),
            nc.Parameter("moe_logits", archive["moe_logits"]),
        )
    ensemble = EnsembleModel(bases, params)
    if list(ensemble.labels) != list(meta["labels"]):
        raise DataError(f"{path}: label inventory disagrees with the base models")
    return ensemble, meta

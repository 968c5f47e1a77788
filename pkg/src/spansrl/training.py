"""Training loop: Adam over summed minibatch losses with L2, best-dev selection.

The learning rate follows a closed form: the base rate holds for the first 50
epochs, then halves every 25, so lr(e) = lr * 2^(-max(0, ceil((e - 50) / 25))).
Minibatches group instances of similar length (stable sort by length, then
chunk); batch order is reshuffled each epoch from the run's seeded generator.
After every epoch the model decodes the dev set with the greedy search and the
best dev labeled F1 decides which parameter snapshot a run keeps. Two runs with
identical inputs and seed produce bitwise-identical snapshots.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics, numcore as nc, spanscore
from .errors import DataError, NumericFailure
from .model import SrlModel, source_kind, word_matrix_for


@dataclass
class TrainConfig:
    d_mark: int = 50
    layers: int = 4
    d_hidden: int = 300
    batch_size: int = 32
    lr: float = 0.001
    l2: float = 0.0001
    dropout_lstm: float = 0.1
    dropout_word: float = 0.5
    epochs: int = 100
    seed: int = 1
    lr_constant_epochs: int = 50
    lr_halve_every: int = 25

    def validate(self) -> None:
        if min(self.d_mark, self.layers, self.d_hidden, self.batch_size, self.epochs) < 1:
            raise ValueError("dimensions, batch size, and epochs must be positive")
        if self.lr <= 0.0 or self.l2 < 0.0:
            raise ValueError("lr must be positive and l2 nonnegative")
        if not (0.0 <= self.dropout_lstm < 1.0 and 0.0 <= self.dropout_word < 1.0):
            raise ValueError("dropout ratios must lie in [0, 1)")
        if self.lr_constant_epochs < 0 or self.lr_halve_every < 1:
            raise ValueError("bad learning-rate schedule constants")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """lr for a 1-based epoch; constant phase, then one halving per period."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    over = epoch - config.lr_constant_epochs
    halvings = max(0, -(-over // config.lr_halve_every))
    return config.lr * (0.5**halvings)


def make_batches(instances, batch_size: int) -> list[list]:
    """Chunk instances into batches of similar sentence length (stable order)."""
    ordered = sorted(instances, key=lambda inst: inst.length)
    return [ordered[k : k + batch_size] for k in range(0, len(ordered), batch_size)]


@dataclass
class TrainResult:
    model: SrlModel
    best_params: dict[str, np.ndarray]
    best_dev_f1: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def evaluate_model(model: SrlModel, instances, source, mode: str = "greedy"):
    """Decode every instance; returns (labeled PrfResult, prediction dict)."""
    pred, gold = {}, {}
    for inst in instances:
        if inst.gold is None:
            raise DataError(f"instance {inst.key} has no gold spans to evaluate against")
        pred[inst.key] = model.predict(inst, word_matrix_for(source, inst), mode=mode)
        gold[inst.key] = set(inst.gold)
    return metrics.labeled_prf(pred, gold), pred


def _require_gold(instances, what: str):
    for inst in instances:
        if inst.gold is None:
            raise DataError(f"{what} instance {inst.key} has no gold spans")


def train_model(
    config: TrainConfig,
    train_instances,
    dev_instances,
    source,
    log=None,
    stop_train_f1: float | None = None,
) -> TrainResult:
    """Full training run; returns the final model plus the best-dev snapshot.

    `stop_train_f1` optionally ends the run early once training-set labeled F1
    reaches the threshold (the training-set decode only happens when set).
    """
    config.validate()
    if not train_instances:
        raise DataError("empty training corpus")
    if not dev_instances:
        raise DataError("empty dev corpus")
    _require_gold(train_instances, "training")
    _require_gold(dev_instances, "dev")

    labels = sorted({s.label for inst in train_instances for s in inst.gold})
    if not labels:
        raise DataError("training corpus has no labeled spans")
    dev_labels = {s.label for inst in dev_instances for s in inst.gold}
    if not dev_labels <= set(labels):
        raise DataError(
            f"dev labels {sorted(dev_labels - set(labels))} never occur in training data"
        )

    kind = source_kind(source)
    rng = nc.make_rng(config.seed)
    model = SrlModel(
        labels,
        d_word=source.dim,
        d_mark=config.d_mark,
        d_hidden=config.d_hidden,
        layers=config.layers,
        rng=rng,
        embedding_kind=kind,
    )
    params = model.parameters()
    opt = nc.Adam(params)
    dropout_word = config.dropout_word if kind == "contextual" else 0.0

    batches = make_batches(train_instances, config.batch_size)
    word_cache = {id(inst): word_matrix_for(source, inst) for inst in train_instances}

    best_f1, best_epoch = -1.0, 0
    best_params = {p.name: p.data.copy() for p in params}
    history: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        lr = learning_rate(config, epoch)
        epoch_loss = 0.0
        for b in rng.permutation(len(batches)):
            graph = nc.Graph()
            total = None
            for inst in batches[b]:
                fwd = model.forward(
                    inst,
                    word_cache[id(inst)],
                    train=True,
                    rng=rng,
                    graph=graph,
                    dropout_lstm=config.dropout_lstm,
                    dropout_word=dropout_word,
                )
                loss = spanscore.loss_node(
                    graph, fwd.scores, fwd.spans, model.labels, inst.gold, inst.predicate
                )
                total = loss if total is None else total + loss
            total = total + nc.l2_penalty(graph, params, config.l2)
            value = float(total.data)
            if not math.isfinite(value):
                raise NumericFailure(f"non-finite loss at epoch {epoch}")
            epoch_loss += value
            opt.step(graph.backward(total), lr)

        dev_prf, _ = evaluate_model(model, dev_instances, source, mode="greedy")
        entry = {
            "epoch": epoch,
            "lr": lr,
            "loss": epoch_loss,
            "dev_precision": dev_prf.precision,
            "dev_recall": dev_prf.recall,
            "dev_f1": dev_prf.f1,
        }
        if stop_train_f1 is not None:
            train_prf, _ = evaluate_model(model, train_instances, source, mode="greedy")
            entry["train_f1"] = train_prf.f1
        history.append(entry)
        if log is not None:
            line = (
                f"epoch={epoch} lr={lr:.10g} loss={epoch_loss:.6f} "
                f"dev_p={dev_prf.precision:.4f} dev_r={dev_prf.recall:.4f} "
                f"dev_f1={dev_prf.f1:.4f}"
            )
            if "train_f1" in entry:
                line += f" train_f1={entry['train_f1']:.4f}"
            log(line)
        if dev_prf.f1 > best_f1:
            best_f1 = dev_prf.f1
            best_epoch = epoch
            best_params = {p.name: p.data.copy() for p in params}
        if stop_train_f1 is not None and entry["train_f1"] >= stop_train_f1:
            break

    return TrainResult(model, best_params, best_f1, best_epoch, history)

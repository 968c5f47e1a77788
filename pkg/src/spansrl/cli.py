"""Command-line interface.

Exit codes: 0 success, 1 usage errors (bad flags, invalid option values),
2 data errors (unreadable or malformed input files, incompatible models),
3 numeric failure (training diverged to a non-finite loss).

Training hyperparameters come from a TOML config file whose keys mirror the
training configuration fields; precedence is command-line flags over config
file over built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import tomli

from . import analysis, corpus, ensemble, features, metrics, training
from .errors import DataError, NumericFailure
from .model import (
    check_source_compatible,
    load_checkpoint,
    save_checkpoint,
    word_matrix_for,
)


class UsageError(Exception):
    """Command-line misuse detected after argument parsing."""


def _load_source(args):
    """Exactly one word-vector source: pretrained table or contextual vectors."""
    has_emb = getattr(args, "embeddings", None) is not None
    has_ctx = getattr(args, "contextual", None) is not None
    if has_emb == has_ctx:
        raise UsageError("exactly one of --embeddings and --contextual is required")
    if has_emb:
        return features.load_pretrained(args.embeddings)
    return features.load_contextual(args.contextual)


def _load_train_config(args) -> training.TrainConfig:
    raw: dict = {}
    if args.config is not None:
        try:
            with open(args.config, "rb") as f:
                raw = tomli.load(f)
        except tomli.TOMLDecodeError as e:
            raise DataError(f"{args.config}: invalid TOML ({e})") from None
    try:
        config = training.TrainConfig.from_dict(raw)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
            config.validate()
    except (TypeError, ValueError) as e:
        raise DataError(f"bad training configuration: {e}") from None
    return config


def _gold_sets(instances, what: str) -> dict:
    out = {}
    for inst in instances:
        if inst.gold is None:
            raise DataError(f"{what} instance {inst.key} has no spans")
        out[inst.key] = set(inst.gold)
    return out


def cmd_train(args) -> int:
    source = _load_source(args)
    config = _load_train_config(args)
    train_instances = corpus.parse_jsonl(args.train)
    dev_instances = corpus.parse_jsonl(args.dev)
    result = training.train_model(config, train_instances, dev_instances, source, log=print)
    save_checkpoint(
        args.out,
        result.model,
        config=config.to_dict(),
        best_dev_f1=result.best_dev_f1,
        best_epoch=result.best_epoch,
        param_data=result.best_params,
    )
    print(
        f"saved {args.out} (best dev F1 {result.best_dev_f1:.4f} "
        f"at epoch {result.best_epoch})"
    )
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    source = _load_source(args)
    check_source_compatible(model, source)
    instances = corpus.parse_jsonl(args.corpus)
    predicted = [
        dataclasses.replace(
            inst,
            gold=frozenset(model.predict(inst, word_matrix_for(source, inst), mode=args.mode)),
        )
        for inst in instances
    ]
    corpus.serialize_jsonl(predicted, args.out)
    if args.conll is not None:
        corpus.write_conll(predicted, args.conll)
    print(f"wrote predictions for {len(predicted)} instances to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    pred = _gold_sets(corpus.parse_jsonl(args.predictions), "prediction")
    gold = _gold_sets(corpus.parse_jsonl(args.gold), "gold")
    report = metrics.full_report(pred, gold)
    sys.stdout.write(metrics.format_report_text(report))
    if args.out is not None:
        metrics.write_report(report, args.out)
        print(f"report written to {args.out}")
    return 0


def cmd_ensemble(args) -> int:
    source = _load_source(args)
    bases = [load_checkpoint(p)[0] for p in args.bases]
    model = ensemble.EnsembleModel.initialize(bases)
    check_source_compatible(bases[0], source)
    train_instances = corpus.parse_jsonl(args.train)
    dev_instances = corpus.parse_jsonl(args.dev)
    result = ensemble.train_ensemble(
        model, train_instances, dev_instances, source, seed=args.seed, log=print
    )
    ensemble.save_ensemble(
        args.out,
        model,
        args.bases,
        best_dev_f1=result.best_dev_f1,
        best_epoch=result.best_epoch,
        param_data=result.best_params,
    )
    print(
        f"saved {args.out} over {len(bases)} bases "
        f"(best dev F1 {result.best_dev_f1:.4f} at epoch {result.best_epoch})"
    )
    return 0


def cmd_analyze(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    source = _load_source(args)
    check_source_compatible(model, source)
    query = corpus.parse_jsonl(args.dev)
    reference = corpus.parse_jsonl(args.train)
    report = analysis.analyze_model(model, query, reference, source, k=args.k)
    analysis.write_analysis(report, model, args.out)
    print(
        f"analyzed {report['queries']} predicted spans against "
        f"{report['reference_spans']} reference spans (k={report['k']})"
    )
    rate = report["neighbor_label_match_rate"]
    if rate is not None:
        print(f"neighbor label match rate: {rate:.4f}")
    print(f"analysis written to {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    import os

    try:
        cfg = corpus.SynthConfig(
            sentences=args.sentences,
            min_len=args.min_len,
            max_len=args.max_len,
            seed=args.seed,
            embedding_dim=args.emb_dim,
        )
        cfg.validate()
        dev_cfg = dataclasses.replace(cfg, sentences=args.dev_sentences, seed=args.seed + 1)
        dev_cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    train_instances = corpus.gen_synthetic(cfg)
    dev_instances = corpus.gen_synthetic(dev_cfg)
    vocab, matrix = corpus.gen_embeddings(cfg)
    os.makedirs(args.out, exist_ok=True)
    corpus.serialize_jsonl(train_instances, os.path.join(args.out, "train.jsonl"))
    corpus.serialize_jsonl(dev_instances, os.path.join(args.out, "dev.jsonl"))
    corpus.write_embeddings(os.path.join(args.out, "embeddings.txt"), vocab, matrix)
    print(
        f"wrote {len(train_instances)} train and {len(dev_instances)} dev sentences "
        f"plus {len(vocab)}-word embeddings to {args.out}"
    )
    return 0


def cmd_convert_conll(args) -> int:
    if args.to == "jsonl":
        instances = corpus.parse_conll(args.input)
        corpus.serialize_jsonl(instances, args.output)
    else:
        instances = corpus.parse_jsonl(args.input)
        corpus.write_conll(instances, args.output)
    print(f"converted {len(instances)} instances to {args.output}")
    return 0


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", help="pretrained word-vector text file")
    p.add_argument("--contextual", help="precomputed contextual-vector JSONL file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spansrl", description="Span-based semantic role labeling."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and save the best-dev checkpoint")
    p.add_argument("--config", help="TOML file of training hyperparameters")
    p.add_argument("--train", required=True, help="training corpus (JSONL)")
    p.add_argument("--dev", required=True, help="development corpus (JSONL)")
    _add_source_flags(p)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label a corpus with a trained model")
    p.add_argument("checkpoint", help="model checkpoint")
    p.add_argument("corpus", help="corpus to label (JSONL; spans ignored)")
    _add_source_flags(p)
    p.add_argument("--mode", choices=["greedy", "argmax"], default="greedy")
    p.add_argument("--out", required=True, help="predictions file to write (JSONL)")
    p.add_argument("--conll", help="also write predictions in bracket-column format")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold spans")
    p.add_argument("predictions", help="predicted corpus (JSONL)")
    p.add_argument("gold", help="gold corpus (JSONL)")
    p.add_argument("--out", help="directory for report.json/report.txt/confusion.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="train a mixture over frozen base models")
    p.add_argument("--bases", nargs="+", required=True, help="base model checkpoints")
    p.add_argument("--train", required=True, help="training corpus (JSONL)")
    p.add_argument("--dev", required=True, help="development corpus (JSONL)")
    _add_source_flags(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True, help="ensemble checkpoint file to write")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("analyze", help="nearest-neighbor and label-embedding report")
    p.add_argument("checkpoint", help="model checkpoint")
    p.add_argument("--dev", required=True, help="query corpus (JSONL)")
    p.add_argument("--train", required=True, help="reference corpus with gold spans (JSONL)")
    _add_source_flags(p)
    p.add_argument("--k", type=int, default=10, help="neighbors per predicted span")
    p.add_argument("--out", required=True, help="directory for analysis output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus and embeddings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sentences", type=int, default=100)
    p.add_argument("--dev-sentences", type=int, default=50)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--seed", type=int, default=1, help="dev uses seed+1")
    p.add_argument("--emb-dim", type=int, default=16)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("convert-conll", help="convert between bracket columns and JSONL")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--to", choices=["jsonl", "conll"], required=True)
    p.set_defaults(func=cmd_convert_conll)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

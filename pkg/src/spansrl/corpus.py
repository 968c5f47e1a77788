"""Corpus model and IO: labeled spans, JSON-lines files, BIO tags, bracket columns.

One instance is one (sentence, predicate) pair. Spans use 1-based inclusive token
indices throughout. Gold sets must satisfy the structural rules the decoder also
enforces: spans never overlap, core labels appear at most once, and no span may
cover the predicate token.

The JSON-lines schema, one object per line:

    {"id": "s3", "tokens": ["She", "kept", "a", "cat"], "predicate": 2,
     "spans": [[1, 1, "A0"], [3, 4, "A1"]]}

`spans` is optional; an instance without it is a prediction request.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError

CORE_LABELS = frozenset({"A0", "A1", "A2", "A3", "A4", "A5", "AA"})


class CorpusError(DataError):
    """Malformed corpus content; message carries the offending line when known."""


@dataclass(frozen=True, order=True)
class LabeledSpan:
    """One labeled argument span, 1-based inclusive endpoints."""

    i: int
    j: int
    label: str

    def __post_init__(self):
        if not (1 <= self.i <= self.j):
            raise ValueError(f"bad span endpoints ({self.i}, {self.j})")
        if not self.label:
            raise ValueError("empty span label")


def spans_overlap(a, b) -> bool:
    """Inclusive interval intersection between two (i, j)-carrying spans."""
    return max(a.i, b.i) <= min(a.j, b.j)


@dataclass
class PredicateInstance:
    sentence_id: str
    tokens: list[str]
    predicate: int
    gold: frozenset[LabeledSpan] | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def key(self) -> tuple[str, int]:
        return (self.sentence_id, self.predicate)


def check_gold_spans(spans, length: int, predicate: int, where: str = "") -> None:
    """Raise CorpusError unless the span set is structurally valid for (T, p)."""
    at = f"{where}: " if where else ""
    ordered = sorted(spans)
    for s in ordered:
        if not (1 <= s.i <= s.j <= length):
            raise CorpusError(f"{at}span ({s.i}, {s.j}) outside sentence of length {length}")
        if s.i <= predicate <= s.j:
            raise CorpusError(
                f"{at}span ({s.i}, {s.j}, {s.label}) covers the predicate at {predicate}"
            )
    for a, b in zip(ordered, ordered[1:]):
        if spans_overlap(a, b):
            raise CorpusError(
                f"{at}overlapping spans ({a.i}, {a.j}, {a.label}) and ({b.i}, {b.j}, {b.label})"
            )
    core_seen: dict[str, LabeledSpan] = {}
    for s in ordered:
        if s.label in CORE_LABELS:
            if s.label in core_seen:
                raise CorpusError(f"{at}core label {s.label} appears on more than one span")
            core_seen[s.label] = s


def _instance_from_obj(obj, where: str) -> PredicateInstance:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}: expected an object, got {type(obj).__name__}")
    sid = obj.get("id")
    if not isinstance(sid, str) or not sid:
        raise CorpusError(f"{where}: 'id' must be a nonempty string")
    tokens = obj.get("tokens")
    if (
        not isinstance(tokens, list)
        or not tokens
        or any(not isinstance(t, str) or not t for t in tokens)
    ):
        raise CorpusError(f"{where}: 'tokens' must be a nonempty list of nonempty strings")
    predicate = obj.get("predicate")
    if isinstance(predicate, bool) or not isinstance(predicate, int):
        raise CorpusError(f"{where}: 'predicate' must be an integer")
    if not (1 <= predicate <= len(tokens)):
        raise CorpusError(
            f"{where}: predicate {predicate} outside sentence of length {len(tokens)}"
        )
    gold = None
    if "spans" in obj and obj["spans"] is not None:
        raw = obj["spans"]
        if not isinstance(raw, list):
            raise CorpusError(f"{where}: 'spans' must be a list")
        built = []
        for entry in raw:
            if (
                not isinstance(entry, (list, tuple))
                or len(entry) != 3
                or isinstance(entry[0], bool)
                or isinstance(entry[1], bool)
                or not isinstance(entry[0], int)
                or not isinstance(entry[1], int)
                or not isinstance(entry[2], str)
            ):
                raise CorpusError(f"{where}: span entries must be [i, j, \"LABEL\"]")
            i, j, label = entry
            if not label:
                raise CorpusError(f"{where}: empty span label")
            if not (1 <= i <= j):
                raise CorpusError(f"{where}: bad span endpoints ({i}, {j})")
            built.append(LabeledSpan(i, j, label))
        if len(set(built)) != len(built):
            raise CorpusError(f"{where}: duplicate span entries")
        check_gold_spans(built, len(tokens), predicate, where)
        gold = frozenset(built)
    return PredicateInstance(sid, list(tokens), predicate, gold)


def parse_jsonl(path) -> list[PredicateInstance]:
    """Read instances from a JSON-lines file; blank lines are skipped."""
    out: list[PredicateInstance] = []
    seen: set[tuple[str, int]] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{where}: invalid JSON ({e.msg})") from None
            inst = _instance_from_obj(obj, where)
            if inst.key in seen:
                raise CorpusError(f"{where}: duplicate instance {inst.key}")
            seen.add(inst.key)
            out.append(inst)
    return out


def instance_to_obj(inst: PredicateInstance) -> dict:
    obj = {"id": inst.sentence_id, "tokens": inst.tokens, "predicate": inst.predicate}
    if inst.gold is not None:
        obj["spans"] = [[s.i, s.j, s.label] for s in sorted(inst.gold)]
    return obj


def serialize_jsonl(instances, path) -> None:
    """Write instances back out; span order is canonical so output is stable."""
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(json.dumps(instance_to_obj(inst)) + "\n")


# ---------------------------------------------------------------------------
# BIO tag conversion


def spans_to_bio(spans, length: int) -> list[str]:
    """Non-overlapping labeled spans to B-/I-/O tags over `length` tokens."""
    ordered = sorted(spans)
    for a, b in zip(ordered, ordered[1:]):
        if spans_overlap(a, b):
            raise ValueError(f"overlapping spans ({a.i},{a.j}) and ({b.i},{b.j})")
    tags = ["O"] * length
    for s in ordered:
        if not (1 <= s.i <= s.j <= length):
            raise ValueError(f"span ({s.i}, {s.j}) outside length {length}")
        tags[s.i - 1] = f"B-{s.label}"
        for t in range(s.i + 1, s.j + 1):
            tags[t - 1] = f"I-{s.label}"
    return tags


def bio_to_spans(tags, strict: bool = True) -> list[LabeledSpan]:
    """B-/I-/O tags to spans.

    Strict mode rejects an I- tag that does not continue a same-label span;
    lenient mode treats it as an implicit B-.
    """
    tags = list(tags)
    spans: list[LabeledSpan] = []
    open_label = None
    start = 0
    for pos, tag in enumerate(tags, 1):
        if tag == "O":
            head, label = "O", None
        elif tag.startswith("B-") and len(tag) > 2:
            head, label = "B", tag[2:]
        elif tag.startswith("I-") and len(tag) > 2:
            head, label = "I", tag[2:]
        else:
            raise CorpusError(f"position {pos}: unrecognized tag {tag!r}")
        if head == "I" and open_label != label:
            if strict:
                raise CorpusError(
                    f"position {pos}: I-{label} does not continue a {label} span"
                )
            head = "B"
        if head == "I":
            continue
        if open_label is not None:
            spans.append(LabeledSpan(start, pos - 1, open_label))
        open_label = label if head == "B" else None
        start = pos
    if open_label is not None:
        spans.append(LabeledSpan(start, len(tags), open_label))
    return spans


# ---------------------------------------------------------------------------
# CoNLL-style bracket columns

PREDICATE_COLUMN_LABEL = "V"


def _column_to_spans(tags, where: str) -> list[LabeledSpan]:
    spans = []
    open_label = None
    start = 0
    for pos, tag in enumerate(tags, 1):
        rest = tag
        if rest.startswith("("):
            if open_label is not None:
                raise CorpusError(f"{where}: nested bracket at token {pos}")
            body = rest[1:]
            cut = body.find("*")
            if cut <= 0:
                raise CorpusError(f"{where}: malformed bracket tag {tag!r}")
            open_label = body[:cut]
            start = pos
            rest = body[cut:]
        if rest not in ("*", "*)"):
            raise CorpusError(f"{where}: malformed bracket tag {tag!r}")
        if rest == "*)":
            if open_label is None:
                raise CorpusError(f"{where}: close bracket without open at token {pos}")
            spans.append(LabeledSpan(start, pos, open_label))
            open_label = None
    if open_label is not None:
        raise CorpusError(f"{where}: bracket for {open_label} never closed")
    return spans


def _spans_to_column(spans, length: int) -> list[str]:
    tags = ["*"] * length
    for s in sorted(spans):
        head = f"({s.label}" + tags[s.i - 1]
        tags[s.i - 1] = head
        tags[s.j - 1] = tags[s.j - 1] + ")"
    return tags


def parse_conll(path) -> list[PredicateInstance]:
    """Read token + per-predicate bracket columns; one instance per predicate.

    Sentences are blank-line separated blocks; column 0 is the token, every
    further column is one predicate's argument structure. The V span locates the
    predicate and is dropped from the converted gold set. Sentence ids are
    generated as s1, s2, ... in file order.
    """
    instances: list[PredicateInstance] = []
    with open(path, "r", encoding="utf-8") as f:
        block: list[list[str]] = []
        block_start = 1
        sent_no = 0

        def flush(block, start_line, sent_no):
            if not block:
                return
            where = f"{path}:{start_line}"
            width = len(block[0])
            if any(len(r) != width for r in block):
                raise CorpusError(f"{where}: ragged columns in sentence block")
            tokens = [r[0] for r in block]
            sid = f"s{sent_no}"
            for col in range(1, width):
                tags = [r[col] for r in block]
                col_where = f"{where} column {col}"
                spans = _column_to_spans(tags, col_where)
                verb = [s for s in spans if s.label == PREDICATE_COLUMN_LABEL]
                if len(verb) != 1:
                    raise CorpusError(
                        f"{col_where}: expected exactly one (V*) span, got {len(verb)}"
                    )
                p = verb[0].i
                gold = [s for s in spans if s.label != PREDICATE_COLUMN_LABEL]
                check_gold_spans(gold, len(tokens), p, col_where)
                instances.append(PredicateInstance(sid, tokens, p, frozenset(gold)))

        lineno = 0
        for lineno, line in enumerate(f, 1):
            stripped = line.strip()
            if not stripped:
                if block:
                    flush(block, block_start, sent_no + 1)
                    sent_no += 1
                    block = []
                continue
            if not block:
                block_start = lineno
            block.append(stripped.split())
        if block:
            flush(block, block_start, sent_no + 1)
    return instances


def write_conll(instances, path) -> None:
    """Emit bracket columns; consecutive instances sharing an id form one block."""
    groups: list[list[PredicateInstance]] = []
    for inst in instances:
        if inst.gold is None:
            raise CorpusError(f"instance {inst.key}: no spans to convert")
        if groups and groups[-1][0].sentence_id == inst.sentence_id:
            if groups[-1][0].tokens != inst.tokens:
                raise CorpusError(
                    f"instances with id {inst.sentence_id!r} disagree on tokens"
                )
            groups[-1].append(inst)
        else:
            groups.append([inst])
    with open(path, "w", encoding="utf-8") as f:
        for n, group in enumerate(groups):
            length = group[0].length
            columns = [group[0].tokens]
            for inst in sorted(group, key=lambda g: g.predicate):
                marked = set(inst.gold) | {
                    LabeledSpan(inst.predicate, inst.predicate, PREDICATE_COLUMN_LABEL)
                }
                columns.append(_spans_to_column(marked, length))
            widths = [max(len(c[t]) for t in range(length)) for c in columns]
            for t in range(length):
                cells = [c[t].ljust(w) for c, w in zip(columns, widths)]
                f.write(("  ".join(cells)).rstrip() + "\n")
            if n != len(groups) - 1:
                f.write("\n")


# ---------------------------------------------------------------------------
# Synthetic data

SYNTH_LABELS = ("A0", "A1", "A2", "TMP", "LOC")

_TOKEN_CLASSES = (
    ("verb", 6),
    ("agent", 8),
    ("amod", 3),
    ("thing", 8),
    ("tmod", 3),
    ("goal", 5),
    ("time", 5),
    ("place", 5),
    ("filler", 7),
)


@dataclass
class SynthConfig:
    """Knobs for the rule-based generator; label inventory is fixed."""

    sentences: int = 100
    min_len: int = 5
    max_len: int = 12
    seed: int = 1
    embedding_dim: int = 16

    def validate(self) -> None:
        if self.sentences <= 0:
            raise ValueError("sentences must be positive")
        if self.min_len < 5:
            raise ValueError("min_len below 5 leaves no room for the argument layout")
        if self.max_len < self.min_len:
            raise ValueError("max_len must be >= min_len")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")


def synth_vocabulary() -> list[str]:
    return [f"{name}{k}" for name, count in _TOKEN_CLASSES for k in range(count)]


def _pick(rng, cls: str) -> str:
    count = dict(_TOKEN_CLASSES)[cls]
    return f"{cls}{int(rng.integers(0, count))}"


def gen_synthetic(config: SynthConfig) -> list[PredicateInstance]:
    """Sentences whose argument layout follows fixed positional rules.

    Core arguments hug the predicate (A0 just before, A1 just after, optional A2
    following A1); TMP and LOC occupy the sentence-final region, one token per
    span, with up to two TMP spans. Token classes are tied to roles so the
    mapping is learnable from the word vectors plus the predicate mark, and
    two-token spans open (A0) or close (A1) with a dedicated modifier class so
    span boundaries are decidable from the tokens alone.
    """
    config.validate()
    rng = np.random.Generator(np.random.Philox(config.seed))
    out: list[PredicateInstance] = []
    for n in range(config.sentences):
        length = int(rng.integers(config.min_len, config.max_len + 1))
        p = int(rng.integers(2, length - 2))
        tokens: list[str | None] = [None] * (length + 1)  # 1-based
        tokens[p] = _pick(rng, "verb")
        spans: list[LabeledSpan] = []

        a0_len = 2 if (p - 2 >= 1 and rng.random() < 0.3) else 1
        spans.append(LabeledSpan(p - a0_len, p - 1, "A0"))
        tokens[p - 1] = _pick(rng, "agent")
        if a0_len == 2:
            tokens[p - 2] = _pick(rng, "amod")

        a1_len = 2 if rng.random() < 0.4 else 1
        spans.append(LabeledSpan(p + 1, p + a1_len, "A1"))
        tokens[p + 1] = _pick(rng, "thing")
        if a1_len == 2:
            tokens[p + 2] = _pick(rng, "tmod")
        cursor = p + a1_len + 1

        if rng.random() < 0.5 and cursor <= length:
            spans.append(LabeledSpan(cursor, cursor, "A2"))
            tokens[cursor] = _pick(rng, "goal")
            cursor += 1

        pos = length
        u = rng.random()
        tmp_count = 2 if u < 0.2 else (1 if u < 0.7 else 0)
        for _ in range(tmp_count):
            if pos < cursor:
                break
            spans.append(LabeledSpan(pos, pos, "TMP"))
            tokens[pos] = _pick(rng, "time")
            pos -= 1
        if rng.random() < 0.5 and pos >= cursor:
            spans.append(LabeledSpan(pos, pos, "LOC"))
            tokens[pos] = _pick(rng, "place")
            pos -= 1

        for t in range(1, length + 1):
            if tokens[t] is None:
                tokens[t] = _pick(rng, "filler")

        check_gold_spans(spans, length, p, where=f"generated sentence {n}")
        out.append(PredicateInstance(f"syn{n + 1}", tokens[1:], p, frozenset(spans)))
    return out


def gen_embeddings(config: SynthConfig) -> tuple[list[str], np.ndarray]:
    """Fixed vectors for the full synthetic vocabulary (own seed stream).

    Each vector is small uniform noise plus a unit bump on the dimension
    assigned to the token's class, so class membership is linearly readable
    and the desk-scale corpus stays quickly learnable.
    """
    config.validate()
    rng = np.random.Generator(np.random.Philox(config.seed + 7919))
    vocab = synth_vocabulary()
    class_names = [name for name, _ in _TOKEN_CLASSES]
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), config.embedding_dim))
    row = 0
    for name, count in _TOKEN_CLASSES:
        k = class_names.index(name) % config.embedding_dim
        for _ in range(count):
            matrix[row, k] += 1.0
            row += 1
    return vocab, matrix


def write_embeddings(path, vocab, matrix) -> None:
    """Text embedding format: token then one float per dimension, space separated."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(vocab):
        raise ValueError("embedding matrix rows must match the vocabulary")
    with open(path, "w", encoding="utf-8") as f:
        for token, row_vals in zip(vocab, matrix):
            f.write(token + " " + " ".join(f"{v:.17g}" for v in row_vals) + "\n")

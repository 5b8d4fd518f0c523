"""Corpus handling: cleaning, dedup, CSV/JSON loading, and construction of
next-token training examples for the two fine-tuning stages.

An encoded example is prompt + [sep] + answer + [eot] with labels shifted
left by one (final label = eot, so the end marker is itself predicted).
Over-length sequences are truncated from the left of the prompt side; the
answer is always preserved intact or the record is dropped and counted.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError, DataError, FormatError
from .rng import RngStream
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

_WHITESPACE_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class SentencePair:
    sentence1: str
    sentence2: str


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str


@dataclass
class EncodedExample:
    input_ids: list[int]
    label_ids: list[int]
    loss_mask: list[bool]

    def __post_init__(self):
        if not (len(self.input_ids) == len(self.label_ids) == len(self.loss_mask)):
            raise DataError(
                f"example fields must have equal lengths, got "
                f"{len(self.input_ids)}/{len(self.label_ids)}/{len(self.loss_mask)}"
            )


@dataclass
class BuildResult:
    examples: list[EncodedExample]
    dropped: int = 0      # records whose answer alone cannot fit
    truncated: int = 0    # records whose prompt was shortened
    lengths: list[int] = field(default_factory=list)  # pre-padding token counts


def clean_text(raw: str) -> str:
    """NFC-normalize, strip control characters (newline survives as
    whitespace), collapse whitespace runs to one space, trim."""
    text = unicodedata.normalize("NFC", raw)
    text = "".join(ch for ch in text if ch == "\n" or unicodedata.category(ch) != "Cc")
    return _WHITESPACE_RUN.sub(" ", text).strip()


def _record_fields(record) -> tuple[str, ...]:
    if isinstance(record, SentencePair):
        return (record.sentence1, record.sentence2)
    if isinstance(record, QAPair):
        return (record.question, record.answer)
    return tuple(record)


def dedupe(records: Sequence) -> list:
    """Keep first occurrences; equality on cleaned, case-folded fields.

    Fields are joined with an unprintable separator so ("ab", "c") and
    ("a", "bc") stay distinct."""
    seen: set[str] = set()
    out = []
    for record in records:
        key = "\x1f".join(clean_text(f).casefold() for f in _record_fields(record))
        if key not in seen:
            seen.add(key)
            out.append(record)
    return out


def _check_count(n: int, expected_count: int | None, path: str):
    if n == 0:
        raise DataError(f"{path}: no records")
    if expected_count is not None and n != expected_count:
        raise DataError(f"{path}: expected {expected_count} records, found {n}")


def load_sentence_pairs(path: str, expected_count: int | None = None) -> list[SentencePair]:
    """CSV with exact header sentence1,sentence2 (RFC-style quoting)."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != ["sentence1", "sentence2"]:
            raise FormatError(
                f"{path}: expected header sentence1,sentence2, got {','.join(header)}"
            )
        records = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise FormatError(f"{path} line {line_no}: expected 2 fields, got {len(row)}")
            s1, s2 = clean_text(row[0]), clean_text(row[1])
            if not s1 or not s2:
                raise FormatError(f"{path} line {line_no}: empty field after cleaning")
            records.append(SentencePair(s1, s2))
    _check_count(len(records), expected_count, path)
    return records


def load_qa(path: str, expected_count: int | None = None) -> list[QAPair]:
    """JSON array of objects with keys "question" and "answer"."""
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except ValueError as e:
            raise FormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, list):
        raise FormatError(f"{path}: expected a JSON array of objects")
    records = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "question" not in entry or "answer" not in entry:
            raise FormatError(f"{path} entry {i}: expected keys question and answer")
        q, a = clean_text(str(entry["question"])), clean_text(str(entry["answer"]))
        if not q or not a:
            raise FormatError(f"{path} entry {i}: empty field after cleaning")
        records.append(QAPair(q, a))
    _check_count(len(records), expected_count, path)
    return records


def build_examples(records: Sequence, tokenizer: Tokenizer, n_ctx: int,
                   kind: str, mask_prompt_loss: bool = False) -> BuildResult:
    """Encode records as prompt + [sep] + answer + [eot] next-token examples.

    kind "sc" reads SentencePair fields, "qa" reads QAPair fields. Sequences
    longer than n_ctx lose prompt tokens from the left (the answer and the
    two separators always survive intact, else the record is dropped and
    counted). All returned examples are padded to the common maximum length;
    pad positions carry loss_mask False. With mask_prompt_loss only the
    positions that predict answer tokens (or the end marker) stay True, so
    the prompt contributes context but no loss.
    """
    if kind not in ("sc", "qa"):
        raise ConfigError(f"unknown example kind {kind!r}; expected 'sc' or 'qa'")
    result = BuildResult(examples=[])
    raw: list[tuple[list[int], list[bool]]] = []
    for record in records:
        prompt_text, answer_text = _record_fields(record)
        prompt = tokenizer.encode(prompt_text)
        answer = tokenizer.encode(answer_text)
        budget = n_ctx - (len(answer) + 2)  # room left for prompt after sep/eot
        if budget < 0:
            result.dropped += 1
            log.warning("dropping record: answer needs %d tokens, context is %d",
                        len(answer) + 2, n_ctx)
            continue
        if len(prompt) > budget:
            prompt = prompt[len(prompt) - budget:]
            result.truncated += 1
        inputs = prompt + [tokenizer.sep_id] + answer + [tokenizer.eot_id]
        if mask_prompt_loss:
            # Position t supervises predicting inputs[t+1], so the answer
            # span starts on the separator itself (it predicts the first
            # answer token) and ends where the end marker is predicted.
            first, last = len(prompt), len(prompt) + len(answer)
            mask = [first <= t <= last for t in range(len(inputs))]
        else:
            mask = [True] * len(inputs)
        raw.append((inputs, mask))

    width = max((len(inputs) for inputs, _ in raw), default=0)
    for inputs, mask in raw:
        labels = inputs[1:] + [tokenizer.eot_id]
        pad = width - len(inputs)
        result.lengths.append(len(inputs))
        result.examples.append(EncodedExample(
            input_ids=inputs + [tokenizer.pad_id] * pad,
            label_ids=labels + [tokenizer.pad_id] * pad,
            loss_mask=mask + [False] * pad,
        ))
    return result


def train_test_split(records: Sequence, test_fraction: float, seed: int):
    """Seeded, disjoint, exhaustive partition preserving input order."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(records)
    n_test = int(round(n * test_fraction))
    picks = set(int(i) for i in RngStream(seed).permutation(n)[:n_test])
    train = [r for i, r in enumerate(records) if i not in picks]
    test = [r for i, r in enumerate(records) if i in picks]
    return train, test


def corpus_stats(result: BuildResult) -> dict:
    """JSON-ready report: counts plus a pre-padding token-length histogram."""
    histogram: dict[int, int] = {}
    for n in result.lengths:
        histogram[n] = histogram.get(n, 0) + 1
    return {
        "record_count": len(result.examples),
        "dropped_records": result.dropped,
        "truncated_records": result.truncated,
        "token_length_histogram": {str(k): v for k, v in sorted(histogram.items())},
    }

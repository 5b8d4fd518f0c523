"""ROUGE-1/2/L evaluation, model comparison tables, and ablation runners.

Scoring conventions (recorded design choices): tokens are case-folded
maximal alphanumeric runs; F is the plain harmonic mean (beta = 1); corpus
scores are arithmetic means of per-record precision/recall/F rather than
pooled counts.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

from .corpus import build_examples, load_qa, load_sentence_pairs
from .errors import ConfigError, DataError, FormatError, KatzGPTError
from .model import Model, ModelConfig, generate, init_model
from .tokenizer import ByteTokenizer, Tokenizer
from .training import LOSS_KINDS, TrainConfig, finetune_sequential

_TOKEN_RUN = re.compile(r"[^\W_]+")  # alphanumeric runs, underscore excluded

ABLATION_VARIABLES = ("n_blocks", "loss_kind")


@dataclass(frozen=True)
class MetricScore:
    precision: float
    recall: float
    f: float


@dataclass(frozen=True)
class RougeScores:
    rouge1: MetricScore
    rouge2: MetricScore
    rougeL: MetricScore

    def to_dict(self) -> dict:
        return {name: vars(getattr(self, name)) for name in ("rouge1", "rouge2", "rougeL")}


@dataclass(frozen=True)
class PredictionRecord:
    question: str
    reference: str
    prediction: str


def rouge_tokenize(text: str) -> list[str]:
    return _TOKEN_RUN.findall(text.casefold())


def _prf(overlap: float, n_cand: int, n_ref: int) -> MetricScore:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return MetricScore(p, r, f)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> MetricScore:
    """Clipped n-gram overlap; empty candidate scores zero."""
    if n not in (1, 2):
        raise ConfigError(f"rouge_n supports n in {{1, 2}}, got {n}")
    cand = _ngrams(rouge_tokenize(candidate), n)
    ref = _ngrams(rouge_tokenize(reference), n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence via the classic DP, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: str, reference: str) -> MetricScore:
    cand = rouge_tokenize(candidate)
    ref = rouge_tokenize(reference)
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


def rouge_all(candidate: str, reference: str) -> RougeScores:
    return RougeScores(
        rouge1=rouge_n(candidate, reference, 1),
        rouge2=rouge_n(candidate, reference, 2),
        rougeL=rouge_l(candidate, reference),
    )


# --- prediction file evaluation ---

@dataclass
class EvalReport:
    corpus: RougeScores
    records: list[PredictionRecord]
    scores: list[RougeScores]

    def to_dict(self) -> dict:
        return {
            "record_count": len(self.records),
            "corpus": self.corpus.to_dict(),
            "records": [
                {"question": rec.question, **{
                    f"{metric}_{fld}": getattr(getattr(score, metric), fld)
                    for metric in ("rouge1", "rouge2", "rougeL")
                    for fld in ("precision", "recall", "f")
                }}
                for rec, score in zip(self.records, self.scores)
            ],
        }

    def format_table(self) -> str:
        rows = [("metric", "precision", "recall", "f")]
        for metric in ("rouge1", "rouge2", "rougeL"):
            s = getattr(self.corpus, metric)
            rows.append((metric, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f:.4f}"))
        return _align(rows)


def _align(rows: list[tuple[str, ...]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                     for row in rows)


def _mean_scores(scores: Sequence[RougeScores]) -> RougeScores:
    n = len(scores)

    def mean_metric(metric: str) -> MetricScore:
        return MetricScore(
            precision=sum(getattr(s, metric).precision for s in scores) / n,
            recall=sum(getattr(s, metric).recall for s in scores) / n,
            f=sum(getattr(s, metric).f for s in scores) / n,
        )

    return RougeScores(*(mean_metric(m) for m in ("rouge1", "rouge2", "rougeL")))


def evaluate_records(records: Sequence[PredictionRecord]) -> EvalReport:
    if not records:
        raise DataError("no prediction records to evaluate")
    scores = [rouge_all(r.prediction, r.reference) for r in records]
    return EvalReport(corpus=_mean_scores(scores), records=list(records), scores=scores)


def load_predictions(path: str) -> list[PredictionRecord]:
    """JSONL, one {"question", "reference", "prediction"} object per line."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as e:
                raise FormatError(f"{path} line {line_no}: invalid JSON: {e}") from e
            if not isinstance(obj, dict) or not {"question", "reference", "prediction"} <= set(obj):
                raise FormatError(
                    f"{path} line {line_no}: expected keys question, reference, prediction"
                )
            if not str(obj["reference"]).strip():
                raise FormatError(f"{path} line {line_no}: reference must be nonempty")
            records.append(PredictionRecord(
                question=str(obj["question"]),
                reference=str(obj["reference"]),
                prediction=str(obj["prediction"]),
            ))
    if not records:
        raise DataError(f"{path}: no prediction records")
    return records


def evaluate_file(path: str) -> EvalReport:
    return evaluate_records(load_predictions(path))


# --- model comparison ---

@dataclass(frozen=True)
class CompareRow:
    name: str
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float
    best: bool


def compare_models(entries: Sequence[tuple[str, str]]) -> list[CompareRow]:
    """One row per (name, predictions path), ascending Rouge-L, ties by name;
    the best (last) row is marked."""
    if not entries:
        raise ConfigError("compare_models needs at least one entry")
    names = [name for name, _ in entries]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate model names: {dupes}")
    scored = []
    for name, path in entries:
        corpus = evaluate_file(path).corpus
        scored.append((name, corpus.rouge1.f, corpus.rouge2.f, corpus.rougeL.f))
    scored.sort(key=lambda row: (row[3], row[0]))
    return [CompareRow(name, r1, r2, rl, best=(i == len(scored) - 1))
            for i, (name, r1, r2, rl) in enumerate(scored)]


def render_comparison(rows: Sequence[CompareRow]) -> str:
    table = [("model", "rouge1_f", "rouge2_f", "rougeL_f", "best")]
    for row in rows:
        table.append((row.name, f"{row.rouge1_f:.4f}", f"{row.rouge2_f:.4f}",
                      f"{row.rougeL_f:.4f}", "*" if row.best else ""))
    return _align(table)


# --- ablation runner ---

@dataclass
class AblationSpec:
    variable: str
    values: list
    model_config: ModelConfig
    train_config: TrainConfig
    qa_train_path: str
    qa_test_path: str
    sc_path: str | None = None
    max_new_tokens: int = 32

    def __post_init__(self):
        if self.variable not in ABLATION_VARIABLES:
            raise ConfigError(
                f"unknown ablation variable {self.variable!r}; expected one of {ABLATION_VARIABLES}"
            )
        if not self.values:
            raise ConfigError("ablation values must be nonempty")
        for v in self.values:
            if self.variable == "n_blocks" and not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"invalid n_blocks value {v!r}")
            if self.variable == "loss_kind" and v not in LOSS_KINDS:
                raise ConfigError(f"invalid loss_kind value {v!r}")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class AblationRow:
    value: object
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float


def answer_question(model: Model, tokenizer: Tokenizer, question: str,
                    max_new_tokens: int) -> str:
    """Greedy answer: encode(question) + [sep], decode up to the end marker.
    Long questions lose tokens from the left, mirroring training truncation."""
    n_ctx = model.config.n_ctx
    budget = n_ctx - max_new_tokens - 1  # room for the separator
    if budget < 1:
        raise ConfigError(
            f"max_new_tokens {max_new_tokens} leaves no room for a prompt in context {n_ctx}"
        )
    q_ids = tokenizer.encode(question)
    if len(q_ids) > budget:
        q_ids = q_ids[len(q_ids) - budget:]
    prompt = q_ids + [tokenizer.sep_id]
    out = generate(model, prompt, max_new_tokens, stop_id=tokenizer.eot_id)
    reply = out[len(prompt):]
    if reply and reply[-1] == tokenizer.eot_id:
        reply = reply[:-1]
    return tokenizer.decode(reply, hide_specials=True)


def run_ablation(spec: AblationSpec, tokenizer: Tokenizer | None = None) -> list[AblationRow]:
    """For each value: fresh seeded init, two-stage fine-tuning, greedy
    answers on the test questions, ROUGE against references. Everything but
    the ablated variable is shared, so identical specs give identical rows."""
    tokenizer = tokenizer or ByteTokenizer()
    sc_records = load_sentence_pairs(spec.sc_path) if spec.sc_path else []
    qa_records = load_qa(spec.qa_train_path)
    test_records = load_qa(spec.qa_test_path)

    rows = []
    for value in spec.values:
        model_config = spec.model_config
        train_config = spec.train_config
        if spec.variable == "n_blocks":
            model_config = replace(model_config, n_blocks=value)
        else:
            train_config = replace(train_config, loss_kind=value)
        try:
            model = init_model(model_config, seed=train_config.seed)
            n_ctx = model_config.n_ctx
            sc_examples = build_examples(sc_records, tokenizer, n_ctx, "sc").examples
            qa_examples = build_examples(
                qa_records, tokenizer, n_ctx, "qa",
                mask_prompt_loss=train_config.mask_prompt_loss).examples
            finetune_sequential(model, sc_examples, qa_examples, train_config, train_config)
            predictions = [
                PredictionRecord(
                    question=rec.question,
                    reference=rec.answer,
                    prediction=answer_question(model, tokenizer, rec.question,
                                               spec.max_new_tokens),
                )
                for rec in test_records
            ]
        except KatzGPTError as e:
            raise type(e)(f"ablation failed at {spec.variable}={value!r}: {e}") from e
        corpus = evaluate_records(predictions).corpus
        rows.append(AblationRow(value, corpus.rouge1.f, corpus.rouge2.f, corpus.rougeL.f))
    return rows


def render_ablation(spec: AblationSpec, rows: Sequence[AblationRow]) -> str:
    table = [(spec.variable, "rouge1_f", "rouge2_f", "rougeL_f")]
    for row in rows:
        table.append((str(row.value), f"{row.rouge1_f:.4f}", f"{row.rouge2_f:.4f}",
                      f"{row.rougeL_f:.4f}"))
    return _align(table)

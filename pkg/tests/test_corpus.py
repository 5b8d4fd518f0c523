"""Corpus tests: cleaning, dedup, loaders, example construction, splits."""

import csv
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from katzgpt.corpus import (
    BuildResult,
    EncodedExample,
    QAPair,
    SentencePair,
    build_examples,
    clean_text,
    corpus_stats,
    dedupe,
    load_qa,
    load_sentence_pairs,
    train_test_split,
)
from katzgpt.errors import ConfigError, DataError, FormatError
from katzgpt.tokenizer import ByteTokenizer

TOK = ByteTokenizer()  # 256 byte ids + eot 256, pad 257, sep 258


# --- clean_text ---

def test_clean_whitespace_collapse():
    assert clean_text("  a\t b\n") == "a b"


def test_clean_control_chars_removed_newline_survives_as_space():
    assert clean_text("a\x00b") == "ab"
    assert clean_text("a\x1fb\x07c") == "abc"
    assert clean_text("a\nb") == "a b"


def test_clean_control_only_string_is_empty():
    assert clean_text("\x00\x01\x02\x07") == ""


def test_clean_applies_nfc():
    assert clean_text("étude") == "étude"


@given(st.text(max_size=200))
@settings(max_examples=200, deadline=None)
def test_clean_idempotent(s):
    once = clean_text(s)
    assert clean_text(once) == once


# --- dedupe ---

def test_dedupe_exact_duplicates():
    x = SentencePair("a cat", "sat down")
    assert dedupe([x, x]) == [x]


def test_dedupe_casefold_keeps_first():
    a = QAPair("What is X?", "A thing")
    b = QAPair("WHAT IS x?", "a THING")
    c = QAPair("Other", "answer")
    assert dedupe([a, b, c]) == [a, c]


def test_dedupe_field_boundaries_matter():
    assert len(dedupe([SentencePair("ab", "c"), SentencePair("a", "bc")])) == 2


def test_dedupe_idempotent_and_stable():
    records = [QAPair(f"q{i % 3}", f"a{i % 3}") for i in range(9)]
    once = dedupe(records)
    assert once == dedupe(once)
    assert once == [QAPair("q0", "a0"), QAPair("q1", "a1"), QAPair("q2", "a2")]


# --- loaders ---

def write_csv(path, rows, header=("sentence1", "sentence2")):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def test_load_sentence_pairs_happy_path(tmp_path):
    p = tmp_path / "sc.csv"
    write_csv(p, [["The sky is", "blue today."], ["Water, cold", "and clear."]])
    records = load_sentence_pairs(str(p))
    assert records == [SentencePair("The sky is", "blue today."),
                       SentencePair("Water, cold", "and clear.")]


def test_load_sentence_pairs_cleans_fields(tmp_path):
    p = tmp_path / "sc.csv"
    write_csv(p, [["  a\t b ", "c\nd"]])
    assert load_sentence_pairs(str(p)) == [SentencePair("a b", "c d")]


def test_load_sentence_pairs_wrong_header(tmp_path):
    p = tmp_path / "sc.csv"
    write_csv(p, [["x", "y"]], header=("first", "second"))
    with pytest.raises(FormatError, match="header"):
        load_sentence_pairs(str(p))


def test_load_sentence_pairs_bad_row_reports_line(tmp_path):
    p = tmp_path / "sc.csv"
    write_csv(p, [["ok", "ok"], ["only one field"]])
    with pytest.raises(FormatError, match="line 3"):
        load_sentence_pairs(str(p))


def test_load_sentence_pairs_empty_field_rejected(tmp_path):
    p = tmp_path / "sc.csv"
    write_csv(p, [["question", "  \t "]])
    with pytest.raises(FormatError, match="empty field"):
        load_sentence_pairs(str(p))


def test_load_sentence_pairs_empty_file(tmp_path):
    p = tmp_path / "sc.csv"
    p.write_text("")
    with pytest.raises(DataError):
        load_sentence_pairs(str(p))
    write_csv(p, [])
    with pytest.raises(DataError, match="no records"):
        load_sentence_pairs(str(p))


def test_load_sentence_pairs_expected_count(tmp_path):
    p = tmp_path / "sc.csv"
    write_csv(p, [["a b", "c"], ["d", "e f"]])
    assert len(load_sentence_pairs(str(p), expected_count=2)) == 2
    with pytest.raises(DataError, match="expected 6280"):
        load_sentence_pairs(str(p), expected_count=6280)


def test_load_qa_happy_path(tmp_path):
    p = tmp_path / "qa.json"
    p.write_text(json.dumps([
        {"question": "Who wrote it?", "answer": "The  author."},
        {"question": "When?", "answer": "In 1999.", "extra": "ignored"},
    ]))
    records = load_qa(str(p))
    assert records == [QAPair("Who wrote it?", "The author."),
                       QAPair("When?", "In 1999.")]


def test_load_qa_schema_errors(tmp_path):
    p = tmp_path / "qa.json"
    p.write_text(json.dumps({"question": "not a list"}))
    with pytest.raises(FormatError, match="array"):
        load_qa(str(p))
    p.write_text(json.dumps([{"question": "ok", "answer": "ok"}, {"question": "missing"}]))
    with pytest.raises(FormatError, match="entry 1"):
        load_qa(str(p))
    p.write_text("{not json")
    with pytest.raises(FormatError, match="invalid JSON"):
        load_qa(str(p))
    p.write_text("[]")
    with pytest.raises(DataError, match="no records"):
        load_qa(str(p))


def test_load_qa_expected_count(tmp_path):
    p = tmp_path / "qa.json"
    p.write_text(json.dumps([{"question": "q", "answer": "a"}] ))
    with pytest.raises(DataError, match="expected 7334"):
        load_qa(str(p), expected_count=7334)


def test_csv_round_trip_semantic_equality(tmp_path):
    src = tmp_path / "src.csv"
    write_csv(src, [["He said, \"go\"", "and left."], ["a  b", "c"]])
    records = load_sentence_pairs(str(src))
    back = tmp_path / "back.csv"
    write_csv(back, [[r.sentence1, r.sentence2] for r in records])
    assert load_sentence_pairs(str(back)) == records


# --- build_examples ---

def test_build_examples_hand_case():
    result = build_examples([QAPair("ab", "cd")], TOK, n_ctx=16, kind="qa")
    ex = result.examples[0]
    assert ex.input_ids == [97, 98, TOK.sep_id, 99, 100, TOK.eot_id]
    assert ex.label_ids == [98, TOK.sep_id, 99, 100, TOK.eot_id, TOK.eot_id]
    assert ex.loss_mask == [True] * 6
    assert (result.dropped, result.truncated) == (0, 0)


def test_build_examples_mask_prompt_loss():
    result = build_examples([QAPair("ab", "cd")], TOK, 16, "qa", mask_prompt_loss=True)
    ex = result.examples[0]
    assert ex.loss_mask == [False, False, True, True, True, False]
    # The supervised predictions are exactly the answer plus the end marker.
    supervised = [label for label, on in zip(ex.label_ids, ex.loss_mask) if on]
    assert supervised == [99, 100, TOK.eot_id]


def test_build_examples_sc_kind_uses_sentence_fields():
    result = build_examples([SentencePair("x", "yz")], TOK, 16, "sc")
    assert result.examples[0].input_ids == [120, TOK.sep_id, 121, 122, TOK.eot_id]


def test_build_examples_shift_property():
    result = build_examples(
        [QAPair("some question", "answer"), QAPair("q", "a")], TOK, 64, "qa")
    for ex, real_len in zip(result.examples, result.lengths):
        for t in range(real_len - 1):
            assert ex.label_ids[t] == ex.input_ids[t + 1]
        assert ex.label_ids[real_len - 1] == TOK.eot_id


def test_build_examples_left_truncation_preserves_answer():
    result = build_examples([QAPair("abcdef", "xy")], TOK, n_ctx=7, kind="qa")
    ex = result.examples[0]
    assert ex.input_ids == [100, 101, 102, TOK.sep_id, 120, 121, TOK.eot_id]
    assert result.truncated == 1
    assert len(ex.input_ids) == 7


def test_build_examples_drops_oversized_answer():
    result = build_examples(
        [QAPair("q", "0123456789"), QAPair("q", "ok")], TOK, n_ctx=8, kind="qa")
    assert result.dropped == 1
    assert len(result.examples) == 1
    assert result.examples[0].input_ids[:1] == [113]


def test_build_examples_pads_to_common_width():
    result = build_examples(
        [QAPair("long question here", "answer"), QAPair("q", "a")], TOK, 64, "qa")
    widths = {len(ex.input_ids) for ex in result.examples}
    assert len(widths) == 1
    short = result.examples[1]
    real = result.lengths[1]
    assert all(t == TOK.pad_id for t in short.input_ids[real:])
    assert all(m is False for m in short.loss_mask[real:])
    assert all(m is True for m in short.loss_mask[:real])


def test_build_examples_kind_validated():
    with pytest.raises(ConfigError):
        build_examples([], TOK, 8, "prose")


def test_encoded_example_length_invariant():
    with pytest.raises(DataError):
        EncodedExample([1, 2], [3], [True, True])


# --- split and stats ---

def test_train_test_split_sizes_and_partition():
    records = [QAPair(f"q{i}", f"a{i}") for i in range(10)]
    train, test = train_test_split(records, 0.2, seed=4)
    assert (len(train), len(test)) == (8, 2)
    assert sorted(map(repr, train + test)) == sorted(map(repr, records))
    assert not set(map(repr, train)) & set(map(repr, test))


def test_train_test_split_seeded_and_validated():
    records = [QAPair(f"q{i}", f"a{i}") for i in range(10)]
    assert train_test_split(records, 0.3, 9) == train_test_split(records, 0.3, 9)
    assert train_test_split(records, 0.3, 9) != train_test_split(records, 0.3, 10)
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ConfigError):
            train_test_split(records, bad, 0)


def test_corpus_stats_report():
    result = build_examples(
        [QAPair("ab", "cd"), QAPair("abcde", "ef"), QAPair("q", "0123456789")],
        TOK, n_ctx=8, kind="qa")
    stats = corpus_stats(result)
    assert stats["record_count"] == 2
    assert stats["dropped_records"] == 1
    assert stats["truncated_records"] == 1
    assert stats["token_length_histogram"] == {"6": 1, "8": 1}
    json.dumps(stats)  # must be serializable

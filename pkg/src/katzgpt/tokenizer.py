"""Byte-level BPE tokenizer plus a byte-identity fallback for tests.

The BPE side follows the GPT-2 file convention: a JSON vocabulary mapping
token strings (in the byte-to-unicode representation) to ids, and a merges
text file with one space-separated pair per line. The base vocabulary must
hold exactly 50257 entries; two reserved specials (pad, sep) are appended on
load for a total of 50259. Encoding never emits special ids; decoding is the
exact byte-level inverse, so decode(encode(s)) == s for any UTF-8 string.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from .errors import DataError, FormatError

BASE_VOCAB_SIZE = 50257
END_OF_TEXT_ID = 50256
PAD_ID = 50257
SEP_ID = 50258
VOCAB_SIZE = 50259

PAD_TOKEN = "<|pad|>"
SEP_TOKEN = "<|sep|>"
END_OF_TEXT_TOKEN = "<|endoftext|>"


@lru_cache(maxsize=1)
def byte_to_unicode() -> dict[int, str]:
    """GPT-2 style reversible byte -> printable-unicode mapping."""
    printable = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(0xA1, 0xAD))
        + list(range(0xAE, 0x100))
    )
    chars = printable[:]
    n = 0
    for b in range(256):
        if b not in printable:
            printable.append(b)
            chars.append(256 + n)
            n += 1
    return dict(zip(printable, (chr(c) for c in chars)))


@lru_cache(maxsize=1)
def unicode_to_byte() -> dict[str, int]:
    return {c: b for b, c in byte_to_unicode().items()}


class Tokenizer:
    """Common surface: encode/decode plus the three reserved special ids."""

    vocab_size: int
    eot_id: int
    pad_id: int
    sep_id: int

    def encode(self, text: str) -> list[int]:
        raise NotImplementedError

    def decode(self, ids, hide_specials: bool = False) -> str:
        raise NotImplementedError

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.eot_id, self.pad_id, self.sep_id))

    def _render_special(self, token_id: int, hide: bool) -> str:
        if hide or token_id == self.eot_id:
            return ""
        return PAD_TOKEN if token_id == self.pad_id else SEP_TOKEN


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    merge_ranks: dict[tuple[str, str], int]
    specials: dict[str, int] = field(
        default_factory=lambda: {
            "end_of_text": END_OF_TEXT_ID,
            "pad": PAD_ID,
            "sep": SEP_ID,
        }
    )

    @property
    def size(self) -> int:
        return len(self.id_to_token)


def load_bpe(vocab_file: str | Path, merges_file: str | Path) -> "BpeTokenizer":
    """Load GPT-2-format vocab/merges and append the two reserved specials."""
    raw = json.loads(
        Path(vocab_file).read_text(encoding="utf-8"),
        object_pairs_hook=_reject_duplicate_keys,
    )
    if not isinstance(raw, dict):
        raise FormatError(f"{vocab_file}: vocabulary must be a JSON object")
    if len(raw) != BASE_VOCAB_SIZE:
        raise FormatError(
            f"{vocab_file}: base vocabulary has {len(raw)} entries, expected {BASE_VOCAB_SIZE}"
        )
    id_to_token: list[str | None] = [None] * BASE_VOCAB_SIZE
    for token, token_id in raw.items():
        if not isinstance(token_id, int) or not 0 <= token_id < BASE_VOCAB_SIZE:
            raise FormatError(f"{vocab_file}: token {token!r} has invalid id {token_id!r}")
        if id_to_token[token_id] is not None:
            raise FormatError(f"{vocab_file}: duplicate id {token_id}")
        id_to_token[token_id] = token

    merge_ranks: dict[tuple[str, str], int] = {}
    with open(merges_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or (lineno == 1 and line.startswith("#")):
                continue
            parts = line.split(" ")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise FormatError(f"{merges_file}:{lineno}: malformed merge line {line!r}")
            pair = (parts[0], parts[1])
            if pair in merge_ranks:
                raise FormatError(f"{merges_file}:{lineno}: duplicate merge {line!r}")
            if parts[0] + parts[1] == END_OF_TEXT_TOKEN:
                raise FormatError(
                    f"{merges_file}:{lineno}: merge would produce a special token"
                )
            merge_ranks[pair] = len(merge_ranks)

    id_to_token.extend([PAD_TOKEN, SEP_TOKEN])
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    if len(token_to_id) != VOCAB_SIZE:
        raise FormatError(f"{vocab_file}: token strings are not unique")
    vocab = Vocabulary(token_to_id, id_to_token, merge_ranks)
    return BpeTokenizer(vocab)


def _reject_duplicate_keys(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise FormatError(f"duplicate token entry {key!r}")
        obj[key] = value
    return obj


class BpeTokenizer(Tokenizer):
    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.vocab_size = vocab.size
        self.eot_id = vocab.specials["end_of_text"]
        self.pad_id = vocab.specials["pad"]
        self.sep_id = vocab.specials["sep"]
        self._cache: dict[str, list[str]] = {}

    def encode(self, text: str) -> list[int]:
        if not text:
            return []
        b2u = byte_to_unicode()
        chars = "".join(b2u[b] for b in text.encode("utf-8"))
        token_to_id = self.vocab.token_to_id
        return [token_to_id[tok] for tok in self._bpe(chars)]

    def _bpe(self, chars: str) -> list[str]:
        cached = self._cache.get(chars)
        if cached is not None:
            return cached
        ranks = self.vocab.merge_ranks
        parts = list(chars)
        while len(parts) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(parts, parts[1:]):
                rank = ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, pair
            if best_pair is None:
                break
            merged = best_pair[0] + best_pair[1]
            out: list[str] = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == best_pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            parts = out
        if len(chars) < 64:
            self._cache[chars] = parts
        return parts

    def decode(self, ids, hide_specials: bool = False) -> str:
        u2b = unicode_to_byte()
        pieces: list[str] = []
        raw = bytearray()
        for token_id in ids:
            token_id = int(token_id)
            if not 0 <= token_id < self.vocab_size:
                raise DataError(f"token id {token_id} out of range [0, {self.vocab_size})")
            if token_id in self.special_ids:
                if raw:
                    pieces.append(raw.decode("utf-8", errors="replace"))
                    raw = bytearray()
                pieces.append(self._render_special(token_id, hide_specials))
            else:
                raw.extend(u2b[c] for c in self.vocab.id_to_token[token_id])
        if raw:
            pieces.append(raw.decode("utf-8", errors="replace"))
        return "".join(pieces)


class ByteTokenizer(Tokenizer):
    """Byte-identity fallback: 256 byte tokens plus the three specials.

    Ships so the test suite and toy experiments run without external vocab
    files; ids 0-255 are the raw byte values.
    """

    def __init__(self):
        self.vocab_size = 259
        self.eot_id = 256
        self.pad_id = 257
        self.sep_id = 258

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids, hide_specials: bool = False) -> str:
        pieces: list[str] = []
        raw = bytearray()
        for token_id in ids:
            token_id = int(token_id)
            if not 0 <= token_id < self.vocab_size:
                raise DataError(f"token id {token_id} out of range [0, {self.vocab_size})")
            if token_id in self.special_ids:
                if raw:
                    pieces.append(raw.decode("utf-8", errors="replace"))
                    raw = bytearray()
                pieces.append(self._render_special(token_id, hide_specials))
            else:
                raw.append(token_id)
        if raw:
            pieces.append(raw.decode("utf-8", errors="replace"))
        return "".join(pieces)

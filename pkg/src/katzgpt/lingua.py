"""Multilingual chat pipeline: speech-to-text, language detection, glossary
translation, and the stage composition that turns a user turn into a reply.

Providers are pluggable. The in-process mocks are fully deterministic so the
pipeline can be tested end to end without a network; when an endpoint URL is
configured, a thin HTTP JSON client (POST {text|audio, target} -> {result})
is bound instead.
"""

from __future__ import annotations

import base64
import enum
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .errors import (
    ConfigError,
    DataError,
    FormatError,
    KatzGPTError,
    UnsupportedLanguageError,
    UpstreamError,
)
from .model import Model, generate
from .rng import RngStream
from .tokenizer import Tokenizer

MOCK_AUDIO_TYPE = "text/x-mock-audio"

# CJK Unified Ideographs block used by the mock detector.
_CJK_START, _CJK_END = 0x4E00, 0x9FFF

# A reply paired with the generated continuation token ids.
Responder = Callable[[str], tuple[str, Sequence[int]]]


class LangCode(str, enum.Enum):
    EN = "en"
    ZH = "zh"
    UNKNOWN = "unknown"


def detect_lang(text: str) -> LangCode:
    """Classify text by character classes (this package's mock rule).

    Among non-space characters: >= 30% CJK Unified Ideographs means Chinese;
    otherwise >= 50% ASCII letters means English; anything else is unknown.
    Deterministic and total on nonempty text.
    """
    chars = [c for c in text if not c.isspace()]
    if not chars:
        raise DataError("cannot detect the language of empty text")
    cjk = sum(1 for c in chars if _CJK_START <= ord(c) <= _CJK_END)
    if cjk / len(chars) >= 0.30:
        return LangCode.ZH
    letters = sum(1 for c in chars if c.isascii() and c.isalpha())
    if letters / len(chars) >= 0.50:
        return LangCode.EN
    return LangCode.UNKNOWN


class SttProvider(Protocol):
    def transcribe(self, payload: bytes, media_type: str,
                   lang_hint: str | None = None) -> str: ...


class DetectorProvider(Protocol):
    def detect(self, text: str) -> LangCode: ...


class TranslatorProvider(Protocol):
    def translate(self, text: str, source: LangCode, target: LangCode) -> str: ...


class MockStt:
    """Deterministic stand-in for a speech recognizer: the payload of a
    "text/x-mock-audio" clip is its own UTF-8 transcript."""

    def transcribe(self, payload: bytes, media_type: str,
                   lang_hint: str | None = None) -> str:
        if not payload:
            raise DataError("empty audio payload")
        if media_type != MOCK_AUDIO_TYPE:
            raise ConfigError(
                f"mock STT only accepts {MOCK_AUDIO_TYPE!r}, got {media_type!r}"
            )
        try:
            return payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"mock audio payload is not valid UTF-8: {exc}") from None


class MockDetector:
    def detect(self, text: str) -> LangCode:
        return detect_lang(text)


def load_glossary(path: str | Path) -> dict[str, str]:
    """Parse a UTF-8 glossary file: source<TAB>target per line, blank lines
    and # comments skipped."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.count("\t") != 1:
            raise FormatError(
                f"{path} line {lineno}: expected exactly one tab "
                f"(source<TAB>target), got {raw!r}"
            )
        source, _, target = line.partition("\t")
        entries[source] = target
    return entries


class MockTranslator:
    """Longest-match phrase substitution from a glossary; spans with no
    glossary entry pass through unchanged. The glossary may hold both
    directions at once (direction is implicit in which source phrases match),
    and source == target is the identity."""

    def __init__(self, glossary: Mapping[str, str] | None = None):
        entries = dict(glossary or {})
        if any(not src for src in entries):
            raise ConfigError("glossary source phrases must be nonempty")
        self._entries = entries
        self._keys = sorted(entries, key=len, reverse=True)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "MockTranslator":
        return cls(load_glossary(path))

    def translate(self, text: str, source: LangCode, target: LangCode) -> str:
        _check_translation_langs(source, target)
        if source is target:
            return text
        out: list[str] = []
        i = 0
        while i < len(text):
            for key in self._keys:
                if text.startswith(key, i):
                    out.append(self._entries[key])
                    i += len(key)
                    break
            else:
                out.append(text[i])
                i += 1
        return "".join(out)


def _check_translation_langs(source: LangCode, target: LangCode) -> None:
    if target not in (LangCode.EN, LangCode.ZH):
        raise ConfigError(f"translation target must be en or zh, got {target.value!r}")
    if source is LangCode.UNKNOWN:
        raise UnsupportedLanguageError("cannot translate from an unknown language")


class _HttpProvider:
    """Shared POST-JSON plumbing; any failure surfaces as an UpstreamError
    tagged with the pipeline stage."""

    def __init__(self, url: str, stage: str, timeout: float = 10.0):
        if not url:
            raise ConfigError(f"{stage} provider needs a nonempty endpoint url")
        self.url = url
        self.stage = stage
        self.timeout = timeout

    def _post(self, body: dict) -> str:
        try:
            response = requests.post(self.url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise UpstreamError(self.stage, f"request to {self.url} failed: {exc}") from exc
        if not 200 <= response.status_code < 300:
            raise UpstreamError(self.stage, f"HTTP {response.status_code} from {self.url}")
        try:
            result = response.json()["result"]
        except (ValueError, KeyError) as exc:
            raise UpstreamError(
                self.stage, f"malformed response from {self.url}: {exc}"
            ) from exc
        return str(result)


class HttpStt(_HttpProvider):
    def __init__(self, url: str, timeout: float = 10.0):
        super().__init__(url, "stt", timeout)

    def transcribe(self, payload: bytes, media_type: str,
                   lang_hint: str | None = None) -> str:
        if not payload:
            raise DataError("empty audio payload")
        body = {
            "audio": base64.b64encode(payload).decode("ascii"),
            "media_type": media_type,
        }
        if lang_hint:
            body["lang_hint"] = lang_hint
        return self._post(body)


class HttpDetector(_HttpProvider):
    def __init__(self, url: str, timeout: float = 10.0):
        super().__init__(url, "detect", timeout)

    def detect(self, text: str) -> LangCode:
        if not text.strip():
            raise DataError("cannot detect the language of empty text")
        code = self._post({"text": text})
        try:
            return LangCode(code)
        except ValueError:
            raise UpstreamError(
                self.stage, f"provider returned unknown language code {code!r}"
            ) from None


class HttpTranslator(_HttpProvider):
    def __init__(self, url: str, timeout: float = 10.0):
        super().__init__(url, "translate", timeout)

    def translate(self, text: str, source: LangCode, target: LangCode) -> str:
        _check_translation_langs(source, target)
        if source is target:
            return text
        return self._post(
            {"text": text, "source": source.value, "target": target.value}
        )


@dataclass(frozen=True)
class ProviderBinding:
    """The three providers a pipeline needs, all bound up front."""

    stt: SttProvider
    detector: DetectorProvider
    translator: TranslatorProvider

    def __post_init__(self):
        for name in ("stt", "detector", "translator"):
            if getattr(self, name) is None:
                raise ConfigError(f"provider {name!r} is not bound")

    @classmethod
    def mocks(cls, glossary: Mapping[str, str] | None = None) -> "ProviderBinding":
        return cls(MockStt(), MockDetector(), MockTranslator(glossary))

    @classmethod
    def from_config(cls, config: Mapping[str, str],
                    glossary: Mapping[str, str] | None = None) -> "ProviderBinding":
        """Bind an HTTP provider for each configured *_url key and the
        deterministic mock for each absent one."""
        return cls(
            stt=HttpStt(config["stt_url"]) if config.get("stt_url") else MockStt(),
            detector=(HttpDetector(config["detect_url"])
                      if config.get("detect_url") else MockDetector()),
            translator=(HttpTranslator(config["translate_url"])
                        if config.get("translate_url")
                        else MockTranslator(glossary)),
        )


@dataclass(frozen=True)
class AudioInput:
    """A voice turn: raw clip bytes plus enough metadata to transcribe it."""

    payload: bytes
    media_type: str = MOCK_AUDIO_TYPE
    lang_hint: str | None = None


@dataclass(frozen=True)
class PipelineTrace:
    """Everything one turn did, stage by stage.

    Invariants: for an English turn text_en == transcript and
    reply_final == reply_en; otherwise reply_final is the back-translation
    of reply_en into the detected language.
    """

    input_kind: str                  # "text" | "audio"
    transcript: str                  # user turn as text, post-STT
    detected: LangCode
    text_en: str                     # user turn rendered in English
    reply_en: str                    # model reply (English)
    reply_final: str                 # reply in the user's language
    reply_ids: tuple[int, ...]       # generated continuation, token ids
    timings: Mapping[str, float] = field(compare=False)


def generate_reply(
    model: Model,
    tokenizer: Tokenizer,
    prompt_text: str,
    *,
    max_new_tokens: int = 128,
    temperature: float = 0.0,
    top_k: int = 0,
    rng: RngStream | None = None,
) -> tuple[str, list[int]]:
    """Single-turn reply: encode(prompt) + [sep], decode the continuation.

    Returns (reply text, generated ids including any end marker). Long
    prompts lose tokens from the left so the generation budget always fits.
    """
    budget = model.config.n_ctx - max_new_tokens - 1  # room for the separator
    if budget < 1:
        raise ConfigError(
            f"max_new_tokens {max_new_tokens} leaves no room for a prompt "
            f"in context {model.config.n_ctx}"
        )
    ids = tokenizer.encode(prompt_text)
    if len(ids) > budget:
        ids = ids[len(ids) - budget:]
    prompt = ids + [tokenizer.sep_id]
    out = generate(
        model, prompt, max_new_tokens,
        temperature=temperature, top_k=top_k,
        stop_id=tokenizer.eot_id, rng=rng,
    )
    new = out[len(prompt):]
    text_ids = new[:-1] if new and new[-1] == tokenizer.eot_id else new
    return tokenizer.decode(text_ids, hide_specials=True), new


def chat_pipeline(
    user_input: str | AudioInput,
    model: Model,
    tokenizer: Tokenizer,
    binding: ProviderBinding | None = None,
    *,
    responder: Responder | None = None,
    max_new_tokens: int = 128,
    temperature: float = 0.0,
    top_k: int = 0,
    rng: RngStream | None = None,
) -> PipelineTrace:
    """Route one user turn: transcribe (if audio), detect the language,
    translate to English if needed, generate, translate the reply back.

    An unknown language is rejected before any generation happens. Stage
    failures carry their stage tag; timings record wall-clock seconds for
    each stage that ran. A custom responder (text_en -> (reply, ids)) can
    replace the default single-turn generation, e.g. to condition on
    session history.
    """
    if binding is None:
        binding = ProviderBinding.mocks()
    if responder is None:
        def responder(text_en: str) -> tuple[str, list[int]]:
            return generate_reply(
                model, tokenizer, text_en,
                max_new_tokens=max_new_tokens, temperature=temperature,
                top_k=top_k, rng=rng,
            )

    timings: dict[str, float] = {}

    def timed(stage, fn, *args):
        start = time.perf_counter()
        try:
            result = fn(*args)
        except KatzGPTError:
            raise
        except Exception as exc:
            raise UpstreamError(stage, str(exc)) from exc
        timings[stage] = time.perf_counter() - start
        return result

    if isinstance(user_input, AudioInput):
        input_kind = "audio"
        transcript = timed("stt", binding.stt.transcribe,
                           user_input.payload, user_input.media_type,
                           user_input.lang_hint)
    else:
        input_kind = "text"
        transcript = user_input

    detected = timed("detect", binding.detector.detect, transcript)
    if detected is LangCode.UNKNOWN:
        raise UnsupportedLanguageError(
            "the detected language is not supported (expected en or zh)"
        )

    if detected is LangCode.EN:
        text_en = transcript
    else:
        text_en = timed("translate", binding.translator.translate,
                        transcript, detected, LangCode.EN)

    reply_en, reply_ids = timed("generate", responder, text_en)

    if detected is LangCode.EN:
        reply_final = reply_en
    else:
        reply_final = timed("translate_back", binding.translator.translate,
                            reply_en, LangCode.EN, detected)

    return PipelineTrace(
        input_kind=input_kind,
        transcript=transcript,
        detected=detected,
        text_en=text_en,
        reply_en=reply_en,
        reply_final=reply_final,
        reply_ids=tuple(int(t) for t in reply_ids),
        timings=timings,
    )

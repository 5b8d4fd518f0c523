"""HTTP chat service: JSON endpoints over the chat pipeline, in-memory TTL
sessions, and a stateless raw-generation endpoint.

Endpoints (HTTP/1.1, JSON bodies):
  POST /v1/chat      {session_id?, message | audio(+media_type), lang: "auto"}
                     -> {session_id, reply, detected_lang, tokens_generated}
  POST /v1/generate  {prompt, max_new_tokens?, temperature?, top_k?}
                     -> {text, token_count}
  GET  /v1/health    -> {status: "ok", model: {n_blocks, params}}

Environment overrides: KATZ_ADDR (host:port) and KATZ_CHECKPOINT (path).
"""

from __future__ import annotations

import base64
import binascii
import dataclasses
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping

from .errors import (
    ConfigError,
    ContextLengthError,
    DataError,
    KatzGPTError,
    UnsupportedLanguageError,
    UpstreamError,
)
from .lingua import (
    MOCK_AUDIO_TYPE,
    AudioInput,
    LangCode,
    PipelineTrace,
    ProviderBinding,
    chat_pipeline,
    load_glossary,
)
from .model import Model, generate, param_count
from .tokenizer import ByteTokenizer, Tokenizer, load_bpe
from .training import load_checkpoint, model_from_checkpoint

DEFAULT_TTL_SECONDS = 1800.0


class ApiError(KatzGPTError):
    """A request failure with an explicit HTTP status."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class ServerConfig:
    addr: str = "127.0.0.1"
    port: int = 8080
    checkpoint_path: str | None = None
    tokenizer_kind: str = "byte"        # "byte" | "bpe"
    vocab_path: str | None = None       # bpe only
    merges_path: str | None = None      # bpe only
    max_new_tokens: int = 128
    temperature: float = 0.0
    top_k: int = 0
    session_ttl: float = DEFAULT_TTL_SECONDS
    providers: Mapping[str, str] = field(default_factory=dict)
    glossary_path: str | None = None

    def __post_init__(self):
        if self.session_ttl <= 0:
            raise ConfigError(f"session_ttl must be > 0, got {self.session_ttl}")
        if self.max_new_tokens < 1:
            raise ConfigError(
                f"max_new_tokens must be >= 1, got {self.max_new_tokens}"
            )
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.top_k < 0:
            raise ConfigError(f"top_k must be >= 0, got {self.top_k}")
        if self.tokenizer_kind not in ("byte", "bpe"):
            raise ConfigError(
                f"tokenizer_kind must be 'byte' or 'bpe', got {self.tokenizer_kind!r}"
            )
        if self.tokenizer_kind == "bpe" and not (self.vocab_path and self.merges_path):
            raise ConfigError("tokenizer_kind 'bpe' needs vocab_path and merges_path")

    @classmethod
    def from_file(cls, path: str) -> "ServerConfig":
        try:
            raw = json.loads(open(path, encoding="utf-8").read())
        except ValueError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def with_env_overrides(self, env: Mapping[str, str] = os.environ) -> "ServerConfig":
        updates: dict = {}
        addr = env.get("KATZ_ADDR")
        if addr:
            host, sep, port = addr.rpartition(":")
            if not sep or not host or not port.isdigit():
                raise ConfigError(f"KATZ_ADDR must look like host:port, got {addr!r}")
            updates["addr"], updates["port"] = host, int(port)
        checkpoint = env.get("KATZ_CHECKPOINT")
        if checkpoint:
            updates["checkpoint_path"] = checkpoint
        return dataclasses.replace(self, **updates) if updates else self


def build_tokenizer(config: ServerConfig) -> Tokenizer:
    if config.tokenizer_kind == "bpe":
        return load_bpe(config.vocab_path, config.merges_path)
    return ByteTokenizer()


@dataclass
class ChatSession:
    """One conversation: whole turns of token ids, each turn being the user
    message + separator + generated reply."""

    id: str
    created: float
    last_used: float
    turns: list = field(default_factory=list)
    detected: LangCode | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def history_ids(self) -> list:
        return [t for turn in self.turns for t in turn]


class KatzService:
    """Transport-free request handlers; the HTTP layer is a thin shell.

    The model is shared read-only across requests; each session's turns are
    guarded by that session's lock, so concurrent requests to distinct
    sessions proceed independently.
    """

    def __init__(self, model: Model, tokenizer: Tokenizer, config: ServerConfig,
                 binding: ProviderBinding | None = None, clock=time.time):
        if tokenizer.vocab_size > model.config.vocab:
            raise ConfigError(
                f"tokenizer vocab {tokenizer.vocab_size} exceeds model vocab "
                f"{model.config.vocab}"
            )
        if config.max_new_tokens >= model.config.n_ctx:
            raise ConfigError(
                f"max_new_tokens {config.max_new_tokens} leaves no prompt room "
                f"in context {model.config.n_ctx}"
            )
        self.model = model
        self.tokenizer = tokenizer
        self.config = config
        if binding is None:
            glossary = (load_glossary(config.glossary_path)
                        if config.glossary_path else None)
            binding = ProviderBinding.from_config(config.providers, glossary)
        self.binding = binding
        self._clock = clock
        self._sessions: dict[str, ChatSession] = {}
        self._store_lock = threading.Lock()

    @classmethod
    def from_config(cls, config: ServerConfig, clock=time.time) -> "KatzService":
        """Load everything up front so a bad checkpoint fails fast."""
        if not config.checkpoint_path:
            raise ConfigError("serving requires checkpoint_path (or KATZ_CHECKPOINT)")
        model = model_from_checkpoint(load_checkpoint(config.checkpoint_path))
        return cls(model, build_tokenizer(config), config, clock=clock)

    # -- endpoints --

    def health(self) -> dict:
        return {
            "status": "ok",
            "model": {
                "n_blocks": self.model.config.n_blocks,
                "params": param_count(self.model),
            },
        }

    def handle_chat(self, body: Mapping) -> dict:
        user_input = _parse_chat_input(body)
        self.session_gc()
        now = self._clock()
        requested = body.get("session_id")
        with self._store_lock:
            if requested:
                session = self._sessions.get(requested)
                if session is None:
                    raise ApiError(404, f"unknown session_id {requested!r}")
            else:
                session = ChatSession(id=uuid.uuid4().hex, created=now, last_used=now)
                self._sessions[session.id] = session
        with session.lock:
            trace, turn_tokens = self._run_turn(session, user_input)
            session.turns.append(turn_tokens)
            self._trim(session)
            session.detected = trace.detected
            session.last_used = self._clock()
        return {
            "session_id": session.id,
            "reply": trace.reply_final,
            "detected_lang": trace.detected.value,
            "tokens_generated": len(trace.reply_ids),
        }

    def handle_generate(self, body: Mapping) -> dict:
        prompt = body.get("prompt")
        if not isinstance(prompt, str) or not prompt.strip():
            raise ApiError(400, "prompt must be a nonempty string")
        max_new = _number(body, "max_new_tokens", self.config.max_new_tokens, int)
        temperature = _number(body, "temperature", self.config.temperature, float)
        top_k = _number(body, "top_k", self.config.top_k, int)
        if max_new < 0 or temperature < 0 or top_k < 0:
            raise ApiError(400, "max_new_tokens, temperature, top_k must be >= 0")
        ids = self.tokenizer.encode(prompt)
        if len(ids) + max_new > self.model.config.n_ctx:
            raise ApiError(
                400,
                f"prompt ({len(ids)} tokens) + max_new_tokens ({max_new}) "
                f"exceeds context {self.model.config.n_ctx}",
            )
        out = generate(self.model, ids, max_new, temperature=temperature,
                       top_k=top_k, stop_id=self.tokenizer.eot_id)
        new = out[len(ids):]
        text_ids = new[:-1] if new and new[-1] == self.tokenizer.eot_id else new
        return {
            "text": self.tokenizer.decode(text_ids, hide_specials=True),
            "token_count": len(new),
        }

    def session_gc(self, now: float | None = None) -> int:
        """Drop sessions idle beyond the TTL; returns how many were evicted.
        Sessions currently serving a turn are left alone."""
        now = self._clock() if now is None else now
        with self._store_lock:
            expired = [
                sid for sid, s in self._sessions.items()
                if now - s.last_used > self.config.session_ttl and not s.lock.locked()
            ]
            for sid in expired:
                del self._sessions[sid]
        return len(expired)

    def get_session(self, session_id: str) -> ChatSession:
        with self._store_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, f"unknown session_id {session_id!r}")
        return session

    # -- internals --

    def _run_turn(self, session: ChatSession, user_input) -> tuple[PipelineTrace, list]:
        tok, model, budget = self.tokenizer, self.model, self.config.max_new_tokens
        pending: dict = {}

        def responder(text_en: str):
            user_ids = tok.encode(text_en)
            limit = model.config.n_ctx - budget
            fixed = len(user_ids) + 1  # + separator
            if fixed > limit:
                raise ApiError(
                    413,
                    f"message is {len(user_ids)} tokens; at most {limit - 1} fit "
                    f"alongside a {budget}-token reply budget",
                )
            total = sum(len(turn) for turn in session.turns)
            while session.turns and total + fixed > limit:
                total -= len(session.turns.pop(0))
            prompt = session.history_ids() + user_ids + [tok.sep_id]
            out = generate(model, prompt, budget,
                           temperature=self.config.temperature,
                           top_k=self.config.top_k, stop_id=tok.eot_id)
            new = out[len(prompt):]
            pending["turn"] = user_ids + [tok.sep_id] + list(new)
            text_ids = new[:-1] if new and new[-1] == tok.eot_id else new
            return tok.decode(text_ids, hide_specials=True), new

        trace = chat_pipeline(user_input, model, tok, self.binding,
                              responder=responder)
        return trace, pending["turn"]

    def _trim(self, session: ChatSession) -> None:
        limit = self.model.config.n_ctx - self.config.max_new_tokens
        total = sum(len(turn) for turn in session.turns)
        while session.turns and total > limit:
            total -= len(session.turns.pop(0))


def _parse_chat_input(body: Mapping):
    if not isinstance(body, Mapping):
        raise ApiError(400, "request body must be a JSON object")
    lang = body.get("lang", "auto")
    if lang != "auto":
        raise ApiError(400, f'only lang "auto" is supported, got {lang!r}')
    message, audio = body.get("message"), body.get("audio")
    if (message is None) == (audio is None):
        raise ApiError(400, "provide exactly one of 'message' or 'audio'")
    if message is not None:
        if not isinstance(message, str) or not message.strip():
            raise ApiError(400, "message must be a nonempty string")
        return message
    if not isinstance(audio, str) or not audio:
        raise ApiError(400, "audio must be base64 text")
    try:
        payload = base64.b64decode(audio, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ApiError(400, f"audio is not valid base64: {exc}") from exc
    return AudioInput(payload, body.get("media_type", MOCK_AUDIO_TYPE))


def _number(body: Mapping, key: str, default, kind):
    value = body.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ApiError(400, f"{key} must be a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ApiError(400, f"{key} must be an integer, got {value!r}")
    return kind(value)


def _error_payload(exc: Exception) -> tuple[int, dict]:
    if isinstance(exc, ApiError):
        status = exc.status
    elif isinstance(exc, UpstreamError):
        status = 502
    elif isinstance(exc, ContextLengthError):
        status = 413
    elif isinstance(exc, (UnsupportedLanguageError, DataError, ConfigError)):
        status = 400
    else:
        status = 500
    body = {"error": str(exc)}
    stage = getattr(exc, "stage", None)
    if stage:
        body["stage"] = stage
    return status, body


class KatzRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: KatzService  # bound by build_server

    def do_GET(self):
        if self.path == "/v1/health":
            self._reply(200, self.service.health())
        else:
            self._reply(404, {"error": f"no such endpoint {self.path}"})

    def do_POST(self):
        try:
            body = self._read_json()
            if self.path == "/v1/chat":
                self._reply(200, self.service.handle_chat(body))
            elif self.path == "/v1/generate":
                self._reply(200, self.service.handle_generate(body))
            else:
                self._reply(404, {"error": f"no such endpoint {self.path}"})
        except Exception as exc:  # every failure maps to a JSON error body
            status, payload = _error_payload(exc)
            self._reply(status, payload)

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw or b"{}")
        except ValueError as exc:
            raise ApiError(400, f"request body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise ApiError(400, "request body must be a JSON object")
        return body

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # stay quiet; errors surface in responses
        pass


def build_server(service: KatzService) -> ThreadingHTTPServer:
    handler = type("BoundKatzHandler", (KatzRequestHandler,), {"service": service})
    return ThreadingHTTPServer((service.config.addr, service.config.port), handler)


def run_server(config: ServerConfig) -> None:
    """Blocking entry point used by the command line."""
    service = KatzService.from_config(config)
    server = build_server(service)
    try:
        server.serve_forever()
    finally:
        server.server_close()

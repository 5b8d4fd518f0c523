"""Service tests: config parsing, the three endpoints, session lifecycle,
TTL eviction, and concurrent multi-session integrity over real HTTP."""

import base64
import json
import threading

import pytest
import requests

from katzgpt.errors import CheckpointError, ConfigError, UnsupportedLanguageError, UpstreamError
from katzgpt.lingua import LangCode, MockDetector, MockStt, ProviderBinding
from katzgpt.model import generate, init_model, param_count_formula
from katzgpt.service import (
    ApiError,
    ChatSession,
    KatzService,
    ServerConfig,
    build_server,
)
from katzgpt.tokenizer import ByteTokenizer
from katzgpt.training import TrainConfig, save_checkpoint, train
from tests.test_model import tiny_config
from tests.test_training import Example


def shifted_example(tok, text):
    ids = tok.encode(text) + [tok.eot_id]
    return Example(ids, ids[1:] + [tok.eot_id], [True] * len(ids))


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    """A tiny model memorizing 'the sky is blue', checkpointed to disk."""
    tok = ByteTokenizer()
    model = init_model(
        tiny_config(vocab=tok.vocab_size, n_ctx=64, d_model=16, d_head=8, d_ff=32),
        seed=0,
    )
    train(model, [shifted_example(tok, "the sky is blue")],
          TrainConfig(epochs=300, batch_size=1, lr=1e-2, weight_decay=0.0, seed=0))
    path = tmp_path_factory.mktemp("ckpt") / "overfit.katz"
    save_checkpoint(str(path), model)
    return model, tok, str(path)


@pytest.fixture(scope="module")
def service(overfit):
    _, _, path = overfit
    config = ServerConfig(port=0, checkpoint_path=path, max_new_tokens=16)
    return KatzService.from_config(config)


# --- ServerConfig ---

def test_config_validation():
    with pytest.raises(ConfigError):
        ServerConfig(session_ttl=0)
    with pytest.raises(ConfigError):
        ServerConfig(max_new_tokens=0)
    with pytest.raises(ConfigError):
        ServerConfig(tokenizer_kind="word")
    with pytest.raises(ConfigError):
        ServerConfig(tokenizer_kind="bpe")  # missing vocab/merges paths
    with pytest.raises(ConfigError):
        ServerConfig(temperature=-1)


def test_config_from_file_and_env(tmp_path):
    p = tmp_path / "server.json"
    p.write_text(json.dumps({"port": 9001, "max_new_tokens": 32}))
    config = ServerConfig.from_file(str(p))
    assert (config.port, config.max_new_tokens) == (9001, 32)

    p.write_text(json.dumps({"prot": 9001}))
    with pytest.raises(ConfigError, match="unknown config keys"):
        ServerConfig.from_file(str(p))

    env = {"KATZ_ADDR": "0.0.0.0:7777", "KATZ_CHECKPOINT": "/tmp/m.katz"}
    over = ServerConfig().with_env_overrides(env)
    assert (over.addr, over.port, over.checkpoint_path) == ("0.0.0.0", 7777, "/tmp/m.katz")
    assert ServerConfig().with_env_overrides({}) == ServerConfig()
    with pytest.raises(ConfigError):
        ServerConfig().with_env_overrides({"KATZ_ADDR": "no-port"})


def test_startup_fails_fast_on_bad_checkpoint(tmp_path):
    bad = tmp_path / "bad.katz"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        KatzService.from_config(ServerConfig(checkpoint_path=str(bad)))
    with pytest.raises(ConfigError):
        KatzService.from_config(ServerConfig())  # no checkpoint at all


# --- health and generate ---

def test_health_reports_true_param_count(service):
    body = service.health()
    assert body["status"] == "ok"
    assert body["model"]["n_blocks"] == service.model.config.n_blocks
    assert body["model"]["params"] == param_count_formula(service.model.config)


def test_generate_reproduces_overfit_answer(service):
    out = service.handle_generate({"prompt": "the sky is", "max_new_tokens": 16})
    assert out["text"] == " blue"
    assert out["token_count"] == len(" blue") + 1  # continuation plus end marker


def test_generate_zero_budget_and_determinism(service):
    out = service.handle_generate({"prompt": "anything", "max_new_tokens": 0})
    assert out == {"text": "", "token_count": 0}
    first = service.handle_generate({"prompt": "the sky", "max_new_tokens": 8})
    second = service.handle_generate({"prompt": "the sky", "max_new_tokens": 8})
    assert first == second


def test_generate_validation(service):
    n_ctx = service.model.config.n_ctx
    with pytest.raises(ApiError) as err:
        service.handle_generate({"prompt": "x" * n_ctx, "max_new_tokens": 8})
    assert err.value.status == 400
    for bad in ({}, {"prompt": ""}, {"prompt": 3},
                {"prompt": "x", "max_new_tokens": "many"},
                {"prompt": "x", "max_new_tokens": 1.5},
                {"prompt": "x", "temperature": True}):
        with pytest.raises(ApiError) as err:
            service.handle_generate(bad)
        assert err.value.status == 400


# --- chat sessions ---

def test_chat_fresh_session_and_continuity(service):
    model, tok = service.model, service.tokenizer
    first = service.handle_chat({"message": "the sky"})
    sid = first["session_id"]
    assert sid and first["detected_lang"] == "en"

    # The first turn is exactly message + separator + generated reply.
    prompt = tok.encode("the sky") + [tok.sep_id]
    direct = generate(model, prompt, service.config.max_new_tokens,
                      stop_id=tok.eot_id)
    session = service.get_session(sid)
    assert session.turns[0] == prompt + direct[len(prompt):]
    assert first["tokens_generated"] == len(direct) - len(prompt)

    # The second turn is conditioned on the first exchange.
    second = service.handle_chat({"session_id": sid, "message": "is blue"})
    assert second["session_id"] == sid
    history = session.history_ids()
    turn2_prompt = session.turns[0] + tok.encode("is blue") + [tok.sep_id]
    direct2 = generate(model, turn2_prompt, service.config.max_new_tokens,
                       stop_id=tok.eot_id)
    assert history == turn2_prompt + direct2[len(turn2_prompt):]
    assert session.turns == [session.turns[0], history[len(session.turns[0]):]]


def test_chat_identical_fresh_requests_identical_replies(service):
    a = service.handle_chat({"message": "the sky is"})
    b = service.handle_chat({"message": "the sky is"})
    assert a["session_id"] != b["session_id"]
    assert a["reply"] == b["reply"]
    assert a["tokens_generated"] == b["tokens_generated"]


def test_chat_detects_chinese(service):
    out = service.handle_chat({"message": "截止日期是什么时候"})
    assert out["detected_lang"] == "zh"
    session = service.get_session(out["session_id"])
    assert session.detected is LangCode.ZH


def test_chat_audio_equals_typed(service):
    text = "the sky is"
    typed = service.handle_chat({"message": text})
    spoken = service.handle_chat({"audio": base64.b64encode(text.encode()).decode()})
    assert spoken["reply"] == typed["reply"]
    assert spoken["tokens_generated"] == typed["tokens_generated"]


def test_chat_request_validation(service):
    cases = [
        {},  # neither message nor audio
        {"message": "hi", "audio": "aGk="},
        {"message": "   "},
        {"message": "hi", "lang": "fr"},
        {"audio": "not base64!!"},
    ]
    for body in cases:
        with pytest.raises(ApiError) as err:
            service.handle_chat(body)
        assert err.value.status == 400
    with pytest.raises(ApiError) as err:
        service.handle_chat({"session_id": "nope", "message": "hi"})
    assert err.value.status == 404
    with pytest.raises(UnsupportedLanguageError):
        service.handle_chat({"message": "12345 !!!"})
    with pytest.raises(ApiError) as err:
        service.handle_chat({"message": "x" * 200})
    assert err.value.status == 413


def test_history_evicts_whole_oldest_turns(service):
    limit = service.model.config.n_ctx - service.config.max_new_tokens
    sid = None
    seen = []
    for k in range(6):
        body = {"message": f"turn number {k}"}
        if sid:
            body["session_id"] = sid
        sid = service.handle_chat(body)["session_id"]
        session = service.get_session(sid)
        seen.append([list(t) for t in session.turns])
        assert len(session.history_ids()) <= limit
    final = seen[-1]
    assert len(final) < 6  # something was evicted
    # Remaining turns are a suffix of the conversation: the newest turn of
    # step k is always the last turn recorded at step k.
    news = [step[-1] for step in seen]
    assert final == news[len(news) - len(final):]


# --- TTL garbage collection ---

def test_session_gc(overfit):
    model, tok, _ = overfit
    now = [1000.0]
    service = KatzService(model, tok,
                          ServerConfig(max_new_tokens=8, session_ttl=60),
                          clock=lambda: now[0])
    assert service.session_gc() == 0
    sid = service.handle_chat({"message": "hello"})["session_id"]
    now[0] += 30
    assert service.session_gc() == 0  # still fresh
    service.get_session(sid)
    now[0] += 61
    assert service.session_gc() == 1
    with pytest.raises(ApiError) as err:
        service.handle_chat({"session_id": sid, "message": "hello"})
    assert err.value.status == 404


def test_gc_skips_session_mid_turn(overfit):
    model, tok, _ = overfit
    now = [0.0]
    service = KatzService(model, tok,
                          ServerConfig(max_new_tokens=8, session_ttl=1),
                          clock=lambda: now[0])
    sid = service.handle_chat({"message": "hello"})["session_id"]
    now[0] += 100
    session = service.get_session(sid)
    with session.lock:
        assert service.session_gc() == 0
    assert service.session_gc() == 1


# --- HTTP layer ---

@pytest.fixture(scope="module")
def http_service(service):
    server = build_server(service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield service, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_http_health(http_service):
    service, base = http_service
    resp = requests.get(base + "/v1/health", timeout=10)
    assert resp.status_code == 200
    assert resp.json() == service.health()


def test_http_chat_round_trip(http_service):
    _, base = http_service
    first = requests.post(base + "/v1/chat", json={"message": "the sky"}, timeout=10)
    assert first.status_code == 200
    sid = first.json()["session_id"]
    second = requests.post(base + "/v1/chat",
                           json={"session_id": sid, "message": "is blue"}, timeout=10)
    assert second.status_code == 200
    assert second.json()["session_id"] == sid


def test_http_error_statuses(http_service):
    _, base = http_service
    assert requests.post(base + "/v1/chat", data=b"{broken",
                         timeout=10).status_code == 400
    assert requests.post(base + "/v1/chat", json={"session_id": "nope", "message": "x"},
                         timeout=10).status_code == 404
    assert requests.post(base + "/v1/chat", json={"message": "12345 !!!"},
                         timeout=10).status_code == 400
    assert requests.post(base + "/v1/nope", json={}, timeout=10).status_code == 404
    assert requests.get(base + "/v1/nope", timeout=10).status_code == 404
    over = {"prompt": "x", "max_new_tokens": 10_000}
    assert requests.post(base + "/v1/generate", json=over, timeout=10).status_code == 400


class FailingTranslator:
    def translate(self, text, source, target):
        raise UpstreamError("translate", "provider down")


def test_http_pipeline_error_is_502(overfit):
    model, tok, _ = overfit
    service = KatzService(model, tok, ServerConfig(port=0, max_new_tokens=8),
                          binding=ProviderBinding(MockStt(), MockDetector(),
                                                  FailingTranslator()))
    server = build_server(service)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        base = f"http://127.0.0.1:{server.server_address[1]}"
        resp = requests.post(base + "/v1/chat",
                             json={"message": "截止日期是什么时候"}, timeout=10)
        assert resp.status_code == 502
        assert resp.json()["stage"] == "translate"
    finally:
        server.shutdown()
        server.server_close()


def test_concurrent_sessions_do_not_interleave(http_service, overfit):
    service, base = http_service
    model, tok, _ = overfit
    n_sessions, n_turns = 8, 10
    results: dict[int, list] = {}
    errors: list = []

    def converse(i):
        try:
            sid = None
            replies = []
            for k in range(n_turns):
                body = {"message": f"speaker {i} turn {k}"}
                if sid:
                    body["session_id"] = sid
                resp = requests.post(base + "/v1/chat", json=body, timeout=60)
                assert resp.status_code == 200, resp.text
                data = resp.json()
                sid = data["session_id"]
                replies.append(data["reply"])
            results[i] = [sid, replies]
        except Exception as exc:  # surface thread failures in the main test
            errors.append((i, exc))

    threads = [threading.Thread(target=converse, args=(i,)) for i in range(n_sessions)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors, errors
    assert len({results[i][0] for i in results}) == n_sessions

    # Replay each conversation on a fresh single-threaded service: histories
    # and replies must match exactly (no cross-session contamination).
    for i in range(n_sessions):
        replay = KatzService(model, tok, service.config)
        sid = None
        for k in range(n_turns):
            body = {"message": f"speaker {i} turn {k}"}
            if sid:
                body["session_id"] = sid
            out = replay.handle_chat(body)
            sid = out["session_id"]
            assert out["reply"] == results[i][1][k], (i, k)
        expected = replay.get_session(sid).history_ids()
        actual = service.get_session(results[i][0]).history_ids()
        assert actual == expected, i

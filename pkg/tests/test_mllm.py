import base64
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import pytest

from cirque.errors import (
    ApiRefusal,
    ApiTimeout,
    EmptyCompletion,
    TransportError,
)
from cirque.grid import GridSpec, compose_grid, encode_png
from cirque.mllm import (
    MllmClient,
    MllmConfig,
    clean_caption,
    generate_target_caption,
    load_template,
    mock_state,
    register_responder,
    rerank_call,
    unregister_responder,
)
from cirque.mllm.prompts import caption_messages, data_url, rerank_messages

import numpy as np

PNG = encode_png(np.zeros((8, 8, 3), dtype=np.uint8))


def _cfg(endpoint, **kw):
    kw.setdefault("backoff_base", 0.0)
    return MllmConfig(endpoint_url=endpoint, model_name="mock-model", **kw)


# templates ---------------------------------------------------------------------


def test_builtin_templates_load():
    caption = load_template("caption")
    assert caption.kind == "caption" and len(caption.few_shot) == 3
    assert load_template("rerank").kind == "rerank"
    assert load_template("rerank_caption_intent").kind == "rerank_caption_intent"


def test_caption_template_requires_three_exemplars(tmp_path):
    bad = {"kind": "caption", "version": "x", "system_text": "s", "few_shot": [], "rules": []}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ValueError):
        load_template("caption", path)


def test_temperature_default_is_one():
    cfg = MllmConfig(endpoint_url="mock:echo", model_name="m")
    assert cfg.temperature == 1.0


# message assembly -----------------------------------------------------------------


def test_data_url_sniffs_mime():
    assert data_url(PNG).startswith("data:image/png;base64,")
    assert data_url(b"\xff\xd8\xff\xe0rest").startswith("data:image/jpeg;base64,")
    with pytest.raises(ValueError):
        data_url(b"not an image")


def test_rerank_request_part_order():
    tmpl = load_template("rerank")
    messages = rerank_messages(tmpl, "make it red", PNG, PNG)
    content = messages[-1]["content"]
    assert [part["type"] for part in content] == ["text", "image_url", "image_url"]


def test_caption_intent_request_omits_reference():
    tmpl = load_template("rerank_caption_intent")
    messages = rerank_messages(tmpl, "a red car", None, PNG)
    content = messages[-1]["content"]
    assert [part["type"] for part in content] == ["text", "image_url"]
    assert "a red car" in content[0]["text"]


def test_caption_messages_carry_exemplars_and_image():
    tmpl = load_template("caption")
    messages = caption_messages(tmpl, "add snow", PNG)
    assert messages[0]["role"] == "system"
    assert "Example 3" in messages[0]["content"]
    assert messages[1]["content"][0]["type"] == "text"
    assert messages[1]["content"][1]["type"] == "image_url"


# caption generation ------------------------------------------------------------------


def test_echo_mock_contract():
    out = generate_target_caption(PNG, "make it red", _cfg("mock:echo"), load_template("caption"))
    assert out == "TARGET: make it red"
    assert out.retry_count == 0


def test_caption_strips_quotes_and_newlines():
    cfg = _cfg('mock:fixed:  "A red\nhouse."  ')
    out = generate_target_caption(PNG, "x", cfg, load_template("caption"))
    assert out == "A red house."


def test_refusal_detection():
    cfg = _cfg("mock:fixed:I'm sorry, but I can't help with that request.", max_retries=1)
    with pytest.raises(ApiRefusal) as info:
        generate_target_caption(PNG, "x", cfg, load_template("caption"))
    assert info.value.retry_count == 1


def test_empty_completion_raises():
    cfg = _cfg("mock:fixed:", max_retries=0)
    with pytest.raises(EmptyCompletion):
        generate_target_caption(PNG, "x", cfg, load_template("caption"))


def test_quote_only_completion_is_empty():
    cfg = _cfg('mock:fixed:""', max_retries=0)
    with pytest.raises(EmptyCompletion):
        generate_target_caption(PNG, "x", cfg, load_template("caption"))


def test_clean_caption_direct():
    assert clean_caption(' “A cat.” ') == "A cat."
    with pytest.raises(EmptyCompletion):
        clean_caption("   ")


# rerank calls ---------------------------------------------------------------------


def test_fixed_permutation_mock_verbatim():
    out = rerank_call(PNG, "x", PNG, _cfg("mock:fixed:[3, 1, 0, 2]"), load_template("rerank"))
    assert out == "[3, 1, 0, 2]"


def test_identity_and_reverse_mocks():
    assert rerank_call(PNG, "x", PNG, _cfg("mock:identity:4"), load_template("rerank")) == "[0, 1, 2, 3]"
    assert rerank_call(PNG, "x", PNG, _cfg("mock:reverse:4"), load_template("rerank")) == "[3, 2, 1, 0]"


def test_registry_responder_sees_request():
    def responder(request):
        assert request.kind == "rerank"
        assert request.image_count == 2
        return f"[0] for {request.text}"

    register_responder("probe", responder)
    try:
        out = rerank_call(PNG, "find the dog", PNG, _cfg("mock:registry:probe"), load_template("rerank"))
        assert out == "[0] for find the dog"
    finally:
        unregister_responder("probe")


# retry machinery -------------------------------------------------------------------


def test_transport_error_retried_until_budget():
    calls = {"n": 0}

    def flaky(request):
        calls["n"] += 1
        raise TransportError("connection refused")

    register_responder("dead", flaky)
    try:
        cfg = _cfg("mock:registry:dead", max_retries=3)
        with pytest.raises(TransportError) as info:
            rerank_call(PNG, "x", PNG, cfg, load_template("rerank"))
        assert calls["n"] == 4  # 1 + max_retries
        assert info.value.retry_count == 3
    finally:
        unregister_responder("dead")


def test_429_then_success_reports_retry_count():
    state = {"n": 0}

    def once(request):
        state["n"] += 1
        if state["n"] == 1:
            raise TransportError("HTTP 429")
        return "[1, 0]"

    register_responder("flaky", once)
    try:
        out = rerank_call(PNG, "x", PNG, _cfg("mock:registry:flaky", max_retries=2),
                          load_template("rerank"))
        assert out == "[1, 0]"
        assert out.retry_count == 1
    finally:
        unregister_responder("flaky")


def test_backoff_is_exponential_with_jitter():
    delays = []

    def broken(request):
        raise ApiTimeout("slow backend")

    register_responder("slow", broken)
    try:
        cfg = _cfg("mock:registry:slow", max_retries=3, backoff_base=0.5)
        client = MllmClient(cfg, sleep=delays.append)
        with pytest.raises(ApiTimeout):
            client.rerank_call(PNG, "x", PNG, load_template("rerank"))
    finally:
        unregister_responder("slow")
    assert len(delays) == 3
    for attempt, delay in enumerate(delays, start=1):
        low = 0.5 * 0.5 * 2 ** (attempt - 1)
        high = 0.5 * 1.5 * 2 ** (attempt - 1)
        assert low <= delay <= high


def test_max_inflight_budget_enforced():
    def slow(request):
        time.sleep(0.02)
        return "[0]"

    register_responder("napper", slow)
    try:
        endpoint = "mock:registry:napper"
        cfg = _cfg(endpoint, max_inflight=3)
        client = MllmClient(cfg)
        tmpl = load_template("rerank")
        with ThreadPoolExecutor(max_workers=10) as pool:
            futures = [
                pool.submit(client.rerank_call, PNG, f"q{i}", PNG, tmpl) for i in range(12)
            ]
            for future in futures:
                future.result()
        assert mock_state(endpoint).max_inflight_seen <= 3
        assert mock_state(endpoint).calls == 12
    finally:
        unregister_responder("napper")


def test_client_is_shareable_across_threads():
    cfg = _cfg("mock:echo", max_inflight=4)
    client = MllmClient(cfg)
    tmpl = load_template("caption")
    with ThreadPoolExecutor(max_workers=8) as pool:
        outs = list(pool.map(lambda i: client.generate_target_caption(PNG, f"m{i}", tmpl), range(16)))
    assert sorted(outs) == sorted(f"TARGET: m{i}" for i in range(16))


# HTTP path (served by a loopback stub) ----------------------------------------------


def test_http_roundtrip_and_payload_shape():
    from http.server import BaseHTTPRequestHandler, HTTPServer

    seen = {}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            seen["path"] = self.path
            seen["body"] = body
            seen["auth"] = self.headers.get("Authorization")
            payload = {"choices": [{"message": {"content": "[2, 0, 1]"}}]}
            raw = json.dumps(payload).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        cfg = MllmConfig(
            endpoint_url=f"http://127.0.0.1:{server.server_port}/v1",
            model_name="test-model",
            temperature=0.5,
            backoff_base=0.0,
        )
        client = MllmClient(cfg, api_key="sk-test")
        out = client.rerank_call(PNG, "swap colors", PNG, load_template("rerank"))
    finally:
        server.shutdown()
    assert out == "[2, 0, 1]"
    assert seen["path"] == "/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["model"] == "test-model"
    assert seen["body"]["temperature"] == 0.5
    image_parts = [
        p for p in seen["body"]["messages"][-1]["content"] if p["type"] == "image_url"
    ]
    assert len(image_parts) == 2
    encoded = image_parts[0]["image_url"]["url"].split(",", 1)[1]
    assert base64.b64decode(encoded) == PNG


def test_http_error_status_is_transport_error():
    from http.server import BaseHTTPRequestHandler, HTTPServer

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            self.send_response(500)
            self.send_header("Content-Length", "0")
            self.end_headers()

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        cfg = MllmConfig(
            endpoint_url=f"http://127.0.0.1:{server.server_port}",
            model_name="m",
            max_retries=1,
            backoff_base=0.0,
        )
        with pytest.raises(TransportError):
            MllmClient(cfg, api_key="k").rerank_call(PNG, "x", PNG, load_template("rerank"))
    finally:
        server.shutdown()

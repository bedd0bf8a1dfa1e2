import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from cropkit.backends import (
    BackendConfig,
    BackendError,
    ChatMessage,
    HttpChatBackend,
    ImagePart,
    ReplayBackend,
    ReplayMissError,
    ReplayStore,
    ScriptedBackend,
    TextPart,
    message_digest,
)

PNG_1PX = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR4nGNgYGBgAAAABQABh6FO1AAAAABJRU5ErkJggg=="
)


def msg(text="hello", image=False):
    parts = [TextPart(text)]
    if image:
        parts.append(ImagePart(PNG_1PX))
    return [ChatMessage(role="user", parts=tuple(parts))]


class TestChatMessage:
    def test_role_validation(self):
        with pytest.raises(ValueError):
            ChatMessage(role="robot", parts=(TextPart("x"),))

    def test_parts_nonempty(self):
        with pytest.raises(ValueError):
            ChatMessage(role="user", parts=())


class TestScriptedBackend:
    def test_sequential_then_repeat_last(self):
        backend = ScriptedBackend({"analysis": ["one", "two"]})
        assert backend.complete(msg(), "analysis") == "one"
        assert backend.complete(msg(), "analysis") == "two"
        assert backend.complete(msg(), "analysis") == "two"

    def test_unknown_stage(self):
        backend = ScriptedBackend({})
        with pytest.raises(BackendError):
            backend.complete(msg(), "analysis")


class TestReplay:
    def test_record_then_playback(self, tmp_path):
        store = ReplayStore(tmp_path / "replay")
        inner = ScriptedBackend({"analysis": "recorded response"})
        recorder = ReplayBackend(store, ReplayBackend.RECORD, inner=inner)
        first = recorder.complete(msg("prompt", image=True), "analysis")

        player = ReplayBackend(ReplayStore(tmp_path / "replay"), ReplayBackend.PLAY)
        assert player.complete(msg("prompt", image=True), "analysis") == first

    def test_miss_on_altered_prompt(self, tmp_path):
        store = ReplayStore(tmp_path / "replay")
        recorder = ReplayBackend(store, ReplayBackend.RECORD, inner=ScriptedBackend({"analysis": "r"}))
        recorder.complete(msg("original"), "analysis")
        player = ReplayBackend(store, ReplayBackend.PLAY)
        with pytest.raises(ReplayMissError):
            player.complete(msg("altered"), "analysis")

    def test_digest_depends_on_stage_and_content(self):
        a = message_digest(msg("x"), "analysis")
        assert a == message_digest(msg("x"), "analysis")
        assert a != message_digest(msg("x"), "proposal")
        assert a != message_digest(msg("y"), "analysis")
        assert message_digest(msg("x", image=True), "analysis") != a

    def test_mode_validation(self, tmp_path):
        store = ReplayStore(tmp_path / "replay")
        with pytest.raises(ValueError):
            ReplayBackend(store, "stream")
        with pytest.raises(ValueError):
            ReplayBackend(store, ReplayBackend.RECORD)


class _StubHandler(BaseHTTPRequestHandler):
    canned = "stub answer"
    fail_status = None
    requests: list[dict] = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests.append(body)
        if self.fail_status:
            self.send_response(self.fail_status)
            self.end_headers()
            self.wfile.write(b"boom")
            return
        payload = {"choices": [{"message": {"role": "assistant", "content": self.canned}}]}
        data = json.dumps(payload).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.requests = []
    _StubHandler.fail_status = None
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()
    thread.join(timeout=5)


class TestHttpChatBackend:
    def test_wire_shape_and_parse(self, stub_server):
        backend = HttpChatBackend(BackendConfig(endpoint=stub_server, model="test-model"))
        out = backend.complete(msg("describe", image=True), "analysis")
        assert out == "stub answer"
        body = _StubHandler.requests[-1]
        assert body["model"] == "test-model"
        assert body["temperature"] == 0.1
        assert body["top_p"] == 0.95
        content = body["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "describe"}
        assert content[1]["type"] == "image_url"
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_matches_scripted_mode(self, stub_server):
        http = HttpChatBackend(BackendConfig(endpoint=stub_server))
        scripted = ScriptedBackend({"analysis": "stub answer"})
        assert http.complete(msg("q"), "analysis") == scripted.complete(msg("q"), "analysis")

    def test_http_error_raises(self, stub_server):
        _StubHandler.fail_status = 500
        backend = HttpChatBackend(BackendConfig(endpoint=stub_server))
        with pytest.raises(BackendError):
            backend.complete(msg("q"), "analysis")

    def test_transport_error(self):
        backend = HttpChatBackend(BackendConfig(endpoint="http://127.0.0.1:9/unreachable", timeout_s=0.5))
        with pytest.raises(BackendError):
            backend.complete(msg("q"), "analysis")


class TestBackendConfig:
    def test_paper_defaults(self):
        cfg = BackendConfig()
        assert cfg.temperature == 0.1
        assert cfg.top_p == 0.95
        assert cfg.max_retries == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            BackendConfig(temperature=-0.1)
        with pytest.raises(ValueError):
            BackendConfig(top_p=0.0)
        with pytest.raises(ValueError):
            BackendConfig(max_retries=-1)

"""Gateway tests: templating, mock scripting, retries, concurrency cap."""

from __future__ import annotations

import json
import threading
import time

import pytest

from transcreate.gateway import (
    CompletionRequest,
    Gateway,
    GatewayTimeoutError,
    HttpBackend,
    HttpStatusError,
    MissingApiKeyError,
    MissingBindingError,
    MockBackend,
    MockScriptError,
    PromptTemplate,
    ProviderConfig,
    RetriesExhaustedError,
    UnknownPlaceholderError,
    load_prompt_dir,
    load_template,
    render_template,
)
from transcreate.pipeline import STEP_NAMES, default_prompt_dir


def request(user="hello"):
    return CompletionRequest(system="sys", user=user)


class TestRenderTemplate:
    def test_substitution(self):
        template = PromptTemplate("t", "sys", "Topic: {topic}")
        assert render_template(template, {"topic": "2.b"}) == ("sys", "Topic: 2.b")

    def test_missing_binding(self):
        template = PromptTemplate("t", "sys", "Topic: {topic}")
        with pytest.raises(MissingBindingError) as err:
            render_template(template, {})
        assert err.value.name == "topic"

    def test_unknown_binding(self):
        template = PromptTemplate("t", "sys", "Topic: {topic}")
        with pytest.raises(UnknownPlaceholderError) as err:
            render_template(template, {"topic": "2.b", "x": "y"})
        assert err.value.name == "x"

    def test_single_pass(self):
        # A value containing placeholder syntax is not re-substituted.
        template = PromptTemplate("t", "sys", "{a} and {b}")
        _, user = render_template(template, {"a": "{b}", "b": "two"})
        assert user == "{b} and two"

    def test_repeated_placeholder(self):
        template = PromptTemplate("t", "sys", "{x}, again {x}")
        assert render_template(template, {"x": "1"})[1] == "1, again 1"


class TestTemplateFiles:
    def test_load_bundled_step_templates(self):
        templates = load_prompt_dir(default_prompt_dir())
        for name in STEP_NAMES.values():
            assert name in templates
        assert "judge_bloom" in templates
        assert templates["extract_topic"].placeholders() == {"passage", "topic_list"}

    def test_load_template_file(self, tmp_path):
        path = tmp_path / "custom.txt"
        path.write_text(
            "# Placeholders: {x}\n[system]\npersona\n[user]\nsay {x}\n", encoding="utf-8"
        )
        template = load_template(path)
        assert template.name == "custom"
        assert template.system_text == "persona"
        assert template.user_template == "say {x}"


class TestMockBackend:
    def test_scripted_reply(self):
        gateway = Gateway(MockBackend({"step": ["2.b"]}), backoff_base_s=0)
        assert gateway.complete(request(), step="step") == "2.b"

    def test_fifo_order(self):
        gateway = Gateway(MockBackend({"step": ["one", "two"]}), backoff_base_s=0)
        assert gateway.complete(request(), step="step") == "one"
        assert gateway.complete(request(), step="step") == "two"

    def test_exhausted_script(self):
        gateway = Gateway(MockBackend({"step": []}), backoff_base_s=0)
        with pytest.raises(MockScriptError):
            gateway.complete(request(), step="step")

    def test_fail_twice_then_ok(self):
        script = {"step": [{"error": "timeout"}, {"error": "timeout"}, "ok"]}
        gateway = Gateway(MockBackend(script), max_retries=3, backoff_base_s=0)
        result = gateway.complete_ex(request(), step="step")
        assert result.text == "ok"
        assert result.attempts == 3

    def test_retries_exhausted(self):
        script = {"step": [{"error": "timeout"}] * 4}
        gateway = Gateway(MockBackend(script), max_retries=3, backoff_base_s=0)
        with pytest.raises(RetriesExhaustedError):
            gateway.complete(request(), step="step")

    def test_non_transient_http_not_retried(self):
        script = {"step": [{"error": "http", "status": 400}, "never"]}
        gateway = Gateway(MockBackend(script), max_retries=3, backoff_base_s=0)
        with pytest.raises(HttpStatusError):
            gateway.complete(request(), step="step")

    def test_wildcard_queue(self):
        gateway = Gateway(MockBackend({"*": ["any"]}), backoff_base_s=0)
        assert gateway.complete(request(), step="unknown-step") == "any"

    def test_from_file(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"step": ["reply"]}), encoding="utf-8")
        gateway = Gateway(MockBackend.from_file(path), backoff_base_s=0)
        assert gateway.complete(request(), step="step") == "reply"


class TestRequestLog:
    def test_log_records_every_exchange(self, tmp_path):
        log_path = tmp_path / "requests.jsonl"
        script = {"step": [{"error": "timeout"}, "fine", "next"]}
        gateway = Gateway(
            MockBackend(script), max_retries=2, backoff_base_s=0, log_path=log_path
        )
        gateway.complete(request("first"), step="step")
        gateway.complete(request("second"), step="step")
        lines = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[0]["attempts"] == 2
        assert lines[0]["response"] == "fine"
        assert lines[1]["user"] == "second"
        assert all("latency_s" in line for line in lines)


class SlowBackend:
    """Counts concurrent sends so the in-flight cap is observable."""

    def __init__(self):
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def send(self, req, step):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.02)
        with self.lock:
            self.active -= 1
        return "ok"


class TestConcurrencyCap:
    def test_max_in_flight(self):
        backend = SlowBackend()
        gateway = Gateway(backend, max_in_flight=3, backoff_base_s=0)
        threads = [
            threading.Thread(target=gateway.complete, args=(request(),))
            for _ in range(12)
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert backend.peak <= 3


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class TestHttpBackend:
    def config(self):
        return ProviderConfig(endpoint="https://example.test/v1/chat", api_key_env="TEST_KEY")

    def test_missing_api_key(self, monkeypatch):
        monkeypatch.delenv("TEST_KEY", raising=False)
        backend = HttpBackend(self.config())
        with pytest.raises(MissingApiKeyError):
            backend.send(request(), None)

    def test_success(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "secret")
        payload = {"choices": [{"message": {"content": "fine"}}]}

        def fake_post(url, json=None, headers=None, timeout=None):
            assert headers["Authorization"] == "Bearer secret"
            assert json["messages"][1]["content"] == "hello"
            return FakeResponse(200, payload)

        monkeypatch.setattr("transcreate.gateway.requests.post", fake_post)
        assert HttpBackend(self.config()).send(request(), None) == "fine"

    def test_http_error_status(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "secret")
        monkeypatch.setattr(
            "transcreate.gateway.requests.post",
            lambda *a, **k: FakeResponse(400, text="bad request"),
        )
        with pytest.raises(HttpStatusError) as err:
            HttpBackend(self.config()).send(request(), None)
        assert err.value.status == 400

    def test_retry_then_success_through_gateway(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "secret")
        calls = {"n": 0}

        def flaky_post(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] < 3:
                return FakeResponse(503, text="busy")
            return FakeResponse(200, {"choices": [{"message": {"content": "done"}}]})

        monkeypatch.setattr("transcreate.gateway.requests.post", flaky_post)
        gateway = Gateway(HttpBackend(self.config()), max_retries=3, backoff_base_s=0)
        result = gateway.complete_ex(request())
        assert result.text == "done"
        assert result.attempts == 3

    def test_timeout_maps(self, monkeypatch):
        import requests as requests_lib

        monkeypatch.setenv("TEST_KEY", "secret")

        def timeout_post(*args, **kwargs):
            raise requests_lib.Timeout("too slow")

        monkeypatch.setattr("transcreate.gateway.requests.post", timeout_post)
        with pytest.raises(GatewayTimeoutError):
            HttpBackend(self.config()).send(request(), None)

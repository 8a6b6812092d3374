import logging
import os
import threading
from types import SimpleNamespace

import httpx
import openai
import pytest

from LLM_interaction.gpt_client import (
    ChatRequest,
    ChatResponse,
    FinishReason,
    LLMGateway,
    MockBackend,
    RemoteBackend,
    ResponseCache,
    RetryPolicy,
    TokenBucket,
    build_gateway,
    complete_cached,
    translate_openai_error,
)
from LLM_interaction.output_parser import parse_llm_record_list, parse_llm_string_list
from LLM_interaction.prompts import render_ad_prompt, render_group_prompt
from text_extractor.captions import CaptionEntry
from utils.errors import AuthError, BackendError, BackendUnavailable, ConfigError, ContextTooLong, TransientBackendError
from utils.run_config import RunConfig

NO_WAIT = RetryPolicy(max_attempts=5, backoff_base=0.0, backoff_max=0.0)
REQUEST = httpx.Request("POST", "https://llm.invalid/v1/chat/completions")


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(user="")
    with pytest.raises(ValueError):
        ChatRequest(user="hi", temperature=2.5)
    assert ChatRequest(user="hi", system="be brief").messages()[0] == {"role": "system", "content": "be brief"}


def test_chat_response_needs_content_on_stop():
    with pytest.raises(ValueError):
        ChatResponse(None, FinishReason.STOP)
    assert ChatResponse(None, FinishReason.LENGTH).content is None


def test_cache_key_covers_every_field():
    base = ChatRequest(user="find the ad")
    assert base.cache_key() == ChatRequest(user="find the ad").cache_key()
    variants = [ChatRequest(user="find the ads"), ChatRequest(user="find the ad", system="s"),
                ChatRequest(user="find the ad", temperature=0.7), ChatRequest(user="find the ad", model_id="gpt-4-turbo-2024-04-09")]
    keys = {v.cache_key() for v in variants}
    assert len(keys) == len(variants)
    assert base.cache_key() not in keys


def test_same_request_twice_is_served_from_cache(tmp_path, scripted_backend):
    backend = scripted_backend(["None"])
    cache = ResponseCache(str(tmp_path))
    request = ChatRequest(user="find the ad")
    first = complete_cached(request, backend, cache, NO_WAIT)
    second = complete_cached(request, backend, cache, NO_WAIT)
    assert first == second
    assert backend.calls == 1


def test_temperature_change_misses_cache(tmp_path, scripted_backend):
    backend = scripted_backend(["None"])
    cache = ResponseCache(str(tmp_path))
    complete_cached(ChatRequest(user="find the ad"), backend, cache, NO_WAIT)
    complete_cached(ChatRequest(user="find the ad", temperature=0.5), backend, cache, NO_WAIT)
    assert backend.calls == 2


def test_refresh_bypasses_cache_read(tmp_path, scripted_backend):
    backend = scripted_backend(["garbage", "None"])
    cache = ResponseCache(str(tmp_path))
    request = ChatRequest(user="find the ad")
    assert complete_cached(request, backend, cache, NO_WAIT).content == "garbage"
    assert complete_cached(request, backend, cache, NO_WAIT, refresh=True).content == "None"
    assert complete_cached(request, backend, cache, NO_WAIT).content == "None"


def test_rate_limited_twice_then_success(tmp_path, scripted_backend, caplog):
    backend = scripted_backend([TransientBackendError("slow down", status=429),
                                TransientBackendError("slow down", status=429), "None"])
    with caplog.at_level(logging.WARNING):
        response = complete_cached(ChatRequest(user="find the ad"), backend, ResponseCache(str(tmp_path)), NO_WAIT)
    assert response.content == "None"
    assert backend.calls == 3
    retries = [r for r in caplog.records if "Attempt" in r.getMessage()]
    assert len(retries) == 2
    assert "429" in retries[0].getMessage()


def test_retries_exhausted(scripted_backend):
    backend = scripted_backend([TransientBackendError("down", status=503)])
    with pytest.raises(BackendUnavailable):
        complete_cached(ChatRequest(user="find the ad"), backend, None, RetryPolicy(3, 0.0, 0.0))
    assert backend.calls == 3


@pytest.mark.parametrize("error", [AuthError("bad key"), ContextTooLong("too long")])
def test_non_transient_errors_are_not_retried(scripted_backend, error):
    backend = scripted_backend([error])
    with pytest.raises(type(error)):
        complete_cached(ChatRequest(user="find the ad"), backend, None, NO_WAIT)
    assert backend.calls == 1


def test_corrupt_cache_entry_is_a_miss(tmp_path, scripted_backend):
    cache = ResponseCache(str(tmp_path))
    request = ChatRequest(user="find the ad")
    with open(cache.path(request.cache_key()), "w", encoding="utf-8") as f:
        f.write('{"response": ')
    backend = scripted_backend(["None"])
    assert complete_cached(request, backend, cache, NO_WAIT).content == "None"
    assert backend.calls == 1


# --------------- Error translation ---------------- #
@pytest.mark.parametrize("error, expected, status", [
    (openai.RateLimitError("slow", response=httpx.Response(429, request=REQUEST), body=None), TransientBackendError, 429),
    (openai.InternalServerError("boom", response=httpx.Response(502, request=REQUEST), body=None), TransientBackendError, 502),
    (openai.APITimeoutError(request=REQUEST), TransientBackendError, None),
    (openai.AuthenticationError("key", response=httpx.Response(401, request=REQUEST), body=None), AuthError, None),
    (openai.BadRequestError("long", response=httpx.Response(400, request=REQUEST),
                            body={"code": "context_length_exceeded"}), ContextTooLong, None),
    (openai.BadRequestError("bad", response=httpx.Response(400, request=REQUEST), body=None), BackendError, None),
])
def test_translate_openai_error(error, expected, status):
    translated = translate_openai_error(error)
    assert type(translated) is expected
    if status is not None:
        assert translated.status == status


def test_remote_backend_reads_completion(monkeypatch):
    backend = RemoteBackend("https://llm.invalid/v1", "test-key")
    reply = SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content="None"), finish_reason="stop")],
                            usage=SimpleNamespace(prompt_tokens=12, completion_tokens=1))
    monkeypatch.setattr(backend.client.chat.completions, "create", lambda **kwargs: reply)
    response = backend.complete(ChatRequest(user="find the ad"))
    assert response == ChatResponse("None", FinishReason.STOP, 12, 1)


def test_remote_backend_translates_errors(monkeypatch):
    backend = RemoteBackend("https://llm.invalid/v1", "test-key")

    def rate_limited(**kwargs):
        raise openai.RateLimitError("slow", response=httpx.Response(429, request=REQUEST), body=None)

    monkeypatch.setattr(backend.client.chat.completions, "create", rate_limited)
    with pytest.raises(TransientBackendError):
        backend.complete(ChatRequest(user="find the ad"))


def test_remote_backend_needs_api_key(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("AD_PIPELINE_TEST_KEY", raising=False)
    config = RunConfig(backend="remote", api_key_env="AD_PIPELINE_TEST_KEY", work_dir="work", cache_dir="work/cache")
    with pytest.raises(ConfigError):
        build_gateway(config)
    monkeypatch.setenv("AD_PIPELINE_TEST_KEY", "sk-test")
    assert build_gateway(config).backend.remote is True


# --------------- Mock backend ---------------- #
def test_mock_backend_returns_marker_records():
    entries = [CaptionEntry("welcome back", 0.0, 5.0), CaptionEntry("this video is sponsored by nebula", 5.0, 5.0),
               CaptionEntry("use code learn", 10.0, 5.0), CaptionEntry("now the physics", 15.0, 5.0)]
    backend = MockBackend()
    response = backend.complete(ChatRequest(user=render_ad_prompt(entries)))
    records = parse_llm_record_list(response.content)
    assert [(r.text, r.start) for r in records] == [("this video is sponsored by nebula", 5.0), ("use code learn", 10.0)]
    assert backend.complete(ChatRequest(user=render_ad_prompt(entries))) == response



def test_mock_backend_returns_separated_marker_records():
    entries = [CaptionEntry("sponsored by nebula", 0.0, 5.0), CaptionEntry("now the physics", 5.0, 5.0),
               CaptionEntry("use code learn", 10.0, 5.0)]
    records = parse_llm_record_list(MockBackend().complete(ChatRequest(user=render_ad_prompt(entries))).content)
    assert [r.start for r in records] == [0.0, 10.0]

def test_mock_backend_without_marker_returns_none():
    entries = [CaptionEntry("welcome back", 0.0, 5.0), CaptionEntry("now the physics", 5.0, 5.0)]
    assert MockBackend().complete(ChatRequest(user=render_ad_prompt(entries))).content == "None"


def test_mock_backend_groups_by_prefix():
    backend = MockBackend()
    reply = backend.complete(ChatRequest(user=render_group_prompt(["solar panel", "solar flare", "black hole"])))
    assert parse_llm_string_list(reply.content) == ["solar", "black"]
    single = backend.complete(ChatRequest(user=render_group_prompt(["nebula"])))
    assert parse_llm_string_list(single.content) == ["nebula"]


# --------------- Rate limiting and concurrency ---------------- #
def test_token_bucket_waits_for_refill():
    now = [0.0]
    sleeps = []

    def sleep(seconds):
        sleeps.append(seconds)
        now[0] += seconds

    bucket = TokenBucket(rate=2.0, capacity=1.0, clock=lambda: now[0], sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    assert sleeps == [pytest.approx(0.5)]


def test_gateway_bounds_requests_in_flight(instrumented_backend):
    backend = instrumented_backend(delay=0.02)
    gateway = LLMGateway(backend, cache=None, policy=NO_WAIT, max_in_flight=2)
    threads = [threading.Thread(target=gateway.complete, args=(gateway.request(f"question {i}"),)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert backend.completed == 8
    assert backend.peak <= 2


def test_cache_files_are_complete_json(tmp_path, scripted_backend):
    cache = ResponseCache(str(tmp_path))
    complete_cached(ChatRequest(user="find the ad"), scripted_backend(["None"]), cache, NO_WAIT)
    files = os.listdir(tmp_path)
    assert len(files) == 1 and files[0].endswith(".json") and not files[0].startswith(".tmp-")

"""
gpt_client.py

Uniform access to an OpenAI-compatible chat-completions endpoint.

- `RemoteBackend` wraps the `openai` client and translates its exceptions into the pipeline's error types.
- `MockBackend` is a deterministic, rule-based stand-in used for offline runs and tests.
- `complete_cached` / `LLMGateway` add an on-disk response cache, retries with exponential backoff
  (tenacity), a bound on in-flight requests and a token-bucket rate limit.

The API key is read from the environment variable named in the run config (see utils/run_config.py).

Dependencies:
- openai
- tenacity
- tiktoken
"""

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Protocol

import openai
import tiktoken
from openai import OpenAI
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from LLM_interaction.output_parser import NO_AD, parse_llm_record_list
from LLM_interaction.prompts import AD_PROMPT_PATH, GROUP_PROMPT_PATH, estimate_tokens, format_record_list, load_template
from utils.errors import AuthError, BackendError, BackendUnavailable, ContextTooLong, TransientBackendError
from utils.utils import atomic_write_json, read_json

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-4o-2024-08-06"
DEFAULT_MARKERS = ("sponsored by", "use code", "check out our sponsor")


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    CONTENT_FILTER = "content_filter"
    OTHER = "other"

    @classmethod
    def parse(cls, value: str | None) -> "FinishReason":
        try:
            return cls(value)
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: str = ""
    model_id: str = DEFAULT_MODEL
    temperature: float = 0.0

    def __post_init__(self):
        if not self.user:
            raise ValueError("ChatRequest user message must be non-empty.")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2].")

    def messages(self) -> list[dict]:
        messages = [{"role": "system", "content": self.system}] if self.system else []
        return messages + [{"role": "user", "content": self.user}]

    def cache_key(self) -> str:
        """SHA-256 over (model_id, temperature, system, user)."""
        payload = json.dumps([self.model_id, float(self.temperature), self.system, self.user], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    content: str | None
    finish_reason: FinishReason = FinishReason.STOP
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.finish_reason is FinishReason.STOP and self.content is None:
            raise ValueError("A response that stopped normally must carry content.")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["finish_reason"] = self.finish_reason.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        return cls(d.get("content"), FinishReason.parse(d.get("finish_reason")),
                   int(d.get("prompt_tokens", 0)), int(d.get("completion_tokens", 0)))


class LlmBackend(Protocol):
    remote: bool

    def complete(self, request: ChatRequest) -> ChatResponse:
        ...


# --------------- Backends ---------------- #
def translate_openai_error(e: openai.OpenAIError) -> BackendError:
    """Maps an openai SDK exception onto the pipeline's backend errors."""
    if isinstance(e, (openai.AuthenticationError, openai.PermissionDeniedError)):
        return AuthError(str(e))
    if isinstance(e, openai.RateLimitError):
        return TransientBackendError(str(e), status=429)
    if isinstance(e, openai.APIConnectionError):  # includes timeouts
        return TransientBackendError(str(e))
    if isinstance(e, openai.BadRequestError) and "context_length_exceeded" in str(getattr(e, "code", None) or e):
        return ContextTooLong(str(e))
    if isinstance(e, openai.APIStatusError) and e.status_code >= 500:
        return TransientBackendError(str(e), status=e.status_code)
    return BackendError(str(e))


class RemoteBackend:
    """Chat completions over HTTP through the openai client. Retries are left to the gateway."""
    remote = True

    def __init__(self, base_url: str, api_key: str, timeout: float = 120.0):
        self.client = OpenAI(base_url=base_url, api_key=api_key, max_retries=0, timeout=timeout)

    def _log_token_count(self, request: ChatRequest) -> None:
        if not logger.isEnabledFor(logging.DEBUG):
            return
        try:
            encoding = tiktoken.encoding_for_model(request.model_id)
        except KeyError:
            encoding = tiktoken.get_encoding("cl100k_base")
        tokens = sum(len(encoding.encode(m["content"])) for m in request.messages())
        logger.debug(f"Sending {tokens} prompt tokens to {request.model_id}.")

    def complete(self, request: ChatRequest) -> ChatResponse:
        self._log_token_count(request)
        try:
            response = self.client.chat.completions.create(
                model=request.model_id,
                messages=request.messages(),
                temperature=request.temperature,
            )
        except openai.OpenAIError as e:
            raise translate_openai_error(e) from e

        choice = response.choices[0]
        usage = response.usage
        return ChatResponse(
            content=choice.message.content,
            finish_reason=FinishReason.parse(choice.finish_reason),
            prompt_tokens=usage.prompt_tokens if usage else 0,
            completion_tokens=usage.completion_tokens if usage else 0,
        )


def dictionary_head(keyword: str) -> str:
    """First token of a phrase; for a single word, its first letter."""
    tokens = keyword.split()
    if len(tokens) > 1:
        return tokens[0]
    return keyword[:1]


class MockBackend:
    """
    Deterministic, offline backend; a pure function of the request.

    - Ad prompt: returns every transcript record whose text contains a marker phrase, contiguous or not,
      in the prompt's record format, or `None` when no record does.
    - Grouping prompt: maps each keyword to its dictionary head (first token, or first letter of a single word).
    - Anything else: `None`.
    """
    remote = False

    def __init__(self, markers=DEFAULT_MARKERS, ad_template_path: str = AD_PROMPT_PATH,
                 group_template_path: str = GROUP_PROMPT_PATH):
        self.markers = tuple(m.lower() for m in markers)
        self.ad_template = load_template(ad_template_path)
        self.group_template = load_template(group_template_path)
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        if request.user.startswith(self.ad_template):
            content = self._find_ad(request.user[len(self.ad_template):])
        elif request.user.startswith(self.group_template):
            content = self._group(request.user[len(self.group_template):])
        else:
            content = "None"
        return ChatResponse(content, FinishReason.STOP,
                            prompt_tokens=estimate_tokens(request.system + request.user),
                            completion_tokens=estimate_tokens(content))

    def _find_ad(self, payload: str) -> str:
        records = parse_llm_record_list(payload)
        if records is NO_AD:
            return "None"
        hits = [r for r in records if any(m in r.text.lower() for m in self.markers)]
        return format_record_list(hits) if hits else "None"

    def _group(self, payload: str) -> str:
        keywords = [k.strip() for k in payload.split("\n") if k.strip()]
        if len(keywords) == 1:
            return f"[{keywords[0]}]"
        heads = list(dict.fromkeys(dictionary_head(k) for k in keywords))
        return "[" + ", ".join(heads) + "]"


# --------------- Cache and rate limiting ---------------- #
class ResponseCache:
    """One JSON file per cache key holding the full request and response. Never evicted."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def path(self, key: str) -> str:
        return os.path.join(self.directory, f"{key}.json")

    def get(self, key: str) -> ChatResponse | None:
        path = self.path(key)
        if not os.path.exists(path):
            return None
        try:
            return ChatResponse.from_dict(read_json(path)["response"])
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            logger.warning(f"Ignoring unreadable cache entry {path}: {e}")
            return None

    def put(self, key: str, request: ChatRequest, response: ChatResponse) -> None:
        atomic_write_json(self.path(key), {"key": key, "request": asdict(request), "response": response.to_dict()})


class TokenBucket:
    """Blocking token-bucket limiter: `rate` requests per second with bursts up to `capacity`."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self.updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                self.sleep((1 - self.tokens) / self.rate)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_max: float = 60.0


def _log_retry(retry_state) -> None:
    error = retry_state.outcome.exception()
    status = getattr(error, "status", None)
    logger.warning(f"Attempt {retry_state.attempt_number} failed (status {status}): {error}. "
                   f"Retrying in {retry_state.next_action.sleep:.1f}s.")


def call_with_retry(policy: RetryPolicy, fn, *args):
    """Calls `fn(*args)`, retrying TransientBackendError with exponential backoff. Raises BackendUnavailable."""
    retrying = Retrying(
        stop=stop_after_attempt(policy.max_attempts),
        wait=wait_exponential(multiplier=policy.backoff_base, max=policy.backoff_max),
        retry=retry_if_exception_type(TransientBackendError),
        before_sleep=_log_retry,
        reraise=True,
    )
    try:
        return retrying(fn, *args)
    except TransientBackendError as e:
        raise BackendUnavailable(f"Backend unavailable after {policy.max_attempts} attempts: {e}") from e


def _call_backend(request: ChatRequest, backend: LlmBackend, limiter: TokenBucket | None,
                  in_flight: threading.Semaphore | None) -> ChatResponse:
    if limiter is not None:
        limiter.acquire()
    if in_flight is None:
        return backend.complete(request)
    with in_flight:
        return backend.complete(request)


def complete_cached(request: ChatRequest, backend: LlmBackend, cache: ResponseCache | None,
                    policy: RetryPolicy | None = None, limiter: TokenBucket | None = None,
                    in_flight: threading.Semaphore | None = None, refresh: bool = False) -> ChatResponse:
    """
    Returns the cached response for `request` if there is one (unless `refresh`); otherwise calls the backend,
    retrying transient failures with exponential backoff, and stores the fresh response.
    Raises BackendUnavailable once retries are exhausted; AuthError and ContextTooLong are not retried.
    """
    key = request.cache_key()
    if cache is not None and not refresh:
        cached = cache.get(key)
        if cached is not None:
            logger.debug(f"Cache hit {key[:12]}.")
            return cached

    response = call_with_retry(policy or RetryPolicy(), _call_backend, request, backend, limiter, in_flight)
    if cache is not None:
        cache.put(key, request, response)
    return response


class LLMGateway:
    """Shared entry point for worker threads: one backend, one cache, one rate limit."""

    def __init__(self, backend: LlmBackend, cache: ResponseCache | None = None, policy: RetryPolicy | None = None,
                 max_in_flight: int = 4, requests_per_second: float = 0.0, model_id: str = DEFAULT_MODEL,
                 temperature: float = 0.0):
        self.backend = backend
        self.cache = cache
        self.policy = policy or RetryPolicy()
        self.in_flight = threading.BoundedSemaphore(max_in_flight)
        self.limiter = TokenBucket(requests_per_second) if requests_per_second > 0 else None
        self.model_id = model_id
        self.temperature = temperature

    def request(self, user: str, system: str = "") -> ChatRequest:
        return ChatRequest(user=user, system=system, model_id=self.model_id, temperature=self.temperature)

    def complete(self, request: ChatRequest, refresh: bool = False) -> ChatResponse:
        return complete_cached(request, self.backend, self.cache, self.policy, self.limiter, self.in_flight, refresh)


def build_backend(config) -> LlmBackend:
    """Backend selected by `config.backend` ('remote' or 'mock')."""
    if config.backend == "mock":
        return MockBackend(config.mock_markers, config.ad_prompt_path, config.group_prompt_path)
    return RemoteBackend(config.api_base_url, config.api_key())


def build_gateway(config, backend: LlmBackend | None = None) -> LLMGateway:
    return LLMGateway(
        backend or build_backend(config),
        cache=ResponseCache(os.path.join(config.cache_dir, "chat")),
        policy=RetryPolicy(config.max_attempts, config.backoff_base, config.backoff_max),
        max_in_flight=config.max_in_flight,
        requests_per_second=config.requests_per_second if backend is None or getattr(backend, "remote", True) else 0.0,
        model_id=config.model_id,
        temperature=config.temperature,
    )

"""Chat-completions client: deterministic parameters, on-disk response cache,
retries, a bounded-parallel batch executor, and prediction parsing.

Every request is keyed by a SHA-256 digest of its canonical serialization;
responses are persisted under ``cache/<first 2 hex>/<digest>.json`` before
being returned, so a rerun of a completed experiment never touches the
network. The whole prompt is sent as a single user message; temperature 0
keeps runs reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import tempfile
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

from . import prompt as prompt_mod
from . import remote
from .dataset import SubtaskSpec
from .errors import RagcError
from .remote import RemoteFailure

ENV_ENDPOINT = "RAGC_LLM_ENDPOINT"
ENV_API_KEY = "RAGC_LLM_API_KEY"
ENV_API_VERSION = "RAGC_LLM_API_VERSION"

DEFAULT_MAX_TOKENS = 1024

_PREDICTION_RE = re.compile(r"prediction:\s*([+-]?\d+)", re.IGNORECASE)


class LlmError(RagcError):
    pass


class CacheCorruption(LlmError):
    pass


@dataclass(frozen=True)
class LlmParams:
    """Completion parameters; temperature 0 is the reproducibility default."""

    model_id: str
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    api_version: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "temperature", float(self.temperature))
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    from_cache: bool
    latency_ms: int
    request_key: str
    retries: int = 0


@dataclass(frozen=True)
class BatchReport:
    total: int
    completed: int
    failed: int
    cache_hits: int
    wall_time_ms: int
    failures: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        if self.completed + self.failed != self.total:
            raise ValueError("completed + failed must equal total")
        if self.cache_hits > self.completed:
            raise ValueError("cache_hits cannot exceed completed")


@dataclass(frozen=True)
class ParseFailure:
    """Returned (not raised) when no valid prediction can be extracted."""

    reason: str  # "no_keyword" | "invalid_code"
    detail: str = ""


def cache_key(prompt_text: str, params: LlmParams) -> str:
    """SHA-256 (lowercase hex) over the canonical request serialization."""
    canonical = "\n".join(
        [
            params.model_id,
            params.api_version,
            str(params.temperature),
            str(params.max_tokens),
            prompt_text,
        ]
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_prediction(text: str, spec: SubtaskSpec) -> int | ParseFailure:
    """Extract a class code from chain-of-thought output.

    All ``Prediction: <int>`` occurrences (keyword case-insensitive) are
    located and the last one wins: the prompts elicit reasoning first and a
    final verdict last. Returns a ParseFailure value if the keyword is
    absent or the final integer is not a valid code; never raises.
    """
    matches = _PREDICTION_RE.findall(text)
    if not matches:
        return ParseFailure("no_keyword")
    code = int(matches[-1])
    if code not in spec.codes:
        return ParseFailure("invalid_code", detail=str(code))
    return code


class ChatTransport(Protocol):
    def send(self, prompt_text: str, params: LlmParams) -> str:
        ...


class HttpChatTransport:
    """OpenAI-compatible chat-completions endpoint (Azure-style api-version)."""

    def __init__(
        self,
        endpoint: str,
        *,
        api_key: str = "",
        timeout: float = remote.DEFAULT_TIMEOUT,
        post: Callable[..., dict] = remote.post_json,
    ):
        self.endpoint = endpoint
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._timeout = timeout
        self._post = post

    @classmethod
    def from_env(cls, **kwargs) -> "HttpChatTransport":
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise LlmError(f"{ENV_ENDPOINT} is not set")
        return cls(endpoint, api_key=os.environ.get(ENV_API_KEY, ""), **kwargs)

    def send(self, prompt_text: str, params: LlmParams) -> str:
        url = self.endpoint
        if params.api_version:
            sep = "&" if "?" in url else "?"
            url = f"{url}{sep}api-version={params.api_version}"
        payload = {
            "model": params.model_id,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        data = self._post(url, payload, headers=self._headers, timeout=self._timeout)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as err:
            raise RemoteFailure(200, f"malformed chat response: {err}") from err


class MockChat:
    """Offline stand-in transport with failure injection and concurrency probes.

    ``reply`` is either a fixed string or a callable ``(prompt, params) ->
    str``. The first ``fail_times`` sends raise a retryable RemoteFailure.
    ``calls`` counts transport invocations; ``max_in_flight`` records the
    concurrent high-water mark.
    """

    def __init__(
        self,
        reply: str | Callable[[str, LlmParams], str] = "Prediction: 0",
        *,
        fail_times: int = 0,
        fail_status: int = 500,
        latency: Callable[[], float] | None = None,
    ):
        self._reply = reply
        self._fail_remaining = fail_times
        self._fail_status = fail_status
        self._latency = latency
        self._lock = threading.Lock()
        self._in_flight = 0
        self.calls = 0
        self.max_in_flight = 0

    def send(self, prompt_text: str, params: LlmParams) -> str:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
            should_fail = self._fail_remaining > 0
            if should_fail:
                self._fail_remaining -= 1
            delay = self._latency() if self._latency else 0.0
        try:
            if delay:
                time.sleep(delay)
            if should_fail:
                raise RemoteFailure(self._fail_status, "injected failure")
            if callable(self._reply):
                return self._reply(prompt_text, params)
            return self._reply
        finally:
            with self._lock:
                self._in_flight -= 1


def majority_reply(prompt_text: str, params: LlmParams) -> str:
    """Mock policy: answer with the majority code among the prompt's examples.

    Ties go to the smallest code; with no examples the reply carries no
    keyword, exercising the parse-failure path.
    """
    try:
        pairs = prompt_mod.parse_examples_section(prompt_text)
    except prompt_mod.PromptError:
        pairs = []
    if not pairs:
        return "No examples were provided."
    counts = Counter(code for _, code in pairs)
    top = max(counts.values())
    code = min(c for c, n in counts.items() if n == top)
    return f"Prediction: {code}"


def mock_from_policy(policy: str, *, seed: int = 0, max_latency_ms: int = 0) -> MockChat:
    """Build a MockChat from a CLI policy string.

    Policies: ``majority``, ``constant:<code>``, and ``outage`` (every send
    fails, for exercising the fallback and exit-code paths).
    """
    latency = None
    if max_latency_ms > 0:
        rng = random.Random(seed)
        latency = lambda: rng.uniform(0.0, max_latency_ms / 1000.0)
    if policy == "majority":
        return MockChat(majority_reply, latency=latency)
    if policy.startswith("constant:"):
        code = policy.split(":", 1)[1]
        return MockChat(f"Prediction: {code}", latency=latency)
    if policy == "outage":
        return MockChat(fail_times=1 << 62, latency=latency)
    raise LlmError(
        f"unknown mock policy {policy!r} (use 'majority', 'constant:<code>' or 'outage')"
    )


class LlmClient:
    """Caching completion client over an injectable transport."""

    def __init__(
        self,
        transport: ChatTransport,
        cache_dir: str | Path | None = None,
        *,
        retries: int = remote.DEFAULT_RETRIES,
        base_delay: float = remote.DEFAULT_BASE_DELAY,
        backoff_factor: float = remote.DEFAULT_BACKOFF_FACTOR,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self._transport = transport
        self._cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._retries = retries
        self._base_delay = base_delay
        self._backoff_factor = backoff_factor
        self._sleep = sleep
        self._rng = rng

    def _cache_path(self, key: str) -> Path | None:
        if self._cache_dir is None:
            return None
        return self._cache_dir / key[:2] / f"{key}.json"

    def _read_cache(self, key: str) -> str | None:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
            return record["response"]
        except (ValueError, KeyError) as err:
            raise CacheCorruption(f"unreadable cache entry {path}: {err}") from err

    def _write_cache(self, key: str, prompt_text: str, params: LlmParams, text: str) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "request": {
                "model_id": params.model_id,
                "api_version": params.api_version,
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
                "prompt": prompt_text,
            },
            "response": text,
        }
        # atomic per key: write to temp in the same dir, then rename
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def complete(self, prompt_text: str, params: LlmParams) -> LlmResponse:
        """One completion, cache first; the response is persisted before returning."""
        key = cache_key(prompt_text, params)
        started = time.monotonic()
        cached = self._read_cache(key)
        if cached is not None:
            return LlmResponse(
                text=cached,
                from_cache=True,
                latency_ms=int((time.monotonic() - started) * 1000),
                request_key=key,
            )
        text, retries_used = remote.call_with_retries(
            lambda: self._transport.send(prompt_text, params),
            retries=self._retries,
            base_delay=self._base_delay,
            factor=self._backoff_factor,
            sleep=self._sleep,
            rng=self._rng,
        )
        self._write_cache(key, prompt_text, params, text)
        return LlmResponse(
            text=text,
            from_cache=False,
            latency_ms=int((time.monotonic() - started) * 1000),
            request_key=key,
            retries=retries_used,
        )

    def run_batch(
        self,
        prompts: Sequence[str],
        params: LlmParams,
        worker_count: int = 1,
    ) -> tuple[list[LlmResponse | None], BatchReport]:
        """Complete all prompts with at most ``worker_count`` requests in flight.

        Output order equals input order regardless of completion order.
        Per-item failures leave a None slot and are recorded in the report;
        the batch keeps going.
        """
        if worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        started = time.monotonic()
        results: list[LlmResponse | None] = [None] * len(prompts)
        failures: list[tuple[int, str]] = []

        def job(i: int) -> None:
            try:
                results[i] = self.complete(prompts[i], params)
            except RagcError as err:
                failures.append((i, str(err)))

        if prompts:
            with ThreadPoolExecutor(max_workers=worker_count) as pool:
                for _ in pool.map(job, range(len(prompts))):
                    pass
        failures.sort()
        completed = sum(1 for r in results if r is not None)
        report = BatchReport(
            total=len(prompts),
            completed=completed,
            failed=len(prompts) - completed,
            cache_hits=sum(1 for r in results if r is not None and r.from_cache),
            wall_time_ms=int((time.monotonic() - started) * 1000),
            failures=tuple(failures),
        )
        return results, report

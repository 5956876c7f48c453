"""HTTP plumbing shared by the remote embedding, re-ranking and LLM providers.

All remote calls follow the same retry policy: up to 5 retries with
exponential backoff (base 1 s, factor 2, full jitter). HTTP 429 and 5xx are
retryable, as are connection-level failures; any other 4xx surfaces
immediately. The sleep function and RNG are injectable so tests never wait.
"""

from __future__ import annotations

import random
import time
from typing import Any, Callable

import requests

from .errors import RagcError

DEFAULT_RETRIES = 5
DEFAULT_BASE_DELAY = 1.0
DEFAULT_BACKOFF_FACTOR = 2.0
DEFAULT_TIMEOUT = 60.0


class RemoteFailure(RagcError):
    """A remote provider call that failed (after retries, where applicable)."""

    def __init__(self, status: int | None, body: str):
        self.status = status
        self.body = body
        super().__init__(f"remote call failed (status={status}): {body[:200]}")

    @property
    def retryable(self) -> bool:
        if self.status is None:
            return True
        return self.status == 429 or 500 <= self.status < 600


def post_json(
    url: str,
    payload: dict,
    headers: dict[str, str] | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> dict:
    """POST JSON and return the decoded JSON response; RemoteFailure otherwise."""
    try:
        resp = requests.post(url, json=payload, headers=headers or {}, timeout=timeout)
    except requests.RequestException as err:
        raise RemoteFailure(None, str(err)) from err
    if resp.status_code != 200:
        raise RemoteFailure(resp.status_code, resp.text)
    try:
        return resp.json()
    except ValueError as err:
        raise RemoteFailure(resp.status_code, f"non-JSON response: {resp.text[:200]}") from err


def call_with_retries(
    fn: Callable[[], Any],
    *,
    retries: int = DEFAULT_RETRIES,
    base_delay: float = DEFAULT_BASE_DELAY,
    factor: float = DEFAULT_BACKOFF_FACTOR,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> Any:
    """Run ``fn`` retrying retryable RemoteFailures; returns (result, retries_used)."""
    rng = rng or random.Random()
    attempt = 0
    while True:
        try:
            return fn(), attempt
        except RemoteFailure as err:
            if not err.retryable or attempt >= retries:
                raise
            # full jitter: uniform over [0, base * factor^attempt]
            sleep(rng.uniform(0.0, base_delay * factor**attempt))
            attempt += 1

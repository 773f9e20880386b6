"""HTTP client for a language-model semantic operator."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import httpx

from .operator import (
    OperatorContext,
    OperatorError,
    OperatorResult,
    OperatorSchemaError,
    build_messages,
    rule_operator,
    validate_operator_output,
)

log = logging.getLogger(__name__)


class OperatorTransportError(OperatorError):
    pass


class OperatorTimeoutError(OperatorError):
    pass


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    model: str
    path: str = "/v1/chat/completions"
    api_key_env: str = "ASPECT_LLM_KEY"

    def headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5
    timeout: float = 30.0
    max_in_flight: int = 4


def extract_text(payload: dict) -> str:
    """First text payload of a chat-completion style response."""
    try:
        if "choices" in payload:
            content = payload["choices"][0]["message"]["content"]
        else:
            content = payload["content"]
        if isinstance(content, list):
            content = next(block["text"] for block in content if block.get("type") == "text")
    except (KeyError, IndexError, TypeError, StopIteration):
        raise OperatorSchemaError("response carries no text payload", json.dumps(payload)[:2000]) from None
    if not isinstance(content, str):
        raise OperatorSchemaError("response text payload is not a string", repr(content))
    return content


class LlmOperator:
    """Remote semantic operator with validation, retries and a result cache.

    The cache is keyed by the context's task hash and the caption text, so a
    change of tasks never reuses stale answers.  Calls are safe from several
    threads; at most ``policy.max_in_flight`` requests run at once.
    """

    def __init__(
        self,
        endpoint: RemoteEndpoint,
        policy: RetryPolicy = RetryPolicy(),
        cache_path: str | Path | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.policy = policy
        self.cache_path = Path(cache_path) if cache_path else None
        self._client = client or httpx.Client(base_url=endpoint.base_url, timeout=policy.timeout)
        self._sleep = sleep
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(policy.max_in_flight)
        self._cache: dict[str, OperatorResult] = {}
        self.calls = 0
        if self.cache_path and self.cache_path.exists():
            for key, value in json.loads(self.cache_path.read_text()).items():
                self._cache[key] = OperatorResult.model_validate(value)

    @staticmethod
    def cache_key(ctx: OperatorContext) -> str:
        return f"{ctx.task_hash()}:{ctx.observation_caption.text}"

    def __call__(self, ctx: OperatorContext) -> OperatorResult:
        key = self.cache_key(ctx)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        result = self._request_with_retries(ctx)
        with self._lock:
            self._cache[key] = result
            self._save()
        return result

    def _save(self) -> None:
        if not self.cache_path:
            return
        tmp = self.cache_path.with_suffix(self.cache_path.suffix + ".tmp")
        tmp.write_text(json.dumps({k: v.model_dump() for k, v in sorted(self._cache.items())}, indent=1))
        tmp.replace(self.cache_path)

    def _request_with_retries(self, ctx: OperatorContext) -> OperatorResult:
        last: OperatorError | None = None
        for attempt in range(self.policy.attempts):
            if attempt:
                self._sleep(self.policy.backoff * 2 ** (attempt - 1))
            try:
                return self._request(ctx)
            except OperatorError as exc:
                log.warning("operator attempt %d/%d failed: %s", attempt + 1, self.policy.attempts, exc)
                last = exc
        assert last is not None
        raise last

    def _request(self, ctx: OperatorContext) -> OperatorResult:
        body = {"model": self.endpoint.model, "messages": build_messages(ctx)}
        with self._slots:
            self.calls += 1
            try:
                response = self._client.post(
                    self.endpoint.path, json=body, headers=self.endpoint.headers(), timeout=self.policy.timeout
                )
                response.raise_for_status()
                payload = response.json()
            except httpx.TimeoutException as exc:
                raise OperatorTimeoutError(f"operator request timed out: {exc}") from exc
            except (httpx.HTTPError, ValueError) as exc:
                raise OperatorTransportError(f"operator request failed: {exc}") from exc
        raw = extract_text(payload)
        result = validate_operator_output(raw)
        if not result.imagine and result.description != ctx.observation_caption.text:
            raise OperatorSchemaError("imagine=false but the description was changed", raw)
        return result

    def close(self) -> None:
        self._client.close()


def llm_operator(
    endpoint: RemoteEndpoint | LlmOperator, ctx: OperatorContext, policy: RetryPolicy = RetryPolicy()
) -> OperatorResult:
    """One-shot convenience wrapper; pass an :class:`LlmOperator` to reuse its cache."""
    if isinstance(endpoint, LlmOperator):
        return endpoint(ctx)
    op = LlmOperator(endpoint, policy)
    try:
        return op(ctx)
    finally:
        op.close()


class FallbackOperator:
    """Ask ``primary``; answer with the rule operator when it fails."""

    def __init__(self, primary: Callable[[OperatorContext], OperatorResult]):
        self.primary = primary
        self.fallbacks = 0

    def __call__(self, ctx: OperatorContext) -> OperatorResult:
        try:
            return self.primary(ctx)
        except OperatorError as exc:
            self.fallbacks += 1
            log.warning("remote operator failed, using rule operator: %s", exc)
            return rule_operator(ctx)

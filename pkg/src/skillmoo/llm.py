"""Minimal chat-completions client with exact cost accounting.

Speaks the common chat-completions JSON wire format: request carries `model`
and `messages` (role/content), the reply text lives at
`choices[0].message.content` and token counts under `usage`. Costs are
computed in decimal arithmetic at 1e-6 USD resolution so ledgers and reports
never accumulate binary-float drift.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from decimal import Decimal

import httpx

USD_RESOLUTION = Decimal("0.000001")

ENV_API_KEY = "SKILLMOO_API_KEY"
ENV_BASE_URL = "SKILLMOO_BASE_URL"


class LlmError(Exception):
    """Base error for the chat client."""


class EndpointError(LlmError):
    """HTTP transport failure or non-2xx / malformed endpoint response."""


class Timeout(LlmError):
    """The request exceeded the configured timeout budget."""


@dataclass(frozen=True)
class ModelConfig:
    """Endpoint, model, and pricing configuration. Prices are USD per 1000
    tokens and may be given as float, str, or Decimal."""

    base_url: str
    model_name: str
    price_per_1k_input: Decimal = Decimal("0")
    price_per_1k_output: Decimal = Decimal("0")
    request_timeout_s: float = 900.0
    max_retries: int = 2
    api_key: str | None = None

    def __post_init__(self) -> None:
        for attr in ("price_per_1k_input", "price_per_1k_output"):
            value = getattr(self, attr)
            if not isinstance(value, Decimal):
                object.__setattr__(self, attr, Decimal(str(value)))
            if getattr(self, attr) < 0:
                raise ValueError(f"{attr} must be nonnegative")
        if self.request_timeout_s <= 0:
            raise ValueError("request_timeout_s must be positive")

    @classmethod
    def from_env(cls, **overrides) -> "ModelConfig":
        """Build from SKILLMOO_BASE_URL / SKILLMOO_API_KEY plus overrides."""
        base_url = overrides.pop("base_url", None) or os.environ.get(ENV_BASE_URL)
        if not base_url:
            raise ValueError(f"no base_url given and {ENV_BASE_URL} is unset")
        api_key = overrides.pop("api_key", None) or os.environ.get(ENV_API_KEY)
        return cls(base_url=base_url, api_key=api_key, **overrides)


@dataclass(frozen=True)
class UsageRecord:
    input_tokens: int
    output_tokens: int
    cost_usd: Decimal
    latency_s: float
    estimated: bool = False  # usage was missing from the response; local count


class UsageLedger:
    """Append-only, thread-safe record of per-call usage and cost."""

    def __init__(self) -> None:
        self._records: list[UsageRecord] = []
        self._lock = threading.Lock()

    def record(self, rec: UsageRecord) -> None:
        with self._lock:
            self._records.append(rec)

    @property
    def records(self) -> tuple[UsageRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def total_cost(self) -> Decimal:
        with self._lock:
            return sum((r.cost_usd for r in self._records), Decimal("0"))

    def total_tokens(self) -> tuple[int, int]:
        with self._lock:
            return (
                sum(r.input_tokens for r in self._records),
                sum(r.output_tokens for r in self._records),
            )


def compute_cost(config: ModelConfig, input_tokens: int, output_tokens: int) -> Decimal:
    cost = (
        Decimal(input_tokens) * config.price_per_1k_input
        + Decimal(output_tokens) * config.price_per_1k_output
    ) / Decimal(1000)
    return cost.quantize(USD_RESOLUTION)


def _local_token_count(text: str) -> int:
    return len(text.split())


def chat(
    config: ModelConfig,
    messages: list[dict],
    *,
    ledger: UsageLedger | None = None,
) -> tuple[str, UsageRecord]:
    """Send one chat request; returns (reply_text, usage_record).

    Transport errors and 5xx responses are retried up to max_retries;
    timeouts are not retried. When the response lacks a usage block the
    token counts are estimated locally and the record is flagged.
    """
    if not messages:
        raise ValueError("messages must be non-empty")
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    body = {"model": config.model_name, "messages": list(messages)}

    attempts = config.max_retries + 1
    response = None
    start = time.perf_counter()
    for attempt in range(attempts):
        try:
            response = httpx.post(url, json=body, headers=headers, timeout=config.request_timeout_s)
        except httpx.TimeoutException as e:
            raise Timeout(f"chat request exceeded {config.request_timeout_s}s") from e
        except httpx.HTTPError as e:
            if attempt + 1 < attempts:
                continue
            raise EndpointError(f"transport failure after {attempts} attempts: {e}") from e
        if response.status_code >= 500 and attempt + 1 < attempts:
            continue
        break
    latency = time.perf_counter() - start

    assert response is not None
    if response.status_code != 200:
        raise EndpointError(f"endpoint returned HTTP {response.status_code}: {response.text[:200]}")
    try:
        data = response.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise EndpointError(f"malformed chat response: {e}") from e

    usage = data.get("usage")
    estimated = False
    if isinstance(usage, dict) and "prompt_tokens" in usage and "completion_tokens" in usage:
        input_tokens = int(usage["prompt_tokens"])
        output_tokens = int(usage["completion_tokens"])
    else:
        input_tokens = sum(_local_token_count(str(m.get("content", ""))) for m in messages)
        output_tokens = _local_token_count(content)
        estimated = True

    rec = UsageRecord(
        input_tokens=input_tokens,
        output_tokens=output_tokens,
        cost_usd=compute_cost(config, input_tokens, output_tokens),
        latency_s=latency,
        estimated=estimated,
    )
    if ledger is not None:
        ledger.record(rec)
    return content, rec

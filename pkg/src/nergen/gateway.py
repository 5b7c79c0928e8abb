"""Model access: live chat-completion calls, record/replay, cost accounting.

Every call goes through :class:`Gateway`, which assigns a monotonically
increasing request index, enforces the request budget, and books exact
dollar costs into a :class:`CostLedger`.  Backends are interchangeable:

* :class:`LiveBackend` speaks the chat-completions HTTP wire format with
  bounded exponential-backoff retries;
* :class:`ReplayBackend` serves canned responses from a content-addressed
  fixture store, so whole pipeline runs are reproducible offline;
* :class:`RecordingBackend` wraps a live backend and appends every response
  to the store for later replay.

Money is handled as exact decimals end to end; binary floats never touch a
dollar amount.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .prompting import ChatMessage, PromptBundle


class TransportError(Exception):
    """The live backend gave up after exhausting its retry budget."""


class ReplayMiss(Exception):
    """No recorded response exists for a request (or the cursor ran out)."""


class BudgetExceeded(Exception):
    """The configured request cap would be exceeded."""


class UnknownModel(KeyError):
    """A model id has no entry in the price table."""


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class TokenLogprob:
    token: str
    logprob: float

    def __post_init__(self) -> None:
        if self.logprob > 0.0:
            raise ValueError("log probabilities cannot be positive")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float
    top_p: float
    model_id: str
    request_index: int
    kind: str

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    token_logprobs: tuple[TokenLogprob, ...] = ()
    usage: Usage = Usage(0, 0)


# ---------------------------------------------------------------------------
# Pricing


@dataclass(frozen=True)
class PriceTable:
    """Dollars per 1000 tokens, (input, output), per model id."""

    per_model: Mapping[str, tuple[Decimal, Decimal]]

    def rates(self, model_id: str) -> tuple[Decimal, Decimal]:
        try:
            return self.per_model[model_id]
        except KeyError:
            raise UnknownModel(model_id) from None


DEFAULT_PRICES = PriceTable(
    {
        "gpt-3.5-turbo": (Decimal("0.001"), Decimal("0.002")),
        "gpt-4": (Decimal("0.03"), Decimal("0.06")),
    }
)


def charge(usage: Usage, model_id: str, table: PriceTable) -> Decimal:
    """Exact dollar cost of one call: tokens/1000 times the per-1k rate."""
    rate_in, rate_out = table.rates(model_id)
    return (
        Decimal(usage.prompt_tokens) * rate_in
        + Decimal(usage.completion_tokens) * rate_out
    ) / Decimal(1000)


@dataclass(frozen=True)
class LedgerEntry:
    request_index: int
    kind: str
    model_id: str
    prompt_tokens: int
    completion_tokens: int
    dollars: Decimal


class CostLedger:
    """Thread-safe append-only record of every billed request."""

    def __init__(self) -> None:
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def record(self, entry: LedgerEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def total(self) -> Decimal:
        return sum((e.dollars for e in self.entries), Decimal(0))

    def by_kind(self) -> dict[str, tuple[int, int, int, Decimal]]:
        """kind -> (requests, prompt tokens, completion tokens, dollars)."""
        out: dict[str, tuple[int, int, int, Decimal]] = {}
        for e in self.entries:
            n, pt, ct, d = out.get(e.kind, (0, 0, 0, Decimal(0)))
            out[e.kind] = (n + 1, pt + e.prompt_tokens, ct + e.completion_tokens, d + e.dollars)
        return out

    def report(self) -> str:
        """Fixed-width text table: one row per kind plus a total row."""
        rows = [("stage", "requests", "prompt_tok", "completion_tok", "dollars")]
        for kind in sorted(self.by_kind()):
            n, pt, ct, d = self.by_kind()[kind]
            rows.append((kind, str(n), str(pt), str(ct), f"{d:.6f}"))
        total = self.total()
        rows.append(
            (
                "total",
                str(len(self.entries)),
                str(sum(e.prompt_tokens for e in self.entries)),
                str(sum(e.completion_tokens for e in self.entries)),
                f"{total:.6f}",
            )
        )
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = []
        for r in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Replay store


def request_key(
    messages: Sequence[ChatMessage],
    temperature: float,
    top_p: float,
    model_id: str,
) -> str:
    """Stable content hash of the request parameters that shape a response."""
    payload = {
        "messages": [{"role": m.role, "content": m.content} for m in messages],
        "temperature": temperature,
        "top_p": top_p,
        "model_id": model_id,
    }
    canon = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _response_to_obj(resp: CompletionResponse) -> dict:
    return {
        "text": resp.text,
        "token_logprobs": [[t.token, t.logprob] for t in resp.token_logprobs],
        "usage": {
            "prompt_tokens": resp.usage.prompt_tokens,
            "completion_tokens": resp.usage.completion_tokens,
        },
    }


def _response_from_obj(obj: dict) -> CompletionResponse:
    return CompletionResponse(
        text=obj["text"],
        token_logprobs=tuple(
            TokenLogprob(tok, lp) for tok, lp in obj.get("token_logprobs", [])
        ),
        usage=Usage(
            obj["usage"]["prompt_tokens"], obj["usage"]["completion_tokens"]
        ),
    )


class ReplayStore:
    """Content-addressed fixture directory: one JSON file per request key,
    holding the ordered list of responses that key produced."""

    def __init__(self, root) -> None:
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def load(self, key: str) -> list[CompletionResponse]:
        path = self._path(key)
        if not path.exists():
            return []
        data = json.loads(path.read_text(encoding="utf-8"))
        return [_response_from_obj(o) for o in data["responses"]]

    def append(self, request: CompletionRequest, response: CompletionResponse) -> None:
        key = request_key(
            request.messages, request.temperature, request.top_p, request.model_id
        )
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            data = {
                "request": {
                    "messages": [
                        {"role": m.role, "content": m.content}
                        for m in request.messages
                    ],
                    "temperature": request.temperature,
                    "top_p": request.top_p,
                    "model_id": request.model_id,
                },
                "responses": [],
            }
        data["responses"].append(_response_to_obj(response))
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(data, sort_keys=True, ensure_ascii=False, indent=1),
            encoding="utf-8",
        )
        os.replace(tmp, path)


class ReplayBackend:
    """Serves recorded responses; repeated identical prompts replay in
    recorded order via a per-key cursor."""

    def __init__(self, store: ReplayStore) -> None:
        self.store = store
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        key = request_key(
            request.messages, request.temperature, request.top_p, request.model_id
        )
        responses = self.store.load(key)
        with self._lock:
            cursor = self._cursors.get(key, 0)
            self._cursors[key] = cursor + 1
        if cursor >= len(responses):
            raise ReplayMiss(
                f"no recorded response for key {key} (cursor {cursor},"
                f" {len(responses)} recorded)"
            )
        return responses[cursor]


class RecordingBackend:
    def __init__(self, inner, store: ReplayStore) -> None:
        self.inner = inner
        self.store = store

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        response = self.inner.complete(request)
        self.store.append(request, response)
        return response


# ---------------------------------------------------------------------------
# Live backend


def _default_post(url, headers, payload, timeout):
    import requests

    return requests.post(url, headers=headers, json=payload, timeout=timeout)


class LiveBackend:
    """Chat-completions HTTP client with bounded exponential backoff.

    Connection failures, HTTP 429 and HTTP 5xx are retried up to
    ``max_attempts`` with delays base * 2^n capped at ``backoff_cap``;
    other HTTP errors fail immediately.  The ``post`` and ``sleep``
    callables are injectable for tests.
    """

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key: str | None = None,
        api_key_env: str = "OPENAI_API_KEY",
        post: Callable = _default_post,
        sleep: Callable[[float], None] = time.sleep,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        timeout: float = 120.0,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        self._post = post
        self._sleep = sleep
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        url = f"{self.base_url}/chat/completions"
        headers = {
            "Authorization": f"Bearer {self.api_key}",
            "Content-Type": "application/json",
        }
        payload = {
            "model": request.model_id,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "logprobs": True,
        }
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt > 0:
                delay = min(
                    self.backoff_cap, self.backoff_base * (2 ** (attempt - 1))
                )
                self._sleep(delay)
            try:
                resp = self._post(url, headers, payload, self.timeout)
            except Exception as exc:
                last_error = f"connection error: {exc}"
                continue
            status = getattr(resp, "status_code", 0)
            if status == 429 or status >= 500:
                last_error = f"HTTP {status}"
                continue
            if status != 200:
                raise TransportError(f"HTTP {status} (not retryable)")
            return self._parse(resp.json())
        raise TransportError(
            f"gave up after {self.max_attempts} attempts: {last_error}"
        )

    @staticmethod
    def _parse(body: dict) -> CompletionResponse:
        choice = body["choices"][0]
        text = choice["message"]["content"]
        logprobs = ()
        content = (choice.get("logprobs") or {}).get("content")
        if content:
            # clamp: some APIs report tiny positive values on near-certain tokens
            logprobs = tuple(
                TokenLogprob(item["token"], min(0.0, float(item["logprob"])))
                for item in content
            )
        usage = body.get("usage", {})
        return CompletionResponse(
            text=text,
            token_logprobs=logprobs,
            usage=Usage(
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            ),
        )


# ---------------------------------------------------------------------------
# Gateway


class Gateway:
    """Front door for all model calls: indexing, budget, cost booking."""

    def __init__(
        self,
        backend,
        price_table: PriceTable = DEFAULT_PRICES,
        ledger: CostLedger | None = None,
        max_requests: int | None = None,
        concurrency: int = 1,
    ) -> None:
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.backend = backend
        self.price_table = price_table
        self.ledger = ledger if ledger is not None else CostLedger()
        self.max_requests = max_requests
        self.concurrency = concurrency
        self._next_index = 0
        self._lock = threading.Lock()

    def _claim_index(self) -> int:
        with self._lock:
            if self.max_requests is not None and self._next_index >= self.max_requests:
                raise BudgetExceeded(
                    f"request cap of {self.max_requests} reached"
                )
            index = self._next_index
            self._next_index += 1
            return index

    @property
    def requests_issued(self) -> int:
        with self._lock:
            return self._next_index

    def complete(
        self,
        bundle: PromptBundle,
        *,
        model_id: str,
        temperature: float = 1.0,
        top_p: float = 1.0,
    ) -> CompletionResponse:
        index = self._claim_index()
        request = CompletionRequest(
            messages=bundle.messages,
            temperature=temperature,
            top_p=top_p,
            model_id=model_id,
            request_index=index,
            kind=bundle.kind,
        )
        response = self.backend.complete(request)
        self.ledger.record(
            LedgerEntry(
                request_index=index,
                kind=bundle.kind,
                model_id=model_id,
                prompt_tokens=response.usage.prompt_tokens,
                completion_tokens=response.usage.completion_tokens,
                dollars=charge(response.usage, model_id, self.price_table),
            )
        )
        return response

    def complete_many(
        self,
        bundles: Sequence[PromptBundle],
        *,
        model_id: str,
        temperature: float = 1.0,
        top_p: float = 1.0,
    ) -> list[CompletionResponse]:
        """Bounded-concurrency batch; results come back in bundle order."""
        if not bundles:
            return []
        if self.concurrency == 1 or len(bundles) == 1:
            return [
                self.complete(
                    b, model_id=model_id, temperature=temperature, top_p=top_p
                )
                for b in bundles
            ]
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            futures = [
                pool.submit(
                    self.complete,
                    b,
                    model_id=model_id,
                    temperature=temperature,
                    top_p=top_p,
                )
                for b in bundles
            ]
            return [f.result() for f in futures]

    def generate_until(
        self,
        prompt_factory: Callable[[int], PromptBundle],
        probe: Callable[[str], int],
        target: int,
        *,
        model_id: str,
        temperature: float = 1.0,
        top_p: float = 1.0,
    ) -> list[CompletionResponse]:
        """Issue prompts one at a time until probe counts reach the target.

        ``probe`` maps a completion text to its raw sample count; the loop
        stops as soon as the running total reaches ``target``, so the number
        of calls is exactly the ceiling the per-call yield implies.
        """
        if target < 1:
            raise ValueError("target must be >= 1")
        responses: list[CompletionResponse] = []
        raw = 0
        i = 0
        while raw < target:
            bundle = prompt_factory(i)
            response = self.complete(
                bundle, model_id=model_id, temperature=temperature, top_p=top_p
            )
            responses.append(response)
            raw += probe(response.text)
            i += 1
        return responses

"""HTTP clients for the two external model services: chat completion and
text scoring.

Transports are pluggable so every test runs offline: ``HttpTransport`` talks
to a live endpoint, ``CassetteTransport`` records or replays request/response
pairs. Replay matching keys on the request body plus an orchestration tag
(the logical call site), so replays are byte-exact and independent of request
arrival order under concurrency. Auth tokens are read from the environment at
send time and never logged or written to cassettes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import requests

from .errors import DataError, RemoteError

logger = logging.getLogger(__name__)

DEFAULT_SCORE_BATCH_SIZE = 64


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    auth_token_env_var: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_concurrency: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise DataError("timeout must be > 0")
        if self.max_retries < 0:
            raise DataError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise DataError("max_concurrency must be >= 1")

    @classmethod
    def from_json(cls, obj: dict) -> "EndpointConfig":
        return cls(
            base_url=obj["base_url"],
            auth_token_env_var=obj.get("auth_token_env_var"),
            timeout=float(obj.get("timeout", 30.0)),
            max_retries=int(obj.get("max_retries", 3)),
            backoff_base=float(obj.get("backoff_base", 0.5)),
            max_concurrency=int(obj.get("max_concurrency", 4)),
        )


def _request_key(body: dict, tag: str | None) -> str:
    canonical = json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    digest = hashlib.sha256()
    digest.update(canonical.encode("utf-8"))
    digest.update(b"\x1f")
    digest.update((tag or "").encode("utf-8"))
    return digest.hexdigest()


class HttpTransport:
    """Plain POST transport; one send per call, no retry logic of its own."""

    def __init__(self, session: requests.Session | None = None):
        self.session = session or requests.Session()

    def send(self, cfg: EndpointConfig, body: dict, tag: str | None = None) -> dict:
        headers = {"Content-Type": "application/json"}
        if cfg.auth_token_env_var:
            token = os.environ.get(cfg.auth_token_env_var)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self.session.post(cfg.base_url, json=body, headers=headers,
                                     timeout=cfg.timeout)
        except requests.RequestException as exc:
            raise TransientFailure(f"transport error: {exc.__class__.__name__}") from exc
        if 500 <= resp.status_code < 600:
            raise TransientFailure(f"server error HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise RemoteError(f"terminal HTTP {resp.status_code} from {cfg.base_url}")
        try:
            return resp.json()
        except ValueError as exc:
            raise RemoteError(f"malformed response body from {cfg.base_url}") from exc


class TransientFailure(Exception):
    """Retryable failure: transport-level error or 5xx."""


class CassetteTransport:
    """Record/replay transport.

    Record mode forwards to an inner transport and appends
    {key, tag, request, response} JSON lines; replay mode serves responses
    from the file (FIFO per key, reset per instance) and touches no network.
    """

    def __init__(self, path: str, mode: str, inner: HttpTransport | None = None):
        if mode not in ("record", "replay"):
            raise DataError(f"cassette mode must be 'record' or 'replay', got {mode!r}")
        self.path = path
        self.mode = mode
        self.inner = inner or HttpTransport()
        self._lock = threading.Lock()
        self._entries: dict[str, list[dict]] = {}
        if mode == "replay":
            try:
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if not line.strip():
                            continue
                        entry = json.loads(line)
                        self._entries.setdefault(entry["key"], []).append(entry["response"])
            except OSError as exc:
                raise DataError(f"unreadable cassette {path}: {exc}") from exc
        else:
            open(path, "w", encoding="utf-8").close()

    def send(self, cfg: EndpointConfig, body: dict, tag: str | None = None) -> dict:
        key = _request_key(body, tag)
        if self.mode == "replay":
            with self._lock:
                queue = self._entries.get(key)
                if not queue:
                    raise RemoteError(
                        f"cassette {self.path} has no recorded response for tag={tag!r}"
                    )
                return queue.pop(0)
        response = self.inner.send(cfg, body, tag=tag)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(
                    {"key": key, "tag": tag, "request": body, "response": response},
                    ensure_ascii=False,
                ) + "\n")
        return response


class Endpoint:
    """One external service: config + transport + bounded in-flight permits."""

    def __init__(self, cfg: EndpointConfig, transport=None, sleep=time.sleep):
        self.cfg = cfg
        self.transport = transport or HttpTransport()
        self._permits = threading.BoundedSemaphore(cfg.max_concurrency)
        self._sleep = sleep

    def _send_with_retry(self, body: dict, tag: str | None) -> dict:
        attempts = self.cfg.max_retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                with self._permits:
                    return self.transport.send(self.cfg, body, tag=tag)
            except TransientFailure as exc:
                last = exc
                if attempt + 1 < attempts:
                    delay = self.cfg.backoff_base * (2 ** attempt)
                    logger.warning("retryable failure (%s), retrying in %.2fs", exc, delay)
                    self._sleep(delay)
        raise RemoteError(f"exhausted {attempts} attempts against {self.cfg.base_url}: {last}")

    def chat_complete(self, request: dict, tag: str | None = None) -> str:
        """POST a chat-completion request and return the first choice's content."""
        response = self._send_with_retry(request, tag)
        try:
            content = response["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise RemoteError(f"chat response malformed: {response!r:.200}") from exc
        if not isinstance(content, str):
            raise RemoteError("chat response content is not a string")
        return content

    def score_ppl(
        self,
        texts: Sequence[str],
        batch_size: int = DEFAULT_SCORE_BATCH_SIZE,
        tag_prefix: str | None = None,
    ) -> list[float]:
        """Score texts in batches; response arrays must align with the request."""
        if not texts:
            raise DataError("texts must be non-empty")
        if batch_size < 1:
            raise DataError("batch_size must be >= 1")
        out: list[float] = []
        for start in range(0, len(texts), batch_size):
            batch = list(texts[start : start + batch_size])
            tag = f"{tag_prefix}:batch:{start // batch_size}" if tag_prefix else None
            response = self._send_with_retry({"texts": batch}, tag)
            ppl = response.get("ppl")
            if not isinstance(ppl, list) or len(ppl) != len(batch):
                got = len(ppl) if isinstance(ppl, list) else "none"
                raise RemoteError(
                    f"scorer returned {got} values for a batch of {len(batch)}"
                )
            for value in ppl:
                value = float(value)
                if not math.isfinite(value) or value <= 0:
                    raise RemoteError(f"scorer returned a non-positive ppl: {value}")
                out.append(value)
        return out


def chat_complete(cfg: EndpointConfig, request: dict, transport=None,
                  tag: str | None = None) -> str:
    return Endpoint(cfg, transport).chat_complete(request, tag=tag)


def score_ppl(cfg: EndpointConfig, texts: Sequence[str],
              batch_size: int = DEFAULT_SCORE_BATCH_SIZE, transport=None,
              tag_prefix: str | None = None) -> list[float]:
    return Endpoint(cfg, transport).score_ppl(texts, batch_size=batch_size,
                                              tag_prefix=tag_prefix)

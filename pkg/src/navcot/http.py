"""JSON-over-HTTP plumbing shared by the completion backend, the landmark
extractor and the similarity endpoint: bearer auth, rate limiting and
exponential backoff on transient failures."""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field

import httpx

from .errors import AuthError, BackendUnavailable

log = logging.getLogger(__name__)

TOKEN_ENV = "NAVCOT_API_TOKEN"
RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


@dataclass
class EndpointConfig:
    url: str
    model: str = "navcot"
    token_env: str = TOKEN_ENV
    timeout: float = 60.0
    max_retries: int = 5
    backoff_base: float = 0.5
    backoff_max: float = 30.0
    requests_per_second: float | None = None
    temperature: float = 0.0
    max_tokens: int = 512

    def public(self) -> dict:
        return asdict(self)


class RateLimiter:
    """Spaces calls at least 1/rate seconds apart across all threads."""

    def __init__(self, rate: float | None):
        self.interval = 1.0 / rate if rate else 0.0
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self):
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            time.sleep(slot - now)


@dataclass
class Exchange:
    """One HTTP round trip (logged per step)."""

    status: int | None
    request: dict
    response: object = None
    error: str | None = None

    def to_json(self) -> dict:
        return {"status": self.status, "request": self.request, "response": self.response,
                "error": self.error}


@dataclass
class PostResult:
    data: dict
    retries: int = 0
    exchanges: list = field(default_factory=list)


class JsonEndpoint:
    def __init__(self, cfg: EndpointConfig, client: httpx.Client | None = None,
                 limiter: RateLimiter | None = None, sleep=time.sleep):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self.limiter = limiter or RateLimiter(cfg.requests_per_second)
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.cfg.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _delay(self, attempt: int, resp: httpx.Response | None) -> float:
        delay = self.cfg.backoff_base * (2 ** attempt)
        if resp is not None:
            try:
                delay = max(delay, float(resp.headers.get("Retry-After", 0)))
            except ValueError:
                pass
        return min(delay, self.cfg.backoff_max)

    def post(self, payload: dict, url: str | None = None) -> PostResult:
        url = url or self.cfg.url
        exchanges = []
        for attempt in range(self.cfg.max_retries + 1):
            self.limiter.wait()
            resp = None
            try:
                resp = self._client.post(url, json=payload, headers=self._headers())
            except httpx.TransportError as e:
                exchanges.append(Exchange(None, payload, error=repr(e)))
                log.warning("POST %s failed (%s), attempt %d", url, e, attempt + 1)
            else:
                body = _body(resp)
                exchanges.append(Exchange(resp.status_code, payload, body))
                if resp.status_code in (401, 403):
                    raise AuthError(f"{url} rejected credentials (HTTP {resp.status_code}); "
                                    f"check ${self.cfg.token_env}")
                if resp.status_code < 300 and isinstance(body, dict):
                    return PostResult(body, retries=attempt, exchanges=exchanges)
                if resp.status_code < 300:
                    raise BackendUnavailable(f"{url} returned a non-JSON body")
                if resp.status_code not in RETRYABLE_STATUS:
                    raise BackendUnavailable(f"{url} returned HTTP {resp.status_code}: {str(body)[:200]}")
                log.info("POST %s -> %d, backing off", url, resp.status_code)
            if attempt < self.cfg.max_retries:
                self._sleep(self._delay(attempt, resp))
        raise BackendUnavailable(f"{url} still failing after {self.cfg.max_retries} retries")

    def close(self):
        self._client.close()


def _body(resp: httpx.Response):
    try:
        return resp.json()
    except ValueError:
        return resp.text


def chat_payload(cfg: EndpointConfig, prompt: str, max_tokens: int | None = None) -> dict:
    return {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens if max_tokens is None else max_tokens,
    }


def completion_text(data: dict) -> str:
    try:
        choice = data["choices"][0]
        if "message" in choice:
            return str(choice["message"]["content"])
        return str(choice["text"])
    except (KeyError, IndexError, TypeError):
        raise BackendUnavailable(f"unexpected completion response shape: {str(data)[:200]}") from None


def http_extractor(endpoint: JsonEndpoint):
    """Completion function for landmark extraction (prompt -> completion text)."""

    def extract(prompt: str) -> str:
        return completion_text(endpoint.post(chat_payload(endpoint.cfg, prompt)).data)

    return extract

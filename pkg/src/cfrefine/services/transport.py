"""Request transports: HTTP/JSON for real services, in-process for mocks.

Both speak the same wire format, so every client-side check (shape
validation, retries, call accounting) runs identically against mocks.

Routes and bodies::

    POST /generate   {prompt, temperature, top_p, top_k, max_new_tokens, seed}
                     -> {text, model}
    POST /classify   {fields: {name: text}} -> {label, probs: {label: p}, model, n_tokens?}
    POST /embed      {text} -> {vector: [...], model}
    POST /score      {text} -> {tokens: [...], logprobs: [...], model}
    POST /attribute  {text, label} -> {spans: [{text, score}], model}
"""

from __future__ import annotations

import json
import logging
import threading
import time
from typing import Any, Callable, Mapping, Protocol

import requests

from cfrefine.errors import ProtocolError, ServiceError, TransportError

log = logging.getLogger(__name__)

ROUTES = ("generate", "classify", "embed", "score", "attribute")


class Transport(Protocol):
    def post(self, route: str, payload: Mapping[str, Any]) -> dict[str, Any]: ...


class HttpTransport:
    """JSON-over-HTTP transport; connection failures and 5xx count as transient."""

    def __init__(self, base_url: str, token: str | None = None, timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self._session = requests.Session()

    def post(self, route: str, payload: Mapping[str, Any]) -> dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        url = f"{self.base_url}/{route}"
        try:
            resp = self._session.post(url, data=json.dumps(payload), headers=headers, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(f"POST {url} failed: {e}") from e
        if resp.status_code >= 500:
            raise TransportError(f"POST {url} returned HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"POST {url} rejected with HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError as e:
            raise ProtocolError(f"POST {url} returned non-JSON body") from e
        if not isinstance(body, dict):
            raise ProtocolError(f"POST {url} returned {type(body).__name__}, expected an object")
        return body


class LocalTransport:
    """Dispatches wire payloads to in-process handlers, one per route."""

    def __init__(self, handlers: Mapping[str, Callable[[Mapping[str, Any]], dict[str, Any]]]):
        self.handlers = dict(handlers)

    def post(self, route: str, payload: Mapping[str, Any]) -> dict[str, Any]:
        try:
            handler = self.handlers[route]
        except KeyError:
            raise TransportError(f"no handler for route {route!r}") from None
        # JSON round trip keeps mocks honest about what survives the wire
        return json.loads(json.dumps(handler(json.loads(json.dumps(payload)))))


class ServiceClient:
    """Shared retry, concurrency-cap and call-accounting logic.

    ``calls`` counts completed requests; ``attempts`` also counts retried ones.
    """

    route: str = ""

    def __init__(
        self,
        transport: Transport,
        *,
        retries: int = 3,
        backoff: float = 0.5,
        concurrency: int | None = None,
    ):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        self.transport = transport
        self.retries = retries
        self.backoff = backoff
        self._cap = threading.BoundedSemaphore(concurrency) if concurrency else None
        self._lock = threading.Lock()
        self.calls = 0
        self.attempts = 0
        self.model_ids: set[str] = set()

    def _request(self, payload: Mapping[str, Any], route: str | None = None) -> dict[str, Any]:
        route = route or self.route
        last: TransportError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.attempts += 1
            try:
                if self._cap is not None:
                    with self._cap:
                        body = self.transport.post(route, payload)
                else:
                    body = self.transport.post(route, payload)
            except TransportError as e:
                last = e
                log.warning("%s attempt %d failed: %s", route, attempt + 1, e)
                continue
            with self._lock:
                self.calls += 1
                model = body.get("model")
                if isinstance(model, str):
                    self.model_ids.add(model)
            return body
        assert last is not None
        raise TransportError(f"{route}: {last.reason}", attempts=self.retries + 1) from last

    @staticmethod
    def _field(body: Mapping[str, Any], key: str, route: str) -> Any:
        if key not in body:
            raise ProtocolError(f"{route} response missing {key!r}")
        return body[key]


__all__ = [
    "HttpTransport",
    "LocalTransport",
    "ProtocolError",
    "ROUTES",
    "ServiceClient",
    "ServiceError",
    "Transport",
    "TransportError",
]

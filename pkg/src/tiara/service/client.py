"""HTTP client with the same ``query`` contract as :class:`~tiara.env.OracleSession`."""

from __future__ import annotations

import logging
import time
from typing import Any, Callable

import httpx
import numpy as np

from ..env import ItemRecord
from .schemas import WIRE_VERSION, HealthReply, QueryReply, SessionReply

log = logging.getLogger(__name__)


class OracleTransportError(RuntimeError):
    """The oracle server could not be reached or answered with an error."""


class ProtocolError(OracleTransportError):
    """The server's reply violates the oracle contract."""


class RemoteOracle:
    """Single-session client for the oracle service.

    Throttled replies (429) are waited out and retried without counting
    against :attr:`call_count`; only granted replies do. Network failures
    are retried ``max_retries`` times with exponential backoff, then raise
    :class:`OracleTransportError`.
    """

    def __init__(
        self,
        base_url: str,
        seed: int = 0,
        *,
        client: httpx.Client | None = None,
        timeout: float = 10.0,
        max_retries: int = 3,
        max_throttle_waits: int = 1000,
        backoff: float = 0.1,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self._own = client is None
        self.http = client or httpx.Client(base_url=base_url, timeout=timeout)
        self.max_retries = max_retries
        self.max_throttle_waits = max_throttle_waits
        self.backoff = backoff
        self.sleep = sleep
        self.call_count = 0
        self.throttled = 0
        reply = SessionReply.model_validate(self._request("POST", "/session", json={"v": WIRE_VERSION, "seed": seed}))
        self.session = reply.session
        self.seed = seed

    def __enter__(self) -> RemoteOracle:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def close(self) -> None:
        if self._own:
            self.http.close()

    def health(self) -> HealthReply:
        return HealthReply.model_validate(self._request("GET", "/health"))

    def query(self, tag: str) -> ItemRecord | None:
        data = self._request("GET", "/query", params={"tag": tag, "session": self.session})
        self.call_count += 1
        try:
            reply = QueryReply.model_validate(data)
        except ValueError as exc:
            raise ProtocolError(f"malformed reply: {exc}") from None
        if reply.v != WIRE_VERSION:
            raise ProtocolError(f"unsupported wire version {reply.v}")
        if reply.exhausted:
            return None
        if not reply.item_id or not reply.tags:
            raise ProtocolError("reply carries no item id or an empty tag list")
        if tag not in reply.tags:
            raise ProtocolError(f"queried tag {tag!r} missing from returned tags")
        if (reply.features is None) == (reply.score is None):
            raise ProtocolError("reply must carry exactly one of features/score")
        features = None
        if reply.features is not None:
            features = np.array(reply.features, dtype=np.float64)
            features.setflags(write=False)
        return ItemRecord(reply.item_id, tuple(dict.fromkeys(reply.tags)), features, reply.score)

    def _request(self, method: str, url: str, **kw: Any) -> Any:
        failures = 0
        waits = 0
        while True:
            try:
                resp = self.http.request(method, url, **kw)
            except httpx.TransportError as exc:
                failures += 1
                if failures > self.max_retries:
                    raise OracleTransportError(f"{method} {url} failed: {exc}") from exc
                self.sleep(self.backoff * 2 ** (failures - 1))
                continue
            if resp.status_code == 429:
                waits += 1
                self.throttled += 1
                if waits > self.max_throttle_waits:
                    raise OracleTransportError(f"{method} {url}: still throttled after {waits - 1} waits")
                ms = _retry_after_ms(resp)
                log.debug("throttled, waiting %d ms", ms)
                self.sleep(ms / 1000.0)
                continue
            if resp.status_code != 200:
                try:
                    detail = resp.json().get("error", resp.text)
                except ValueError:
                    detail = resp.text
                raise OracleTransportError(f"{method} {url} -> {resp.status_code}: {detail}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON reply from {url}") from exc


def _retry_after_ms(resp: httpx.Response) -> int:
    try:
        ms = resp.json().get("retry_after_ms")
        if ms is not None:
            return max(0, int(ms))
    except (ValueError, AttributeError):
        pass
    try:
        return int(float(resp.headers.get("Retry-After", "1")) * 1000)
    except ValueError:
        return 1000

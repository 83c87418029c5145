"""FastAPI oracle server over a corpus.

Endpoints: ``POST /session`` (seeded session), ``GET /query?tag=&session=``
and ``GET /health``. Features (or scores) travel in the reply so the
client evaluates its own black-box.
"""

from __future__ import annotations

import logging
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..env import Corpus, ItemRecord, OracleSession, load_corpus
from .ratelimit import RateLimiter
from .schemas import WIRE_VERSION, ErrorReply, HealthReply, QueryReply, SessionReply, SessionRequest

log = logging.getLogger(__name__)


def _error(status: int, msg: str, retry_after_ms: int | None = None) -> JSONResponse:
    body = ErrorReply(error=msg, retry_after_ms=retry_after_ms).model_dump(exclude_none=True)
    headers = {"Retry-After": str(max(1, -(-retry_after_ms // 1000)))} if retry_after_ms else None
    return JSONResponse(body, status_code=status, headers=headers)


def item_reply(item: ItemRecord | None) -> QueryReply:
    if item is None:
        return QueryReply(exhausted=True)
    if item.features is not None:
        return QueryReply(item_id=item.id, tags=list(item.tags), features=[float(x) for x in item.features])
    return QueryReply(item_id=item.id, tags=list(item.tags), score=item.score)


class _Session:
    def __init__(self, oracle: OracleSession) -> None:
        self.oracle = oracle
        self.lock = threading.Lock()


def create_app(corpus: Corpus, rate_limit: RateLimiter | None = None) -> FastAPI:
    app = FastAPI(title="tag-search oracle", version=str(WIRE_VERSION))
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()
    stats = corpus.stats()
    app.state.corpus = corpus
    app.state.sessions = sessions
    app.state.rate_limit = rate_limit

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        parts = ["/".join(str(x) for x in e["loc"]) + ": " + e["msg"] for e in exc.errors()]
        return _error(400, "malformed request: " + "; ".join(parts))

    @app.get("/health", response_model=HealthReply)
    def health() -> HealthReply:
        return HealthReply(
            items=stats["items"],
            tags=stats["tags"],
            feature_dim=stats["feature_dim"],
            t_max=stats["t_max"],
            sessions=len(sessions),
        )

    @app.post("/session", response_model=SessionReply)
    def create_session(req: SessionRequest) -> SessionReply | JSONResponse:
        if req.v != WIRE_VERSION:
            return _error(400, f"unsupported wire version {req.v}")
        sid = uuid.uuid4().hex
        with registry_lock:
            sessions[sid] = _Session(OracleSession(corpus, req.seed))
        log.info("session %s seed=%d", sid, req.seed)
        return SessionReply(session=sid, seed=req.seed)

    @app.get("/query", response_model=QueryReply, response_model_exclude_none=True)
    def query(tag: str = Query(...), session: str = Query(..., min_length=1)) -> QueryReply | JSONResponse:
        sess = sessions.get(session)
        if sess is None:
            return _error(404, f"unknown session {session}")
        if rate_limit is not None:
            granted, wait = rate_limit.acquire(session)
            if not granted:
                return _error(429, "rate limit exceeded", RateLimiter.to_ms(wait))
        with sess.lock:
            item = sess.oracle.query(tag)
        return item_reply(item)

    return app


def serve(
    corpus_path: str | Path,
    host: str = "127.0.0.1",
    port: int = 8000,
    max_calls: int | None = None,
    window: float = 3600.0,
) -> None:
    """Load ``corpus_path`` and serve it until interrupted."""
    import uvicorn

    corpus = load_corpus(corpus_path)
    limiter = RateLimiter(max_calls, window) if max_calls else None
    uvicorn.run(create_app(corpus, limiter), host=host, port=port, log_level="info")

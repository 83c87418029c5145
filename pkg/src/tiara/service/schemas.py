"""Wire models for the oracle service (version 1)."""

from __future__ import annotations

from pydantic import BaseModel, Field

WIRE_VERSION = 1


class SessionRequest(BaseModel):
    v: int = WIRE_VERSION
    seed: int = Field(0, ge=0)


class SessionReply(BaseModel):
    v: int = WIRE_VERSION
    session: str
    seed: int


class QueryReply(BaseModel):
    """Either an item (id, tags, features or score) or ``exhausted: true``."""

    v: int = WIRE_VERSION
    exhausted: bool = False
    item_id: str | None = None
    tags: list[str] | None = None
    features: list[float] | None = None
    score: float | None = None


class HealthReply(BaseModel):
    v: int = WIRE_VERSION
    status: str = "ok"
    items: int
    tags: int
    feature_dim: int
    t_max: int
    sessions: int


class ErrorReply(BaseModel):
    v: int = WIRE_VERSION
    error: str
    retry_after_ms: int | None = None

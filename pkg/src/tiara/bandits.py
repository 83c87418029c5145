"""Tag-selection policies.

Every policy follows the same loop: :meth:`Policy.select` picks a tag from
its candidate pool, the caller queries the oracle, and
:meth:`Policy.observe` receives the returned item's tag set and score (or
``None`` for both when the tag is exhausted).

Ties between equal scores always go to the lexicographically smallest tag.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

Vector = NDArray[np.float64]

# quadratic forms below this are treated as a broken inverse, not rounding noise
QUAD_FORM_FLOOR = -1e-9
SM_DENOM_FLOOR = 1e-12


class PoolExhausted(RuntimeError):
    """Raised by :meth:`Policy.select` when every candidate tag is exhausted."""

    def __init__(self) -> None:
        super().__init__("all candidates exhausted")


def sherman_morrison_update(a_inv: Vector, v: Vector) -> Vector:
    """Return ``(A + v v^T)^{-1}`` given ``A^{-1}``, symmetrized.

    ``a_inv`` must be symmetric positive definite. Costs O(d^2).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (a_inv.shape[0],):
        raise ValueError(f"vector of shape {v.shape} does not match {a_inv.shape}")
    u = a_inv @ v
    denom = 1.0 + float(v @ u)
    if not math.isfinite(denom) or denom <= SM_DENOM_FLOOR:
        raise FloatingPointError(f"Sherman-Morrison denominator {denom!r} is not positive")
    out = a_inv - np.outer(u, u) / denom
    return (out + out.T) / 2.0


@dataclass
class LinUcbState:
    """Ridge-regression state shared by Tiara and Tiara-S.

    ``a_inv`` is kept as the inverse of ``lam * I + sum(v v^T)`` over all
    update vectors; ``b`` is ``sum(reward * v)``.
    """

    dim: int
    lam: float = 1.0
    alpha: float = 0.01
    a_inv: Vector = field(init=False)
    b: Vector = field(init=False)
    known_tags: list[str] = field(default_factory=list, init=False)
    exhausted_tags: set[str] = field(default_factory=set, init=False)
    n_updates: int = field(default=0, init=False)
    _index: dict[str, int] = field(default_factory=dict, init=False, repr=False)
    _vecs: Vector = field(init=False, repr=False)
    _live: NDArray[np.bool_] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        self.a_inv = np.eye(self.dim) / self.lam
        self.b = np.zeros(self.dim)
        self._vecs = np.zeros((16, self.dim))
        self._live = np.zeros(16, dtype=bool)

    def add_tag(self, tag: str, v: Vector) -> bool:
        """Insert ``tag`` into the pool; returns False if it was already known."""
        if tag in self._index:
            return False
        n = len(self.known_tags)
        if n == len(self._vecs):
            self._vecs = np.concatenate([self._vecs, np.zeros_like(self._vecs)])
            self._live = np.concatenate([self._live, np.zeros_like(self._live)])
        self._vecs[n] = self._check(v)
        self._live[n] = tag not in self.exhausted_tags
        self._index[tag] = n
        self.known_tags.append(tag)
        return True

    def mark_exhausted(self, tag: str) -> None:
        self.exhausted_tags.add(tag)
        if tag in self._index:
            self._live[self._index[tag]] = False

    def update(self, v: Vector, reward: float) -> None:
        v = self._check(v)
        if not math.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward!r}")
        self.a_inv = sherman_morrison_update(self.a_inv, v)
        self.b = self.b + reward * v
        self.n_updates += 1

    def vector(self, tag: str) -> Vector:
        return self._vecs[self._index[tag]]

    def score(self, v: Vector) -> float:
        return linucb_score(self, v)

    def scores(self, live_only: bool = False) -> tuple[list[str], Vector]:
        """LinUCB scores of every known tag (or only non-exhausted ones)."""
        n = len(self.known_tags)
        vecs = self._vecs[:n]
        tags = self.known_tags
        if live_only:
            mask = self._live[:n]
            vecs = vecs[mask]
            tags = [t for t, keep in zip(tags, mask) if keep]
        theta = self.a_inv @ self.b
        quad = np.einsum("ij,jk,ik->i", vecs, self.a_inv, vecs)
        if quad.size and quad.min() < QUAD_FORM_FLOOR:
            raise FloatingPointError(f"negative quadratic form {quad.min()!r}; A^-1 is not PD")
        return list(tags), vecs @ theta + self.alpha * np.sqrt(np.maximum(quad, 0.0))

    def _check(self, v: Vector) -> Vector:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"vector of shape {v.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector has non-finite entries")
        return v


def linucb_score(state: LinUcbState, v: Vector) -> float:
    """``v^T A^-1 b + alpha * sqrt(v^T A^-1 v)`` for one arm feature ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (state.dim,):
        raise ValueError(f"vector of shape {v.shape}, expected ({state.dim},)")
    u = state.a_inv @ v
    quad = float(v @ u)
    if quad < QUAD_FORM_FLOOR:
        raise FloatingPointError(f"negative quadratic form {quad!r}; A^-1 is not PD")
    return float(u @ state.b) + state.alpha * math.sqrt(max(quad, 0.0))


@dataclass(frozen=True)
class PolicyDecision:
    tag: str
    candidates: tuple[str, ...] = ()
    values: Vector = field(default_factory=lambda: np.zeros(0))

    @property
    def scores(self) -> dict[str, float]:
        return dict(zip(self.candidates, (float(x) for x in self.values)))


def argmax_tag(tags: Sequence[str], values: Vector) -> str:
    """Highest-valued tag; exact ties go to the lexicographically smallest."""
    top = values.max()
    hits = np.flatnonzero(values == top)
    if len(hits) == 1:
        return tags[int(hits[0])]
    return min(tags[int(i)] for i in hits)


class Policy(ABC):
    """Base class: owns the candidate pool and the exhausted-tag set."""

    name: str = ""

    @abstractmethod
    def select(self) -> PolicyDecision: ...

    @abstractmethod
    def observe(self, tag: str, tags: Sequence[str] | None, reward: float | None) -> None:
        """Feed back the oracle reply for ``tag``; ``tags is None`` means exhausted."""

    @abstractmethod
    def tag_scores(self) -> dict[str, float]:
        """Current score of every known tag, for interpretation and export."""

    @property
    @abstractmethod
    def pool(self) -> list[str]: ...


class Tiara(Policy):
    """LinUCB over tag embeddings, trained on every tag of each returned item.

    With ``single=True`` this is Tiara-S: the pool still grows with returned
    tags, but only the queried tag's embedding is used for training.
    """

    name = "tiara"

    def __init__(
        self,
        initial_tags: Iterable[str],
        embed: Callable[[str], Vector],
        *,
        lam: float = 1.0,
        alpha: float = 0.01,
        single: bool = False,
        dim: int | None = None,
    ) -> None:
        self.embed = embed
        self.single = single
        tags = list(dict.fromkeys(initial_tags))
        if dim is None:
            dim = getattr(embed, "dim", None)
        if dim is None:
            if not tags:
                raise ValueError("cannot infer dimension without initial tags")
            dim = len(embed(tags[0]))
        self.state = LinUcbState(dim, lam=lam, alpha=alpha)
        for t in tags:
            self.state.add_tag(t, embed(t))

    @property
    def pool(self) -> list[str]:
        return list(self.state.known_tags)

    def select(self) -> PolicyDecision:
        tags, values = self.state.scores(live_only=True)
        if not tags:
            raise PoolExhausted()
        return PolicyDecision(argmax_tag(tags, values), tuple(tags), values)

    def observe(self, tag: str, tags: Sequence[str] | None, reward: float | None) -> None:
        if tags is None:
            self.state.mark_exhausted(tag)
            return
        if reward is None:
            raise ValueError("a returned item needs a reward")
        returned = list(dict.fromkeys(tags))
        for t in returned:
            self.state.add_tag(t, self.embed(t))
        if self.single:
            self.state.update(self.embed(tag), reward)
            return
        for t in returned:
            self.state.update(self.state.vector(t), reward)

    def tag_scores(self) -> dict[str, float]:
        tags, values = self.state.scores()
        return dict(zip(tags, (float(x) for x in values)))


class TiaraS(Tiara):
    name = "tiara-s"

    def __init__(self, initial_tags: Iterable[str], embed: Callable[[str], Vector], **kw: Any) -> None:
        kw["single"] = True
        super().__init__(initial_tags, embed, **kw)


class _PoolPolicy(Policy):
    """Shared bookkeeping for the embedding-free baselines."""

    def __init__(
        self, initial_tags: Iterable[str], *, adaptive: bool, rng: np.random.Generator | None = None
    ) -> None:
        self.adaptive = adaptive
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._pool: list[str] = list(dict.fromkeys(initial_tags))
        self._known = set(self._pool)
        self.exhausted: set[str] = set()
        self.counts: dict[str, int] = dict.fromkeys(self._pool, 0)
        self.sums: dict[str, float] = dict.fromkeys(self._pool, 0.0)

    @property
    def pool(self) -> list[str]:
        return list(self._pool)

    def candidates(self) -> list[str]:
        live = [t for t in self._pool if t not in self.exhausted]
        if not live:
            raise PoolExhausted()
        return live

    def mean(self, tag: str) -> float:
        n = self.counts[tag]
        return self.sums[tag] / n if n else math.inf

    def observe(self, tag: str, tags: Sequence[str] | None, reward: float | None) -> None:
        if tags is None:
            self.exhausted.add(tag)
            return
        if reward is None:
            raise ValueError("a returned item needs a reward")
        if self.adaptive:
            for t in tags:
                if t not in self._known:
                    self._known.add(t)
                    self._pool.append(t)
                    self.counts[t] = 0
                    self.sums[t] = 0.0
        if tag in self.counts:
            self.counts[tag] += 1
            self.sums[tag] += reward

    def tag_scores(self) -> dict[str, float]:
        return {t: self.mean(t) for t in self._pool}


class RandomPolicy(_PoolPolicy):
    """Uniform choice over the known, non-exhausted tags (pool grows)."""

    name = "random"

    def __init__(self, initial_tags: Iterable[str], *, rng: np.random.Generator | None = None) -> None:
        super().__init__(initial_tags, adaptive=True, rng=rng)

    def select(self) -> PolicyDecision:
        live = self.candidates()
        return PolicyDecision(live[int(self.rng.integers(len(live)))])


class EpsilonGreedy(_PoolPolicy):
    """Best empirical mean with probability ``1 - epsilon``, else a uniform tag.

    Unvisited tags have mean ``+inf``. The pool is fixed to the initial tags
    unless ``adaptive``.
    """

    name = "epsilon-greedy"

    def __init__(
        self,
        initial_tags: Iterable[str],
        *,
        epsilon: float = 0.1,
        adaptive: bool = False,
        rng: np.random.Generator | None = None,
    ) -> None:
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        super().__init__(initial_tags, adaptive=adaptive, rng=rng)
        self.epsilon = epsilon

    def select(self) -> PolicyDecision:
        live = self.candidates()
        values = np.array([self.mean(t) for t in live])
        if self.rng.random() < self.epsilon:
            return PolicyDecision(live[int(self.rng.integers(len(live)))], tuple(live), values)
        return PolicyDecision(argmax_tag(live, values), tuple(live), values)


class UCB(_PoolPolicy):
    """Empirical mean plus ``alpha * sqrt(1 / n_t)``; unvisited tags score ``+inf``."""

    name = "ucb"

    def __init__(
        self,
        initial_tags: Iterable[str],
        *,
        alpha: float = 1.0,
        adaptive: bool = False,
        rng: np.random.Generator | None = None,
    ) -> None:
        if not alpha >= 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        super().__init__(initial_tags, adaptive=adaptive, rng=rng)
        self.alpha = alpha

    def ucb(self, tag: str) -> float:
        n = self.counts[tag]
        if n == 0:
            return math.inf
        return self.sums[tag] / n + self.alpha * math.sqrt(1.0 / n)

    def select(self) -> PolicyDecision:
        live = self.candidates()
        values = np.array([self.ucb(t) for t in live])
        return PolicyDecision(argmax_tag(live, values), tuple(live), values)

    def tag_scores(self) -> dict[str, float]:
        return {t: self.ucb(t) for t in self._pool}


class AdaEpsilonGreedy(EpsilonGreedy):
    name = "ada-epsilon-greedy"

    def __init__(self, initial_tags: Iterable[str], **kw: Any) -> None:
        super().__init__(initial_tags, adaptive=True, **kw)


class AdaUCB(UCB):
    name = "ada-ucb"

    def __init__(self, initial_tags: Iterable[str], **kw: Any) -> None:
        super().__init__(initial_tags, adaptive=True, **kw)


POLICIES: dict[str, type[Policy]] = {
    cls.name: cls
    for cls in (Tiara, TiaraS, RandomPolicy, EpsilonGreedy, UCB, AdaEpsilonGreedy, AdaUCB)
}

# accepted parameter names per policy, with defaults
POLICY_PARAMS: dict[str, dict[str, float]] = {
    "tiara": {"lam": 1.0, "alpha": 0.01},
    "tiara-s": {"lam": 1.0, "alpha": 0.01},
    "random": {},
    "epsilon-greedy": {"epsilon": 0.1},
    "ucb": {"alpha": 1.0},
    "ada-epsilon-greedy": {"epsilon": 0.1},
    "ada-ucb": {"alpha": 1.0},
}

_PARAM_ALIASES = {"lambda": "lam", "eps": "epsilon"}


class PolicyConfigError(ValueError):
    pass


def normalize_params(name: str, params: dict[str, Any] | None) -> dict[str, float]:
    """Validate ``params`` for policy ``name`` and fill in defaults."""
    if name not in POLICY_PARAMS:
        raise PolicyConfigError(f"unknown policy {name!r}; valid names: {', '.join(POLICIES)}")
    out = dict(POLICY_PARAMS[name])
    for key, value in (params or {}).items():
        key = _PARAM_ALIASES.get(key, key)
        if key not in out:
            raise PolicyConfigError(f"policy {name!r} has no parameter {key!r}")
        out[key] = float(value)
    return out


def make_policy(
    name: str,
    initial_tags: Iterable[str],
    *,
    embed: Callable[[str], Vector] | None = None,
    rng: np.random.Generator | None = None,
    params: dict[str, Any] | None = None,
) -> Policy:
    kw = normalize_params(name, params)
    cls = POLICIES[name]
    try:
        if issubclass(cls, Tiara):
            if embed is None:
                raise PolicyConfigError(f"policy {name!r} needs tag embeddings")
            return cls(initial_tags, embed, **kw)
        return cls(initial_tags, rng=rng, **kw)
    except ValueError as exc:
        if isinstance(exc, PolicyConfigError):
            raise
        raise PolicyConfigError(str(exc)) from None

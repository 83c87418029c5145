"""Simulated tag-search databases and black-box scorers.

A :class:`Corpus` is a list of items, each with a tag set and either a
feature vector or a precomputed score. :class:`OracleSession` answers tag
queries by sampling the tag's items uniformly without replacement, and
:class:`BlackBox` is the user's scoring function over items.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

import numpy as np
import yaml
from numpy.typing import NDArray

from .embeddings import EmbeddingTable, embed_tag


class CorpusError(ValueError):
    """Raised for a corpus record that violates the corpus invariants."""


class EvaluationError(ValueError):
    """Raised when a black-box cannot score an item."""


@dataclass(frozen=True)
class ItemRecord:
    id: str
    tags: tuple[str, ...]
    features: NDArray[np.float64] | None = None
    score: float | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ItemRecord):
            return NotImplemented
        if (self.id, self.tags, self.score) != (other.id, other.tags, other.score):
            return False
        if self.features is None or other.features is None:
            return self.features is other.features
        return bool(np.array_equal(self.features, other.features))

    def to_json(self) -> dict[str, Any]:
        rec: dict[str, Any] = {"id": self.id, "tags": list(self.tags)}
        if self.features is not None:
            rec["features"] = [float(x) for x in self.features]
        else:
            rec["score"] = self.score
        return rec


@dataclass(frozen=True)
class Corpus:
    items: tuple[ItemRecord, ...]
    tag_index: Mapping[str, tuple[int, ...]]
    feature_dim: int
    _by_id: Mapping[str, int] = field(repr=False, compare=False, default_factory=dict)

    @classmethod
    def from_items(cls, items: Iterable[ItemRecord]) -> Corpus:
        items = tuple(items)
        by_id: dict[str, int] = {}
        index: dict[str, list[int]] = {}
        feature_dim: int | None = None
        for pos, item in enumerate(items):
            _check_item(item, pos, by_id, feature_dim)
            if feature_dim is None:
                feature_dim = 0 if item.features is None else len(item.features)
            by_id[item.id] = pos
            for tag in item.tags:
                index.setdefault(tag, []).append(pos)
        if not items:
            raise CorpusError("empty corpus")
        return cls(
            items=items,
            tag_index={t: tuple(v) for t, v in index.items()},
            feature_dim=feature_dim or 0,
            _by_id=by_id,
        )

    def __len__(self) -> int:
        return len(self.items)

    @property
    def tags(self) -> list[str]:
        """The tag universe, sorted."""
        return sorted(self.tag_index)

    def item(self, item_id: str) -> ItemRecord:
        return self.items[self._by_id[item_id]]

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._by_id

    @property
    def t_max(self) -> int:
        """Largest tag-set size of any item."""
        return max(len(it.tags) for it in self.items)

    def stats(self) -> dict[str, int]:
        return {
            "items": len(self.items),
            "tags": len(self.tag_index),
            "feature_dim": self.feature_dim,
            "t_max": self.t_max,
            "tag_occurrences": sum(len(v) for v in self.tag_index.values()),
        }


def _check_item(item: ItemRecord, pos: int, seen: Mapping[str, int], feature_dim: int | None) -> None:
    if item.id in seen:
        raise CorpusError(f"duplicate id: {item.id}")
    if not item.tags:
        raise CorpusError(f"empty tag set: {item.id}")
    if len(set(item.tags)) != len(item.tags):
        raise CorpusError(f"duplicate tags in record: {item.id}")
    if (item.features is None) == (item.score is None):
        raise CorpusError(f"record must carry exactly one of features/score: {item.id}")
    dim = 0 if item.features is None else len(item.features)
    if feature_dim is not None and dim != feature_dim:
        raise CorpusError(
            f"inconsistent feature length: {item.id} has {dim}, corpus has {feature_dim}"
        )
    if item.features is not None and not np.all(np.isfinite(item.features)):
        raise CorpusError(f"non-finite features: {item.id}")
    if item.score is not None and not math.isfinite(item.score):
        raise CorpusError(f"non-finite score: {item.id}")


def parse_record(line: str) -> ItemRecord:
    """Parse one JSON-lines corpus record."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(rec, dict):
        raise CorpusError("record is not a JSON object")
    rid = rec.get("id")
    if not isinstance(rid, str) or not rid:
        raise CorpusError("missing or non-string id")
    tags = rec.get("tags")
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise CorpusError(f"tags must be an array of strings: {rid}")
    if not tags:
        raise CorpusError(f"empty tag set: {rid}")
    has_f, has_s = "features" in rec, "score" in rec
    if has_f == has_s:
        raise CorpusError(f"record must carry exactly one of features/score: {rid}")
    features = score = None
    if has_f:
        raw = rec["features"]
        if not isinstance(raw, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw
        ):
            raise CorpusError(f"features must be an array of numbers: {rid}")
        features = np.array(raw, dtype=np.float64)
        features.setflags(write=False)
    else:
        if not isinstance(rec["score"], (int, float)) or isinstance(rec["score"], bool):
            raise CorpusError(f"score must be a number: {rid}")
        score = float(rec["score"])
    return ItemRecord(rid, tuple(dict.fromkeys(tags)), features, score)


def scan_corpus(path: str | Path) -> tuple[list[ItemRecord], list[tuple[int, str]]]:
    """Read every record, collecting ``(line number, message)`` for each violation."""
    items: list[ItemRecord] = []
    errors: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    feature_dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                item = parse_record(line)
                _check_item(item, len(items), seen, feature_dim)
            except CorpusError as exc:
                errors.append((lineno, str(exc)))
                continue
            if feature_dim is None:
                feature_dim = 0 if item.features is None else len(item.features)
            seen[item.id] = len(items)
            items.append(item)
    if not items and not errors:
        errors.append((0, "empty corpus"))
    return items, errors


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSON-lines corpus; raises :class:`CorpusError` on the first bad record."""
    items, errors = scan_corpus(path)
    if errors:
        lineno, msg = errors[0]
        raise CorpusError(f"line {lineno}: {msg}")
    return Corpus.from_items(items)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in corpus.items:
            fh.write(json.dumps(item.to_json(), ensure_ascii=False) + "\n")


class Oracle(Protocol):
    """Anything that answers tag queries with an item or ``None`` (exhausted)."""

    call_count: int

    def query(self, tag: str) -> ItemRecord | None: ...


class OracleSession:
    """Seeded without-replacement tag-search oracle over a :class:`Corpus`.

    Each tag keeps its own pool of not-yet-returned items. A query on an
    unknown or exhausted tag returns ``None`` and still counts as a call.
    """

    def __init__(self, corpus: Corpus, seed: int | Any = 0) -> None:
        self.corpus = corpus
        self.rng = np.random.default_rng(seed)
        self.call_count = 0
        self._pools: dict[str, list[int]] = {}

    def remaining(self, tag: str) -> int:
        pool = self._pools.get(tag)
        if pool is None:
            return len(self.corpus.tag_index.get(tag, ()))
        return len(pool)

    def query(self, tag: str) -> ItemRecord | None:
        self.call_count += 1
        pool = self._pools.get(tag)
        if pool is None:
            pool = list(self.corpus.tag_index.get(tag, ()))
            self._pools[tag] = pool
        if not pool:
            return None
        k = int(self.rng.integers(len(pool)))
        # swap-remove keeps the draw O(1); order of the rest does not matter
        pool[k], pool[-1] = pool[-1], pool[k]
        return self.corpus.items[pool.pop()]


SCORER_KINDS = ("linear", "gaussian_kernel", "table_lookup")


class BlackBox:
    """User-side scoring function ``f`` over items.

    ``kind`` is one of ``linear`` (``w . x``), ``gaussian_kernel``
    (``exp(-|v_s - x|^2 / sigma^2)``) or ``table_lookup`` (stored score per
    item id). Every call increments :attr:`eval_count`.
    """

    def __init__(
        self,
        kind: str,
        *,
        weights: Iterable[float] | None = None,
        source: Iterable[float] | None = None,
        sigma: float | None = None,
        table: Mapping[str, float] | None = None,
    ) -> None:
        if kind not in SCORER_KINDS:
            raise ValueError(f"unknown scorer kind {kind!r}; valid: {', '.join(SCORER_KINDS)}")
        self.kind = kind
        self.eval_count = 0
        self.weights = self.source = None
        self.sigma = sigma
        self.table = None
        if kind == "linear":
            if weights is None:
                raise ValueError("linear scorer needs weights")
            self.weights = np.asarray(list(weights), dtype=np.float64)
        elif kind == "gaussian_kernel":
            if source is None or sigma is None:
                raise ValueError("gaussian_kernel scorer needs source and sigma")
            if not sigma > 0:
                raise ValueError(f"sigma must be positive, got {sigma}")
            self.source = np.asarray(list(source), dtype=np.float64)
        else:
            self.table = dict(table) if table is not None else None

    @property
    def dim(self) -> int | None:
        vec = self.weights if self.kind == "linear" else self.source
        return None if vec is None else len(vec)

    def __call__(self, item: ItemRecord) -> float:
        self.eval_count += 1
        if self.kind == "table_lookup":
            if self.table is not None:
                if item.id not in self.table:
                    raise EvaluationError(f"no score for item {item.id}")
                return float(self.table[item.id])
            if item.score is None:
                raise EvaluationError(f"no score for item {item.id}")
            return float(item.score)
        if item.features is None or len(item.features) != self.dim:
            got = None if item.features is None else len(item.features)
            raise EvaluationError(f"feature dimension mismatch for {item.id}: {got} vs {self.dim}")
        if self.kind == "linear":
            return float(self.weights @ item.features)
        diff = self.source - item.features
        return math.exp(-float(diff @ diff) / self.sigma**2)

    def fresh(self) -> BlackBox:
        """Same function with a zeroed evaluation counter."""
        return BlackBox(
            self.kind,
            weights=self.weights,
            source=self.source,
            sigma=self.sigma,
            table=self.table,
        )


eval_blackbox = BlackBox.__call__


def scorer_from_config(
    cfg: Mapping[str, Any], corpus: Corpus | None = None, base_dir: str | Path = "."
) -> BlackBox:
    """Build a :class:`BlackBox` from a scorer config mapping.

    Keys: ``kind``; ``weights`` (list or path to a whitespace-separated
    file) for linear; ``sigma`` plus ``source_item`` (an item id in
    ``corpus``) or ``source_vector`` for the kernel.
    """
    kind = cfg.get("kind")
    base = Path(base_dir)
    if kind == "linear":
        weights = cfg.get("weights")
        if isinstance(weights, str):
            weights = np.loadtxt(base / weights, dtype=np.float64, ndmin=1)
        return BlackBox("linear", weights=weights)
    if kind == "gaussian_kernel":
        source = cfg.get("source_vector")
        if "source_item" in cfg:
            if corpus is None or cfg["source_item"] not in corpus:
                raise ValueError(f"source_item {cfg['source_item']!r} not in corpus")
            source = corpus.item(cfg["source_item"]).features
        return BlackBox("gaussian_kernel", source=source, sigma=cfg.get("sigma"))
    if kind == "table_lookup":
        return BlackBox("table_lookup", table=cfg.get("scores"))
    raise ValueError(f"unknown scorer kind {kind!r}; valid: {', '.join(SCORER_KINDS)}")


def load_scorer(path: str | Path, corpus: Corpus | None = None) -> BlackBox:
    with open(path, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    return scorer_from_config(cfg, corpus, Path(path).parent)


# --- synthetic environment -------------------------------------------------

_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]


def synthetic_word(i: int, width: int) -> str:
    """Deterministic pronounceable alphabetic name for index ``i``."""
    parts = []
    for _ in range(width):
        i, r = divmod(i, len(_SYLLABLES))
        parts.append(_SYLLABLES[r])
    return "".join(reversed(parts))


@dataclass(frozen=True)
class SyntheticEnv:
    corpus: Corpus
    scorer: BlackBox
    table: EmbeddingTable
    weights: NDArray[np.float64]
    planted_id: str


def make_synthetic_env(
    n_items: int,
    n_tags: int,
    d: int,
    seed: int,
    noise_sd: float = 0.1,
    *,
    t_max: int = 8,
    concentration: float = 4.0,
    concept_size: int = 3,
    concept_spread: float = 0.3,
    compound_frac: float = 0.25,
    plant_gap: float = 0.25,
    plant_tags: int = 3,
) -> SyntheticEnv:
    """Random corpus whose linear black-box is roughly linear in tag embeddings.

    Words get random unit vectors, except ``concept_size`` words planted
    close to a hidden unit direction ``w`` (isotropic noise of norm
    ``concept_spread``). Each item picks a primary tag uniformly and 1 to
    ``t_max - 1`` further tags with probability proportional to
    ``exp(concentration * cos(primary, tag))``, so semantically close tags
    co-occur. Item features are the mean embedding of the item's tags plus
    ``noise_sd`` Gaussian noise, and the scorer is ``f(x) = w . x``.

    The last item is a planted optimum: it carries the ``plant_tags`` tags
    (at most ``t_max``) best aligned with ``w`` and scores ``plant_gap``
    (relative) above the best other item.
    """
    if min(n_items, n_tags, d) <= 0:
        raise ValueError("n_items, n_tags and d must be positive")
    if n_items < 2 or n_tags < 2:
        raise ValueError("n_items and n_tags must be at least 2")
    if t_max < 2:
        raise ValueError("t_max must be at least 2")
    if noise_sd < 0 or concept_spread < 0 or plant_gap < 0:
        raise ValueError("noise_sd, concept_spread and plant_gap must be non-negative")
    if plant_tags < 1:
        raise ValueError(f"plant_tags must be positive, got {plant_tags}")
    if not 0 <= concept_size <= n_tags or not 0 <= compound_frac <= 1:
        raise ValueError("concept_size must lie in [0, n_tags] and compound_frac in [0, 1]")
    rng = np.random.default_rng(seed)

    width = 2
    while len(_SYLLABLES) ** width < n_tags:
        width += 1
    words = [synthetic_word(i, width) for i in range(n_tags)]
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    vecs = rng.standard_normal((n_tags, d))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    concept = rng.choice(n_tags, size=concept_size, replace=False)
    vecs[concept] = w + concept_spread * vecs[concept]
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    table = EmbeddingTable(dict(zip(words, vecs)), d)

    tags = list(words)
    for i in rng.choice(n_tags, size=int(round(compound_frac * n_tags)), replace=False):
        other = int(rng.integers(n_tags - 1))
        other += other >= i
        tags[i] = f"{words[i]} {words[other]}"
    emb = np.stack([embed_tag(t, table).vector for t in tags])
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    unit = emb / np.where(norms > 0, norms, 1.0)

    k_max = min(t_max, n_tags)
    items: list[ItemRecord] = []
    for i in range(n_items - 1):
        primary = int(rng.integers(n_tags))
        k = int(rng.integers(2, k_max + 1))
        logits = concentration * (unit @ unit[primary])
        logits[primary] = -np.inf
        p = np.exp(logits - logits[np.isfinite(logits)].max())
        p /= p.sum()
        others = rng.choice(n_tags, size=k - 1, replace=False, p=p)
        idx = [primary, *(int(j) for j in others)]
        x = emb[idx].mean(axis=0) + noise_sd * rng.standard_normal(d)
        x.setflags(write=False)
        items.append(ItemRecord(f"item{i:06d}", tuple(tags[j] for j in idx), x))

    best_other = max(float(w @ it.features) for it in items)
    top = np.argsort(-(emb @ w), kind="stable")[: min(plant_tags, k_max)]
    planted = w * (abs(best_other) * (1.0 + plant_gap) + 1e-3)
    planted.setflags(write=False)
    planted_id = f"item{n_items - 1:06d}"
    items.append(ItemRecord(planted_id, tuple(tags[int(j)] for j in top), planted))

    corpus = Corpus.from_items(items)
    return SyntheticEnv(corpus, BlackBox("linear", weights=w), table, w, planted_id)

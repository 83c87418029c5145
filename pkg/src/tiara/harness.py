"""Budgeted trial runner, multi-seed aggregation, sweeps and file exports."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .bandits import POLICY_PARAMS, PolicyConfigError, PoolExhausted, make_policy, normalize_params
from .embeddings import EmbeddingTable, TagEmbedder, load_embeddings
from .env import BlackBox, Corpus, ItemRecord, Oracle, OracleSession, load_corpus, make_synthetic_env, scorer_from_config

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class PolicySpec:
    name: str
    params: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def parse(cls, raw: Any) -> PolicySpec:
        if isinstance(raw, PolicySpec):
            return raw
        if isinstance(raw, str):
            name, params = raw, {}
        elif isinstance(raw, Mapping) and "name" in raw:
            params = dict(raw)
            name = params.pop("name")
            params = params.pop("params", params)
        else:
            raise ConfigError(f"cannot parse policy spec {raw!r}")
        try:
            return cls(name, normalize_params(name, params))
        except PolicyConfigError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def label(self) -> str:
        defaults = POLICY_PARAMS[self.name]
        extra = [f"{k}={v:g}" for k, v in self.params.items() if defaults.get(k) != v]
        return self.name + (f"({','.join(extra)})" if extra else "")

    def with_params(self, **params: float) -> PolicySpec:
        return PolicySpec.parse({"name": self.name, **self.params, **params})

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, **{k: float(v) for k, v in self.params.items()}}


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run.

    ``env`` is either ``{"synthetic": {...make_synthetic_env kwargs}}`` or
    ``{"corpus": path, "embeddings": path, "scorer": mapping-or-path}``.
    Relative paths resolve against ``base_dir``.
    """

    env: Mapping[str, Any]
    policies: tuple[PolicySpec, ...] = (PolicySpec("tiara", {"lam": 1.0, "alpha": 0.01}),)
    budget: int = 500
    n_initial_tags: int = 100
    initial_tags: tuple[str, ...] | None = None
    seed: int = 0
    n_seeds: int = 1
    sweep: Mapping[str, tuple[float, ...]] | None = None
    oracle_url: str | None = None
    jobs: int = 1
    top_k: int = 50
    base_dir: str = "."

    def __post_init__(self) -> None:
        if not isinstance(self.budget, int) or self.budget < 1:
            raise ConfigError(f"budget must be a positive integer, got {self.budget!r}")
        if self.n_initial_tags < 1:
            raise ConfigError(f"n_initial_tags must be positive, got {self.n_initial_tags}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.n_seeds < 1:
            raise ConfigError(f"n_seeds must be at least 1, got {self.n_seeds}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {self.jobs}")
        if not self.policies:
            raise ConfigError("no policy given")
        if not ("synthetic" in self.env or "scorer" in self.env):
            raise ConfigError("env needs either 'synthetic' or 'corpus'/'embeddings'/'scorer'")
        if self.sweep is not None and not self.sweep:
            raise ConfigError("sweep grid is empty")

    @property
    def policy(self) -> PolicySpec:
        return self.policies[0]

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__} | {"policy", "out"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        raw.pop("out", None)
        if "policy" in raw and "policies" in raw:
            raise ConfigError("give either 'policy' or 'policies', not both")
        pol = raw.pop("policies", None) or [raw.pop("policy", "tiara")]
        if not isinstance(pol, list):
            pol = [pol]
        if "env" not in raw:
            raise ConfigError("config has no 'env' section")
        sweep = raw.pop("sweep", None)
        if sweep is not None:
            if not isinstance(sweep, Mapping):
                raise ConfigError("sweep must map parameter names to lists of values")
            sweep = {k: tuple(v) if isinstance(v, list) else (v,) for k, v in sweep.items()}
        init = raw.pop("initial_tags", None)
        try:
            return cls(
                policies=tuple(PolicySpec.parse(p) for p in pol),
                sweep=sweep,
                initial_tags=tuple(init) if init is not None else None,
                base_dir=str(raw.pop("base_dir", base_dir)),
                **raw,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        """Serializable form with paths made absolute (used for the provenance echo)."""
        env = dict(self.env)
        for key in ("corpus", "embeddings"):
            if isinstance(env.get(key), str):
                env[key] = str(self.resolve(env[key]))
        if isinstance(env.get("scorer"), str):
            env["scorer"] = str(self.resolve(env["scorer"]))
        out: dict[str, Any] = {
            "env": env,
            "policies": [p.to_dict() for p in self.policies],
            "budget": self.budget,
            "n_initial_tags": self.n_initial_tags,
            "seed": self.seed,
            "n_seeds": self.n_seeds,
            "jobs": self.jobs,
            "top_k": self.top_k,
        }
        if self.initial_tags is not None:
            out["initial_tags"] = list(self.initial_tags)
        if self.sweep is not None:
            out["sweep"] = {k: [float(x) for x in v] for k, v in self.sweep.items()}
        if self.oracle_url is not None:
            out["oracle_url"] = self.oracle_url
        return out

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else (Path(self.base_dir) / p).resolve()

    def override(self, **kw: Any) -> RunConfig:
        """Copy with the non-``None`` keyword values replaced."""
        kw = {k: v for k, v in kw.items() if v is not None}
        if "policy" in kw:
            kw["policies"] = (PolicySpec.parse(kw.pop("policy")),)
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    """Read a YAML (or JSON) run config; relative paths resolve next to the file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: config must be a mapping")
    return RunConfig.from_dict(raw, base_dir=path.parent.resolve())


@dataclass(frozen=True)
class Environment:
    """Loaded environment: scorer template, embeddings and (optionally) the corpus."""

    scorer: BlackBox
    table: EmbeddingTable | None
    corpus: Corpus | None = None

    @property
    def tags(self) -> list[str]:
        if self.corpus is None:
            raise ConfigError("no local corpus to sample initial tags from; give initial_tags")
        return self.corpus.tags


def load_environment(config: RunConfig) -> Environment:
    spec = config.env
    if "synthetic" in spec:
        syn = make_synthetic_env(**spec["synthetic"])
        return Environment(syn.scorer, syn.table, syn.corpus)
    corpus = load_corpus(config.resolve(spec["corpus"])) if spec.get("corpus") else None
    table = load_embeddings(config.resolve(spec["embeddings"])) if spec.get("embeddings") else None
    scorer_cfg = spec["scorer"]
    base = Path(config.base_dir)
    if isinstance(scorer_cfg, str):
        scorer_path = config.resolve(scorer_cfg)
        with open(scorer_path, encoding="utf-8") as fh:
            scorer_cfg = yaml.safe_load(fh) or {}
        base = scorer_path.parent
    scorer = scorer_from_config(scorer_cfg, corpus, base)
    if corpus is not None and scorer.dim is not None and scorer.dim != corpus.feature_dim:
        raise ConfigError(
            f"scorer dimension {scorer.dim} does not match corpus feature_dim {corpus.feature_dim}"
        )
    return Environment(scorer, table, corpus)


@dataclass(frozen=True)
class StepRecord:
    step: int
    tag: str
    item: str | None
    reward: float | None
    best: float | None

    @property
    def exhausted(self) -> bool:
        return self.item is None

    def to_json(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "tag": self.tag,
            "item": self.item,
            "exhausted": self.exhausted,
            "reward": self.reward,
            "best": self.best,
        }


@dataclass
class TrialResult:
    policy: str
    seed: int
    budget: int
    steps: list[StepRecord]
    best_item: str | None
    best_score: float | None
    tag_scores: dict[str, float]
    oracle_calls: int
    f_evals: int
    truncated: bool
    initial_tags: list[str]
    wall_time: float = field(default=0.0, compare=False)

    def curve(self) -> np.ndarray:
        """Best-so-far per step, length ``budget``; NaN before the first reward.

        A truncated trial carries its last value forward.
        """
        out = np.full(self.budget, np.nan)
        for rec in self.steps:
            if rec.best is not None:
                out[rec.step - 1] = rec.best
        last = np.nan
        for i in range(self.budget):
            if math.isnan(out[i]):
                out[i] = last
            else:
                last = out[i]
        return out

    def log_lines(self) -> list[str]:
        lines = [json.dumps(r.to_json()) for r in self.steps]
        if self.truncated:
            lines.append(json.dumps({"truncated": True, "steps": len(self.steps)}))
        return lines


def sample_initial_tags(tags: Sequence[str], n: int, seed: int) -> list[str]:
    """``n`` tags drawn without replacement from sorted ``tags`` with the trial seed."""
    universe = sorted(set(tags))
    n = min(n, len(universe))
    rng = np.random.default_rng([1, seed])
    return [universe[int(i)] for i in rng.choice(len(universe), size=n, replace=False)]


def run_trial(
    config: RunConfig,
    *,
    seed: int | None = None,
    policy: PolicySpec | None = None,
    env: Environment | None = None,
    oracle: Oracle | None = None,
) -> TrialResult:
    """One budgeted retrieval run: ``budget`` select/query/score/update cycles.

    Queries on exhausted tags consume budget. If every candidate becomes
    exhausted the trial stops early with ``truncated=True``.
    """
    seed = config.seed if seed is None else seed
    policy = policy or config.policy
    env = env or load_environment(config)
    if oracle is None:
        if config.oracle_url:
            from .service.client import RemoteOracle

            oracle = RemoteOracle(config.oracle_url, seed=seed)
        else:
            if env.corpus is None:
                raise ConfigError("no corpus and no oracle_url")
            oracle = OracleSession(env.corpus, seed)

    if config.initial_tags is not None:
        initial = list(dict.fromkeys(config.initial_tags))
    else:
        initial = sample_initial_tags(env.tags, config.n_initial_tags, seed)
    embed = TagEmbedder(env.table) if env.table is not None else None
    pol = make_policy(
        policy.name, initial, embed=embed, rng=np.random.default_rng([2, seed]), params=dict(policy.params)
    )
    scorer = env.scorer.fresh()
    cache: dict[str, float] = {}

    t0 = time.perf_counter()
    steps: list[StepRecord] = []
    best_item: str | None = None
    best: float | None = None
    truncated = False
    for step in range(1, config.budget + 1):
        try:
            tag = pol.select().tag
        except PoolExhausted:
            truncated = True
            break
        item = oracle.query(tag)
        if item is None:
            pol.observe(tag, None, None)
            steps.append(StepRecord(step, tag, None, None, best))
            continue
        reward = _score(scorer, cache, item)
        pol.observe(tag, item.tags, reward)
        if best is None or reward > best:
            best, best_item = reward, item.id
        steps.append(StepRecord(step, tag, item.id, reward, best))

    return TrialResult(
        policy=policy.label,
        seed=seed,
        budget=config.budget,
        steps=steps,
        best_item=best_item,
        best_score=best,
        tag_scores=pol.tag_scores(),
        oracle_calls=oracle.call_count,
        f_evals=scorer.eval_count,
        truncated=truncated,
        initial_tags=initial,
        wall_time=time.perf_counter() - t0,
    )


def _score(scorer: BlackBox, cache: dict[str, float], item: ItemRecord) -> float:
    hit = cache.get(item.id)
    if hit is None:
        hit = cache[item.id] = scorer(item)
    return hit


@dataclass
class AggregateResult:
    policy: str
    seeds: list[int]
    trials: list[TrialResult]
    failures: dict[int, str] = field(default_factory=dict)
    params: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def finals(self) -> np.ndarray:
        return np.array([t.best_score for t in self.trials if t.best_score is not None], dtype=float)

    @property
    def mean(self) -> float:
        f = self.finals
        return float(f.mean()) if f.size else math.nan

    @property
    def sd(self) -> float:
        """Population standard deviation (0 for a single trial)."""
        f = self.finals
        return float(f.std()) if f.size else math.nan

    def curve(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-step mean and sd of best-so-far over trials (NaN entries ignored)."""
        if not self.trials:
            return np.zeros(0), np.zeros(0)
        curves = np.stack([t.curve() for t in self.trials])
        ok = ~np.isnan(curves)
        n = ok.sum(axis=0)
        filled = np.where(ok, curves, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = filled.sum(axis=0) / n
            sq = np.where(ok, (curves - mean) ** 2, 0.0).sum(axis=0) / n
        return mean, np.sqrt(sq)


def _run_one(config: RunConfig, env: Environment, policy: PolicySpec, seed: int) -> TrialResult | str:
    try:
        return run_trial(config, seed=seed, policy=policy, env=env)
    except Exception as exc:  # reported as a per-seed failure marker
        log.warning("trial %s seed=%d failed: %s", policy.label, seed, exc)
        return f"{type(exc).__name__}: {exc}"


def run_aggregate(
    config: RunConfig,
    n_seeds: int | None = None,
    *,
    policy: PolicySpec | None = None,
    env: Environment | None = None,
) -> AggregateResult:
    """Run seeds ``seed, seed+1, ..., seed+n_seeds-1`` and aggregate final scores."""
    n_seeds = config.n_seeds if n_seeds is None else n_seeds
    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be at least 1, got {n_seeds}")
    policy = policy or config.policy
    env = env or load_environment(config)
    seeds = [config.seed + i for i in range(n_seeds)]
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(lambda s: _run_one(config, env, policy, s), seeds))
    else:
        outcomes = [_run_one(config, env, policy, s) for s in seeds]
    agg = AggregateResult(policy.label, seeds, [], params=dict(policy.params))
    for s, out in zip(seeds, outcomes):
        if isinstance(out, str):
            agg.failures[s] = out
        else:
            agg.trials.append(out)
    return agg


def sweep_points(grid: Mapping[str, Iterable[float]]) -> list[dict[str, float]]:
    """Cartesian product of the grid, first key varying slowest."""
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(list(grid[k]) for k in keys))]


def run_sweep(
    config: RunConfig, grid: Mapping[str, Iterable[float]] | None = None, *, env: Environment | None = None
) -> list[AggregateResult]:
    """One :class:`AggregateResult` per grid point, all on the same seed schedule."""
    grid = grid if grid is not None else config.sweep
    if not grid:
        raise ConfigError("sweep grid is empty")
    env = env or load_environment(config)
    results = []
    for point in sweep_points(grid):
        try:
            spec = config.policy.with_params(**point)
        except ConfigError as exc:
            results.append(AggregateResult(config.policy.name, [], [], params=point, error=str(exc)))
            continue
        agg = run_aggregate(config, policy=spec, env=env)
        agg.params = dict(point)
        results.append(agg)
    return results


def export_tag_scores(trial: TrialResult, top_k: int) -> list[tuple[int, str, float]]:
    """Top ``top_k`` tags by final policy score as ``(rank, tag, score)`` rows."""
    if top_k < 1:
        raise ValueError(f"top_k must be positive, got {top_k}")
    ranked = sorted(trial.tag_scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(i + 1, t, s) for i, (t, s) in enumerate(ranked[:top_k])]


# --- file outputs ------------------------------------------------------------


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, float) or v is None else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_config(config: RunConfig, out: Path) -> None:
    text = yaml.safe_dump(config.to_dict(), sort_keys=False)
    (out / "config.yaml").write_text(text, encoding="utf-8")


def write_run_outputs(config: RunConfig, aggregates: Sequence[AggregateResult], out: str | Path) -> Path:
    """Write trial logs, ``curve.csv``, ``summary.csv``, ``tag_scores.csv`` and ``config.yaml``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    nested = len(aggregates) > 1
    for agg in aggregates:
        tdir = out / _safe(agg.policy) if nested else out
        tdir.mkdir(exist_ok=True)
        for trial in agg.trials:
            text = "\n".join(trial.log_lines())
            (tdir / f"trial_{trial.seed}.jsonl").write_text(text + "\n" if text else "", encoding="utf-8")

    _write_csv(
        out / "summary.csv",
        ["policy", "mean", "sd", "n", "failed"],
        [(a.policy, a.mean, a.sd, len(a.finals), len(a.failures)) for a in aggregates],
    )
    curve_rows = []
    for agg in aggregates:
        mean, sd = agg.curve()
        curve_rows += [(agg.policy, i + 1, float(m), float(s)) for i, (m, s) in enumerate(zip(mean, sd))]
    _write_csv(out / "curve.csv", ["policy", "step", "mean", "sd"], curve_rows)
    score_rows = []
    for agg in aggregates:
        for trial in agg.trials:
            score_rows += [
                (agg.policy, trial.seed, r, t, s) for r, t, s in export_tag_scores(trial, config.top_k)
            ]
    _write_csv(out / "tag_scores.csv", ["policy", "seed", "rank", "tag", "score"], score_rows)
    write_config(config, out)
    return out


def write_sweep_outputs(config: RunConfig, results: Sequence[AggregateResult], out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(config.sweep or results[0].params)
    _write_csv(
        out / "sweep.csv",
        [*keys, "policy", "mean", "sd", "n", "failed", "error"],
        [
            (*(float(r.params.get(k, math.nan)) for k in keys), r.policy, r.mean, r.sd,
             len(r.finals), len(r.failures), r.error or "")
            for r in results
        ],
    )
    write_config(config, out)
    return out


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=" else "_" for c in label)


def trial_to_dict(trial: TrialResult) -> dict[str, Any]:
    """Everything but wall time, for field-by-field comparisons."""
    d = asdict(trial)
    d.pop("wall_time")
    return d

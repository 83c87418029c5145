from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiara.env import BlackBox, Corpus, ItemRecord, OracleSession, make_synthetic_env
from tiara.harness import (
    ConfigError,
    Environment,
    PolicySpec,
    RunConfig,
    export_tag_scores,
    load_config,
    run_aggregate,
    run_sweep,
    run_trial,
    sample_initial_tags,
    sweep_points,
    trial_to_dict,
    write_run_outputs,
)

SYN = {"synthetic": {"n_items": 300, "n_tags": 60, "d": 8, "seed": 11}}
ALL_POLICIES = ["tiara", "tiara-s", "random", "epsilon-greedy", "ucb", "ada-epsilon-greedy", "ada-ucb"]


def cfg(**kw) -> RunConfig:
    return RunConfig(env=SYN, **{"budget": 40, "n_initial_tags": 20, **kw})


def test_budget_one(small_env):
    trial = run_trial(cfg(budget=1), env=small_env)
    assert len(trial.steps) == 1
    assert trial.oracle_calls == 1
    assert trial.f_evals == 1
    assert trial.best_score == trial.steps[0].reward


def test_trial_is_deterministic(small_env):
    for name in ALL_POLICIES:
        a = run_trial(cfg(), env=small_env, policy=PolicySpec.parse(name), seed=4)
        b = run_trial(cfg(), env=small_env, policy=PolicySpec.parse(name), seed=4)
        assert trial_to_dict(a) == trial_to_dict(b)


def test_seed_isolation(small_env):
    alone = run_trial(cfg(), env=small_env, seed=7)
    agg = run_aggregate(cfg(seed=5, n_seeds=4, jobs=3), env=small_env)
    assert agg.seeds == [5, 6, 7, 8]
    assert trial_to_dict(agg.trials[2]) == trial_to_dict(alone)


def test_tiara_beats_random_on_most_seeds():
    syn = make_synthetic_env(2000, 300, 16, 0)
    env = Environment(syn.scorer, syn.table, syn.corpus)
    config = RunConfig(env=SYN, budget=200, n_initial_tags=100, n_seeds=50)
    t = run_aggregate(config, env=env)
    r = run_aggregate(config, env=env, policy=PolicySpec.parse("random"))
    wins = sum(a >= b for a, b in zip(t.finals, r.finals))
    assert wins >= 45


def test_aggregate_single_seed_has_zero_sd(small_env):
    agg = run_aggregate(cfg(), 1, env=small_env)
    assert agg.sd == 0.0
    assert agg.mean == agg.trials[0].best_score


def test_aggregate_statistics_recomputed(small_env):
    agg = run_aggregate(cfg(n_seeds=6), env=small_env, policy=PolicySpec.parse("random"))
    finals = [t.best_score for t in agg.trials]
    mu = sum(finals) / len(finals)
    assert agg.mean == pytest.approx(mu, rel=1e-12)
    assert agg.sd == pytest.approx(math.sqrt(sum((x - mu) ** 2 for x in finals) / len(finals)), rel=1e-12)
    mean, sd = agg.curve()
    assert mean[-1] == pytest.approx(agg.mean)
    assert sd[-1] == pytest.approx(agg.sd)


def test_zero_seeds_rejected(small_env):
    with pytest.raises(ConfigError):
        run_aggregate(cfg(), 0, env=small_env)


def test_sweep_grid_and_one_point_equivalence(small_env):
    config = cfg(n_seeds=2)
    grid = {"alpha": [0.001, 0.01, 0.1, 1.0, 10.0]}
    results = run_sweep(config, grid, env=small_env)
    assert [r.params["alpha"] for r in results] == grid["alpha"]
    assert all(len(r.trials) == 2 for r in results)
    one = run_sweep(config, {"alpha": [0.1]}, env=small_env)[0]
    direct = run_aggregate(config, policy=PolicySpec.parse({"name": "tiara", "alpha": 0.1}), env=small_env)
    assert [trial_to_dict(t) for t in one.trials] == [trial_to_dict(t) for t in direct.trials]


def test_sweep_points_order():
    assert sweep_points({"a": [1, 2], "b": [3, 4]}) == [
        {"a": 1, "b": 3}, {"a": 1, "b": 4}, {"a": 2, "b": 3}, {"a": 2, "b": 4}
    ]


def test_sweep_bad_parameter_is_reported(small_env):
    res = run_sweep(cfg(), {"epsilon": [0.1]}, env=small_env)
    assert res[0].error and "no parameter" in res[0].error


def test_export_contract(small_env):
    trial = run_trial(cfg(), env=small_env)
    rows = export_tag_scores(trial, 10)
    assert [r for r, _, _ in rows] == list(range(1, 11))
    scores = [s for _, _, s in rows]
    assert scores == sorted(scores, reverse=True)
    assert len({t for _, t, _ in rows}) == 10
    assert all(t in trial.tag_scores for _, t, _ in rows)
    assert len(export_tag_scores(trial, 10_000)) == len(trial.tag_scores)
    with pytest.raises(ValueError):
        export_tag_scores(trial, 0)


@given(st.sampled_from(ALL_POLICIES), st.integers(1, 60), st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_budget_accounting_and_monotone_curve(small_env, name, budget, seed):
    trial = run_trial(cfg(budget=budget), env=small_env, policy=PolicySpec.parse(name), seed=seed)
    assert trial.oracle_calls == len(trial.steps) <= budget
    assert trial.truncated == (len(trial.steps) < budget)
    distinct = {s.item for s in trial.steps if s.item is not None}
    assert trial.f_evals == len(distinct) <= len(trial.steps)
    curve = trial.curve()
    finite = curve[~np.isnan(curve)]
    assert np.all(np.diff(finite) >= 0)
    if trial.best_score is not None:
        assert curve[-1] == trial.best_score
        assert trial.best_score == max(s.reward for s in trial.steps if s.reward is not None)


def test_exhausting_corpus_truncates():
    corpus = Corpus.from_items([ItemRecord("a", ("x",), score=1.0), ItemRecord("b", ("x", "y"), score=2.0)])
    env = Environment(BlackBox("table_lookup"), None, corpus)
    config = RunConfig(env={"scorer": {"kind": "table_lookup"}}, budget=10, initial_tags=("x",))
    trial = run_trial(config, env=env, policy=PolicySpec.parse("random"))
    assert trial.truncated
    assert trial.oracle_calls == len(trial.steps) == 5
    assert sum(s.exhausted for s in trial.steps) == 2
    assert trial.best_score == 2.0
    assert json.loads(trial.log_lines()[-1]) == {"truncated": True, "steps": 5}
    assert len(trial.curve()) == 10 and trial.curve()[-1] == 2.0


def test_initial_tags_sample_is_seeded():
    tags = [f"t{i}" for i in range(50)]
    a = sample_initial_tags(tags, 10, 3)
    assert a == sample_initial_tags(list(reversed(tags)), 10, 3)
    assert len(set(a)) == 10
    assert sample_initial_tags(tags, 100, 0).__len__() == 50


def test_config_round_trip_and_errors(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("env: {synthetic: {n_items: 50, n_tags: 10, d: 3, seed: 0}}\npolicy: ucb\nbudget: 5\nout: x\n")
    config = load_config(path)
    assert config.policy.name == "ucb" and config.budget == 5
    assert RunConfig.from_dict(config.to_dict()) == config.override(base_dir=".")
    with pytest.raises(ConfigError, match="unknown config keys"):
        RunConfig.from_dict({"env": SYN, "bugdet": 3})
    with pytest.raises(ConfigError, match="budget"):
        RunConfig(env=SYN, budget=0)


def test_write_outputs(tmp_path, small_env):
    config = cfg(n_seeds=2)
    agg = run_aggregate(config, env=small_env)
    out = write_run_outputs(config, [agg], tmp_path / "o")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["config.yaml", "curve.csv", "summary.csv", "tag_scores.csv", "trial_0.jsonl", "trial_1.jsonl"]
    with open(out / "summary.csv") as fh:
        row = next(csv.DictReader(fh))
    assert float(row["mean"]) == agg.mean and int(row["n"]) == 2
    lines = (out / "trial_0.jsonl").read_text().splitlines()
    assert len(lines) == config.budget
    assert "wall" not in (out / "config.yaml").read_text()


def test_remote_oracle_is_optional_seam(small_env):
    oracle = OracleSession(small_env.corpus, 3)
    a = run_trial(cfg(), env=small_env, seed=3, oracle=oracle)
    b = run_trial(cfg(), env=small_env, seed=3)
    assert trial_to_dict(a) == trial_to_dict(b)

"""Command-line front end.

Subcommands: run, sweep, serve, probe, validate, export-scores, synth.
Progress goes to stderr; machine outputs go to files under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml

from .bandits import POLICIES
from .embeddings import EmbeddingLoadError, coverage, load_embeddings, save_embeddings, tokenize_tag
from .env import CorpusError, EvaluationError, make_synthetic_env, save_corpus, scan_corpus
from .harness import (
    ConfigError,
    PolicySpec,
    RunConfig,
    export_tag_scores,
    load_config,
    load_environment,
    run_aggregate,
    run_sweep,
    run_trial,
    write_config,
    write_run_outputs,
    write_sweep_outputs,
    _write_csv,
)

log = logging.getLogger("tiara")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_USAGE) -> None:
        super().__init__(msg)
        self.code = code


def _parse_value(text: str) -> Any:
    return yaml.safe_load(text)


def _parse_pairs(pairs: Sequence[str] | None, what: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise CliError(f"{what} must look like key=value, got {pair!r}")
        out[key.strip()] = _parse_value(value)
    return out


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        if not (args.corpus and args.scorer):
            raise CliError("give --config, or at least --corpus and --scorer")
        env = {"corpus": str(Path(args.corpus).resolve()), "scorer": str(Path(args.scorer).resolve())}
        if args.embeddings:
            env["embeddings"] = str(Path(args.embeddings).resolve())
        cfg = RunConfig(env=env)
    env_over = {}
    for key in ("corpus", "embeddings", "scorer"):
        value = getattr(args, key, None)
        if value and args.config:
            env_over[key] = str(Path(value).resolve())
    if env_over:
        cfg = cfg.override(env={k: v for k, v in cfg.env.items() if k != "synthetic"} | env_over)
    policy = None
    if args.policy:
        params = _parse_pairs(args.param, "--param")
        if args.policy not in POLICIES:
            raise CliError(f"unknown policy {args.policy!r}; valid names: {', '.join(POLICIES)}")
        policy = PolicySpec.parse({"name": args.policy, **params})
    elif args.param:
        policy = cfg.policy.with_params(**_parse_pairs(args.param, "--param"))
    cfg = cfg.override(
        seed=args.seed,
        budget=args.budget,
        n_seeds=args.seeds,
        jobs=args.jobs,
        oracle_url=args.oracle_url,
        n_initial_tags=getattr(args, "n_initial_tags", None),
        top_k=getattr(args, "top_k", None),
        policy=policy,
    )
    return cfg


def _out_dir(args: argparse.Namespace) -> Path:
    if not args.out:
        raise CliError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    env = load_environment(cfg)
    aggregates = []
    for spec in cfg.policies:
        log.info("running %s: budget=%d seeds=%d..%d", spec.label, cfg.budget, cfg.seed, cfg.seed + cfg.n_seeds - 1)
        agg = run_aggregate(cfg, policy=spec, env=env)
        log.info("%s: best %.6g +- %.6g over %d trials", agg.policy, agg.mean, agg.sd, len(agg.trials))
        aggregates.append(agg)
    write_run_outputs(cfg, aggregates, out)
    failed = {a.policy: a.failures for a in aggregates if a.failures}
    for label, fails in failed.items():
        for seed, msg in sorted(fails.items()):
            print(f"error: {label} seed {seed}: {msg}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    grid = {k: v if isinstance(v, list) else [v] for k, v in _parse_pairs(args.grid, "--grid").items()}
    if grid:
        cfg = cfg.override(sweep={k: tuple(v) for k, v in grid.items()})
    if not cfg.sweep:
        raise CliError("no sweep grid: give --grid key=[v1,v2,...] or a 'sweep' config section")
    out = _out_dir(args)
    results = run_sweep(cfg)
    write_sweep_outputs(cfg, results, out)
    bad = False
    for r in results:
        if r.error or r.failures:
            bad = True
            print(f"error: {r.params}: {r.error or r.failures}", file=sys.stderr)
        else:
            log.info("%s: %.6g +- %.6g", r.params, r.mean, r.sd)
    return EXIT_FAIL if bad else EXIT_OK


def cmd_export_scores(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(args)
    trial = run_trial(cfg)
    rows = [(trial.policy, trial.seed, r, t, s) for r, t, s in export_tag_scores(trial, args.top_k or cfg.top_k)]
    _write_csv(out / "tag_scores.csv", ["policy", "seed", "rank", "tag", "score"], rows)
    write_config(cfg, out)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .service.app import serve

    serve(args.corpus, host=args.host, port=args.port, max_calls=args.max_calls, window=args.window)
    return EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    from .service.client import OracleTransportError, RemoteOracle

    try:
        with RemoteOracle(args.url, seed=args.seed) as client:
            report: dict[str, Any] = {"health": client.health().model_dump()}
            if args.tag:
                item = client.query(args.tag)
                report["query"] = None if item is None else item.to_json()
    except OracleTransportError as exc:
        raise CliError(str(exc), EXIT_FAIL) from None
    print(json.dumps(report, indent=2))
    return EXIT_OK


def validate_report(corpus_path: str | None, embeddings_path: str | None) -> tuple[dict[str, Any], list[str]]:
    report: dict[str, Any] = {}
    errors: list[str] = []
    table = None
    if embeddings_path:
        try:
            table = load_embeddings(embeddings_path)
            report["embeddings"] = {"dim": table.dim, "words": len(table)}
        except (EmbeddingLoadError, OSError) as exc:
            errors.append(f"{embeddings_path}: {exc}")
    if corpus_path:
        try:
            items, bad = scan_corpus(corpus_path)
        except OSError as exc:
            errors.append(f"{corpus_path}: {exc}")
        else:
            errors += [f"line {n}: {msg}" for n, msg in bad]
            tags = {t for it in items for t in it.tags}
            stats: dict[str, Any] = {
                "items": len(items),
                "tags": len(tags),
                "feature_dim": 0 if not items or items[0].features is None else len(items[0].features),
                "t_max": max((len(it.tags) for it in items), default=0),
                "tag_occurrences": sum(len(it.tags) for it in items),
            }
            if table is not None:
                stats["coverage"] = coverage(tags, table)
                stats["oov_tags"] = sum(1 for t in tags if not any(w in table for w in tokenize_tag(t)))
            report["corpus"] = stats
    return report, errors


def cmd_validate(args: argparse.Namespace) -> int:
    if not (args.corpus or args.embeddings):
        raise CliError("give --corpus and/or --embeddings")
    report, errors = validate_report(args.corpus, args.embeddings)
    report["errors"] = errors
    for section in ("corpus", "embeddings"):
        for k, v in report.get(section, {}).items():
            print(f"{section}.{k}: {v}")
    for e in errors:
        print(e)
    print(f"violations: {len(errors)}")
    if args.out:
        out = _out_dir(args)
        (out / "validate.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_FAIL if errors else EXIT_OK


SYNTH_DEFAULTS = {"n_items": 1000, "n_tags": 200, "d": 16, "seed": 0, "noise_sd": 0.1}


def cmd_synth(args: argparse.Namespace) -> int:
    params = dict(SYNTH_DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            params.update(yaml.safe_load(fh) or {})
    for key in SYNTH_DEFAULTS:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    out = _out_dir(args)
    try:
        syn = make_synthetic_env(**params)
    except TypeError as exc:
        raise CliError(f"bad synth parameter: {exc}") from None
    save_corpus(syn.corpus, out / "corpus.jsonl")
    save_embeddings(syn.table, out / "embeddings.txt")
    (out / "weights.txt").write_text("".join(repr(float(x)) + "\n" for x in syn.weights), encoding="utf-8")
    (out / "scorer.yaml").write_text(yaml.safe_dump({"kind": "linear", "weights": "weights.txt"}), encoding="utf-8")
    (out / "synth.yaml").write_text(yaml.safe_dump(params, sort_keys=False), encoding="utf-8")
    run_cfg = {
        "env": {"corpus": "corpus.jsonl", "embeddings": "embeddings.txt", "scorer": "scorer.yaml"},
        "policy": "tiara",
        "budget": 200,
        "n_initial_tags": 100,
        "seed": 0,
        "n_seeds": 10,
    }
    (out / "run.yaml").write_text(yaml.safe_dump(run_cfg, sort_keys=False), encoding="utf-8")
    log.info("wrote %d items, %d words to %s (planted optimum %s)", len(syn.corpus), len(syn.table), out, syn.planted_id)
    return EXIT_OK


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON run config")
    p.add_argument("--corpus", help="JSON-lines corpus (overrides config)")
    p.add_argument("--embeddings", help="word-vector text file (overrides config)")
    p.add_argument("--scorer", help="scorer YAML (overrides config)")
    p.add_argument("--policy", help=f"one of: {', '.join(POLICIES)}")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="policy parameter, repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--seeds", type=int, help="number of seeds (seed, seed+1, ...)")
    p.add_argument("--n-initial-tags", type=int)
    p.add_argument("--jobs", type=int, help="concurrent trials")
    p.add_argument("--oracle-url", help="query a remote oracle service instead of the local corpus")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiara", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run trials and aggregate over seeds")
    _run_flags(p)
    p.add_argument("--top-k", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="hyperparameter sweep")
    _run_flags(p)
    p.add_argument("--grid", action="append", metavar="KEY=[V1,V2]", help="grid axis, repeatable")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-scores", help="run one trial and export its final tag scores")
    _run_flags(p)
    p.add_argument("--top-k", type=int)
    p.set_defaults(func=cmd_export_scores)

    p = sub.add_parser("serve", help="serve a corpus as an HTTP oracle")
    p.add_argument("--corpus", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-calls", type=int, help="per-session calls per window (default: unlimited)")
    p.add_argument("--window", type=float, default=3600.0, help="rate-limit window in seconds")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("probe", help="check a running oracle service")
    p.add_argument("--url", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag", help="also issue one query for this tag")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("validate", help="check a corpus and/or embedding file")
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--out", help="also write validate.json here")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a synthetic environment to disk")
    p.add_argument("--config", help="YAML with synth parameters")
    p.add_argument("--n-items", type=int)
    p.add_argument("--n-tags", type=int)
    p.add_argument("--d", "--dim", dest="d", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CorpusError, EmbeddingLoadError, EvaluationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

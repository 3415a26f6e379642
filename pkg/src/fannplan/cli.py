"""``fannplan`` command line: data generation, artifact builds, planned runs, benchmarks.

Exit codes: 0 ok, 1 usage, 2 data error, 3 missing artifact.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import yaml

from .bench import METHODS, MissingArtifactError, run_bench
from .container import ContainerError
from .core import InputError, SchemaError
from .datasets import ConfigError, CorpusConfig, DataLoadError, load_corpus_dir, save_corpus
from .engines import GraphParams, build_graph_index, brute_force_index, load_index, postfilter_search, prefilter_search
from .learners.gbm import GBMConfig
from .learners.mlp import TrainConfig, TrainingError
from .planner import PlannerModel, generate_training_set, plan_and_execute, train_planner
from .selectivity import EstimatorMissingError, EstimatorTrainingError, SelectivityEstimator, train_estimator
from .stats import DatasetStats, UnknownLabelError, build_stats
from .workload import KINDS, Workload, gen_workload, random_model_predicates

logger = logging.getLogger("fannplan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISSING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config ---------------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"config file {p} not found")
    try:
        data = yaml.safe_load(p.read_text())  # JSON is a YAML subset
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def _section(config: dict, name: str, cls, **overrides):
    """Instantiate dataclass ``cls`` from ``config[name]``; unknown keys are a config error."""
    raw = dict(config.get(name) or {})
    known = {f.name for f in fields(cls)}
    bad = sorted(set(raw) - known)
    if bad:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(bad)}")
    obj = cls(**raw)
    return replace(obj, **{k: v for k, v in overrides.items() if v is not None})


# -- artifact loading -------------------------------------------------------------


def _need(path, build_cmd: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"{p} not found; create it with `fannplan {build_cmd}`")
    return p


def _corpus(args):
    return load_corpus_dir(_need(args.data, "gen-data"))


def _stats(args, corpus=None):
    if args.stats is None:
        if corpus is None:
            raise MissingArtifactError("--stats is required; create it with `fannplan build-stats`")
        return build_stats(corpus, seed=args.seed)
    return DatasetStats.load(_need(args.stats, "build-stats"))


def _estimator(path, stats):
    if path is None:
        return None
    return SelectivityEstimator.load(_need(path, "train-estimator"), stats)


def _index(path, corpus):
    if path is None:
        return None
    return load_index(_need(path, "build-index"), corpus)


def _planner(path, stats):
    if path is None:
        return None
    return PlannerModel.load(_need(path, "train-planner"), stats)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _mix(text: str | None) -> dict | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        name, _, w = part.partition("=")
        name = name.strip()
        if name not in KINDS:
            raise UsageError(f"unknown predicate kind {name!r}; choose from {', '.join(KINDS)}")
        try:
            out[name] = float(w) if w else 1.0
        except ValueError as exc:
            raise UsageError(f"bad weight in {part!r}") from exc
    return out


# -- subcommands --------------------------------------------------------------------


def cmd_gen_data(args, config):
    raw = dict(config.get("corpus") or {})
    if raw.get("labels") or raw.get("numerics"):
        cfg = CorpusConfig.from_dict(raw)
    else:
        base = CorpusConfig.default(int(raw.get("n", 10000)), int(raw.get("d", 32)))
        cfg = base if not raw.get("vector_dist") else replace(base, vector_dist=raw["vector_dist"])
    if args.n is not None:
        cfg = replace(cfg, n=args.n)
    if args.d is not None:
        cfg = replace(cfg, d=args.d)
    if args.vector_dist is not None:
        cfg = replace(cfg, vector_dist=args.vector_dist)
    corpus = cfg.generate(args.seed)
    paths = save_corpus(args.out, corpus)
    print(json.dumps({"n": corpus.n, "d": corpus.d, **{k: str(v) for k, v in paths.items()}}))


def cmd_build_stats(args, config):
    corpus = _corpus(args)
    raw = dict(config.get("stats") or {})
    rate = args.sample_rate if args.sample_rate is not None else raw.get("sample_rate", 0.01)
    st = build_stats(corpus, sample_rate=rate, seed=args.seed, bins=int(raw.get("bins", 1024)),
                     super_bins=int(raw.get("super_bins", 16)))
    digest = st.save(args.out)
    print(json.dumps({"out": args.out, "sha256": digest, "labels": len(st.label_keys)}))


def cmd_build_index(args, config):
    corpus = _corpus(args)
    t0 = time.perf_counter()
    if args.backend == "brute":
        index = brute_force_index(corpus)
    else:
        index = build_graph_index(corpus, _section(config, "index", GraphParams, ef_search=args.ef_search), args.seed)
    digest = index.save(args.out)
    print(json.dumps({"out": args.out, "backend": index.kind, "sha256": digest,
                      "build_seconds": time.perf_counter() - t0}))


def cmd_gen_workload(args, config):
    corpus = _corpus(args)
    stats = _stats(args, corpus)
    targets = _floats(args.targets)
    if args.explicit_targets:
        tgt = targets
    elif len(targets) == 2:
        tgt = (targets[0], targets[1])
    else:
        raise UsageError("--targets takes LO,HI unless --explicit-targets is given")
    wl = gen_workload(corpus, stats, args.n_queries, tgt, _mix(args.mix), args.k, args.seed)
    wl.save(args.out)
    print(json.dumps({"out": args.out, "queries": len(wl), "requested": args.n_queries}))


def cmd_train_estimator(args, config):
    corpus = _corpus(args)
    stats = _stats(args)
    preds = random_model_predicates(corpus, stats, args.n_train, seed=args.seed)
    cfg = _section(config, "gbm", GBMConfig, seed=args.seed)
    model = train_estimator(corpus, stats, preds, seed=args.seed, config=cfg)
    est = SelectivityEstimator(stats, model, stats.fingerprint())
    digest = est.save(args.out)
    print(json.dumps({"out": args.out, "sha256": digest, "trees": len(model.trees),
                      "train_mse": model.train_mse[-1] if model.train_mse else None}))


def cmd_train_planner(args, config):
    corpus = _corpus(args)
    stats = _stats(args)
    est = _estimator(args.estimator, stats) or SelectivityEstimator(stats, None, stats.fingerprint())
    index = _index(args.index, corpus)
    if index is None:
        raise MissingArtifactError("--index is required; create it with `fannplan build-index`")
    lo, hi = _floats(args.range)
    rows = generate_training_set(corpus, est, index, args.n_queries, (lo, hi), args.k, args.seed,
                                 repeats=args.repeats, predicate_mix=_mix(args.mix), use_k=not args.no_k_feature)
    cfg = _section(config, "train", TrainConfig, seed=args.seed)
    model = train_planner(rows, cfg, stats_fingerprint=stats.fingerprint())
    digest = model.save(args.out)
    pre = sum(r.label.label == "pre" for r in rows)
    print(json.dumps({"out": args.out, "sha256": digest, "rows": len(rows), "pre_labels": pre,
                      "params": model.params}))


def cmd_run(args, config):
    corpus = _corpus(args)
    wl = Workload.load(_need(args.workload, "gen-workload"), corpus)
    index = _index(args.index, corpus)
    if args.method == "pre":
        run = lambda q: prefilter_search(corpus, q)  # noqa: E731
    elif args.method == "post":
        if index is None:
            raise MissingArtifactError("--index is required for post; create it with `fannplan build-index`")
        run = lambda q: postfilter_search(index, corpus, q)  # noqa: E731
    else:
        stats = _stats(args)
        est = _estimator(args.estimator, stats)
        planner = _planner(args.planner, stats)
        if est is None or planner is None or index is None:
            raise MissingArtifactError("planned runs need --index, --estimator and --planner")
        run = lambda q: plan_and_execute(planner, est, index, corpus, q)  # noqa: E731
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for i, q in enumerate(wl.queries):
            rep = run(q)
            out.write(json.dumps({"query": i, "strategy": rep.strategy, "ids": rep.results.ids.tolist(),
                                  "distances": rep.results.distances.tolist(), "seconds": rep.elapsed,
                                  "alpha_final": rep.alpha_final}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_bench(args, config):
    corpus = _corpus(args)
    wl = Workload.load(_need(args.workload, "gen-workload"), corpus)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    stats = _stats(args) if (args.estimator or args.planner) else None
    est = _estimator(args.estimator, stats) if stats else None
    report = run_bench(corpus, wl, methods, index=_index(args.index, corpus), estimator=est,
                       planner=_planner(args.planner, stats) if stats else None, threads=args.threads,
                       recall_mode="fixed" if args.fixed_k_recall else "min",
                       metadata={"seed": args.seed, "config": config})
    report.write_jsonl(args.out)
    curve_dir = Path(args.curves) if args.curves else Path(args.out).parent
    curves = report.write_curves(curve_dir, Path(args.out).stem)
    for s in report.summaries.values():
        print(json.dumps({"method": s.method, "mean_recall": s.mean_recall, "mean_seconds": s.mean_seconds,
                          "mean_utility": s.mean_utility, "pre_fraction": s.pre_fraction}))
    print(json.dumps({"report": args.out, "curves": [str(c) for c in curves]}))


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def globals_(top: bool) -> argparse.ArgumentParser:
        # subcommands accept the global flags too, without clobbering values given before them
        dflt = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
        g = _Parser(add_help=False)
        g.add_argument("--seed", type=int, default=dflt(0), help="base RNG seed")
        g.add_argument("--config", default=dflt(None),
                       help="YAML or JSON file; sections mirror engine/training parameters")
        g.add_argument("--threads", type=int, default=dflt(1), help="threads for ground-truth computation only")
        g.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
        return g

    common = globals_(False)
    parser = _Parser(prog="fannplan", description=__doc__.splitlines()[0], parents=[globals_(True)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(fn=fn)
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--vector-dist", choices=("normal", "uniform", "clustered"))

    p = add("build-stats", cmd_build_stats, "collect dataset statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=float)

    p = add("build-index", cmd_build_index, "build an ANN index")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("graph", "brute"), default="graph")
    p.add_argument("--ef-search", type=int)

    p = add("gen-workload", cmd_gen_workload, "generate filtered queries with controlled selectivity")
    p.add_argument("--data", required=True)
    p.add_argument("--stats")
    p.add_argument("--out", required=True)
    p.add_argument("--n-queries", type=int, default=300)
    p.add_argument("--targets", default="0.01,0.25", help="LO,HI range or explicit list with --explicit-targets")
    p.add_argument("--explicit-targets", action="store_true")
    p.add_argument("--mix", help="e.g. label=1,range=1,multi-range=1,mixed=1")
    p.add_argument("--k", type=int, default=10)

    p = add("train-estimator", cmd_train_estimator, "train the learned selectivity estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=500)

    p = add("train-planner", cmd_train_planner, "label queries by utility and train the planner")
    p.add_argument("--data", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--estimator")
    p.add_argument("--out", required=True)
    p.add_argument("--n-queries", type=int, default=300)
    p.add_argument("--range", default="0.01,0.25")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--mix")
    p.add_argument("--no-k-feature", action="store_true", help="use the four dataset/selectivity features only")

    p = add("run", cmd_run, "execute a workload and print per-query results")
    p.add_argument("--data", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--method", choices=METHODS, default="planned")
    p.add_argument("--stats")
    p.add_argument("--index")
    p.add_argument("--estimator")
    p.add_argument("--planner")
    p.add_argument("--out")

    p = add("bench", cmd_bench, "benchmark methods and write a report plus latency/recall curves")
    p.add_argument("--data", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--methods", default="pre,post,planned")
    p.add_argument("--stats")
    p.add_argument("--index")
    p.add_argument("--estimator")
    p.add_argument("--planner")
    p.add_argument("--out", required=True)
    p.add_argument("--curves", help="directory for curve files (default: next to --out)")
    p.add_argument("--fixed-k-recall", action="store_true", help="divide recall by k even when fewer rows match")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("fannplan: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        config = load_config(args.config)
        args.fn(args, config)
    except UsageError as exc:
        print(f"fannplan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifactError, EstimatorMissingError, FileNotFoundError) as exc:
        print(f"fannplan: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DataLoadError, ConfigError, ContainerError, SchemaError, InputError, UnknownLabelError,
            TrainingError, EstimatorTrainingError, ValueError, json.JSONDecodeError) as exc:
        print(f"fannplan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

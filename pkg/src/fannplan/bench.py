"""Benchmark harness: run strategies over a workload and report recall and latency."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import VectorCorpus
from .engines import POST, PRE, AnnIndex, ExecutionReport, alpha_for, corpus_fingerprint, postfilter_search, prefilter_search
from .planner import PlannerModel, plan_and_execute, recall_at_k
from .selectivity import EstimatorMissingError, SelectivityEstimator
from .workload import Workload

logger = logging.getLogger(__name__)

PLANNED = "planned"
METHODS = (PRE, POST, PLANNED)
CURVE_EDGES = (0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 1.0)


class MissingArtifactError(RuntimeError):
    """A method was requested without the model or index it needs."""


@dataclass
class QueryRecord:
    query: int
    method: str
    strategy: str
    recall: float
    seconds: float
    selectivity: float
    n_results: int
    alpha_final: int
    fallback: bool
    planning_seconds: float

    @property
    def utility(self) -> float:
        return self.recall / self.seconds


@dataclass
class MethodSummary:
    method: str
    mean_recall: float
    mean_seconds: float
    mean_utility: float
    n_queries: int
    pre_fraction: float


@dataclass
class BenchReport:
    summaries: dict[str, MethodSummary]
    records: list[QueryRecord]
    metadata: dict = field(default_factory=dict)

    def for_method(self, method: str) -> list[QueryRecord]:
        return [r for r in self.records if r.method == method]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "metadata", **self.metadata}) + "\n")
            for s in self.summaries.values():
                fh.write(json.dumps({"type": "summary", **asdict(s)}) + "\n")
            for r in self.records:
                fh.write(json.dumps({"type": "query", **asdict(r)}) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "BenchReport":
        meta, summaries, records = {}, {}, []
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "metadata":
                meta = rec
            elif kind == "summary":
                summaries[rec["method"]] = MethodSummary(**rec)
            else:
                records.append(QueryRecord(**rec))
        return cls(summaries, records, meta)

    def curve(self, method: str, edges: Sequence[float] = CURVE_EDGES) -> list[tuple[float, float]]:
        """(mean latency, mean recall) per selectivity bucket, ordered by latency."""
        recs = self.for_method(method)
        sel = np.array([r.selectivity for r in recs])
        pts = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            pick = [r for r, s in zip(recs, sel) if lo <= s < hi]
            if pick:
                pts.append((float(np.mean([r.seconds for r in pick])), float(np.mean([r.recall for r in pick]))))
        return sorted(pts)

    def write_curves(self, directory, prefix: str = "curve") -> list[Path]:
        out = []
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for method in self.summaries:
            path = directory / f"{prefix}_{method}.tsv"
            with open(path, "w") as fh:
                for lat, rec in self.curve(method):
                    fh.write(f"{lat!r}\t{rec!r}\n")
            out.append(path)
        return out


def ground_truth(corpus: VectorCorpus, workload: Workload, threads: int = 1) -> list[np.ndarray]:
    """Exact filtered top-k ids per query; ``threads`` only affects this untimed pass."""
    def one(q):
        return prefilter_search(corpus, q).results.ids

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, workload.queries))
    return [one(q) for q in workload.queries]


def _runner(method: str, corpus, index, estimator, planner) -> Callable:
    if method == PRE:
        return lambda q: prefilter_search(corpus, q)
    if method == POST:
        if index is None:
            raise MissingArtifactError("post-filtering needs an index; run `fannplan build-index`")

        def post(q):
            t0 = time.perf_counter()
            est = None
            if estimator is not None:
                try:
                    est = estimator.estimate(q.predicate)
                except EstimatorMissingError:
                    pass
            rep = postfilter_search(index, corpus, q, alpha_for(est, q.k, corpus.n))
            rep.elapsed = time.perf_counter() - t0
            return rep

        return post
    if method == PLANNED:
        missing = [name for name, obj in (("build-index", index), ("train-estimator", estimator),
                                          ("train-planner", planner)) if obj is None]
        if missing:
            raise MissingArtifactError("planned execution needs: " + ", ".join(f"`fannplan {m}`" for m in missing))
        return lambda q: plan_and_execute(planner, estimator, index, corpus, q)
    raise ValueError(f"unknown method {method!r}")


def run_bench(
    corpus: VectorCorpus,
    workload: Workload,
    methods: Sequence[str] = METHODS,
    index: AnnIndex | None = None,
    estimator: SelectivityEstimator | None = None,
    planner: PlannerModel | None = None,
    threads: int = 1,
    recall_mode: str = "min",
    truth: list[np.ndarray] | None = None,
    metadata: dict | None = None,
) -> BenchReport:
    """Run each method over the workload after one untimed warm-up pass.

    Post-filtering gets the same selectivity-derived starting expansion the
    planner would use, so the comparison isolates the choice of strategy.
    """
    runners = {m: _runner(m, corpus, index, estimator, planner) for m in methods}
    if truth is None:
        truth = ground_truth(corpus, workload, threads)
    n_match = [round(s * corpus.n) for s in workload.achieved_selectivities]
    for run in runners.values():
        for q in workload.queries:
            run(q)
    records: list[QueryRecord] = []
    summaries = {}
    for method, run in runners.items():
        recs = []
        for i, q in enumerate(workload.queries):
            rep: ExecutionReport = run(q)
            r = recall_at_k(rep.results.ids, truth[i], q.k, n_match[i], recall_mode)
            recs.append(QueryRecord(i, method, rep.strategy, r, rep.elapsed, workload.achieved_selectivities[i],
                                    len(rep.results), rep.alpha_final, rep.fallback, rep.planning_time))
        records.extend(recs)
        summaries[method] = summarize(method, recs)
    meta = {"n": corpus.n, "d": corpus.d, "corpus": corpus_fingerprint(corpus), "workload_seed": workload.seed,
            "k": workload.k, "n_queries": len(workload), "recall_mode": recall_mode}
    meta.update(metadata or {})
    return BenchReport(summaries, records, meta)


def summarize(method: str, recs: Sequence[QueryRecord]) -> MethodSummary:
    if not recs:
        return MethodSummary(method, 0.0, 0.0, 0.0, 0, 0.0)
    return MethodSummary(
        method,
        float(np.mean([r.recall for r in recs])),
        float(np.mean([r.seconds for r in recs])),
        float(np.mean([r.utility for r in recs])),
        len(recs),
        float(np.mean([r.strategy == PRE for r in recs])),
    )

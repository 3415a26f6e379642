"""Pre-filtering and post-filtering executors plus pluggable ANN backends."""
from __future__ import annotations

import hashlib
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import container, graph
from .core import (
    METRIC_IP,
    FilteredQuery,
    ResultSet,
    VectorCorpus,
    check_query,
    distances,
    knn_over,
    match_mask,
    matching_ids,
    top_k,
)

PRE = "pre"
POST = "post"
DEFAULT_ALPHA0 = 10
INDEX_KIND = "index"


class AnnIndex(Protocol):
    """Built once over a corpus; ``search`` returns up to ``m`` unique candidate ids."""

    kind: str

    def search(self, q: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class ExecutionReport:
    results: ResultSet
    strategy: str
    elapsed: float
    alpha_final: int = 0
    candidates_scanned: int = 0
    iterations: int = 0
    fallback: bool = False
    planning_time: float = 0.0
    estimated_selectivity: float | None = None
    extra: dict = field(default_factory=dict)


def _elapsed(t0: float) -> float:
    return max(time.perf_counter() - t0, 1e-9)


def corpus_fingerprint(corpus: VectorCorpus) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(corpus.vectors.shape, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(corpus.vectors, dtype="<f8").tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# backends
# --------------------------------------------------------------------------


class BruteForceIndex:
    """Exact top-m; post-filter recall loss with it comes only from candidate truncation."""

    kind = "brute"

    def __init__(self, corpus: VectorCorpus):
        self.corpus = corpus
        self._ids = np.arange(corpus.n, dtype=np.int64)

    def search(self, q, m: int):
        q = check_query(self.corpus, q)
        res = top_k(self._ids, distances(self.corpus.vectors, q, self.corpus.metric), m)
        return res.ids, res.distances

    def save(self, path) -> str:
        meta = {"type": self.kind, "n": self.corpus.n, "d": self.corpus.d,
                "corpus": corpus_fingerprint(self.corpus)}
        return container.save(path, INDEX_KIND, meta, {})


@dataclass(frozen=True)
class GraphParams:
    max_degree: int = 16
    ef_construction: int = 128
    ef_search: int = 64
    max_level: int = 16

    @property
    def level0_degree(self) -> int:
        return 2 * self.max_degree


class _Buffers:
    def __init__(self, n: int):
        self.visited = np.zeros(n, dtype=np.int32)
        self.cand_k = np.empty(n + 1, dtype=np.float64)
        self.cand_v = np.empty(n + 1, dtype=np.int64)
        self.tag = 0


class GraphIndex:
    """HNSW-style layered graph over a float32 copy of the corpus vectors."""

    kind = "graph"

    def __init__(self, corpus: VectorCorpus, params: GraphParams, seed: int, arrays: dict | None = None):
        self.corpus = corpus
        self.params = params
        self.seed = seed
        self.metric = graph.IP if corpus.metric == METRIC_IP else graph.L2
        self._vecs = np.ascontiguousarray(corpus.vectors, dtype=np.float32)
        self._pool: list[_Buffers] = []
        self._lock = threading.Lock()
        if arrays is None:
            arrays = self._build()
        self.levels = arrays["levels"]
        self.nbr0 = arrays["nbr0"]
        self.cnt0 = arrays["cnt0"]
        self.offsets = arrays["offsets"]
        self.up_nbr = arrays["up_nbr"]
        self.up_cnt = arrays["up_cnt"]
        self.entry = int(arrays["entry"][0])
        self.top_level = int(arrays["entry"][1])

    def _build(self) -> dict:
        n = self.corpus.n
        p = self.params
        rng = np.random.default_rng(self.seed)
        ml = 1.0 / math.log(p.max_degree)
        u = 1.0 - rng.random(n)
        levels = np.minimum(np.floor(-np.log(u) * ml), p.max_level).astype(np.int64)
        offsets = np.concatenate([[0], np.cumsum(levels)[:-1]]).astype(np.int64)
        n_upper = int(levels.sum())
        nbr0 = np.full((n, p.level0_degree), -1, dtype=np.int64)
        cnt0 = np.zeros(n, dtype=np.int64)
        up_nbr = np.full((max(n_upper, 1), p.max_degree), -1, dtype=np.int64)
        up_cnt = np.zeros(max(n_upper, 1), dtype=np.int64)
        entry, top = graph.build_graph(self._vecs, levels, self.metric, p.max_degree, p.level0_degree,
                                       p.ef_construction, nbr0, cnt0, offsets, up_nbr, up_cnt)
        return {"levels": levels, "nbr0": nbr0, "cnt0": cnt0, "offsets": offsets, "up_nbr": up_nbr,
                "up_cnt": up_cnt, "entry": np.array([entry, top], dtype=np.int64)}

    def _acquire(self) -> _Buffers:
        with self._lock:
            if self._pool:
                return self._pool.pop()
        return _Buffers(self.corpus.n)

    def _release(self, buf: _Buffers) -> None:
        with self._lock:
            self._pool.append(buf)

    def search(self, q, m: int, ef: int | None = None):
        q = check_query(self.corpus, q)
        m = min(int(m), self.corpus.n)
        ef = max(m, ef if ef is not None else self.params.ef_search)
        buf = self._acquire()
        try:
            buf.tag += 1
            if buf.tag >= 2_000_000_000:
                buf.visited[:] = 0
                buf.tag = 1
            ids, _ = graph.search_graph(self._vecs, q.astype(np.float32), self.metric, self.entry, self.top_level, ef, self.nbr0,
                                        self.cnt0, self.offsets, self.up_nbr, self.up_cnt, buf.visited, buf.tag,
                                        buf.cand_k, buf.cand_v)
        finally:
            self._release(buf)
        ids = ids[:m]
        # re-rank with the canonical float64 distance so all engines agree
        res = top_k(ids, distances(self.corpus.vectors[ids], q, self.corpus.metric), m)
        return res.ids, res.distances

    def arrays(self) -> dict:
        return {"levels": self.levels, "nbr0": self.nbr0, "cnt0": self.cnt0, "offsets": self.offsets,
                "up_nbr": self.up_nbr, "up_cnt": self.up_cnt,
                "entry": np.array([self.entry, self.top_level], dtype=np.int64)}

    def save(self, path) -> str:
        p = self.params
        meta = {"type": self.kind, "n": self.corpus.n, "d": self.corpus.d, "seed": self.seed,
                "corpus": corpus_fingerprint(self.corpus), "max_degree": p.max_degree,
                "ef_construction": p.ef_construction, "ef_search": p.ef_search, "max_level": p.max_level}
        return container.save(path, INDEX_KIND, meta, self.arrays())


def brute_force_index(corpus: VectorCorpus) -> BruteForceIndex:
    return BruteForceIndex(corpus)


def build_graph_index(corpus: VectorCorpus, params: GraphParams | None = None, seed: int = 0) -> GraphIndex:
    return GraphIndex(corpus, params or GraphParams(), seed)


def load_index(path, corpus: VectorCorpus):
    header, arrays = container.load(path, INDEX_KIND)
    meta = header["meta"]
    if meta["n"] != corpus.n or meta["d"] != corpus.d or meta["corpus"] != corpus_fingerprint(corpus):
        raise container.ContainerError("index was built over a different corpus")
    if meta["type"] == BruteForceIndex.kind:
        return BruteForceIndex(corpus)
    params = GraphParams(meta["max_degree"], meta["ef_construction"], meta["ef_search"], meta["max_level"])
    return GraphIndex(corpus, params, meta["seed"], arrays)


# --------------------------------------------------------------------------
# executors
# --------------------------------------------------------------------------


def prefilter_search(corpus: VectorCorpus, query: FilteredQuery) -> ExecutionReport:
    """Scan metadata for matching rows, then exact KNN over that subset."""
    t0 = time.perf_counter()
    q = check_query(corpus, query.q)
    ids = matching_ids(corpus, query.predicate)
    res = knn_over(corpus, q, query.k, ids)
    return ExecutionReport(res, PRE, _elapsed(t0), candidates_scanned=len(ids), iterations=1)


def postfilter_search(index: AnnIndex, corpus: VectorCorpus, query: FilteredQuery,
                      alpha0: int = DEFAULT_ALPHA0) -> ExecutionReport:
    """Fetch alpha*k candidates, filter, double alpha on shortfall.

    Once alpha*k reaches N the loop falls back to a full filtered scan, which
    bounds the number of rounds and covers predicates with fewer than k matches.
    """
    t0 = time.perf_counter()
    if alpha0 < 1:
        raise ValueError("alpha0 must be >= 1")
    q = check_query(corpus, query.q)
    k, n, p = query.k, corpus.n, query.predicate
    alpha, scanned, rounds = int(alpha0), 0, 0
    while True:
        m = alpha * k
        if m >= n:
            ids = matching_ids(corpus, p)
            res = knn_over(corpus, q, k, ids)
            return ExecutionReport(res, POST, _elapsed(t0), alpha, scanned + n, rounds, fallback=True)
        cand, _ = index.search(q, m)
        rounds += 1
        scanned += len(cand)
        keep = cand if p.is_empty else cand[match_mask(corpus, p, rows=cand)]
        if len(keep) >= k:
            res = knn_over(corpus, q, k, keep)
            return ExecutionReport(res, POST, _elapsed(t0), alpha, scanned, rounds)
        alpha *= 2


def alpha_for(selectivity: float | None, k: int, n: int, floor: int = DEFAULT_ALPHA0) -> int:
    """Initial expansion near the expected need: clamp(ceil(1/s), floor, N/k)."""
    if selectivity is None or selectivity <= 0:
        return floor
    cap = max(floor, n // k)
    return int(min(max(math.ceil(1.0 / selectivity), floor), cap))

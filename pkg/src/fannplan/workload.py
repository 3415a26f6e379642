"""Filtered-query workloads with controlled selectivity."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    FilteredQuery,
    Interval,
    Predicate,
    VectorCorpus,
    exact_selectivity,
    match_mask,
    normalize_intervals,
)
from .predicates import parse_predicate
from .stats import DatasetStats

logger = logging.getLogger(__name__)

KINDS = ("label", "range", "multi-range", "mixed")
DEFAULT_MIX = {"label": 0.25, "range": 0.25, "multi-range": 0.25, "mixed": 0.25}
TOLERANCE = 0.2
QUERY_NOISE = 0.1


@dataclass
class Workload:
    queries: list[FilteredQuery]
    target_selectivities: list[float]
    achieved_selectivities: list[float]
    k: int
    kinds: list[str] = field(default_factory=list)
    seed: int = 0

    def __len__(self):
        return len(self.queries)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "workload", "k": self.k, "seed": self.seed, "n": len(self)}) + "\n")
            for q, t, a, kind in zip(self.queries, self.target_selectivities, self.achieved_selectivities,
                                     self.kinds or [""] * len(self)):
                fh.write(json.dumps({"q": q.q.tolist(), "predicate": q.predicate.to_text(), "k": q.k,
                                     "target": t, "achieved": a, "kind": kind}) + "\n")

    @classmethod
    def load(cls, path, corpus: VectorCorpus) -> "Workload":
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        queries, targets, achieved, kinds = [], [], [], []
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            p = parse_predicate(rec["predicate"], corpus.schema)
            queries.append(FilteredQuery(np.array(rec["q"], dtype=np.float64), p, int(rec["k"])))
            targets.append(float(rec["target"]))
            achieved.append(float(rec["achieved"]))
            kinds.append(rec.get("kind", ""))
        return cls(queries, targets, achieved, int(head["k"]), kinds, int(head.get("seed", 0)))

    def subset(self, idx: Sequence[int]) -> "Workload":
        idx = list(idx)
        return Workload([self.queries[i] for i in idx], [self.target_selectivities[i] for i in idx],
                        [self.achieved_selectivities[i] for i in idx], self.k,
                        [self.kinds[i] for i in idx] if self.kinds else [], self.seed)


def within(achieved: float, target: float, tol: float = TOLERANCE) -> bool:
    return abs(achieved - target) <= tol * target


class _Builder:
    def __init__(self, corpus: VectorCorpus, stats: DatasetStats, rng: np.random.Generator, tol: float):
        self.corpus = corpus
        self.stats = stats
        self.rng = rng
        self.tol = tol
        self.n = corpus.n
        self._cands = None
        self.sorted_cols = {a.name: np.sort(corpus.numeric[a.name]) for a in corpus.schema.numeric}

    # -- range ---------------------------------------------------------------

    @staticmethod
    def _count(sorted_vals: np.ndarray, intervals: Sequence[Interval]) -> int:
        total = 0
        for iv in intervals:
            total += int(np.searchsorted(sorted_vals, iv.hi, "left") - np.searchsorted(sorted_vals, iv.lo, "left"))
        return total

    def _fit_width(self, attr, centers, target, sorted_vals, denom):
        """Binary-search a common half-width so the union around ``centers`` hits ``target``."""
        a = self.corpus.schema[attr]
        lo_w, hi_w = 0.0, a.span

        def union(w):
            ivs = [Interval(max(a.lo, c - w), min(a.hi, c + w), True, False) for c in centers]
            return normalize_intervals(ivs)

        best = None
        for _ in range(48):
            w = (lo_w + hi_w) / 2
            ivs = union(w)
            s = self._count(sorted_vals, ivs) / denom
            if best is None or abs(s - target) < abs(best[1] - target):
                best = (ivs, s)
            if within(s, target, self.tol / 4):
                break
            if s < target:
                lo_w = w
            else:
                hi_w = w
        return best[0]

    def range_pred(self, target: float, n_intervals: int = 1) -> Predicate | None:
        numeric = self.corpus.schema.numeric
        if not numeric:
            return None
        a = numeric[self.rng.integers(len(numeric))]
        if n_intervals == 1:
            centers = [self.rng.uniform(a.lo, a.hi)]
        else:
            # spread centers so the intervals stay disjoint at moderate widths
            slots = np.sort(self.rng.choice(4 * n_intervals, size=n_intervals, replace=False))
            centers = [a.lo + a.span * (s + 0.5) / (4 * n_intervals) for s in slots]
        ivs = self._fit_width(a.name, centers, target, self.sorted_cols[a.name], self.n)
        if n_intervals > 1 and len(ivs) < 2:
            return None
        return Predicate(frozenset(), a.name, ivs)

    # -- labels ----------------------------------------------------------------

    def _label_candidates(self) -> list[tuple[frozenset, float]]:
        if self._cands is None:
            st = self.stats
            keys = st.label_keys
            cands = [(frozenset([key]), float(st.label_freq[i])) for i, key in enumerate(keys)]
            for i in range(len(keys)):
                for j in range(i + 1, len(keys)):
                    if keys[i][0] != keys[j][0] and st.label_pair[i, j] > 0:
                        cands.append((frozenset([keys[i], keys[j]]), float(st.label_pair[i, j])))
            self._cands = cands
        return self._cands

    def label_pred(self, target: float) -> Predicate | None:
        good = [c for c in self._label_candidates() if within(c[1], target, self.tol)]
        if not good:
            return None
        terms, _ = good[self.rng.integers(len(good))]
        return Predicate(terms)

    def mixed_pred(self, target: float) -> Predicate | None:
        st = self.stats
        numeric = self.corpus.schema.numeric
        if not numeric or not st.label_keys:
            return None
        n_labels = int(self.rng.integers(1, 3))
        ok = np.flatnonzero(st.label_freq >= target * (1 + self.tol) * 1.5)
        if len(ok) == 0:
            return None
        first = st.label_keys[int(self.rng.choice(ok))]
        terms = [first]
        if n_labels == 2:
            i = st.label_id(*first)
            partners = [j for j in range(len(st.label_keys))
                        if st.label_keys[j][0] != first[0] and st.label_pair[i, j] >= target * (1 + self.tol) * 1.5]
            if partners:
                terms.append(st.label_keys[int(self.rng.choice(partners))])
        base = Predicate(frozenset(terms))
        rows = np.flatnonzero(match_mask(self.corpus, base))
        a = numeric[self.rng.integers(len(numeric))]
        vals = np.sort(self.corpus.numeric[a.name][rows])
        centers = [float(vals[self.rng.integers(len(vals))])]
        ivs = self._fit_width(a.name, centers, target, vals, self.n)
        return Predicate(frozenset(terms), a.name, ivs)

    def build(self, kind: str, target: float) -> Predicate | None:
        if kind == "label":
            return self.label_pred(target)
        if kind == "range":
            return self.range_pred(target, 1)
        if kind == "multi-range":
            return self.range_pred(target, int(self.rng.integers(2, 4)))
        if kind == "mixed":
            return self.mixed_pred(target)
        raise ValueError(f"unknown predicate kind {kind!r}")


def perturbed_query(corpus: VectorCorpus, rng: np.random.Generator, noise: float = QUERY_NOISE) -> np.ndarray:
    row = corpus.vectors[rng.integers(corpus.n)]
    scale = noise * float(np.sqrt(np.mean(np.var(corpus.vectors[:1000], axis=0)))) if corpus.n > 1 else noise
    return row + rng.normal(0.0, scale, size=corpus.d)


def gen_workload(
    corpus: VectorCorpus,
    stats: DatasetStats,
    n_queries: int,
    targets: Sequence[float] | tuple[float, float] = (0.01, 0.25),
    predicate_mix: dict[str, float] | None = None,
    k: int = 10,
    seed: int = 0,
    tol: float = TOLERANCE,
    attempts: int = 20,
) -> Workload:
    """Queries whose exact selectivity lands within ``tol`` (relative) of a target.

    ``targets`` is either an explicit per-query list (cycled) or a ``(lo, hi)``
    pair sampled uniformly. Unreachable targets are skipped with a warning.
    """
    mix = dict(predicate_mix or DEFAULT_MIX)
    for kind in mix:
        if kind not in KINDS:
            raise ValueError(f"unknown predicate kind {kind!r}")
    kinds = [kk for kk in KINDS if mix.get(kk, 0) > 0]
    weights = np.array([mix[kk] for kk in kinds], dtype=np.float64)
    weights /= weights.sum()
    rng = np.random.default_rng(seed)
    builder = _Builder(corpus, stats, rng, tol)
    explicit = not (isinstance(targets, tuple) and len(targets) == 2)
    if explicit:
        for t in targets:
            if not 0 < t <= 1:
                raise ValueError("targets must lie in (0, 1]")

    queries, tgt, ach, used = [], [], [], []
    for i in range(n_queries):
        target = float(targets[i % len(targets)]) if explicit else float(rng.uniform(*targets))
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        pred = None
        for _ in range(attempts):
            cand = builder.build(kind, target)
            if cand is None:
                continue
            s = exact_selectivity(corpus, cand)
            if within(s, target, tol):
                pred = cand
                break
        if pred is None:
            logger.warning("query %d: no %s predicate within %.0f%% of target %.4f; skipped",
                           i, kind, tol * 100, target)
            continue
        queries.append(FilteredQuery(perturbed_query(corpus, rng), pred, k))
        tgt.append(target)
        ach.append(s)
        used.append(kind)
    return Workload(queries, tgt, ach, k, used, seed)


def random_model_predicates(
    corpus: VectorCorpus,
    stats: DatasetStats,
    n: int,
    seed: int = 0,
    label_counts: tuple[int, int] = (3, 5),
    mixed_fraction: float = 0.5,
) -> list[Predicate]:
    """Predicates for the learned estimator: 3+ label conjunctions and label+range mixes.

    Each is anchored on a row from the stats sample (or the whole corpus when
    the sample is empty), so it matches at least that row.
    """
    rng = np.random.default_rng(seed)
    cats = [a.name for a in corpus.schema.categorical]
    nums = [a for a in corpus.schema.numeric]
    pool = stats.sample_ids if len(stats.sample_ids) else np.arange(corpus.n)
    lo_l, hi_l = label_counts
    if len(cats) < lo_l:
        raise ValueError(f"need at least {lo_l} categorical attributes for label conjunctions")
    out = []
    for _ in range(n):
        row = corpus.record(int(pool[rng.integers(len(pool))]))
        mixed = nums and rng.random() < mixed_fraction
        if mixed:
            m = int(rng.integers(1, min(3, len(cats)) + 1))
        else:
            m = int(rng.integers(lo_l, min(hi_l, len(cats)) + 1))
        attrs = rng.choice(len(cats), size=m, replace=False)
        terms = frozenset((cats[j], row[cats[j]]) for j in sorted(attrs))
        if mixed:
            a = nums[rng.integers(len(nums))]
            v = row[a.name]
            width = a.span * rng.uniform(0.05, 0.5)
            off = rng.uniform(0, width)
            lo, hi = max(a.lo, v - off), min(a.hi, v - off + width)
            if hi <= v:
                hi = math.nextafter(v, math.inf)
            out.append(Predicate(terms, a.name, (Interval(lo, hi, True, False),)))
        else:
            out.append(Predicate(terms))
    return out

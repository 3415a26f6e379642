"""Corpus, schema and predicate model with exact (oracle) evaluation.

Everything else in the package treats the functions here as ground truth:
``eval_predicate`` for a single metadata record, ``match_mask`` for a whole
corpus, ``exact_selectivity`` and ``knn_exact``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

CATEGORICAL = "categorical"
NUMERIC = "numeric"

METRIC_L2 = "l2"
METRIC_IP = "ip"


class SchemaError(ValueError):
    """Predicate or record does not agree with the attribute schema."""


class InputError(ValueError):
    """Malformed query input (dimension mismatch, bad k)."""


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise SchemaError(f"unknown attribute kind {self.kind!r}")
        if self.kind == NUMERIC:
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise SchemaError(f"numeric attribute {self.name!r} needs bounds lo < hi")

    @property
    def span(self) -> float:
        return float(self.hi - self.lo)


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")

    def __getitem__(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"unknown attribute {name!r}")

    def __contains__(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def categorical(self) -> list[Attribute]:
        return [a for a in self.attributes if a.kind == CATEGORICAL]

    @property
    def numeric(self) -> list[Attribute]:
        return [a for a in self.attributes if a.kind == NUMERIC]

    def to_dict(self) -> dict:
        out = []
        for a in self.attributes:
            d = {"name": a.name, "kind": a.kind}
            if a.kind == NUMERIC:
                d["min"] = a.lo
                d["max"] = a.hi
            out.append(d)
        return {"attributes": out}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttributeSchema":
        attrs = []
        for a in d["attributes"]:
            if a["kind"] == NUMERIC:
                attrs.append(Attribute(a["name"], NUMERIC, float(a["min"]), float(a["max"])))
            else:
                attrs.append(Attribute(a["name"], a["kind"]))
        return cls(tuple(attrs))


# --------------------------------------------------------------------------
# intervals
# --------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = False

    def __post_init__(self):
        if self.lo > self.hi:
            raise SchemaError(f"interval low {self.lo} > high {self.hi}")

    @property
    def empty(self) -> bool:
        return self.lo == self.hi and not (self.lo_closed and self.hi_closed)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        if x < self.lo or x > self.hi:
            return False
        if x == self.lo and not self.lo_closed:
            return False
        if x == self.hi and not self.hi_closed:
            return False
        return True

    def __str__(self):
        return f"{'[' if self.lo_closed else '('}{_fmt(self.lo)},{_fmt(self.hi)}{']' if self.hi_closed else ')'}"


def _quote(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _fmt(x: float) -> str:
    return repr(float(x))


def _intersect(a: Interval, b: Interval) -> Interval | None:
    if a.lo > b.lo:
        lo, lo_closed = a.lo, a.lo_closed
    elif b.lo > a.lo:
        lo, lo_closed = b.lo, b.lo_closed
    else:
        lo, lo_closed = a.lo, a.lo_closed and b.lo_closed
    if a.hi < b.hi:
        hi, hi_closed = a.hi, a.hi_closed
    elif b.hi < a.hi:
        hi, hi_closed = b.hi, b.hi_closed
    else:
        hi, hi_closed = a.hi, a.hi_closed and b.hi_closed
    if lo > hi:
        return None
    iv = Interval(lo, hi, lo_closed, hi_closed)
    return None if iv.empty else iv


def normalize_intervals(intervals: Iterable[Interval]) -> tuple[Interval, ...]:
    """Sort and merge overlapping or touching intervals; drop empty ones."""
    ivs = sorted((iv for iv in intervals if not iv.empty), key=lambda iv: (iv.lo, not iv.lo_closed))
    merged: list[Interval] = []
    for iv in ivs:
        if merged:
            last = merged[-1]
            touches = iv.lo < last.hi or (iv.lo == last.hi and (iv.lo_closed or last.hi_closed))
            if touches:
                if iv.hi > last.hi:
                    hi, hi_closed = iv.hi, iv.hi_closed
                elif iv.hi < last.hi:
                    hi, hi_closed = last.hi, last.hi_closed
                else:
                    hi, hi_closed = last.hi, last.hi_closed or iv.hi_closed
                merged[-1] = Interval(last.lo, hi, last.lo_closed, hi_closed)
                continue
        merged.append(iv)
    return tuple(merged)


def intersect_unions(a: Sequence[Interval], b: Sequence[Interval]) -> tuple[Interval, ...]:
    out = []
    for x in a:
        for y in b:
            z = _intersect(x, y)
            if z is not None:
                out.append(z)
    return normalize_intervals(out)


# --------------------------------------------------------------------------
# predicates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Predicate:
    """AND of label equalities, AND-ed with an OR of intervals on one attribute.

    ``range_attr is None`` means there is no range clause. A range clause whose
    union is empty matches nothing.
    """

    label_terms: frozenset[tuple[str, str]] = field(default_factory=frozenset)
    range_attr: str | None = None
    intervals: tuple[Interval, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "label_terms", frozenset(self.label_terms))
        if self.range_attr is None and self.intervals:
            raise SchemaError("intervals given without a range attribute")
        object.__setattr__(self, "intervals", normalize_intervals(self.intervals))

    @classmethod
    def labels(cls, **terms: str) -> "Predicate":
        return cls(frozenset(terms.items()))

    @property
    def is_empty(self) -> bool:
        return not self.label_terms and self.range_attr is None

    @property
    def has_range(self) -> bool:
        return self.range_attr is not None

    @property
    def n_labels(self) -> int:
        return len(self.label_terms)

    def sorted_labels(self) -> list[tuple[str, str]]:
        return sorted(self.label_terms)

    def validate(self, schema: AttributeSchema) -> None:
        for attr, _ in self.label_terms:
            if schema[attr].kind != CATEGORICAL:
                raise SchemaError(f"label term on non-categorical attribute {attr!r}")
        if self.range_attr is not None and schema[self.range_attr].kind != NUMERIC:
            raise SchemaError(f"range term on non-numeric attribute {self.range_attr!r}")

    def to_text(self) -> str:
        parts = [f'{a} = "{_quote(v)}"' for a, v in self.sorted_labels()]
        if self.range_attr is not None:
            if not self.intervals:
                parts.append(f"{self.range_attr} IN (0.0,0.0)")
            else:
                rng = " OR ".join(f"{self.range_attr} IN {iv}" for iv in self.intervals)
                parts.append(f"({rng})" if len(self.intervals) > 1 and parts else rng)
        return " AND ".join(parts)

    def __str__(self):
        return self.to_text() or "<all>"


def eval_predicate(record: Mapping[str, object], p: Predicate, schema: AttributeSchema | None = None) -> bool:
    if schema is not None:
        p.validate(schema)
    for attr, label in p.label_terms:
        if attr not in record:
            raise SchemaError(f"record has no attribute {attr!r}")
        value = record[attr]
        if not isinstance(value, str):
            raise SchemaError(f"label term on non-categorical value of {attr!r}")
        if value != label:
            return False
    if p.range_attr is None:
        return True
    if p.range_attr not in record:
        raise SchemaError(f"record has no attribute {p.range_attr!r}")
    value = record[p.range_attr]
    if isinstance(value, str):
        raise SchemaError(f"range term on categorical attribute {p.range_attr!r}")
    return any(iv.contains(float(value)) for iv in p.intervals)


# --------------------------------------------------------------------------
# corpus
# --------------------------------------------------------------------------


@dataclass
class VectorCorpus:
    """Dense vectors plus columnar metadata.

    Categorical columns are stored as int32 codes into ``vocab[attr]`` (sorted
    label strings); numeric columns are float64.
    """

    schema: AttributeSchema
    vectors: np.ndarray
    codes: dict[str, np.ndarray]
    vocab: dict[str, list[str]]
    numeric: dict[str, np.ndarray]
    metric: str = METRIC_L2

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise InputError("vectors must be a non-empty N x D matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise InputError("vectors contain non-finite values")
        n = self.vectors.shape[0]
        for a in self.schema.attributes:
            col = self.codes.get(a.name) if a.kind == CATEGORICAL else self.numeric.get(a.name)
            if col is None or len(col) != n:
                raise SchemaError(f"metadata column {a.name!r} missing or wrong length")
        self._index = {a: {lab: i for i, lab in enumerate(v)} for a, v in self.vocab.items()}
        self.vectors.setflags(write=False)

    @classmethod
    def from_records(cls, schema: AttributeSchema, vectors, records: Sequence[Mapping], metric: str = METRIC_L2):
        codes, vocab, numeric = {}, {}, {}
        for a in schema.attributes:
            try:
                col = [r[a.name] for r in records]
            except KeyError as exc:
                raise SchemaError(f"record missing attribute {a.name!r}") from exc
            if a.kind == CATEGORICAL:
                labels = sorted({str(v) for v in col})
                lookup = {lab: i for i, lab in enumerate(labels)}
                vocab[a.name] = labels
                codes[a.name] = np.array([lookup[str(v)] for v in col], dtype=np.int32)
            else:
                numeric[a.name] = np.array(col, dtype=np.float64)
        return cls(schema, np.asarray(vectors, dtype=np.float64), codes, vocab, numeric, metric)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def label_code(self, attr: str, label: str) -> int:
        """Code of ``label`` in ``attr``'s vocabulary, or -1 when the label never occurs."""
        if attr not in self._index:
            raise SchemaError(f"unknown categorical attribute {attr!r}")
        return self._index[attr].get(label, -1)

    def record(self, i: int) -> dict[str, object]:
        out: dict[str, object] = {}
        for a in self.schema.attributes:
            if a.kind == CATEGORICAL:
                out[a.name] = self.vocab[a.name][self.codes[a.name][i]]
            else:
                out[a.name] = float(self.numeric[a.name][i])
        return out

    def records(self) -> list[dict[str, object]]:
        return [self.record(i) for i in range(self.n)]

    def subset(self, ids: np.ndarray) -> "VectorCorpus":
        ids = np.asarray(ids, dtype=np.int64)
        return VectorCorpus(
            self.schema,
            self.vectors[ids],
            {a: c[ids] for a, c in self.codes.items()},
            dict(self.vocab),
            {a: c[ids] for a, c in self.numeric.items()},
            self.metric,
        )


def interval_mask(values: np.ndarray, intervals: Sequence[Interval]) -> np.ndarray:
    mask = np.zeros(len(values), dtype=bool)
    for iv in intervals:
        lo = values >= iv.lo if iv.lo_closed else values > iv.lo
        hi = values <= iv.hi if iv.hi_closed else values < iv.hi
        mask |= lo & hi
    return mask


def match_mask(corpus: VectorCorpus, p: Predicate, rows: np.ndarray | None = None) -> np.ndarray:
    """Boolean mask of rows satisfying ``p`` (over ``rows`` if given)."""
    p.validate(corpus.schema)
    size = corpus.n if rows is None else len(rows)
    mask = None
    for attr, label in p.label_terms:
        code = corpus.label_code(attr, label)
        col = corpus.codes[attr] if rows is None else corpus.codes[attr][rows]
        m = col == code
        mask = m if mask is None else (mask & m)
    if p.range_attr is not None:
        col = corpus.numeric[p.range_attr] if rows is None else corpus.numeric[p.range_attr][rows]
        m = interval_mask(col, p.intervals)
        mask = m if mask is None else (mask & m)
    if mask is None:
        return np.ones(size, dtype=bool)
    return mask


def matching_ids(corpus: VectorCorpus, p: Predicate) -> np.ndarray:
    if p.is_empty:
        return np.arange(corpus.n, dtype=np.int64)
    return np.flatnonzero(match_mask(corpus, p)).astype(np.int64)


def exact_selectivity(corpus: VectorCorpus, p: Predicate) -> float:
    if p.is_empty:
        return 1.0
    return int(np.count_nonzero(match_mask(corpus, p))) / corpus.n


# --------------------------------------------------------------------------
# exact KNN
# --------------------------------------------------------------------------


@dataclass
class ResultSet:
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.ids)

    @classmethod
    def empty(cls) -> "ResultSet":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))


@dataclass(frozen=True)
class FilteredQuery:
    q: np.ndarray
    predicate: Predicate = field(default_factory=Predicate)
    k: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be >= 1")
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64).ravel())


def distances(vectors: np.ndarray, q: np.ndarray, metric: str = METRIC_L2) -> np.ndarray:
    """Canonical distance used by every engine: squared L2 or negated inner product."""
    if metric == METRIC_L2:
        diff = vectors - q
        return (diff * diff).sum(axis=1)
    if metric == METRIC_IP:
        return -(vectors @ q)
    raise InputError(f"unknown metric {metric!r}")


def top_k(ids: np.ndarray, dists: np.ndarray, k: int) -> ResultSet:
    """k smallest by (distance, id)."""
    n = len(ids)
    if n == 0:
        return ResultSet.empty()
    if k < n:
        kth = np.partition(dists, k - 1)[k - 1]
        keep = dists <= kth
        ids, dists = ids[keep], dists[keep]
    order = np.lexsort((ids, dists))[:k]
    return ResultSet(np.asarray(ids[order], dtype=np.int64), np.asarray(dists[order], dtype=np.float64))


def check_query(corpus: VectorCorpus, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.shape[0] != corpus.d:
        raise InputError(f"query dimension {q.shape[0]} != corpus dimension {corpus.d}")
    return q


def knn_over(corpus: VectorCorpus, q: np.ndarray, k: int, ids: np.ndarray) -> ResultSet:
    if len(ids) == 0:
        return ResultSet.empty()
    if len(ids) == corpus.n:
        d = distances(corpus.vectors, q, corpus.metric)
    else:
        d = distances(corpus.vectors[ids], q, corpus.metric)
    return top_k(ids, d, k)


def knn_exact(corpus: VectorCorpus, q, k: int, p: Predicate | None = None) -> ResultSet:
    q = check_query(corpus, q)
    if k < 1:
        raise InputError("k must be >= 1")
    return knn_over(corpus, q, k, matching_ids(corpus, p or Predicate()))

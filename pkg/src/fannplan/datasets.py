"""Synthetic corpora and on-disk corpus formats.

On disk a corpus is three files:

* vectors in the ``fvecs`` layout (per row: int32 dimension, then that many float32, little-endian)
* metadata as JSON lines, one object per row keyed by attribute name
* the schema as a JSON document ``{"attributes": [{"name", "kind", "min", "max"}, ...]}``
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import CATEGORICAL, NUMERIC, Attribute, AttributeSchema, SchemaError, VectorCorpus


class DataLoadError(ValueError):
    """Malformed or inconsistent dataset file."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSpec:
    name: str
    n_labels: int
    zipf_s: float = 1.0


@dataclass(frozen=True)
class NumericSpec:
    name: str
    lo: float = 0.0
    hi: float = 1.0
    dist: str = "uniform"


@dataclass(frozen=True)
class PlantedPair:
    """Force P(a, b) = lift * P(a) * P(b) for two labels on different attributes."""

    attr_a: str
    label_a: str
    attr_b: str
    label_b: str
    lift: float


@dataclass(frozen=True)
class CorrelationSpec:
    """Latent-cluster correlation plus explicitly planted label pairs.

    Each row draws a hidden cluster. With probability ``strength`` a categorical
    value is the cluster's preferred label instead of a Zipf draw; with
    probability ``range_strength`` a numeric value falls in the cluster's slice
    of the attribute range.
    """

    clusters: int = 0
    strength: float = 0.0
    range_strength: float = 0.0
    pairs: tuple[PlantedPair, ...] = ()


def label_name(attr: str, rank: int) -> str:
    return f"{attr}_{rank}"


def zipf_probs(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def gen_synthetic_corpus(
    n: int,
    d: int,
    label_spec: Sequence[LabelSpec] = (),
    numeric_spec: Sequence[NumericSpec] = (),
    correlation_spec: CorrelationSpec | None = None,
    seed: int = 0,
    vector_dist: str = "normal",
) -> VectorCorpus:
    if n < 1 or d < 1:
        raise ConfigError("n and d must be >= 1")
    corr = correlation_spec or CorrelationSpec()
    if not 0.0 <= corr.strength <= 1.0 or not 0.0 <= corr.range_strength <= 1.0:
        raise ConfigError("correlation strengths must lie in [0, 1]")
    names = [s.name for s in label_spec] + [s.name for s in numeric_spec]
    if len(set(names)) != len(names):
        raise ConfigError("attribute names must be unique")
    rng = np.random.default_rng(seed)

    clusters = None
    if corr.clusters > 0:
        clusters = rng.integers(0, corr.clusters, size=n)

    if vector_dist == "normal":
        vectors = rng.standard_normal((n, d))
    elif vector_dist == "uniform":
        vectors = rng.random((n, d))
    elif vector_dist == "clustered":
        k = corr.clusters if clusters is not None else 32
        centers = rng.standard_normal((k, d)) * 2.0
        assign = clusters if clusters is not None else rng.integers(0, k, size=n)
        vectors = centers[assign] + rng.standard_normal((n, d))
    else:
        raise ConfigError(f"unknown vector distribution {vector_dist!r}")
    # stored as float32 on disk; keep the in-memory corpus identical to a reload
    vectors = vectors.astype(np.float32).astype(np.float64)

    codes, vocab, numeric = {}, {}, {}
    attrs = []
    for spec in label_spec:
        if spec.n_labels < 1:
            raise ConfigError(f"{spec.name}: n_labels must be >= 1")
        probs = zipf_probs(spec.n_labels, spec.zipf_s)
        rank = rng.choice(spec.n_labels, size=n, p=probs)
        if clusters is not None and corr.strength > 0:
            preferred = rng.integers(0, spec.n_labels, size=corr.clusters)
            hit = rng.random(n) < corr.strength
            rank = np.where(hit, preferred[clusters], rank)
        labels = [label_name(spec.name, r) for r in range(spec.n_labels)]
        order = sorted(range(spec.n_labels), key=lambda r: labels[r])
        remap = np.empty(spec.n_labels, dtype=np.int32)
        remap[order] = np.arange(spec.n_labels, dtype=np.int32)
        vocab[spec.name] = [labels[r] for r in order]
        codes[spec.name] = remap[rank]
        attrs.append(Attribute(spec.name, CATEGORICAL))
    for spec in numeric_spec:
        span = spec.hi - spec.lo
        if spec.dist == "uniform":
            vals = spec.lo + span * rng.random(n)
        elif spec.dist == "gaussian":
            vals = np.clip(rng.normal(spec.lo + span / 2, span / 6, size=n), spec.lo, np.nextafter(spec.hi, spec.lo))
        else:
            raise ConfigError(f"unknown numeric distribution {spec.dist!r}")
        if clusters is not None and corr.range_strength > 0:
            slot = rng.permutation(corr.clusters)
            width = span / corr.clusters
            inside = spec.lo + width * (slot[clusters] + rng.random(n))
            hit = rng.random(n) < corr.range_strength
            vals = np.where(hit, np.minimum(inside, np.nextafter(spec.hi, spec.lo)), vals)
        numeric[spec.name] = vals
        attrs.append(Attribute(spec.name, NUMERIC, float(spec.lo), float(spec.hi)))

    for pair in corr.pairs:
        _plant_pair(pair, codes, vocab, rng)

    schema = AttributeSchema(tuple(attrs))
    return VectorCorpus(schema, vectors, codes, vocab, numeric)


def _plant_pair(pair: PlantedPair, codes, vocab, rng) -> None:
    for attr, label in ((pair.attr_a, pair.label_a), (pair.attr_b, pair.label_b)):
        if attr not in vocab or label not in vocab[attr]:
            raise ConfigError(f"planted pair references unknown label {attr}={label}")
    if pair.attr_a == pair.attr_b:
        raise ConfigError("planted pair needs two different attributes")
    col_b = codes[pair.attr_b]
    a = codes[pair.attr_a] == vocab[pair.attr_a].index(pair.label_a)
    code_b = vocab[pair.attr_b].index(pair.label_b)
    pa, pb = a.mean(), (col_b == code_b).mean()
    p_given_a = pair.lift * pb
    p_given_not = (pb - pair.lift * pa * pb) / (1.0 - pa) if pa < 1 else 0.0
    if not (0.0 <= p_given_a <= 1.0 and 0.0 <= p_given_not <= 1.0):
        raise ConfigError(f"lift {pair.lift} is infeasible for marginals P(a)={pa:.3f}, P(b)={pb:.3f}")
    want_b = np.where(a, rng.random(len(a)) < p_given_a, rng.random(len(a)) < p_given_not)
    others = np.array([c for c in range(len(vocab[pair.attr_b])) if c != code_b], dtype=np.int32)
    col = col_b.copy()
    col[want_b] = code_b
    lost = (~want_b) & (col_b == code_b)
    if lost.any():
        if len(others) == 0:
            raise ConfigError("cannot un-assign the only label of an attribute")
        col[lost] = others[rng.integers(0, len(others), size=int(lost.sum()))]
    codes[pair.attr_b] = col


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def write_fvecs(path, vectors: np.ndarray) -> None:
    v = np.ascontiguousarray(vectors, dtype="<f4")
    n, d = v.shape
    out = np.empty((n, d + 1), dtype="<f4")
    out[:, 1:] = v
    out[:, 0] = np.array([d], dtype="<i4").view("<f4")[0]
    Path(path).write_bytes(out.tobytes())


def read_fvecs(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw:
        raise DataLoadError(f"{path}: empty vector file")
    if len(raw) < 4:
        raise DataLoadError(f"{path}: truncated record at byte offset 0")
    d = int(np.frombuffer(raw[:4], dtype="<i4")[0])
    if d < 1:
        raise DataLoadError(f"{path}: invalid dimension {d} at byte offset 0")
    rec = 4 * (d + 1)
    n_full, rest = divmod(len(raw), rec)
    ints = np.frombuffer(raw[: n_full * rec], dtype="<i4").reshape(n_full, d + 1)
    bad = np.flatnonzero(ints[:, 0] != d)
    if len(bad):
        i = int(bad[0])
        raise DataLoadError(f"{path}: record {i} has dimension {int(ints[i, 0])} != {d} (byte offset {i * rec})")
    if rest:
        raise DataLoadError(f"{path}: truncated record at byte offset {n_full * rec}")
    return np.frombuffer(raw, dtype="<f4").reshape(n_full, d + 1)[:, 1:].astype(np.float64)


def write_schema(path, schema: AttributeSchema) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


def read_schema(path) -> AttributeSchema:
    try:
        return AttributeSchema.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError, SchemaError) as exc:
        raise DataLoadError(f"{path}: bad schema: {exc}") from exc


def write_metadata(path, corpus: VectorCorpus) -> None:
    with open(path, "w") as fh:
        for i in range(corpus.n):
            fh.write(json.dumps(corpus.record(i)) + "\n")


def read_metadata(path, schema: AttributeSchema) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataLoadError(f"{path}:{lineno}: malformed record: {exc.msg}") from exc
            if not isinstance(rec, dict):
                raise DataLoadError(f"{path}:{lineno}: record is not an object")
            for a in schema.attributes:
                if a.name not in rec:
                    raise DataLoadError(f"{path}:{lineno}: missing attribute {a.name!r}")
                v = rec[a.name]
                if a.kind == NUMERIC and (isinstance(v, bool) or not isinstance(v, (int, float))):
                    raise DataLoadError(f"{path}:{lineno}: attribute {a.name!r} must be numeric")
                if a.kind == CATEGORICAL and not isinstance(v, str):
                    raise DataLoadError(f"{path}:{lineno}: attribute {a.name!r} must be a string label")
            records.append(rec)
    return records


def load_corpus(vector_file, metadata_file, schema_file) -> VectorCorpus:
    schema = read_schema(schema_file)
    vectors = read_fvecs(vector_file)
    records = read_metadata(metadata_file, schema)
    if len(records) != len(vectors):
        raise DataLoadError(f"row count mismatch: {len(vectors)} vectors vs {len(records)} metadata records")
    return VectorCorpus.from_records(schema, vectors, records)


def save_corpus(directory, corpus: VectorCorpus) -> dict[str, Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"vectors": out / "vectors.fvecs", "metadata": out / "metadata.jsonl", "schema": out / "schema.json"}
    write_fvecs(paths["vectors"], corpus.vectors)
    write_metadata(paths["metadata"], corpus)
    write_schema(paths["schema"], corpus.schema)
    return paths


def load_corpus_dir(directory) -> VectorCorpus:
    d = Path(directory)
    return load_corpus(d / "vectors.fvecs", d / "metadata.jsonl", d / "schema.json")


@dataclass
class CorpusConfig:
    """Generator settings as read from a config file (``gen-data``)."""

    n: int = 10000
    d: int = 32
    labels: list[LabelSpec] = field(default_factory=list)
    numerics: list[NumericSpec] = field(default_factory=list)
    correlation: CorrelationSpec = field(default_factory=CorrelationSpec)
    vector_dist: str = "normal"

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        try:
            labels = [LabelSpec(**x) for x in d.get("labels", [])]
            numerics = [NumericSpec(**x) for x in d.get("numerics", [])]
            c = dict(d.get("correlation", {}))
            c["pairs"] = tuple(PlantedPair(**p) for p in c.get("pairs", []))
            return cls(int(d.get("n", 10000)), int(d.get("d", 32)), labels, numerics,
                       CorrelationSpec(**c), d.get("vector_dist", "normal"))
        except TypeError as exc:
            raise ConfigError(f"bad corpus config: {exc}") from exc

    @classmethod
    def default(cls, n: int, d: int) -> "CorpusConfig":
        """Five 4-label attributes (20 labels), two numeric attributes, clustered correlations."""
        labels = [LabelSpec(f"c{i}", 4, 1.0) for i in range(5)]
        numerics = [NumericSpec("price", 0.0, 100.0), NumericSpec("age", 0.0, 100.0, "gaussian")]
        return cls(n, d, labels, numerics, CorrelationSpec(clusters=8, strength=0.5, range_strength=0.5))

    def generate(self, seed: int) -> VectorCorpus:
        return gen_synthetic_corpus(self.n, self.d, self.labels, self.numerics, self.correlation, seed,
                                    self.vector_dist)

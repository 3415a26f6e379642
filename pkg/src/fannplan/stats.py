"""Precomputed dataset statistics: label frequencies, co-occurrence tables,
equal-width histograms, a sampled subset and global vector descriptors."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import container
from .core import AttributeSchema, Interval, SchemaError, VectorCorpus, normalize_intervals

logger = logging.getLogger(__name__)

DEFAULT_BINS = 1024
DEFAULT_SUPER_BINS = 16
DEFAULT_PAIRS = 1000
STATS_KIND = "stats"


class UnknownLabelError(KeyError):
    """A label that does not occur in the statistics."""


@dataclass
class Histogram:
    lo: float
    hi: float
    counts: np.ndarray
    n: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self._cum = np.concatenate([[0], np.cumsum(self.counts)]).astype(np.float64)

    @property
    def bins(self) -> int:
        return len(self.counts)

    def _position(self, x: float) -> float:
        pos = (min(max(x, self.lo), self.hi) - self.lo) * self.bins / (self.hi - self.lo)
        r = round(pos)
        if abs(pos - r) < 1e-9 * max(1.0, self.bins):
            pos = float(r)
        return min(max(pos, 0.0), float(self.bins))

    def _cdf(self, pos: float) -> float:
        j = int(math.floor(pos))
        if j >= self.bins:
            return self._cum[self.bins]
        return self._cum[j] + self.counts[j] * (pos - j)

    def mass(self, intervals: Sequence[Interval]) -> float:
        """Fraction of rows in the union; boundary bins contribute pro rata."""
        total = 0.0
        for iv in normalize_intervals(intervals):
            a, b = self._position(iv.lo), self._position(iv.hi)
            if b > a:
                total += self._cdf(b) - self._cdf(a)
        return total / self.n


def bin_index(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    """Equal-width bin per value; out-of-bound values clamp into the edge bins."""
    idx = np.floor((np.asarray(values, dtype=np.float64) - lo) * (bins / (hi - lo)))
    return np.clip(idx, 0, bins - 1).astype(np.int64)


@dataclass
class DatasetStats:
    schema: AttributeSchema
    n: int
    d: int
    label_keys: list[tuple[str, str]]
    label_freq: np.ndarray
    label_pair: np.ndarray
    histograms: dict[str, Histogram]
    label_range_pair: dict[str, np.ndarray]
    sample_ids: np.ndarray
    sample_rate: float
    seed: int
    distribution_measure: float
    bins: int = DEFAULT_BINS
    super_bins: int = DEFAULT_SUPER_BINS
    _label_index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.label_keys = [tuple(k) for k in self.label_keys]
        self._label_index = {k: i for i, k in enumerate(self.label_keys)}

    def label_id(self, attr: str, label: str) -> int:
        try:
            return self._label_index[(attr, label)]
        except KeyError:
            raise UnknownLabelError(f"label {attr}={label!r} not present in statistics") from None

    def freq(self, attr: str, label: str) -> float:
        return float(self.label_freq[self.label_id(attr, label)])

    def joint(self, x: tuple[str, str], y: tuple[str, str]) -> float:
        return float(self.label_pair[self.label_id(*x), self.label_id(*y)])

    def histogram_mass(self, attr: str, intervals: Sequence[Interval]) -> float:
        return histogram_mass(self, attr, intervals)

    def super_edges(self, attr: str) -> np.ndarray:
        a = self.schema[attr]
        return np.linspace(a.lo, a.hi, self.super_bins + 1)

    # -- persistence --------------------------------------------------------

    def _payload(self):
        numeric = [a.name for a in self.schema.numeric]
        meta = {
            "version": container.FORMAT_VERSION,
            "seed": self.seed,
            "B": self.bins,
            "sample_rate": self.sample_rate,
            "super_bins": self.super_bins,
            "n": self.n,
            "d": self.d,
            "schema": self.schema.to_dict(),
            "label_keys": [list(k) for k in self.label_keys],
            "numeric": numeric,
            "distribution_measure": self.distribution_measure,
        }
        arrays = {
            "label_freq": self.label_freq,
            "label_pair": self.label_pair,
            "sample_ids": self.sample_ids,
        }
        for i, name in enumerate(numeric):
            arrays[f"hist/{i}"] = self.histograms[name].counts
            arrays[f"label_range/{i}"] = self.label_range_pair[name]
        return meta, arrays

    def save(self, path) -> str:
        meta, arrays = self._payload()
        return container.save(path, STATS_KIND, meta, arrays)

    def fingerprint(self) -> str:
        meta, arrays = self._payload()
        return container.fingerprint(STATS_KIND, meta, arrays)

    @classmethod
    def load(cls, path) -> "DatasetStats":
        header, arrays = container.load(path, STATS_KIND)
        meta = header["meta"]
        schema = AttributeSchema.from_dict(meta["schema"])
        hists, lrp = {}, {}
        for i, name in enumerate(meta["numeric"]):
            a = schema[name]
            hists[name] = Histogram(a.lo, a.hi, arrays[f"hist/{i}"], meta["n"])
            lrp[name] = arrays[f"label_range/{i}"]
        return cls(
            schema=schema,
            n=meta["n"],
            d=meta["d"],
            label_keys=[tuple(k) for k in meta["label_keys"]],
            label_freq=arrays["label_freq"],
            label_pair=arrays["label_pair"],
            histograms=hists,
            label_range_pair=lrp,
            sample_ids=arrays["sample_ids"],
            sample_rate=meta["sample_rate"],
            seed=meta["seed"],
            distribution_measure=meta["distribution_measure"],
            bins=meta["B"],
            super_bins=meta["super_bins"],
        )


def label_id_matrix(corpus: VectorCorpus) -> tuple[list[tuple[str, str]], np.ndarray]:
    """Global label ids: categorical attributes in schema order, labels in vocab order."""
    keys, cols, offset = [], [], 0
    for a in corpus.schema.categorical:
        vocab = corpus.vocab[a.name]
        keys.extend((a.name, lab) for lab in vocab)
        cols.append(corpus.codes[a.name].astype(np.int64) + offset)
        offset += len(vocab)
    ids = np.stack(cols, axis=1) if cols else np.empty((corpus.n, 0), dtype=np.int64)
    return keys, ids


def build_stats(
    corpus: VectorCorpus,
    sample_rate: float = 0.01,
    seed: int = 0,
    bins: int = DEFAULT_BINS,
    super_bins: int = DEFAULT_SUPER_BINS,
) -> DatasetStats:
    if not 0.01 <= sample_rate <= 0.05:
        logger.warning("sample_rate %.4f outside the recommended [0.01, 0.05] range", sample_rate)
    n = corpus.n
    keys, ids = label_id_matrix(corpus)
    n_labels = len(keys)

    counts = np.zeros(n_labels, dtype=np.int64)
    pair_counts = np.zeros((n_labels, n_labels), dtype=np.int64)
    n_attrs = ids.shape[1]
    for a in range(n_attrs):
        counts += np.bincount(ids[:, a], minlength=n_labels)
        for b in range(a, n_attrs):
            flat = np.bincount(ids[:, a] * n_labels + ids[:, b], minlength=n_labels * n_labels)
            pair_counts += flat.reshape(n_labels, n_labels)
    # each cross-attribute block was added once in (a, b) orientation
    pair_counts = pair_counts + pair_counts.T - np.diag(np.diag(pair_counts))
    label_freq = counts / n
    label_pair = pair_counts / n

    hists, label_range = {}, {}
    for a in corpus.schema.numeric:
        values = corpus.numeric[a.name]
        hists[a.name] = Histogram(a.lo, a.hi, np.bincount(bin_index(values, a.lo, a.hi, bins), minlength=bins), n)
        sb = bin_index(values, a.lo, a.hi, super_bins)
        joint = np.zeros(n_labels * super_bins, dtype=np.int64)
        for col in range(n_attrs):
            joint += np.bincount(ids[:, col] * super_bins + sb, minlength=n_labels * super_bins)
        label_range[a.name] = joint.reshape(n_labels, super_bins) / n

    rng = np.random.default_rng(seed)
    n_sample = int(round(sample_rate * n))
    sample_ids = np.sort(rng.choice(n, size=n_sample, replace=False)).astype(np.int64)

    return DatasetStats(
        schema=corpus.schema,
        n=n,
        d=corpus.d,
        label_keys=keys,
        label_freq=label_freq,
        label_pair=label_pair,
        histograms=hists,
        label_range_pair=label_range,
        sample_ids=sample_ids,
        sample_rate=sample_rate,
        seed=seed,
        distribution_measure=distribution_measure(corpus, seed),
        bins=bins,
        super_bins=super_bins,
    )


def pmi(stats: DatasetStats, x: tuple[str, str], y: tuple[str, str]) -> float:
    """Natural-log PMI; zero co-occurrence maps to the floor ln(1/N)."""
    px, py = stats.freq(*x), stats.freq(*y)
    if px <= 0 or py <= 0:
        raise UnknownLabelError(f"PMI undefined for zero-frequency label {x if px <= 0 else y}")
    pxy = stats.joint(x, y)
    if pxy <= 0:
        return math.log(1.0 / stats.n)
    return math.log(pxy / (px * py))


def histogram_mass(stats: DatasetStats, attr: str, intervals: Sequence[Interval]) -> float:
    if attr not in stats.histograms:
        raise SchemaError(f"attribute {attr!r} has no histogram (not numeric)")
    return stats.histograms[attr].mass(intervals)


def distribution_measure(corpus: VectorCorpus, seed: int = 0, n_pairs: int = DEFAULT_PAIRS) -> float:
    """Mean pairwise Euclidean distance over sampled pairs, divided by sqrt(D)."""
    n = corpus.n
    if n < 2:
        raise ValueError("distribution_measure needs at least two vectors")
    if n * (n - 1) // 2 <= n_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng([seed, 0x5EED])
        i = rng.integers(0, n, size=n_pairs)
        j = rng.integers(0, n - 1, size=n_pairs)
        j = j + (j >= i)
    diff = corpus.vectors[i] - corpus.vectors[j]
    return float(np.sqrt((diff * diff).sum(axis=1)).mean() / math.sqrt(corpus.d))

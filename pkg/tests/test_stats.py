import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fannplan.core import CATEGORICAL, NUMERIC, Attribute, AttributeSchema, Interval, Predicate, VectorCorpus, exact_selectivity
from fannplan.stats import DatasetStats, Histogram, UnknownLabelError, bin_index, build_stats, distribution_measure, pmi



def test_histogram_pro_rata_hand_example():
    h = Histogram(0.0, 4.0, np.array([10, 20, 30, 40]), 100)
    # half of bin 0, all of bin 1, three quarters of bin 2: 5 + 20 + 22.5
    assert h.mass([Interval(0.5, 2.75)]) == pytest.approx(0.475, abs=1e-15)
    assert h.mass([Interval(0.0, 4.0)]) == 1.0
    assert h.mass([Interval(-3.0, 1.0), Interval(3.0, 9.0)]) == pytest.approx(0.5, abs=1e-15)
    assert h.mass([]) == 0.0


def test_bin_index_clamps():
    np.testing.assert_array_equal(bin_index(np.array([-1.0, 0.0, 0.99, 1.0, 9.99, 10.0, 11.0]), 0, 10, 10),
                                  [0, 0, 0, 1, 9, 9, 9])


def _pmi_corpus():
    schema = AttributeSchema((Attribute("a", CATEGORICAL), Attribute("b", CATEGORICAL), Attribute("x", NUMERIC, 0, 1)))
    recs = [{"a": "p" if i == 0 else "q", "b": "r" if i == 0 else ("s" if i == 1 else "t"), "x": i / 10}
            for i in range(10)]
    return VectorCorpus.from_records(schema, np.eye(10), recs)


def test_pmi_hand_values():
    st = build_stats(_pmi_corpus(), sample_rate=0.1)
    # P(a=p)=P(b=r)=P(a=p,b=r)=0.1 -> ln(0.1 / 0.01)
    assert pmi(st, ("a", "p"), ("b", "r")) == pytest.approx(math.log(10), abs=1e-12)
    # a=p and b=s never co-occur -> floor ln(1/N)
    assert pmi(st, ("a", "p"), ("b", "s")) == pytest.approx(math.log(1 / 10), abs=1e-12)
    with pytest.raises(UnknownLabelError):
        st.freq("a", "zzz")


def test_distribution_measure_hand_value():
    schema = AttributeSchema((Attribute("a", CATEGORICAL),))
    c = VectorCorpus.from_records(schema, np.array([[0.0] * 4, [2.0] * 4]), [{"a": "u"}, {"a": "v"}])
    # one pair at distance 4, divided by sqrt(4)
    assert distribution_measure(c) == 2.0


def test_frequencies_match_exact_counts(corpus):
    st = build_stats(corpus, seed=3)
    for i, (attr, lab) in enumerate(st.label_keys):
        assert st.label_freq[i] == exact_selectivity(corpus, Predicate.labels(**{attr: lab}))
    keys = st.label_keys
    for i in range(len(keys)):
        for j in range(len(keys)):
            if keys[i][0] != keys[j][0]:
                p = Predicate(frozenset([keys[i], keys[j]]))
                assert st.label_pair[i, j] == exact_selectivity(corpus, p)
    assert np.allclose(st.label_pair, st.label_pair.T)


def test_sample_size_and_determinism(corpus):
    a, b = build_stats(corpus, 0.02, seed=5), build_stats(corpus, 0.02, seed=5)
    assert len(a.sample_ids) == round(0.02 * corpus.n)
    np.testing.assert_array_equal(a.sample_ids, b.sample_ids)
    assert a.fingerprint() == b.fingerprint()
    assert build_stats(corpus, 0.02, seed=6).fingerprint() != a.fingerprint()


def test_sample_rate_warning(corpus, caplog):
    build_stats(corpus, sample_rate=0.2)
    assert "outside the recommended" in caplog.text


def test_save_load_roundtrip(tmp_path, corpus):
    st = build_stats(corpus, seed=2)
    st.save(tmp_path / "s.bin")
    back = DatasetStats.load(tmp_path / "s.bin")
    assert back.fingerprint() == st.fingerprint()
    assert back.label_keys == st.label_keys
    np.testing.assert_array_equal(back.histograms["x"].counts, st.histograms["x"].counts)
    assert back.distribution_measure == st.distribution_measure


def test_label_range_table_sums_to_label_frequency(corpus):
    st = build_stats(corpus)
    n_cat = len(corpus.schema.categorical)
    for attr in ("x", "y"):
        table = st.label_range_pair[attr]
        np.testing.assert_allclose(table.sum(axis=1), st.label_freq, atol=1e-12)
        assert table.sum() == pytest.approx(n_cat, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 64))
def test_histogram_on_bin_edges_is_exact(seed, bins):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0, 1, 500)
    h = Histogram(0.0, 1.0, np.bincount(bin_index(vals, 0.0, 1.0, bins), minlength=bins), 500)
    i, j = sorted(rng.integers(0, bins + 1, size=2))
    got = h.mass([Interval(i / bins, j / bins)])
    lo, hi = i / bins, j / bins
    want = np.mean((vals >= lo) & (vals < hi)) if j < bins else np.mean(vals >= lo)
    assert got == pytest.approx(want, abs=1e-12)

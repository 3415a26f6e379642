import numpy as np
import pytest

from fannplan.core import Interval, Predicate
from fannplan.datasets import CorrelationSpec, LabelSpec, NumericSpec, gen_synthetic_corpus


def small_corpus(n=500, d=8, seed=0, n_labels=(3, 4, 5), clusters=0):
    labels = [LabelSpec(f"a{i}", k, 1.0) for i, k in enumerate(n_labels)]
    numerics = [NumericSpec("x", 0.0, 10.0), NumericSpec("y", -5.0, 5.0, "gaussian")]
    corr = CorrelationSpec(clusters=clusters, strength=0.5 if clusters else 0.0,
                           range_strength=0.5 if clusters else 0.0)
    return gen_synthetic_corpus(n, d, labels, numerics, corr, seed)


def random_predicate(corpus, rng, max_labels=3, p_range=0.5):
    cats = [a.name for a in corpus.schema.categorical]
    m = int(rng.integers(0, min(max_labels, len(cats)) + 1))
    chosen = rng.choice(len(cats), size=m, replace=False)
    terms = frozenset((cats[j], corpus.vocab[cats[j]][rng.integers(len(corpus.vocab[cats[j]]))]) for j in chosen)
    if rng.random() < p_range or not terms:
        a = corpus.schema.numeric[rng.integers(len(corpus.schema.numeric))]
        ivs = []
        for _ in range(int(rng.integers(1, 4))):
            lo, hi = np.sort(rng.uniform(a.lo, a.hi, size=2))
            ivs.append(Interval(float(lo), float(hi), bool(rng.random() < 0.5), bool(rng.random() < 0.5)))
        return Predicate(terms, a.name, ivs)
    return Predicate(terms)


@pytest.fixture
def corpus():
    return small_corpus()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

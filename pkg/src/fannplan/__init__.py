"""Filtered approximate nearest-neighbour search with a learned per-query planner."""
from .bench import BenchReport, run_bench
from .core import (
    AttributeSchema,
    FilteredQuery,
    Interval,
    Predicate,
    ResultSet,
    VectorCorpus,
    exact_selectivity,
    knn_exact,
)
from .datasets import CorpusConfig, gen_synthetic_corpus, load_corpus, save_corpus
from .engines import (
    BruteForceIndex,
    GraphIndex,
    GraphParams,
    build_graph_index,
    postfilter_search,
    prefilter_search,
)
from .planner import PlannerModel, generate_training_set, plan_and_execute, train_planner
from .predicates import parse_predicate
from .selectivity import SelectivityEstimator, estimate_selectivity, train_estimator
from .stats import DatasetStats, build_stats
from .workload import Workload, gen_workload

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema", "BenchReport", "BruteForceIndex", "CorpusConfig", "DatasetStats", "FilteredQuery",
    "GraphIndex", "GraphParams", "Interval", "PlannerModel", "Predicate", "ResultSet", "SelectivityEstimator",
    "VectorCorpus", "Workload", "build_graph_index", "build_stats", "estimate_selectivity", "exact_selectivity",
    "gen_synthetic_corpus", "gen_workload", "generate_training_set", "knn_exact", "load_corpus",
    "parse_predicate", "plan_and_execute", "postfilter_search", "prefilter_search", "run_bench", "save_corpus",
    "train_estimator", "train_planner",
]

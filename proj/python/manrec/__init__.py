from ._manrec import (
    Gate,
    Index,
    IndexConfig,
    MemoryConfig,
    MemoryStore,
    Recommender,
    RecommenderConfig,
    combine,
    kde_kernel,
    rank_metrics,
    rank_of,
)

__all__ = [
    "Gate",
    "Index",
    "IndexConfig",
    "MemoryConfig",
    "MemoryStore",
    "Recommender",
    "RecommenderConfig",
    "combine",
    "kde_kernel",
    "rank_metrics",
    "rank_of",
]

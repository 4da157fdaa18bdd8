"""Knowledge-graph completion: TransE ranking, prompt building, grounding and evaluation."""

from ._core import (
    DIRECTIVE,
    TEMPLATE_ID,
    Adapter,
    BackendError,
    Config,
    ConfigError,
    DataError,
    DiftError,
    KnowledgeGraph,
    RankedQuery,
    StageResult,
    TransE,
    build,
    build_eval_set,
    evaluate,
    ground,
    init_adapter,
    load_adapter,
    load_checkpoint,
    load_config,
    load_kg,
    metrics,
    normalize_answer,
    parse_candidate_names,
    rank_query,
    train_embeddings,
    train_transe,
)

__all__ = [
    "DIRECTIVE",
    "TEMPLATE_ID",
    "Adapter",
    "BackendError",
    "Config",
    "ConfigError",
    "DataError",
    "DiftError",
    "KnowledgeGraph",
    "RankedQuery",
    "StageResult",
    "TransE",
    "build",
    "build_eval_set",
    "evaluate",
    "ground",
    "init_adapter",
    "load_adapter",
    "load_checkpoint",
    "load_config",
    "load_kg",
    "metrics",
    "normalize_answer",
    "parse_candidate_names",
    "rank_query",
    "train_embeddings",
    "train_transe",
]

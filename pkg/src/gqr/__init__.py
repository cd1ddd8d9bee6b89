"""Generative query recommendation (GQR, RA-GQR) with an offline evaluation harness."""

from .corpus import (
    CollectionStats,
    Document,
    InvertedIndex,
    RankedList,
    Tokenizer,
    bm25_search,
    build_index,
    build_stats,
    tokenize,
)
from .llm_backend import GenerationConfig, HttpBackend, MockBackend
from .metrics import holm_bonferroni, ndcg_at_k, paired_ttest, query_lm, scs, summarize
from .prompting import PromptExample, RecommendationList, build_prompt, format_example, generate, parse_recommendations
from .rag import EmbeddingIndex, HashingEmbedder, compose_dynamic_examples, ingest_log, knn, ra_generate

__version__ = "0.1.0"

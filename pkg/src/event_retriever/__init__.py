"""Event-centric multi-stage retrieval: captions to articles to images."""

from .config import PipelineConfig
from .corpus import Article, Corpus, ImageRecord, QueryCaption, ingest_corpus, load_queries, lookup_article
from .fusion import RunSet, fuse_submissions, rrf_fuse
from .images import CandidateImage, StageConfig, collect_candidates, rank_aware_select, score_candidates
from .index import AnnParams, Index, RankedList, build_index, top_k
from .metrics import GroundTruth, MetricReport, evaluate, map_single_relevant, mrr, overall_score, recall_at_k
from .pipeline import Engine, run_retrieval
from .providers import ProviderSpec, RetryPolicy, build_provider, embed_images, embed_texts, format_document
from .rerank import RerankRequest, assemble_prompt, build_reranker, rerank_articles, score_yes_from_logits
from .submission import SubmissionTable

__version__ = "0.1.0"

__all__ = [
    "AnnParams", "Article", "CandidateImage", "Corpus", "Engine", "GroundTruth", "ImageRecord", "Index",
    "MetricReport", "PipelineConfig", "ProviderSpec", "QueryCaption", "RankedList", "RerankRequest",
    "RetryPolicy", "RunSet", "StageConfig", "SubmissionTable", "assemble_prompt", "build_index",
    "build_provider", "build_reranker", "collect_candidates", "embed_images", "embed_texts", "evaluate",
    "format_document", "fuse_submissions", "ingest_corpus", "load_queries", "lookup_article",
    "map_single_relevant", "mrr", "overall_score", "rank_aware_select", "recall_at_k", "rerank_articles",
    "rrf_fuse", "run_retrieval", "score_candidates", "score_yes_from_logits", "top_k",
]

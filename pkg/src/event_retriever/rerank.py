"""Stage 2: rerank dense-retrieval candidates with a prompted yes/no relevance model.

Remote providers speak::

    POST /rerank {"instruct": str, "query": str, "documents": [str, ...]}
      -> {"scores": [p_yes, ...]}            # probabilities in [0, 1], or
      -> {"logits": [[yes, no], ...]}        # raw final-position logits
"""

from __future__ import annotations

import logging
import math
import threading
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import httpx
import numpy as np

from .corpus import Corpus
from .errors import ProviderConfigError, ProviderError, RerankError
from .index import RankedList
from .providers import (
    InFlightLimiter,
    JsonHttpClient,
    ProviderSpec,
    RetryPolicy,
    format_document,
    local_text_vector,
    truncate,
)

logger = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    'Judge whether the Document meets the requirements based on the Query and the '
    'Instruct provided. Note that the answer can only be "yes" or "no".'
)
DEFAULT_INSTRUCT = (
    "Given a caption describing a real-world event, determine if the document provides "
    'relevant details to identify the corresponding image. Only answer "yes" or "no".'
)
PROMPT_PREFIX = f"<|im_start|>system\n{SYSTEM_PROMPT}\n<|im_end|>\n"
PROMPT_SUFFIX = "<|im_start|>assistant\n<think>\n\n</think>\n\n"
TEMPLATE_DELIMITERS = ("<|im_start|>", "<|im_end|>", "<think>", "</think>", "<Instruct>:", "<Query>:", "<Document>:")


@dataclass(frozen=True)
class RerankRequest:
    instruct: str
    query: str
    document: str

    def __post_init__(self) -> None:
        for name in ("instruct", "query", "document"):
            if not getattr(self, name):
                raise ValueError(f"rerank request field {name!r} is empty")


def assemble_prompt(req: RerankRequest) -> str:
    """Build the chat-format prompt: system prefix, user block, assistant preamble.

    Fields are inserted verbatim. Template delimiters inside a field are not
    escaped (that would change the scored text) but a warning is logged.
    """
    for name in ("instruct", "query", "document"):
        value = getattr(req, name)
        hits = [d for d in TEMPLATE_DELIMITERS if d in value]
        if hits:
            logger.warning("rerank %s contains template delimiter(s) %s; passing through verbatim", name, hits)
    user = (
        "<|im_start|>user\n"
        f"<Instruct>: {req.instruct}\n"
        f"<Query>: {req.query}\n"
        f"<Document>: {req.document}\n"
        "<|im_end|>\n"
    )
    return PROMPT_PREFIX + user + PROMPT_SUFFIX


def score_yes_from_logits(logit_yes: float, logit_no: float) -> float:
    """Two-way softmax probability of "yes", stable for any finite logits."""
    if not (math.isfinite(logit_yes) and math.isfinite(logit_no)):
        raise ValueError("logits must be finite")
    m = max(logit_yes, logit_no)
    e_yes = math.exp(logit_yes - m)
    e_no = math.exp(logit_no - m)
    return e_yes / (e_yes + e_no)


def relevance(value: Any) -> float:
    """Coerce a provider score into a validated relevance in [0, 1]."""
    v = float(value)
    if math.isnan(v) or not 0.0 <= v <= 1.0:
        raise ProviderError(f"relevance score {value!r} outside [0, 1]")
    return v


class LocalTestReranker:
    """Deterministic stand-in: logit("yes") grows with bag-of-words cosine."""

    def __init__(self, dim: int = 256, seed: int = 0, scale: float = 12.0):
        self.dim = dim
        self.seed = seed
        self.scale = scale

    def score_batch(self, instruct: str, query: str, documents: Sequence[str]) -> list[float]:
        q = local_text_vector(query, self.dim, self.seed).astype(np.float64)
        out = []
        for doc in documents:
            cos = float(local_text_vector(doc, self.dim, self.seed).astype(np.float64) @ q)
            out.append(score_yes_from_logits(self.scale * cos, 0.0))
        return out


class HttpReranker:
    def __init__(self, client: JsonHttpClient):
        self.client = client

    def score_batch(self, instruct: str, query: str, documents: Sequence[str]) -> list[float]:
        body = self.client.post("/rerank", {"instruct": instruct, "query": query, "documents": list(documents)})
        if not isinstance(body, dict):
            raise ProviderError("/rerank: expected a JSON object")
        if "scores" in body:
            scores = [relevance(s) for s in body["scores"]]
        elif "logits" in body:
            scores = [score_yes_from_logits(float(y), float(n)) for y, n in body["logits"]]
        else:
            raise ProviderError("/rerank: response has neither 'scores' nor 'logits'")
        if len(scores) != len(documents):
            raise ProviderError(f"/rerank: {len(scores)} scores for {len(documents)} documents")
        return scores


class RerankProvider:
    def __init__(self, spec: ProviderSpec, backend: Any, limiter: InFlightLimiter | None = None):
        self.spec = spec
        self.backend = backend
        self.limiter = limiter
        self.calls = 0
        self._lock = threading.Lock()

    def score(self, instruct: str, query: str, documents: Sequence[str]) -> list[float]:
        """Relevance of each document to ``query``, aligned with input order."""
        if not documents:
            return []
        step = self.spec.max_batch
        batches = [documents[i:i + step] for i in range(0, len(documents), step)]

        def one(batch: Sequence[str]) -> list[float]:
            with self._lock:
                self.calls += 1
            if self.limiter is None:
                return self.backend.score_batch(instruct, query, batch)
            with self.limiter:
                return self.backend.score_batch(instruct, query, batch)

        if self.limiter is not None and self.limiter.limit > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=min(self.limiter.limit, len(batches))) as pool:
                parts = list(pool.map(one, batches))
        else:
            parts = [one(b) for b in batches]
        return [relevance(s) for part in parts for s in part]

    def healthy(self) -> bool:
        if isinstance(self.backend, HttpReranker):
            return self.backend.client.health()
        return True


def build_reranker(
    spec: ProviderSpec,
    *,
    seed: int = 0,
    retry: RetryPolicy | None = None,
    limiter: InFlightLimiter | None = None,
    transport: httpx.BaseTransport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> RerankProvider:
    if spec.kind != "rerank":
        raise ProviderConfigError(f"expected a rerank spec, got {spec.kind!r}")
    if spec.is_local:
        return RerankProvider(spec, LocalTestReranker(spec.dim, seed))
    client = JsonHttpClient(spec.endpoint, timeout=spec.timeout, retry=retry, transport=transport, sleep=sleep)
    return RerankProvider(spec, HttpReranker(client), limiter)


def rerank_articles(
    caption: str,
    candidates: RankedList,
    reranker: RerankProvider,
    k: int,
    corpus: Corpus,
    *,
    instruct: str = DEFAULT_INSTRUCT,
) -> RankedList:
    """Keep the ``k`` candidates the reranker finds most relevant.

    Ties keep their Stage-1 order. Entry scores are relevance probabilities,
    not the Stage-1 cosines.

    Raises:
        RerankError: the provider failed; carries the query id.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    if not len(candidates):
        return RankedList(candidates.query_id)
    budget = reranker.spec.max_chars
    docs = [format_document(corpus.articles[aid], budget) for aid in candidates.ids]
    try:
        scores = reranker.score(instruct, truncate(caption, budget), docs)
    except (ProviderError, httpx.HTTPError, ValueError) as exc:
        raise RerankError(candidates.query_id, exc) from exc
    order = sorted(range(len(docs)), key=lambda i: (-scores[i], i, candidates.ids[i]))
    return RankedList(candidates.query_id, tuple((candidates.ids[i], scores[i]) for i in order[:k]))

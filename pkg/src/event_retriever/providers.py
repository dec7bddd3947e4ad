"""Embedding provider contracts, a deterministic local embedder and an HTTP client.

Every vector leaving this module is float32 and L2-normalised, so downstream
code can treat dot products as cosine similarities.

Remote wire protocol (JSON over HTTP)::

    POST /embed_text  {"texts": [...]}  -> {"vectors": [[f32, ...], ...]}
    POST /embed_image {"uris": [...]}   -> {"vectors": [[f32, ...], ...]}
"""

from __future__ import annotations

import hashlib
import logging
import re
import threading
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Protocol

import httpx
import numpy as np

from .corpus import Article, ImageRecord
from .errors import ProviderConfigError, ProviderError, ProviderTransportError

logger = logging.getLogger(__name__)

LOCAL_TEST = "local-test"
TEXT_URI_SCHEME = "text:"
KINDS = ("text-embed", "image-embed", "rerank")


@dataclass(frozen=True)
class ProviderSpec:
    kind: str
    endpoint: str = LOCAL_TEST
    dim: int = 256
    max_batch: int = 32
    max_chars: int = 8192
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ProviderConfigError(f"unknown provider kind {self.kind!r}")
        if self.dim <= 0:
            raise ProviderConfigError("dim must be positive")
        if self.max_batch < 1:
            raise ProviderConfigError("max_batch must be >= 1")
        if self.max_chars < 1:
            raise ProviderConfigError("max_chars must be >= 1")

    @property
    def is_local(self) -> bool:
        return self.endpoint == LOCAL_TEST


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.25
    max_backoff: float = 4.0

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        return min(self.max_backoff, self.backoff * 2 ** (attempt - 1))


class InFlightLimiter:
    """Process-wide bound on concurrent remote requests."""

    def __init__(self, limit: int = 4):
        if limit < 1:
            raise ValueError("in-flight limit must be >= 1")
        self.limit = limit
        self._sem = threading.BoundedSemaphore(limit)

    def __enter__(self) -> InFlightLimiter:
        self._sem.acquire()
        return self

    def __exit__(self, *exc: object) -> None:
        self._sem.release()


def truncate(text: str, max_chars: int | None) -> str:
    if max_chars is None or len(text) <= max_chars:
        return text
    return text[:max_chars]


def format_document(article: Article, max_chars: int | None = None) -> str:
    """Render an article as the single document string fed to embedders and rerankers."""
    doc = f"Title: {article.title}\nDate: {article.pub_date}\nContent: {article.content}"
    return truncate(doc, max_chars)


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ProviderConfigError("provider returned non-finite vector components")
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ProviderConfigError("provider returned a zero vector")
    return (arr / norms).astype(np.float32)


# -- deterministic local embedder -------------------------------------------

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


@lru_cache(maxsize=1 << 16)
def _hashed_gaussian(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x1f{token}".encode(), digest_size=16).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
    vec = rng.standard_normal(dim)
    vec.setflags(write=False)
    return vec


def local_text_vector(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Bag-of-tokens hashing embedding.

    Each lower-cased word token maps to a seeded Gaussian vector; the text
    vector is their sum. Texts sharing vocabulary therefore land close
    together, and unrelated texts are near-orthogonal at moderate ``dim``.
    """
    tokens = _TOKEN_RE.findall(text.lower()) or [text]
    acc = np.zeros(dim)
    for tok in tokens:
        acc += _hashed_gaussian(tok, dim, seed)
    return l2_normalize(acc)


def local_image_vector(image: ImageRecord, dim: int, seed: int = 0) -> np.ndarray:
    """Hash the image id; ``text:`` uris instead embed their text payload.

    The ``text:`` escape lets fixtures plant an image whose embedding equals a
    caption's embedding without shipping pixel data.
    """
    if image.uri.startswith(TEXT_URI_SCHEME):
        return local_text_vector(image.uri[len(TEXT_URI_SCHEME):], dim, seed)
    return l2_normalize(_hashed_gaussian("\x00image\x00" + image.image_id, dim, seed))


class Backend(Protocol):
    def embed_texts(self, texts: Sequence[str]) -> Any: ...

    def embed_images(self, images: Sequence[ImageRecord]) -> Any: ...


class LocalTestBackend:
    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([local_text_vector(t, self.dim, self.seed) for t in texts])

    def embed_images(self, images: Sequence[ImageRecord]) -> np.ndarray:
        return np.stack([local_image_vector(im, self.dim, self.seed) for im in images])


# -- remote HTTP ------------------------------------------------------------

_RETRYABLE_STATUS = {408, 425, 429, 500, 502, 503, 504}


class JsonHttpClient:
    """POSTs JSON with bounded exponential-backoff retries."""

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        retry: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.retry = retry or RetryPolicy()
        self._sleep = sleep
        self._client = httpx.Client(base_url=self.endpoint, timeout=timeout, transport=transport)

    def post(self, route: str, payload: dict[str, Any]) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(1, self.retry.attempts + 1):
            try:
                resp = self._client.post(route, json=payload)
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code in _RETRYABLE_STATUS:
                    last = ProviderError(f"HTTP {resp.status_code} from {self.endpoint}{route}")
                elif resp.status_code >= 400:
                    raise ProviderError(f"HTTP {resp.status_code} from {self.endpoint}{route}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProviderError(f"non-JSON response from {self.endpoint}{route}") from exc
            if attempt < self.retry.attempts:
                logger.warning("%s%s attempt %d failed: %s", self.endpoint, route, attempt, last)
                self._sleep(self.retry.delay(attempt))
        raise ProviderTransportError(f"{self.endpoint}{route}: {last}", attempts=self.retry.attempts)

    def health(self) -> bool:
        try:
            resp = self._client.get("/health", timeout=2.0)
        except httpx.HTTPError:
            return False
        return resp.status_code < 500

    def close(self) -> None:
        self._client.close()


class HttpBackend:
    def __init__(self, client: JsonHttpClient):
        self.client = client

    def _vectors(self, route: str, payload: dict[str, Any]) -> list[list[float]]:
        body = self.client.post(route, payload)
        vectors = body.get("vectors") if isinstance(body, dict) else None
        if not isinstance(vectors, list):
            raise ProviderError(f"{route}: response lacks a 'vectors' list")
        return vectors

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        return self._vectors("/embed_text", {"texts": list(texts)})

    def embed_images(self, images: Sequence[ImageRecord]) -> list[list[float]]:
        return self._vectors("/embed_image", {"uris": [im.uri for im in images]})


class EmbeddingProvider:
    """Batching, validation and normalisation in front of a backend.

    Output row ``i`` always corresponds to input ``i``, whatever the batching.
    """

    def __init__(self, spec: ProviderSpec, backend: Backend, limiter: InFlightLimiter | None = None):
        self.spec = spec
        self.backend = backend
        self.limiter = limiter
        self.calls = 0
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.spec.dim

    def _run(self, fn: Callable[[Sequence[Any]], Any], items: Sequence[Any]) -> np.ndarray:
        step = self.spec.max_batch
        batches = [items[i:i + step] for i in range(0, len(items), step)]

        def one(batch: Sequence[Any]) -> np.ndarray:
            with self._lock:
                self.calls += 1
            if self.limiter is None:
                raw = fn(batch)
            else:
                with self.limiter:
                    raw = fn(batch)
            return self._check(raw, len(batch))

        parallel = self.limiter is not None and self.limiter.limit > 1 and len(batches) > 1
        if parallel:
            with ThreadPoolExecutor(max_workers=min(self.limiter.limit, len(batches))) as pool:
                parts = list(pool.map(one, batches))
        else:
            parts = [one(b) for b in batches]
        return np.concatenate(parts, axis=0)

    def _check(self, raw: Any, expected: int) -> np.ndarray:
        try:
            arr = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ProviderConfigError(f"ragged or non-numeric vectors from provider: {exc}") from None
        if arr.ndim != 2 or arr.shape[0] != expected:
            raise ProviderConfigError(f"provider returned shape {arr.shape}, expected ({expected}, {self.dim})")
        if arr.shape[1] != self.dim:
            raise ProviderConfigError(f"dimension mismatch: provider returned {arr.shape[1]}, configured {self.dim}")
        return l2_normalize(arr)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ValueError("embed_texts needs at least one text")
        clipped = [truncate(t, self.spec.max_chars) for t in texts]
        if any(not t for t in clipped):
            raise ValueError("empty text cannot be embedded")
        return self._run(self.backend.embed_texts, clipped)

    def embed_images(self, images: Sequence[ImageRecord]) -> np.ndarray:
        if not images:
            raise ValueError("embed_images needs at least one image")
        return self._run(self.backend.embed_images, list(images))

    def healthy(self) -> bool:
        if isinstance(self.backend, HttpBackend):
            return self.backend.client.health()
        return True


def build_provider(
    spec: ProviderSpec,
    *,
    seed: int = 0,
    retry: RetryPolicy | None = None,
    limiter: InFlightLimiter | None = None,
    transport: httpx.BaseTransport | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> EmbeddingProvider:
    if spec.kind == "rerank":
        raise ProviderConfigError("rerank specs are handled by event_retriever.rerank")
    if spec.is_local:
        return EmbeddingProvider(spec, LocalTestBackend(spec.dim, seed))
    client = JsonHttpClient(spec.endpoint, timeout=spec.timeout, retry=retry, transport=transport, sleep=sleep)
    return EmbeddingProvider(spec, HttpBackend(client), limiter)


def embed_texts(spec: ProviderSpec, texts: Sequence[str], **kwargs: Any) -> np.ndarray:
    return build_provider(spec, **kwargs).embed_texts(texts)


def embed_images(spec: ProviderSpec, images: Sequence[ImageRecord], **kwargs: Any) -> np.ndarray:
    return build_provider(spec, **kwargs).embed_images(images)

"""Article/image corpus and query-set ingestion.

The corpus file is JSONL, one article per line::

    {"article_id": "a1", "title": "...", "pub_date": "October 14, 2023",
     "content": "...", "images": [{"image_id": "i1", "uri": "..."}, ...]}

Query sets are JSONL too: ``{"query_id": "q1", "caption": "..."}``.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any

from .errors import CorpusError, DuplicateIdError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Article:
    article_id: str
    title: str
    pub_date: str
    content: str
    image_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    owner_article_id: str
    uri: str


@dataclass(frozen=True)
class QueryCaption:
    query_id: str
    caption: str


@dataclass(frozen=True)
class Corpus:
    """Immutable id-indexed view over an ingested corpus.

    Articles and images live in separate namespaces, so an article id may
    coincide with an image id without ambiguity. Iteration follows file order.
    """

    articles: Mapping[str, Article] = field(default_factory=dict)
    images: Mapping[str, ImageRecord] = field(default_factory=dict)

    @property
    def n_articles(self) -> int:
        return len(self.articles)

    @property
    def n_images(self) -> int:
        return len(self.images)

    def article(self, article_id: str) -> Article | None:
        return self.articles.get(article_id)

    def image(self, image_id: str) -> ImageRecord | None:
        return self.images.get(image_id)

    def images_of(self, article_id: str) -> list[ImageRecord]:
        art = self.articles.get(article_id)
        if art is None:
            return []
        return [self.images[i] for i in art.image_ids]

    def __iter__(self) -> Iterator[Article]:
        return iter(self.articles.values())

    def __len__(self) -> int:
        return len(self.articles)


def lookup_article(corpus: Corpus, article_id: str) -> Article | None:
    """Return the ingested article, or None when the id is unknown."""
    return corpus.article(article_id)


def _require_str(obj: Mapping[str, Any], key: str, line: int, *, non_empty: bool = False) -> str:
    if key not in obj:
        raise CorpusError(f"missing field {key!r}", line=line)
    value = obj[key]
    if not isinstance(value, str):
        raise CorpusError(f"field {key!r} must be a string", line=line)
    if non_empty and not value:
        raise CorpusError(f"field {key!r} must be non-empty", line=line)
    return value


def build_corpus(records: Iterable[Mapping[str, Any]]) -> Corpus:
    """Validate parsed article records and assemble a :class:`Corpus`.

    Line numbers in error messages are 1-based positions in ``records``.
    """
    return _build(enumerate(records, start=1))


def _build(numbered: Iterable[tuple[int, Any]]) -> Corpus:
    articles: dict[str, Article] = {}
    images: dict[str, ImageRecord] = {}
    for line, rec in numbered:
        if not isinstance(rec, Mapping):
            raise CorpusError("expected a JSON object", line=line)
        article_id = _require_str(rec, "article_id", line, non_empty=True)
        if article_id in articles:
            raise DuplicateIdError("article", article_id, line=line)
        raw_images = rec.get("images", [])
        if not isinstance(raw_images, list):
            raise CorpusError("field 'images' must be a list", line=line)
        image_ids: list[str] = []
        for img in raw_images:
            if not isinstance(img, Mapping):
                raise CorpusError("image entries must be objects", line=line)
            image_id = _require_str(img, "image_id", line, non_empty=True)
            if "uri" not in img:
                raise CorpusError(f"image {image_id!r} has no entry in the image table", line=line)
            uri = _require_str(img, "uri", line)
            if image_id in images:
                raise DuplicateIdError("image", image_id, line=line)
            images[image_id] = ImageRecord(image_id, article_id, uri)
            image_ids.append(image_id)
        articles[article_id] = Article(
            article_id=article_id,
            title=_require_str(rec, "title", line),
            pub_date=_require_str(rec, "pub_date", line),
            content=_require_str(rec, "content", line),
            image_ids=tuple(image_ids),
        )
    return Corpus(articles=MappingProxyType(articles), images=MappingProxyType(images))


def _read_jsonl(path: Path) -> Iterator[tuple[int, Any]]:
    with open(path, encoding="utf-8", newline="\n") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON: {exc.msg}", line=line_no) from None


def ingest_corpus(path: str | Path) -> Corpus:
    """Read a corpus JSONL file.

    Raises:
        CorpusError: on malformed lines, missing fields or dangling image ids.
        DuplicateIdError: when an article or image id repeats.
    """
    path = Path(path)
    corpus = _build(_read_jsonl(path))
    logger.info("ingested %s: %d articles, %d images", path, corpus.n_articles, corpus.n_images)
    return corpus


def load_queries(path: str | Path) -> list[QueryCaption]:
    queries: list[QueryCaption] = []
    seen: set[str] = set()
    for line_no, rec in _read_jsonl(Path(path)):
        if not isinstance(rec, Mapping):
            raise CorpusError("expected a JSON object", line=line_no)
        qid = _require_str(rec, "query_id", line_no, non_empty=True)
        caption = _require_str(rec, "caption", line_no, non_empty=True)
        if qid in seen:
            raise DuplicateIdError("query", qid, line=line_no)
        seen.add(qid)
        queries.append(QueryCaption(qid, caption))
    return queries


def article_to_record(article: Article, corpus: Corpus) -> dict[str, Any]:
    return {
        "article_id": article.article_id,
        "title": article.title,
        "pub_date": article.pub_date,
        "content": article.content,
        "images": [{"image_id": i, "uri": corpus.images[i].uri} for i in article.image_ids],
    }


def write_corpus(path: str | Path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for art in corpus:
            fh.write(json.dumps(article_to_record(art, corpus), ensure_ascii=False) + "\n")


def write_queries(path: str | Path, queries: Iterable[QueryCaption]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(json.dumps({"query_id": q.query_id, "caption": q.caption}, ensure_ascii=False) + "\n")

"""Seeded synthetic corpora with planted queries, for tests and demos.

Each planted query's caption is the verbatim content of one article, and that
article's first image carries a ``text:`` uri holding the same caption, so the
local-test providers can retrieve both exactly.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, QueryCaption, build_corpus, write_corpus, write_queries

_SYLLABLES = ("ba", "ko", "ri", "ta", "mu", "ne", "lo", "vi", "sa", "de", "gu", "pe", "zo", "fa", "hi", "ju")


@dataclass(frozen=True)
class SyntheticData:
    corpus: Corpus
    queries: list[QueryCaption]
    truth: list[tuple[str, str, str]]  # (query_id, article_id, image_id)


def _vocabulary(rng: np.random.Generator, size: int) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        n = int(rng.integers(2, 5))
        words.add("".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), n)))
    return sorted(words)


def generate(
    n_articles: int = 1000,
    n_queries: int = 100,
    *,
    seed: int = 0,
    vocab_size: int = 4000,
    content_words: int = 60,
    max_images: int = 8,
    empty_article_rate: float = 0.05,
) -> SyntheticData:
    if n_queries > n_articles:
        raise ValueError("cannot plant more queries than articles")
    rng = np.random.default_rng(seed)
    vocab = _vocabulary(rng, vocab_size)
    planted = set(rng.choice(n_articles, size=n_queries, replace=False).tolist())
    base_day = dt.date(2023, 1, 1)
    records = []
    queries: list[QueryCaption] = []
    truth: list[tuple[str, str, str]] = []
    for a in range(n_articles):
        article_id = f"art{a:05d}"
        words = [vocab[i] for i in rng.integers(0, len(vocab), content_words)]
        content = " ".join(words)
        title = " ".join(vocab[i] for i in rng.integers(0, len(vocab), 6)).title()
        day = base_day + dt.timedelta(days=int(rng.integers(0, 730)))
        pub_date = f"{day:%B} {day.day}, {day.year}"
        if a in planted:
            n_img = int(rng.integers(1, max_images + 1))
        elif rng.random() < empty_article_rate:
            n_img = 0
        else:
            n_img = int(rng.integers(1, max_images + 1))
        images = []
        for j in range(n_img):
            image_id = f"img{a:05d}_{j:02d}"
            if a in planted and j == 0:
                uri = "text:" + content
            else:
                snippet = " ".join(words[i] for i in rng.integers(0, content_words, 5))
                uri = "text:" + snippet
            images.append({"image_id": image_id, "uri": uri})
        records.append({"article_id": article_id, "title": title, "pub_date": pub_date, "content": content, "images": images})
        if a in planted:
            qid = f"q{len(queries):04d}"
            queries.append(QueryCaption(qid, content))
            truth.append((qid, article_id, images[0]["image_id"]))
    return SyntheticData(build_corpus(records), queries, truth)


def write(data: SyntheticData, directory: str | Path, *, index_backend: str = "exact") -> dict[str, Path]:
    """Write corpus, queries, ground truth and a local-test config into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": d / "corpus.jsonl",
        "queries": d / "queries.jsonl",
        "truth": d / "truth.csv",
        "config": d / "config.yaml",
    }
    write_corpus(paths["corpus"], data.corpus)
    write_queries(paths["queries"], data.queries)
    with open(paths["truth"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query_id,article_id,image_id\n")
        for row in data.truth:
            fh.write(",".join(row) + "\n")
    config = {
        "corpus": "corpus.jsonl",
        "index_dir": "index",
        "index_backend": index_backend,
        "providers": {
            "text": {"endpoint": "local-test", "dim": 256},
            "image": {"endpoint": "local-test", "dim": 256},
            "rerank": {"endpoint": "local-test", "dim": 256},
        },
        "stage1_pool": 50,
        "stage": {"K": 10, "A": 3, "I": 10, "M": 3, "output_len": 10, "pad_token": "#"},
        "rrf_k": 60,
        "seed": 0,
    }
    # JSON is valid YAML and keeps the file diff-friendly
    paths["config"].write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return paths

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from event_retriever import synthetic
from event_retriever.corpus import build_corpus

GOLDEN = Path(__file__).parent / "golden"


def write_jsonl(path: Path, records) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def make_article(article_id, n_images=0, *, prefix=None, title="t", content="c"):
    prefix = prefix or article_id
    return {
        "article_id": article_id,
        "title": title,
        "pub_date": "October 14, 2023",
        "content": content,
        "images": [{"image_id": f"{prefix}_{j}", "uri": f"file:///{prefix}_{j}.jpg"} for j in range(n_images)],
    }


def corpus_with_counts(counts):
    """Articles a1..aN where article i owns counts[i] images named a{i}_{j}."""
    return build_corpus([make_article(f"a{i + 1}", n) for i, n in enumerate(counts)])


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


@pytest.fixture
def tiny_corpus_file(tmp_path):
    return write_jsonl(tmp_path / "corpus.jsonl", [make_article("a1", 1), make_article("a2", 2)])


@pytest.fixture(scope="session")
def synth_small():
    return synthetic.generate(200, 20, seed=3)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory, synth_small):
    d = tmp_path_factory.mktemp("synth")
    synthetic.write(synth_small, d)
    return d

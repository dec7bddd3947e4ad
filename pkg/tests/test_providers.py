import hashlib
import json
import subprocess
import sys
import threading
import time

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from event_retriever.corpus import Article, ImageRecord
from event_retriever.errors import ProviderConfigError, ProviderTransportError
from event_retriever.providers import (
    EmbeddingProvider,
    InFlightLimiter,
    LocalTestBackend,
    ProviderSpec,
    RetryPolicy,
    build_provider,
    embed_images,
    embed_texts,
    format_document,
    local_text_vector,
)

TEXT = ProviderSpec("text-embed", dim=64)
IMAGE = ProviderSpec("image-embed", dim=64)


def test_format_document_flood_example():
    art = Article(
        "a1",
        "Torrential Rain Causes Flooding in Hanoi",
        "October 14, 2023",
        "Several major roads in Hanoi were submerged...",
    )
    assert format_document(art) == (
        "Title: Torrential Rain Causes Flooding in Hanoi\n"
        "Date: October 14, 2023\n"
        "Content: Several major roads in Hanoi were submerged..."
    )


def test_format_document_empty_fields():
    assert format_document(Article("a", "", "", "")) == "Title: \nDate: \nContent: "


def test_format_document_truncation():
    art = Article("a", "x", "y", "z" * 1_000_000)
    assert len(format_document(art, 4096)) == 4096


def test_local_determinism_and_norm():
    v = embed_texts(TEXT, ["a", "a"])
    assert v.shape == (2, 64) and v.dtype == np.float32
    assert np.array_equal(v[0], v[1])
    assert abs(np.linalg.norm(v[0].astype(np.float64)) - 1.0) < 1e-4


def test_identical_inputs_cosine_one():
    a, b = embed_texts(TEXT, ["flooded road in Hanoi", "flooded road in Hanoi"]).astype(np.float64)
    assert a @ b == pytest.approx(1.0, abs=1e-6)


def test_independent_inputs_near_orthogonal():
    rng = np.random.default_rng(0)
    spec = ProviderSpec("text-embed", dim=256)
    texts = ["".join(chr(97 + c) for c in rng.integers(0, 26, 12)) for _ in range(100)]
    v = embed_texts(spec, texts).astype(np.float64)
    sims = v @ v.T
    off = sims[~np.eye(len(texts), dtype=bool)]
    assert np.max(np.abs(off)) < 0.5


def test_bitwise_identical_across_processes():
    code = (
        "import hashlib;from event_retriever.providers import local_text_vector;"
        "print(hashlib.sha256(local_text_vector('protest in Buenos Aires', 128, 7).tobytes()).hexdigest())"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout.strip()
    here = hashlib.sha256(local_text_vector("protest in Buenos Aires", 128, 7).tobytes()).hexdigest()
    assert out == here


def test_seed_changes_vectors():
    assert not np.array_equal(local_text_vector("x", 32, 0), local_text_vector("x", 32, 1))


def test_local_image_hashes_id():
    im = ImageRecord("img1", "a1", "file:///nope.jpg")
    v = embed_images(IMAGE, [im, im])
    assert np.array_equal(v[0], v[1])
    other = embed_images(IMAGE, [ImageRecord("img1", "a9", "file:///elsewhere.jpg")])
    assert np.array_equal(v[0], other[0])


def test_text_uri_reproduces_caption_vector():
    caption = "A flooded road after heavy rain in Hanoi."
    img = embed_images(IMAGE, [ImageRecord("i", "a", "text:" + caption)])[0]
    cap = embed_texts(TEXT, [caption])[0]
    assert np.array_equal(img, cap)


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        embed_texts(TEXT, [])
    with pytest.raises(ValueError):
        embed_texts(TEXT, [""])


def test_spec_validation():
    with pytest.raises(ProviderConfigError):
        ProviderSpec("text-embed", dim=0)
    with pytest.raises(ProviderConfigError):
        ProviderSpec("text-embed", max_batch=0)
    with pytest.raises(ProviderConfigError):
        ProviderSpec("video-embed")


class SpyBackend(LocalTestBackend):
    def __init__(self, dim):
        super().__init__(dim)
        self.batches = []

    def embed_images(self, images):
        self.batches.append([im.image_id for im in images])
        return super().embed_images(images)


def test_batching_call_count_and_order():
    spec = ProviderSpec("image-embed", dim=16, max_batch=3)
    spy = SpyBackend(16)
    provider = EmbeddingProvider(spec, spy)
    images = [ImageRecord(f"i{n}", "a", "") for n in range(7)]
    out = provider.embed_images(images)
    assert [len(b) for b in spy.batches] == [3, 3, 1]
    assert provider.calls == 3
    single = np.stack([LocalTestBackend(16).embed_images([im])[0] for im in images])
    assert np.array_equal(out, single)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.text(alphabet="abcdef ", min_size=1, max_size=10).filter(str.strip), min_size=1, max_size=20),
       st.integers(1, 6))
def test_order_preserved_any_batching(texts, max_batch):
    spec = ProviderSpec("text-embed", dim=8, max_batch=max_batch)
    batched = build_provider(spec).embed_texts(texts)
    one_by_one = np.stack([build_provider(spec).embed_texts([t])[0] for t in texts])
    assert np.array_equal(batched, one_by_one)


# -- remote ------------------------------------------------------------------

def _remote(spec, handler, **kw):
    kw.setdefault("sleep", lambda s: None)
    return build_provider(spec, transport=httpx.MockTransport(handler), **kw)


def test_remote_round_trip_and_renormalisation():
    seen = {}

    def handler(request):
        body = json.loads(request.content)
        seen["path"] = request.url.path
        seen["body"] = body
        return httpx.Response(200, json={"vectors": [[3.0, 4.0] for _ in body["texts"]]})

    spec = ProviderSpec("text-embed", endpoint="http://embed.test", dim=2)
    out = _remote(spec, handler).embed_texts(["x", "y"])
    assert seen["path"] == "/embed_text" and seen["body"] == {"texts": ["x", "y"]}
    np.testing.assert_allclose(out, [[0.6, 0.8], [0.6, 0.8]], atol=1e-7)


def test_remote_image_wire_format():
    seen = {}

    def handler(request):
        seen["path"] = request.url.path
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"vectors": [[1.0, 0.0]] * len(seen["body"]["uris"])})

    spec = ProviderSpec("image-embed", endpoint="http://gme.test", dim=2)
    _remote(spec, handler).embed_images([ImageRecord("i", "a", "s3://bucket/i.jpg")])
    assert seen == {"path": "/embed_image", "body": {"uris": ["s3://bucket/i.jpg"]}}


def test_remote_dimension_mismatch():
    def handler(request):
        return httpx.Response(200, json={"vectors": [[0.1] * 63]})

    spec = ProviderSpec("text-embed", endpoint="http://embed.test", dim=64)
    with pytest.raises(ProviderConfigError, match="dimension mismatch"):
        _remote(spec, handler).embed_texts(["x"])


def test_remote_timeout_exhausts_retries():
    calls = []
    sleeps = []

    def handler(request):
        calls.append(1)
        raise httpx.ReadTimeout("slow", request=request)

    spec = ProviderSpec("image-embed", endpoint="http://gme.test", dim=4)
    provider = _remote(spec, handler, retry=RetryPolicy(attempts=3, backoff=0.1), sleep=sleeps.append)
    with pytest.raises(ProviderTransportError) as info:
        provider.embed_images([ImageRecord("i", "a", "u")])
    assert info.value.attempts == 3
    assert info.value.retryable
    assert len(calls) == 3
    assert sleeps == [0.1, 0.2]


def test_remote_recovers_after_transient_503():
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        if state["n"] == 1:
            return httpx.Response(503)
        return httpx.Response(200, json={"vectors": [[1.0, 0.0]]})

    spec = ProviderSpec("text-embed", endpoint="http://embed.test", dim=2)
    assert _remote(spec, handler).embed_texts(["x"]).shape == (1, 2)
    assert state["n"] == 2


def test_remote_nan_rejected():
    def handler(request):
        return httpx.Response(200, content=b'{"vectors": [[NaN, 1.0]]}')

    spec = ProviderSpec("text-embed", endpoint="http://embed.test", dim=2)
    with pytest.raises(ProviderConfigError):
        _remote(spec, handler).embed_texts(["x"])


class SlowBackend(LocalTestBackend):
    def __init__(self, dim):
        super().__init__(dim)
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def embed_texts(self, texts):
        with self.lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.02)
        with self.lock:
            self.active -= 1
        return super().embed_texts(texts)


def test_in_flight_limit_respected():
    backend = SlowBackend(8)
    limiter = InFlightLimiter(2)
    provider = EmbeddingProvider(ProviderSpec("text-embed", dim=8, max_batch=1), backend, limiter)
    threads = [threading.Thread(target=provider.embed_texts, args=([f"t{i}", f"u{i}", f"v{i}"],)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert backend.peak == 2
    assert provider.calls == 12

import httpx
import pytest
from fastapi.testclient import TestClient

from event_retriever.config import PipelineConfig
from event_retriever.pipeline import Engine, run_retrieval
from event_retriever.providers import ProviderSpec, RetryPolicy
from event_retriever.service import create_app


@pytest.fixture(scope="module")
def engine(synth_dir):
    return Engine.from_config(PipelineConfig.load(synth_dir / "config.yaml", env={}))


@pytest.fixture(scope="module")
def client(engine):
    return TestClient(create_app(engine))


def test_retrieve_matches_batch_rows(client, engine, synth_small):
    table = run_retrieval(engine.config, synth_small.queries, engine=engine)
    for q in synth_small.queries:
        resp = client.post("/retrieve", json={"caption": q.caption, "query_id": q.query_id})
        assert resp.status_code == 200
        body = resp.json()
        assert body["query_id"] == q.query_id
        assert body["images"] == table.row(q.query_id)


def test_retrieve_without_query_id(client):
    resp = client.post("/retrieve", json={"caption": "anything at all"})
    assert resp.status_code == 200
    assert len(resp.json()["images"]) == 10


@pytest.mark.parametrize("caption", ["", "   "])
def test_empty_caption(client, caption):
    assert client.post("/retrieve", json={"caption": caption}).status_code == 400


def test_health(client, engine):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["index"]["count"] == len(engine.index)
    assert set(body["providers"]) == {"text", "image", "image_text", "rerank"}


def test_unreachable_provider_reported_degraded(engine):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    cfg = engine.config.with_overrides(
        rerank=ProviderSpec("rerank", endpoint="http://down.test"), retry=RetryPolicy(attempts=1)
    )
    eng = Engine.from_config(cfg, corpus=engine.corpus, index=engine.index, transport=httpx.MockTransport(handler))
    client = TestClient(create_app(eng))
    body = client.get("/health").json()
    assert body["status"] == "degraded"
    assert body["providers"]["rerank"] == "unreachable"
    # retrieval still answers through the dense-order fallback
    assert client.post("/retrieve", json={"caption": "x y z"}).status_code == 200


def test_fail_mode_maps_to_502(engine):
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    cfg = engine.config.with_overrides(
        rerank=ProviderSpec("rerank", endpoint="http://down.test"),
        retry=RetryPolicy(attempts=1),
        on_provider_failure="fail",
    )
    eng = Engine.from_config(cfg, corpus=engine.corpus, index=engine.index, transport=httpx.MockTransport(handler))
    assert TestClient(create_app(eng)).post("/retrieve", json={"caption": "x y z"}).status_code == 502

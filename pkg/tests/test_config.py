import pytest

from event_retriever.config import PipelineConfig
from event_retriever.errors import ConfigError


def test_defaults(tiny_corpus_file):
    cfg = PipelineConfig.from_dict({"corpus": str(tiny_corpus_file)}, env={})
    assert cfg.rrf_k == 60.0
    assert cfg.stage.K == 10 and cfg.stage.A == 3 and cfg.stage.I == 10 and cfg.stage.M == 3
    assert cfg.stage.output_len == 10 and cfg.stage.pad_token == "#"
    assert cfg.stage1_pool == 50
    assert cfg.on_provider_failure == "fallback"


def test_yaml_load_relative_paths(tmp_path, tiny_corpus_file):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "corpus: corpus.jsonl\n"
        "index_dir: idx\n"
        "providers:\n"
        "  text: {endpoint: local-test, dim: 64}\n"
        "  rerank: {endpoint: 'http://rr:9000', max_batch: 8}\n"
        "stage: {K: 20, A: 2}\n"
        "rrf_k: 30\n"
    )
    cfg = PipelineConfig.load(path, env={})
    assert cfg.corpus == tiny_corpus_file
    assert cfg.index_dir == tmp_path / "idx"
    assert cfg.text.dim == 64
    assert cfg.rerank.endpoint == "http://rr:9000" and cfg.rerank.max_batch == 8
    assert cfg.stage.K == 20 and cfg.stage.M == 3
    assert cfg.rrf_k == 30.0


def test_env_overrides_endpoints_only(tiny_corpus_file):
    env = {"EVENTRET_RERANK_ENDPOINT": "http://other:1", "EVENTRET_IMAGE_ENDPOINT": "http://gme:2", "EVENTRET_RRF_K": "5"}
    cfg = PipelineConfig.from_dict({"corpus": str(tiny_corpus_file)}, env=env)
    assert cfg.rerank.endpoint == "http://other:1"
    assert cfg.image.endpoint == "http://gme:2"
    assert cfg.caption_image_spec.endpoint == "http://gme:2"
    assert cfg.rrf_k == 60.0


def test_image_text_explicit(tiny_corpus_file):
    cfg = PipelineConfig.from_dict(
        {"corpus": str(tiny_corpus_file), "providers": {"image_text": {"endpoint": "http://cap:3", "dim": 256}}}, env={}
    )
    assert cfg.caption_image_spec.endpoint == "http://cap:3"


@pytest.mark.parametrize(
    "raw",
    [
        {"colour": "red"},
        {"providers": {"audio": {}}},
        {"providers": {"text": {"bogus": 1}}},
        {"stage1_pool": 5},
        {"stage": {"K": 3, "A": 5}},
        {"on_provider_failure": "ignore"},
        {"index_backend": "hnsw"},
        {"rrf_k": 0},
        {"workers": 0},
    ],
)
def test_invalid(raw, tiny_corpus_file):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"corpus": str(tiny_corpus_file), **raw}, env={})


def test_missing_corpus(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        PipelineConfig.from_dict({"corpus": str(tmp_path / "nope.jsonl")}, env={})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({}, env={})


def test_unreadable_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        PipelineConfig.load(path)

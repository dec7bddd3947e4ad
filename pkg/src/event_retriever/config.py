"""Pipeline configuration: one YAML (or JSON) document.

Example::

    corpus: data/corpus.jsonl
    index_dir: data/index
    index_backend: ann
    providers:
      text:   {endpoint: local-test, dim: 256, max_batch: 32, max_chars: 8192}
      image:  {endpoint: http://gme:8001, dim: 1536}
      rerank: {endpoint: http://reranker:8002, max_batch: 16}
    stage1_pool: 50
    stage: {K: 10, A: 3, I: 10, M: 3, output_len: 10, pad_token: "#"}
    rrf_k: 60
    max_in_flight: 4
    workers: 1
    retry: {attempts: 3, backoff: 0.25, max_backoff: 4.0}
    on_provider_failure: fallback     # or: fail
    seed: 0

Only provider endpoints may be overridden from the environment, via
``EVENTRET_TEXT_ENDPOINT``, ``EVENTRET_IMAGE_ENDPOINT``,
``EVENTRET_IMAGE_TEXT_ENDPOINT`` and ``EVENTRET_RERANK_ENDPOINT``.
"""

from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .fusion import DEFAULT_RRF_K
from .images import StageConfig
from .index import AnnParams
from .providers import ProviderSpec, RetryPolicy
from .rerank import DEFAULT_INSTRUCT

ENV_PREFIX = "EVENTRET_"
FAILURE_MODES = ("fallback", "fail")
_PROVIDER_KINDS = {"text": "text-embed", "image": "image-embed", "image_text": "text-embed", "rerank": "rerank"}


@dataclass(frozen=True)
class PipelineConfig:
    corpus: Path
    index_dir: Path | None = None
    index_backend: str = "exact"
    ann: AnnParams = field(default_factory=AnnParams)
    text: ProviderSpec = field(default_factory=lambda: ProviderSpec("text-embed"))
    image: ProviderSpec = field(default_factory=lambda: ProviderSpec("image-embed"))
    # caption side of the cross-modal model; defaults to the image endpoint
    image_text: ProviderSpec | None = None
    rerank: ProviderSpec = field(default_factory=lambda: ProviderSpec("rerank"))
    stage1_pool: int = 50
    stage: StageConfig = field(default_factory=StageConfig)
    rrf_k: float = DEFAULT_RRF_K
    max_in_flight: int = 4
    workers: int = 1
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    on_provider_failure: str = "fallback"
    instruct: str = DEFAULT_INSTRUCT
    seed: int = 0

    def __post_init__(self) -> None:
        if self.stage1_pool < self.stage.K:
            raise ConfigError(f"stage1_pool ({self.stage1_pool}) must be >= K ({self.stage.K})")
        for name in ("stage1_pool", "max_in_flight", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.retry.attempts < 1:
            raise ConfigError("retry.attempts must be positive")
        if not self.rrf_k > 0:
            raise ConfigError("rrf_k must be positive")
        if self.on_provider_failure not in FAILURE_MODES:
            raise ConfigError(f"on_provider_failure must be one of {FAILURE_MODES}")
        if self.index_backend not in ("exact", "ann"):
            raise ConfigError("index_backend must be 'exact' or 'ann'")

    @property
    def caption_image_spec(self) -> ProviderSpec:
        if self.image_text is not None:
            return self.image_text
        return ProviderSpec(
            "text-embed",
            endpoint=self.image.endpoint,
            dim=self.image.dim,
            max_batch=self.image.max_batch,
            max_chars=self.image.max_chars,
            timeout=self.image.timeout,
        )

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], *, base_dir: Path | None = None, env: Mapping[str, str] | None = None) -> PipelineConfig:
        raw = dict(raw)
        env = os.environ if env is None else env
        base_dir = base_dir or Path.cwd()
        known = {f.name for f in fields(cls)} | {"providers"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "corpus" not in raw:
            raise ConfigError("config needs a 'corpus' path")
        kwargs: dict[str, Any] = {}

        def resolve(p: str) -> Path:
            path = Path(p)
            return path if path.is_absolute() else base_dir / path

        kwargs["corpus"] = resolve(raw.pop("corpus"))
        if not kwargs["corpus"].exists():
            raise ConfigError(f"corpus file {kwargs['corpus']} does not exist")
        if raw.get("index_dir") is not None:
            kwargs["index_dir"] = resolve(raw.pop("index_dir"))
        providers = dict(raw.pop("providers", None) or {})
        bad = set(providers) - set(_PROVIDER_KINDS)
        if bad:
            raise ConfigError(f"unknown provider roles: {sorted(bad)}")
        for role, kind in _PROVIDER_KINDS.items():
            spec = dict(providers.get(role) or {})
            override = env.get(f"{ENV_PREFIX}{role.upper()}_ENDPOINT")
            if override:
                spec["endpoint"] = override
            if role == "image_text" and not spec:
                continue
            try:
                kwargs[role] = ProviderSpec(kind, **spec)
            except TypeError as exc:
                raise ConfigError(f"providers.{role}: {exc}") from None
        try:
            if "stage" in raw:
                kwargs["stage"] = StageConfig(**raw.pop("stage"))
            if "ann" in raw:
                kwargs["ann"] = AnnParams(**raw.pop("ann"))
            if "retry" in raw:
                kwargs["retry"] = RetryPolicy(**raw.pop("retry"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        kwargs.update(raw)
        if "rrf_k" in kwargs:
            kwargs["rrf_k"] = float(kwargs["rrf_k"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path, *, env: Mapping[str, str] | None = None) -> PipelineConfig:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, Mapping):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(raw, base_dir=path.parent, env=env)

    def with_overrides(self, **changes: Any) -> PipelineConfig:
        return replace(self, **changes)

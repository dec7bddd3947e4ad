"""Exception hierarchy shared by every stage of the engine."""

from __future__ import annotations


class RetrieverError(Exception):
    """Base class for all engine errors."""


class CorpusError(RetrieverError):
    """Invalid corpus or query file."""

    def __init__(self, message: str, *, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateIdError(CorpusError):
    def __init__(self, kind: str, item_id: str, *, line: int | None = None):
        super().__init__(f"duplicate {kind} id {item_id!r}", line=line)
        self.kind = kind
        self.item_id = item_id


class ProviderError(RetrieverError):
    """Base for failures talking to an embedding or rerank provider."""


class ProviderTransportError(ProviderError):
    """Transport failure that survived every retry. Safe to retry later."""

    retryable = True

    def __init__(self, message: str, *, attempts: int):
        super().__init__(f"{message} (after {attempts} attempt(s))")
        self.attempts = attempts


class ProviderConfigError(ProviderError):
    """Fatal misconfiguration, e.g. the provider answers with the wrong dimension."""

    retryable = False


class DimensionMismatchError(RetrieverError, ValueError):
    pass


class RerankError(RetrieverError):
    def __init__(self, query_id: str, cause: Exception):
        super().__init__(f"rerank failed for query {query_id!r}: {cause}")
        self.query_id = query_id
        self.cause = cause


class StageError(RetrieverError):
    """Per-query provider failure inside Stage 3."""

    def __init__(self, query_id: str, cause: Exception):
        super().__init__(f"image stage failed for query {query_id!r}: {cause}")
        self.query_id = query_id
        self.cause = cause


class SubmissionError(RetrieverError, ValueError):
    pass


class FusionError(RetrieverError, ValueError):
    def __init__(self, message: str, *, query_id: str | None = None):
        super().__init__(message)
        self.query_id = query_id


class MetricsError(RetrieverError, ValueError):
    pass


class ConfigError(RetrieverError, ValueError):
    pass

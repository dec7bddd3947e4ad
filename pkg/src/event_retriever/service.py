"""HTTP front end for single-caption retrieval.

``POST /retrieve {"caption": str, "query_id": str?}`` returns the image row
plus per-image provenance; ``GET /health`` reports index and provider state.
"""

from __future__ import annotations

import logging
import uuid

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .corpus import QueryCaption
from .errors import RetrieverError
from .pipeline import Engine

logger = logging.getLogger(__name__)


class RetrieveRequest(BaseModel):
    caption: str
    query_id: str | None = None


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="event-retriever")
    pad = engine.config.stage.pad_token

    @app.post("/retrieve")
    def retrieve(req: RetrieveRequest) -> dict:
        if not req.caption.strip():
            raise HTTPException(status_code=400, detail="caption must be non-empty")
        qid = req.query_id or f"req-{uuid.uuid4().hex[:12]}"
        try:
            result = engine.retrieve(QueryCaption(qid, req.caption))
        except RetrieverError as exc:
            logger.error("retrieve %s failed: %s", qid, exc)
            raise HTTPException(status_code=502, detail=str(exc)) from None
        return result.to_json(pad)

    @app.get("/health")
    def health() -> dict:
        return engine.health()

    return app


def serve(engine: Engine, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(create_app(engine), host=host, port=port, log_level="info")

"""Stage 4: Reciprocal Rank Fusion of several submission runs.

Each image gets ``sum(1 / (rrf_k + rank))`` over the runs that list it
(ranks are 1-based, pad tokens ignored).
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .errors import FusionError
from .submission import DEFAULT_PAD, SubmissionTable

DEFAULT_RRF_K = 60.0


@dataclass(frozen=True)
class RunSet:
    runs: tuple[Mapping[str, Sequence[str]], ...]
    rrf_k: float = DEFAULT_RRF_K

    def __post_init__(self) -> None:
        if not self.rrf_k > 0:
            raise FusionError("rrf_k must be positive")
        if not self.runs:
            raise FusionError("need at least one run")
        reference = set(self.runs[0])
        for n, run in enumerate(self.runs[1:], start=2):
            diff = reference.symmetric_difference(run)
            if diff:
                qid = sorted(diff)[0]
                raise FusionError(f"run {n} disagrees with run 1 on query {qid!r}", query_id=qid)

    @classmethod
    def from_tables(cls, tables: Sequence[SubmissionTable], rrf_k: float = DEFAULT_RRF_K) -> RunSet:
        return cls(tuple({qid: t.ranked(qid) for qid in t} for t in tables), rrf_k)


def rrf_scores(runset: RunSet, query_id: str, pad_token: str = DEFAULT_PAD) -> dict[str, float]:
    contributions: dict[str, list[float]] = {}
    for n, run in enumerate(runset.runs, start=1):
        if query_id not in run:
            raise FusionError(f"query {query_id!r} missing from run {n}", query_id=query_id)
        ids = [i for i in run[query_id] if i != pad_token]
        if len(set(ids)) != len(ids):
            raise FusionError(f"run {n} lists an id twice for query {query_id!r}", query_id=query_id)
        for rank, item in enumerate(ids, start=1):
            contributions.setdefault(item, []).append(1.0 / (runset.rrf_k + rank))
    # fsum is exactly rounded, so the total does not depend on run order
    return {item: math.fsum(parts) for item, parts in contributions.items()}


def rrf_fuse(runset: RunSet, query_id: str, output_len: int = 10, pad_token: str = DEFAULT_PAD) -> list[str]:
    scores = rrf_scores(runset, query_id, pad_token)
    fused = sorted(scores, key=lambda i: (-scores[i], i))[:output_len]
    return fused + [pad_token] * (output_len - len(fused))


def fuse_submissions(
    runs: Sequence[SubmissionTable],
    rrf_k: float = DEFAULT_RRF_K,
    output_len: int = 10,
) -> SubmissionTable:
    if not runs:
        raise FusionError("need at least one run")
    pad = runs[0].pad_token
    runset = RunSet.from_tables(runs, rrf_k)
    out = SubmissionTable(output_len=output_len, pad_token=pad)
    for qid in runs[0]:
        out.add(qid, rrf_fuse(runset, qid, output_len, pad))
    return out

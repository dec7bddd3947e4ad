"""Cosine top-k search over unit vectors.

Two backends share one on-disk layout and one query contract:

* ``exact``: brute-force dot products. Slow at scale, always correct; the
  oracle the approximate backend is measured against.
* ``ann``: a navigable proximity graph. Each node keeps ``degree`` neighbours
  chosen from its ``build_beam`` nearest by a diversity-preserving prune, plus
  reverse edges. Queries run a best-first beam search of width
  ``search_beam`` from the medoid.

Index directory::

    manifest.json   dim, count, backend, build parameters
    vectors.f32le   row-major little-endian float32, row i <-> line i of ids.txt
    ids.txt         one item id per line
    graph.i32le     (ann only) padded adjacency, -1 = empty slot
"""

from __future__ import annotations

import heapq
import json
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DimensionMismatchError

logger = logging.getLogger(__name__)

BACKENDS = ("exact", "ann")
NORM_TOLERANCE = 1e-3


@dataclass(frozen=True)
class RankedList:
    """Ordered, duplicate-free ``(item_id, score)`` pairs for one query."""

    query_id: str
    entries: tuple[tuple[str, float], ...] = ()

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def head(self, k: int) -> RankedList:
        return RankedList(self.query_id, self.entries[:k])

    def to_json(self, stage: str) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "stage": stage,
            "items": [{"id": i, "score": s} for i, s in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> RankedList:
        return cls(obj["query_id"], tuple((it["id"], float(it["score"])) for it in obj["items"]))


@dataclass(frozen=True)
class AnnParams:
    degree: int = 32
    build_beam: int = 96
    alpha: float = 1.2
    search_beam: int = 128

    def __post_init__(self) -> None:
        if self.degree < 1 or self.build_beam < self.degree or self.search_beam < 1:
            raise ValueError(f"invalid ANN parameters {self}")


def _sort_ranked(ids: np.ndarray, scores: np.ndarray, id_rank: np.ndarray, k: int) -> list[int]:
    # score descending, then ascending item id
    order = np.lexsort((id_rank[ids], -scores))
    return [int(ids[j]) for j in order[:k]]


@dataclass
class Index:
    """Immutable once built; queries never mutate it and are thread-safe."""

    ids: list[str]
    vectors: np.ndarray
    backend: str = "exact"
    params: AnnParams | None = None
    graph: np.ndarray | None = None
    entry_point: int = 0
    build_seconds: float = 0.0
    _id_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[order] = np.arange(len(self.ids))
        self._id_rank = rank
        self.vectors.setflags(write=False)
        if self.graph is not None:
            self.graph.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def metadata(self) -> dict[str, Any]:
        meta: dict[str, Any] = {"dim": self.dim, "count": len(self), "backend": self.backend}
        if self.params is not None:
            meta["params"] = {
                "degree": self.params.degree,
                "build_beam": self.params.build_beam,
                "alpha": self.params.alpha,
                "search_beam": self.params.search_beam,
            }
            meta["entry_point"] = self.entry_point
        return meta

    def top_k(self, query: np.ndarray, k: int, *, query_id: str = "", search_beam: int | None = None) -> RankedList:
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64).ravel()
        if len(self) == 0:
            return RankedList(query_id)
        if q.shape[0] != self.dim:
            raise DimensionMismatchError(f"query dim {q.shape[0]} != index dim {self.dim}")
        if self.backend == "exact" or self.graph is None:
            rows, scores = self._exact(q, k)
        else:
            rows, scores = self._beam_search(q, k, search_beam or self.params.search_beam)
            if len(rows) < min(k, len(self)):
                # search stayed inside a disconnected component
                rows, scores = self._exact(q, k)
        return RankedList(query_id, tuple((self.ids[r], float(s)) for r, s in zip(rows, scores)))

    def _exact(self, q: np.ndarray, k: int) -> tuple[list[int], list[float]]:
        sims = self.vectors.astype(np.float64) @ q
        n = sims.shape[0]
        if k < n:
            kth = np.partition(sims, n - k)[n - k]
            cand = np.flatnonzero(sims >= kth)
        else:
            cand = np.arange(n)
        rows = _sort_ranked(cand, sims[cand], self._id_rank, k)
        return rows, [float(sims[r]) for r in rows]

    def _beam_search(self, q: np.ndarray, k: int, beam: int) -> tuple[list[int], list[float]]:
        beam = max(beam, k)
        vecs = self.vectors
        graph = self.graph
        visited = np.zeros(len(self), dtype=bool)
        start = self.entry_point
        visited[start] = True
        s0 = float(vecs[start].astype(np.float64) @ q)
        frontier = [(-s0, start)]  # max-heap on similarity
        best = [(s0, start)]  # min-heap holding the current beam
        while frontier:
            neg_s, node = heapq.heappop(frontier)
            if len(best) >= beam and -neg_s < best[0][0]:
                break
            nbrs = graph[node]
            nbrs = nbrs[nbrs >= 0]
            nbrs = nbrs[~visited[nbrs]]
            if nbrs.size == 0:
                continue
            visited[nbrs] = True
            sims = vecs[nbrs].astype(np.float64) @ q
            for s, nb in zip(sims.tolist(), nbrs.tolist()):
                if len(best) < beam:
                    heapq.heappush(best, (s, nb))
                    heapq.heappush(frontier, (-s, nb))
                elif s > best[0][0]:
                    heapq.heapreplace(best, (s, nb))
                    heapq.heappush(frontier, (-s, nb))
        rows = np.fromiter((n for _, n in best), dtype=np.int64, count=len(best))
        scores = np.fromiter((s for s, _ in best), dtype=np.float64, count=len(best))
        order = _sort_ranked(rows, scores, self._id_rank, k)
        lookup = dict(zip(rows.tolist(), scores.tolist()))
        return order, [lookup[r] for r in order]

    # -- persistence --------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for item_id in self.ids:
            if "\n" in item_id or "\r" in item_id:
                raise ValueError(f"item id {item_id!r} contains a line break")
        np.ascontiguousarray(self.vectors, dtype="<f4").tofile(d / "vectors.f32le")
        (d / "ids.txt").write_text("".join(i + "\n" for i in self.ids), encoding="utf-8")
        if self.graph is not None:
            np.ascontiguousarray(self.graph, dtype="<i4").tofile(d / "graph.i32le")
        meta = self.metadata()
        if self.graph is not None:
            meta["graph_width"] = int(self.graph.shape[1])
        (d / "manifest.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> Index:
        d = Path(directory)
        meta = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        dim, count = int(meta["dim"]), int(meta["count"])
        ids = (d / "ids.txt").read_text(encoding="utf-8").split("\n")[:count]
        vectors = np.fromfile(d / "vectors.f32le", dtype="<f4").astype(np.float32)
        if vectors.size != dim * count or len(ids) != count:
            raise ValueError(f"index at {d} is truncated or inconsistent with its manifest")
        vectors = vectors.reshape(count, dim)
        backend = meta["backend"]
        if backend == "ann":
            width = int(meta["graph_width"])
            graph = np.fromfile(d / "graph.i32le", dtype="<i4").astype(np.int64).reshape(count, width)
            return cls(ids, vectors, "ann", AnnParams(**meta["params"]), graph, int(meta["entry_point"]))
        return cls(ids, vectors, backend)


def top_k(index: Index, query: np.ndarray, k: int, **kwargs: Any) -> RankedList:
    return index.top_k(query, k, **kwargs)


def _validate(ids: Sequence[str], vectors: np.ndarray) -> np.ndarray:
    if len(set(ids)) != len(ids):
        seen: set[str] = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise ValueError(f"duplicate item id {dup!r}")
    arr = np.asarray(vectors, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] != len(ids):
        raise ValueError("need one vector per id")
    if len(ids) and not np.all(np.isfinite(arr)):
        raise ValueError("non-finite vector components")
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
        raise ValueError("index vectors must be L2-normalised")
    return arr


def build_index(
    entries: Sequence[tuple[str, Sequence[float]]] | None = None,
    backend: str = "exact",
    *,
    ids: Sequence[str] | None = None,
    vectors: np.ndarray | None = None,
    params: AnnParams | None = None,
    block: int = 1024,
) -> Index:
    """Build an index from ``(item_id, vector)`` pairs or parallel ``ids``/``vectors``.

    Raises:
        DimensionMismatchError: if vectors disagree on dimension.
        ValueError: duplicate ids, unnormalised vectors, unknown backend.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if entries is not None:
        ids = [e[0] for e in entries]
        dims = {len(e[1]) for e in entries}
        if len(dims) > 1:
            raise DimensionMismatchError(f"mixed vector dimensions {sorted(dims)}")
        vectors = np.array([e[1] for e in entries], dtype=np.float32) if entries else np.zeros((0, 0), np.float32)
    ids = list(ids or [])
    if vectors is None:
        vectors = np.zeros((0, 0), np.float32)
    arr = _validate(ids, vectors)
    t0 = time.perf_counter()
    if backend == "exact" or len(ids) == 0:
        idx = Index(ids, arr, backend)
    else:
        params = params or AnnParams()
        graph, entry = _build_graph(arr, params, block)
        idx = Index(ids, arr, "ann", params, graph, entry)
    idx.build_seconds = time.perf_counter() - t0
    logger.info("built %s index: %d x %d in %.2fs", backend, len(ids), arr.shape[1] if arr.size else 0, idx.build_seconds)
    return idx


def _prune(node_vecs: np.ndarray, base_sim: np.ndarray, degree: int, alpha: float) -> list[int]:
    """Diversity prune over candidates sorted by similarity to the node.

    A candidate is dropped when some already-kept neighbour is closer to it,
    by factor ``alpha``, than the node itself. Slots left open are refilled
    with the nearest dropped candidates.
    """
    m = base_sim.shape[0]
    dist_p = np.sqrt(np.maximum(2.0 - 2.0 * base_sim, 0.0))
    pair = node_vecs @ node_vecs.T
    dist_pair = np.sqrt(np.maximum(2.0 - 2.0 * pair, 0.0))
    alive = np.ones(m, dtype=bool)
    kept: list[int] = []
    for c in range(m):
        if not alive[c]:
            continue
        kept.append(c)
        if len(kept) == degree:
            break
        alive &= alpha * dist_pair[c] > dist_p
        alive[c] = False
    if len(kept) < degree:
        chosen = set(kept)
        kept.extend(c for c in range(m) if c not in chosen)
        kept = kept[:degree]
    return kept


def _build_graph(vectors: np.ndarray, params: AnnParams, block: int) -> tuple[np.ndarray, int]:
    n = vectors.shape[0]
    v64 = vectors.astype(np.float64)
    beam = min(params.build_beam, n - 1)
    degree = min(params.degree, n - 1)
    forward = np.full((n, max(degree, 1)), -1, dtype=np.int64)
    if n > 1:
        for lo in range(0, n, block):
            hi = min(n, lo + block)
            sims = v64[lo:hi] @ v64.T
            sims[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
            cand = np.argpartition(-sims, beam - 1, axis=1)[:, :beam]
            for r in range(hi - lo):
                c = cand[r]
                s = sims[r, c]
                order = np.argsort(-s, kind="stable")
                c, s = c[order], s[order]
                kept = _prune(v64[c], s, degree, params.alpha)
                forward[lo + r, : len(kept)] = c[kept]
    # add reverse edges, capping each node at 2 * degree by similarity
    width = 2 * max(degree, 1)
    adjacency: list[set[int]] = [set(row[row >= 0].tolist()) for row in forward]
    for u in range(n):
        for w in forward[u]:
            if w >= 0:
                adjacency[int(w)].add(u)
    graph = np.full((n, width), -1, dtype=np.int64)
    for u, nbrs in enumerate(adjacency):
        nb = np.fromiter(nbrs, dtype=np.int64, count=len(nbrs))
        if nb.size > width:
            s = v64[nb] @ v64[u]
            nb = nb[np.argsort(-s, kind="stable")[:width]]
        graph[u, : nb.size] = np.sort(nb)
    centroid = v64.mean(axis=0)
    entry = int(np.argmax(v64 @ centroid)) if n else 0
    return graph, entry

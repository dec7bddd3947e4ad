"""Retrieval metrics for single-relevant-item ground truth.

Ranks count non-pad entries only. A relevant id missing from a row scores 0
for reciprocal rank and average precision.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np

from .errors import MetricsError
from .submission import DEFAULT_PAD, SubmissionTable

METRIC_NAMES = ("mAP", "MRR", "R@1", "R@5", "R@10")

# Published leaderboard rows: (mAP, MRR, R@1, R@5, R@10, overall).
PUBLISHED_ROWS: tuple[tuple[float, ...], ...] = (
    (0.559, 0.559, 0.454, 0.702, 0.760, 0.5727),
    (0.539, 0.539, 0.448, 0.666, 0.704, 0.5516),
    (0.525, 0.525, 0.426, 0.657, 0.720, 0.5378),
    (0.507, 0.507, 0.410, 0.639, 0.696, 0.5200),
    (0.489, 0.489, 0.380, 0.643, 0.697, 0.5005),
    (0.489, 0.489, 0.380, 0.643, 0.697, 0.5005),
    (0.420, 0.420, 0.331, 0.533, 0.610, 0.4311),
    (0.563, 0.563, 0.469, 0.690, 0.744, 0.5766),
    (0.558, 0.558, 0.456, 0.698, 0.762, 0.5722),
    (0.552, 0.552, 0.445, 0.675, 0.733, 0.5712),
    (0.546, 0.546, 0.438, 0.669, 0.728, 0.5672),
    (0.549, 0.549, 0.449, 0.695, 0.738, 0.5635),
)


@dataclass(frozen=True)
class GroundTruth:
    """One relevant article and one relevant image per query."""

    articles: Mapping[str, str]
    images: Mapping[str, str]

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[str, str, str]]) -> GroundTruth:
        articles: dict[str, str] = {}
        images: dict[str, str] = {}
        for qid, aid, iid in rows:
            if qid in articles:
                raise MetricsError(f"query {qid!r} has more than one ground-truth row")
            articles[qid] = aid
            images[qid] = iid
        return cls(articles, images)

    @classmethod
    def read(cls, path: str | Path) -> GroundTruth:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and rows[0][0] == "query_id":
            rows = rows[1:]
        for r in rows:
            if len(r) != 3:
                raise MetricsError(f"ground-truth row {r!r} must be query_id,article_id,image_id")
        return cls.from_rows([tuple(r) for r in rows])

    def relevant(self, task: str) -> Mapping[str, str]:
        if task == "image":
            return self.images
        if task == "article":
            return self.articles
        raise MetricsError(f"unknown task {task!r}")


Rankings = Union[SubmissionTable, Mapping[str, Sequence[str]]]
Truth = Union[GroundTruth, Mapping[str, str]]


def _ranked_rows(submission: Rankings, pad_token: str = DEFAULT_PAD) -> dict[str, list[str]]:
    if isinstance(submission, SubmissionTable):
        return {qid: submission.ranked(qid) for qid in submission}
    return {qid: [i for i in ids if i != pad_token] for qid, ids in submission.items()}


def _relevant_ranks(submission: Rankings, truth: Truth, task: str) -> list[int | None]:
    relevant = truth.relevant(task) if isinstance(truth, GroundTruth) else truth
    ranks: list[int | None] = []
    for qid, ids in _ranked_rows(submission).items():
        if qid not in relevant:
            raise MetricsError(f"query {qid!r} has no ground truth")
        target = relevant[qid]
        ranks.append(ids.index(target) + 1 if target in ids else None)
    return ranks


def recall_at_k(submission: Rankings, truth: Truth, k: int, *, task: str = "image") -> float:
    if k < 1:
        raise MetricsError("k must be >= 1")
    ranks = _relevant_ranks(submission, truth, task)
    if not ranks:
        return 0.0
    return sum(1 for r in ranks if r is not None and r <= k) / len(ranks)


def mrr(submission: Rankings, truth: Truth, *, task: str = "image") -> float:
    ranks = _relevant_ranks(submission, truth, task)
    if not ranks:
        return 0.0
    return math.fsum(1.0 / r for r in ranks if r is not None) / len(ranks)


def average_precision(ranked: Sequence[str], relevant: set[str]) -> float:
    """Textbook AP: mean precision at each relevant hit, over all relevant items."""
    if not relevant:
        return 0.0
    hits = 0
    total = []
    for pos, item in enumerate(ranked, start=1):
        if item in relevant:
            hits += 1
            total.append(hits / pos)
    return math.fsum(total) / len(relevant)


def map_single_relevant(submission: Rankings, truth: Truth, *, task: str = "image") -> float:
    relevant = truth.relevant(task) if isinstance(truth, GroundTruth) else truth
    rows = _ranked_rows(submission)
    for qid in rows:
        if qid not in relevant:
            raise MetricsError(f"query {qid!r} has no ground truth")
    if not rows:
        return 0.0
    # AP of a lone relevant item is exactly 1/rank; fsum makes the mean match mrr bit for bit
    return math.fsum(average_precision(ids, {relevant[q]}) for q, ids in rows.items()) / len(rows)


@dataclass(frozen=True)
class MetricReport:
    recall_at: dict[int, float] = field(default_factory=dict)
    map_score: float = 0.0
    mrr: float = 0.0
    overall: float = 0.0

    def as_metrics(self) -> dict[str, float]:
        out = {"mAP": self.map_score, "MRR": self.mrr}
        out.update({f"R@{k}": v for k, v in sorted(self.recall_at.items())})
        return out

    def to_json(self) -> str:
        return json.dumps({**self.as_metrics(), "overall": self.overall}, indent=2, sort_keys=False)

    def table(self) -> str:
        metrics = {**self.as_metrics(), "Overall": self.overall}
        header = " | ".join(f"{k:>7}" for k in metrics)
        values = " | ".join(f"{v:>7.4f}" for v in metrics.values())
        return f"{header}\n{values}"


def overall_score(report: MetricReport | Mapping[str, float], weights: Mapping[str, float]) -> float:
    """Weighted sum of named metrics (``mAP``, ``MRR``, ``R@k``)."""
    metrics = report.as_metrics() if isinstance(report, MetricReport) else dict(report)
    if any(w < 0 for w in weights.values()):
        raise MetricsError("weights must be non-negative")
    if abs(math.fsum(weights.values()) - 1.0) > 1e-9:
        raise MetricsError("weights must sum to 1")
    for name in weights:
        if name not in metrics:
            raise MetricsError(f"unknown metric {name!r}")
    return math.fsum(weights[n] * metrics[n] for n in weights)


@dataclass(frozen=True)
class WeightFit:
    weights: dict[str, float]
    residuals: tuple[float, ...]

    @property
    def rmse(self) -> float:
        return math.sqrt(math.fsum(r * r for r in self.residuals) / len(self.residuals))

    @property
    def max_abs_error(self) -> float:
        return max(abs(r) for r in self.residuals)


def fit_overall_weights(rows: Sequence[Sequence[float]] = PUBLISHED_ROWS) -> WeightFit:
    """Least-squares weights (non-negative, summing to 1) mapping metrics to overall.

    ``rows`` are ``(mAP, MRR, R@1, R@5, R@10, overall)``. mAP and MRR columns
    coincide in single-relevant data, so they are fitted as one feature and
    the weight is split evenly. The constrained problem is solved exactly by
    enumerating active sets.
    """
    data = np.asarray(rows, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 6:
        raise MetricsError("rows must have 6 columns: mAP, MRR, R@1, R@5, R@10, overall")
    merged = np.column_stack([(data[:, 0] + data[:, 1]) / 2, data[:, 2:5]])
    target = data[:, 5]
    p = merged.shape[1]
    best: tuple[float, np.ndarray] | None = None
    for size in range(1, p + 1):
        for support in itertools.combinations(range(p), size):
            xs = merged[:, support]
            # KKT system for min |xs w - y|^2 s.t. sum(w) = 1
            kkt = np.zeros((size + 1, size + 1))
            kkt[:size, :size] = 2 * xs.T @ xs
            kkt[:size, size] = 1.0
            kkt[size, :size] = 1.0
            rhs = np.concatenate([2 * xs.T @ target, [1.0]])
            try:
                sol = np.linalg.solve(kkt, rhs)[:size]
            except np.linalg.LinAlgError:
                continue
            if np.any(sol < -1e-12):
                continue
            w = np.zeros(p)
            w[list(support)] = np.clip(sol, 0, None)
            sse = float(np.sum((merged @ w - target) ** 2))
            if best is None or sse < best[0] - 1e-15:
                best = (sse, w)
    assert best is not None
    w = best[1] / best[1].sum()
    weights = {"mAP": w[0] / 2, "MRR": w[0] / 2, "R@1": w[1], "R@5": w[2], "R@10": w[3]}
    full = np.array([weights[n] for n in METRIC_NAMES])
    residuals = tuple(float(r) for r in data[:, :5] @ full - target)
    return WeightFit(weights, residuals)


@lru_cache(maxsize=1)
def default_overall_weights() -> dict[str, float]:
    """Best-fit weights over the published leaderboard rows.

    The official formula is unpublished; these only approximate it.
    """
    return dict(fit_overall_weights().weights)


UNIFORM_WEIGHTS = {name: 1.0 / len(METRIC_NAMES) for name in METRIC_NAMES}


def evaluate(
    submission: Rankings,
    truth: Truth,
    *,
    ks: Sequence[int] = (1, 5, 10),
    task: str = "image",
    weights: Mapping[str, float] | None = None,
) -> MetricReport:
    recall = {k: recall_at_k(submission, truth, k, task=task) for k in ks}
    report = MetricReport(recall, map_single_relevant(submission, truth, task=task), mrr(submission, truth, task=task))
    metrics = report.as_metrics()
    w = dict(weights) if weights is not None else default_overall_weights()
    usable = all(n in metrics for n in w)
    overall = overall_score(metrics, w) if usable else float("nan")
    return MetricReport(recall, report.map_score, report.mrr, overall)

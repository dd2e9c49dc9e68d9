"""Ranking metrics and the normalized increase rate over a production ranker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .letor import QueryGroup
from .mlp import MlpParams, rank_documents

REPORT_CUTOFFS = (1, 3, 5, 10)


class MetricUndefinedError(ValueError):
    pass


def dcg_at_k(ordered_labels: np.ndarray, k: int) -> float:
    top = np.asarray(ordered_labels, dtype=np.float64)[:k]
    return float(((2.0**top - 1.0) / np.log2(np.arange(2, len(top) + 2))).sum())


def ndcg_at_k(ranking: Sequence[int], labels: Sequence[int], k: int) -> float:
    """nDCG@k of ``ranking`` (doc indices, best first) given per-document grades."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    labels = np.asarray(labels)
    ideal = dcg_at_k(np.sort(labels)[::-1], k)
    if ideal == 0.0:
        return 0.0
    return dcg_at_k(labels[np.asarray(ranking)], k) / ideal


def arp(ranking: Sequence[int], labels: Sequence[int]) -> float:
    """Mean 1-based rank of the relevant (label > 0) documents."""
    rel = np.asarray(labels)[np.asarray(ranking)] > 0
    ranks = np.flatnonzero(rel) + 1
    return float(ranks.mean()) if len(ranks) else float("nan")


def inc_ninc(model_ndcg5: float, pr_ndcg5: float, skyline_ndcg5: float) -> tuple[float, float]:
    """Relative nDCG@5 gain over the production ranker, and that gain over the skyline's."""
    if pr_ndcg5 == 0:
        raise MetricUndefinedError("production ranker nDCG@5 is zero")
    if skyline_ndcg5 == pr_ndcg5:
        raise MetricUndefinedError("skyline and production ranker have equal nDCG@5")
    inc = (model_ndcg5 - pr_ndcg5) / pr_ndcg5
    # written as a single ratio so m == skyline gives exactly 1 and m == pr exactly 0
    ninc = (model_ndcg5 - pr_ndcg5) / (skyline_ndcg5 - pr_ndcg5)
    return inc, ninc


@dataclass
class EvalReport:
    model_name: str
    ndcg_at_k: dict[int, float]
    arp: float
    n_queries: int
    inc: float = float("nan")
    ninc: float = float("nan")
    extra: dict = field(default_factory=dict)

    def with_baselines(self, pr_ndcg5: float, skyline_ndcg5: float) -> "EvalReport":
        self.inc, self.ninc = inc_ninc(self.ndcg_at_k[5], pr_ndcg5, skyline_ndcg5)
        return self


def evaluate_rankings(
    name: str, rankings: Sequence[np.ndarray], groups: Sequence[QueryGroup],
    cutoffs: Sequence[int] = REPORT_CUTOFFS,
) -> EvalReport:
    if not groups:
        raise ValueError("no queries to evaluate")
    nd = {k: float(np.mean([ndcg_at_k(r, g.labels, k) for r, g in zip(rankings, groups)]))
          for k in cutoffs}
    a = float(np.mean([arp(r, g.labels) for r, g in zip(rankings, groups)]))
    return EvalReport(name, nd, a, len(groups))


def evaluate_ranker(name: str, params: MlpParams, groups: Sequence[QueryGroup],
                    cutoffs: Sequence[int] = REPORT_CUTOFFS) -> EvalReport:
    return evaluate_rankings(name, [rank_documents(params, g) for g in groups], groups, cutoffs)


def mean_ndcg(params: MlpParams, groups: Sequence[QueryGroup], k: int = 5) -> float:
    return float(np.mean([ndcg_at_k(rank_documents(params, g), g.labels, k) for g in groups]))

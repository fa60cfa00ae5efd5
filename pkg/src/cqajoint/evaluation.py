"""Ranking and classification metrics: MAP, AvgRec, MRR, and
accuracy/precision/recall/F1.

Rankings sort by descending score with ties broken by the item's
original position, so score-free baselines reproduce exactly. Queries
without a single positive item are excluded from the ranking-metric
means (the usual scorer behavior); classification metrics use every
pair. AvgRec is defined as recall@k averaged over every cutoff depth
k = 1..list length, then averaged over queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class RankedPrediction:
    """One query's items, reordered by descending score on creation."""

    query_id: str
    items: list[tuple[str, float, int]]  # (item id, score, gold)

    def __post_init__(self):
        for _, score, gold in self.items:
            if not np.isfinite(score):
                raise ValueError(f"query {self.query_id}: non-finite score")
            if gold not in (0, 1):
                raise ValueError(f"query {self.query_id}: gold labels must be binary")
        self.items = sorted(
            enumerate(self.items), key=lambda p: (-p[1][1], p[0]))
        self.items = [item for _, item in self.items]

    @property
    def gold_sequence(self) -> list[int]:
        return [gold for _, _, gold in self.items]

    @property
    def has_positive(self) -> bool:
        return any(self.gold_sequence)


def average_precision(ranked: RankedPrediction) -> float | None:
    """Mean of precision@k over the relevant ranks k; None without
    positives."""
    gold = ranked.gold_sequence
    if not any(gold):
        return None
    hits = 0
    precisions = []
    for rank, g in enumerate(gold, start=1):
        if g:
            hits += 1
            precisions.append(hits / rank)
    return float(np.mean(precisions))


def reciprocal_rank(ranked: RankedPrediction) -> float | None:
    for rank, g in enumerate(ranked.gold_sequence, start=1):
        if g:
            return 1.0 / rank
    return None


def recall_over_cutoffs(ranked: RankedPrediction) -> float | None:
    """Mean of recall@k for k = 1..n; None without positives."""
    gold = ranked.gold_sequence
    total = sum(gold)
    if total == 0:
        return None
    found = 0
    recalls = []
    for g in gold:
        found += g
        recalls.append(found / total)
    return float(np.mean(recalls))


def _aggregate(predictions: Sequence[RankedPrediction], per_query) -> float:
    if not predictions:
        raise ValueError("no predictions to score")
    values = [v for v in (per_query(p) for p in predictions) if v is not None]
    if not values:
        raise ValueError("no query has a positive item")
    return float(np.mean(values))


def mean_average_precision(predictions: Sequence[RankedPrediction]) -> float:
    return _aggregate(predictions, average_precision)


def mean_reciprocal_rank(predictions: Sequence[RankedPrediction]) -> float:
    return _aggregate(predictions, reciprocal_rank)


def average_recall(predictions: Sequence[RankedPrediction]) -> float:
    return _aggregate(predictions, recall_over_cutoffs)


def ranking_metrics(predictions: Sequence[RankedPrediction]) -> dict[str, float]:
    return {
        "MAP": mean_average_precision(predictions),
        "AvgRec": average_recall(predictions),
        "MRR": mean_reciprocal_rank(predictions),
    }


def classification_metrics(pairs: Sequence[tuple[int, int]]) -> dict[str, float]:
    """Accuracy, precision, recall, F1 from (predicted, gold) pairs.

    Zero-denominator precision/recall are 0, as is F1 when P + R = 0.
    """
    if not pairs:
        raise ValueError("no prediction pairs to score")
    tp = sum(1 for p, g in pairs if p == 1 and g == 1)
    fp = sum(1 for p, g in pairs if p == 1 and g == 0)
    fn = sum(1 for p, g in pairs if p == 0 and g == 1)
    correct = sum(1 for p, g in pairs if p == g)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "Acc": correct / len(pairs),
        "P": precision,
        "R": recall,
        "F1": f1,
    }


def per_query_breakdown(predictions: Sequence[RankedPrediction]) -> list[dict]:
    """Verbose per-query AP and RR rows for report drill-down."""
    rows = []
    for p in predictions:
        rows.append({
            "query": p.query_id,
            "AP": average_precision(p),
            "RR": reciprocal_rank(p),
            "positives": sum(p.gold_sequence),
            "items": len(p.items),
        })
    return rows

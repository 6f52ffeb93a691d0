from typing import Collection, Sequence

from research_engine.models.errors import BenchmarkError


def _check(gt: Collection[str]) -> None:
    if not gt:
        raise BenchmarkError("ground truth is empty; the metric is undefined")


def recall_at_k(ranked: Sequence[str], gt: Collection[str], k: int) -> float:
    """|top-k ∩ gt| / |gt|"""
    _check(gt)
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(gt)
    return len(set(ranked[:k]) & relevant) / len(relevant)


def reciprocal_rank(ranked: Sequence[str], gt: Collection[str]) -> float:
    """1 / rank of the first relevant item, 0.0 when nothing relevant was retrieved."""
    _check(gt)
    relevant = set(gt)
    for position, record_id in enumerate(ranked, start=1):
        if record_id in relevant:
            return 1.0 / position
    return 0.0


def average_precision(ranked: Sequence[str], gt: Collection[str]) -> float:
    """Mean over the ground truth of precision at each relevant item's rank; missing items contribute 0."""
    _check(gt)
    relevant = set(gt)
    seen = set()
    total = 0.0
    for position, record_id in enumerate(ranked, start=1):
        if record_id in relevant and record_id not in seen:
            seen.add(record_id)
            total += len(seen) / position
    return total / len(relevant)


def first_relevant_rank(ranked: Sequence[str], gt: Collection[str]) -> int | None:
    relevant = set(gt)
    for position, record_id in enumerate(ranked, start=1):
        if record_id in relevant:
            return position
    return None

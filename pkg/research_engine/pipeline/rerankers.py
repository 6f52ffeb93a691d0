import json
import math
import re
from logging import getLogger
from typing import Protocol, Sequence, runtime_checkable

from research_engine.models.catalog_model import CatalogRecord
from research_engine.models.errors import ProviderError, RerankerError
from research_engine.models.params_model import RerankWeights
from research_engine.models.result_model import ScoredCandidate
from research_engine.providers.llm_provider import LlmProvider, PromptLibrary
from research_engine.textproc.text_tools import tokenize

log = getLogger(__name__)

MAX_RERANK_BATCH = 20


@runtime_checkable
class Reranker(Protocol):
    """Scores candidates against the user's original query; one score per candidate, same order."""

    def score(self, query: str, candidates: Sequence[ScoredCandidate],
              records: Sequence[CatalogRecord]) -> list[float]:
        ...


def jaccard(left: Sequence[str], right: Sequence[str]) -> float:
    a, b = set(left), set(right)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def min_max(values: Sequence[float]) -> list[float]:
    if not values:
        return []
    low, high = min(values), max(values)
    if high == low:
        return [1.0] * len(values)
    return [(v - low) / (high - low) for v in values]


class BaselineReranker:
    """
    alpha * minmax(fused score) + beta * Jaccard(query, title) + gamma * Jaccard(query, summary)
    """

    def __init__(self, weights: RerankWeights | None = None):
        self.weights = weights or RerankWeights()

    def score(self, query: str, candidates: Sequence[ScoredCandidate],
              records: Sequence[CatalogRecord]) -> list[float]:
        query_tokens = tokenize(query)
        fused = min_max([c.score for c in candidates])
        w = self.weights
        return [
            w.alpha * norm
            + w.beta * jaccard(query_tokens, tokenize(record.title))
            + w.gamma * jaccard(query_tokens, tokenize(record.summary))
            for norm, record in zip(fused, records)
        ]


def _candidate_lines(records: Sequence[CatalogRecord]) -> str:
    return "\n".join(
        json.dumps({"id": r.id, "title": r.title, "summary": r.summary}, ensure_ascii=False) for r in records
    )


def parse_rerank_reply(reply: str, expected_ids: Sequence[str]) -> dict[str, float] | None:
    """Parse a JSON array of {"id", "score"}; None unless every expected id got a finite score."""
    text = reply.strip()
    data = None
    for candidate in (text, *re.findall(r"\[.*\]", text, re.DOTALL)):
        try:
            data = json.loads(candidate)
            break
        except json.JSONDecodeError:
            continue
    if not isinstance(data, list):
        return None

    scores: dict[str, float] = {}
    for item in data:
        if not isinstance(item, dict):
            return None
        record_id, value = item.get("id"), item.get("score")
        if not isinstance(record_id, str) or isinstance(value, bool) or not isinstance(value, (int, float)):
            return None
        if not math.isfinite(value):
            return None
        scores[record_id] = float(value)

    if any(record_id not in scores for record_id in expected_ids):
        return None
    return scores


class LlmReranker:
    """Asks the provider to grade candidates in batches of at most 20, one retry per batch."""

    def __init__(self, provider: LlmProvider, prompts: PromptLibrary, batch_size: int = MAX_RERANK_BATCH):
        if not 1 <= batch_size <= MAX_RERANK_BATCH:
            raise ValueError(f"rerank batch size must be between 1 and {MAX_RERANK_BATCH}")
        self.provider = provider
        self.prompts = prompts
        self.batch_size = batch_size

    def _score_batch(self, query: str, records: Sequence[CatalogRecord]) -> dict[str, float]:
        prompt = self.prompts.render("rerank", query=query, candidates=_candidate_lines(records))
        expected = [r.id for r in records]
        problem = "unparseable reply"
        for attempt in range(2):
            try:
                parsed = parse_rerank_reply(self.provider.complete(prompt), expected)
            except ProviderError as e:
                parsed = None
                problem = str(e)
            if parsed is not None:
                return parsed
            log.debug("Rerank batch attempt %d failed: %s", attempt + 1, problem)
        raise RerankerError(f"reranker provider failed twice: {problem}")

    def score(self, query: str, candidates: Sequence[ScoredCandidate],
              records: Sequence[CatalogRecord]) -> list[float]:
        scores: list[float] = []
        for start in range(0, len(records), self.batch_size):
            batch = records[start:start + self.batch_size]
            graded = self._score_batch(query, batch)
            scores.extend(graded[r.id] for r in batch)
        return scores

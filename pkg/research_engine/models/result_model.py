from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator

from research_engine.models.query_model import UnderstoodQuery


class Provenance(str, Enum):
    LEXICAL = "LEXICAL"
    SEMANTIC = "SEMANTIC"


class ScoredCandidate(BaseModel):
    """A (dataset, score) pair flowing through the pipeline stages"""
    model_config = ConfigDict(frozen=True)

    id: str
    score: float
    provenance: tuple[Provenance, ...] = Field(min_length=1)
    lexical_rank: int | None = Field(default=None, ge=1)
    semantic_rank: int | None = Field(default=None, ge=1)
    lexical_score: float | None = None
    semantic_score: float | None = None
    demoted: bool = Field(default=False, description="Failed a present query constraint (soft filtering)")

    @field_validator("score")
    @classmethod
    def _finite(cls, value: float) -> float:
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError("score must be finite")
        return value

    @field_validator("provenance")
    @classmethod
    def _sorted_provenance(cls, value):
        return tuple(sorted(set(value), key=lambda p: p.value))


class StageCounts(BaseModel):
    lexical: int = 0
    semantic: int = 0
    recalled: int = 0
    demoted: int = 0
    dropped: int = 0
    reranked: int = 0
    returned: int = 0


class SearchHit(BaseModel):
    id: str
    score: float
    rank: int
    provenance: list[str]
    demoted: bool = False


class SearchExplain(BaseModel):
    understood: UnderstoodQuery
    counts: StageCounts
    rerank_failed: bool = False
    warnings: list[str] = Field(default_factory=list)


class SearchResponse(BaseModel):
    query: str
    hits: list[SearchHit]
    explain: SearchExplain | None = None

    def ranked_ids(self) -> list[str]:
        return [hit.id for hit in self.hits]

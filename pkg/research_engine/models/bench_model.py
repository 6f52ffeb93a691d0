from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator


class QueryType(str, Enum):
    KEYWORD = "KEYWORD"
    TASK = "TASK"


class BenchmarkCase(BaseModel):
    """One evaluation query with the set of record ids that count as relevant"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    query: str = Field(min_length=1)
    query_type: QueryType
    groundtruth: list[str] = Field(min_length=1, description="Relevant record ids, sorted and unique")
    paper_id: str = ""

    @field_validator("query")
    @classmethod
    def _nonblank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("query is blank")
        return value

    @field_validator("groundtruth")
    @classmethod
    def _as_set(cls, value: list[str]) -> list[str]:
        return sorted(set(value))


class ExtractionDataset(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)

    name: str
    doi_or_url: str | None = None


class ExtractionRecord(BaseModel):
    """Paper information extracted upstream by the LLM extraction prompt"""
    model_config = ConfigDict(extra="forbid", strict=True)

    datasets: list[ExtractionDataset]
    keywords: list[str]
    is_original_keywords: bool
    i_want_to: list[str]


class QueryDetail(BaseModel):
    index: int
    query: str
    query_type: QueryType
    paper_id: str = ""
    first_relevant_rank: int | None = None
    reciprocal_rank: float = 0.0
    average_precision: float = 0.0
    recall: dict[int, float] = Field(default_factory=dict)
    hits: dict[int, int] = Field(default_factory=dict)
    failed: bool = False
    error: str | None = None


class TypeReport(BaseModel):
    n: int = 0
    failed: int = 0
    recall: dict[int, float] = Field(default_factory=dict)
    mrr: float = 0.0
    map: float = 0.0


class EvalReport(BaseModel):
    ks: list[int]
    result_depth: int
    label: str = ""
    by_type: dict[str, TypeReport] = Field(default_factory=dict)
    overall: TypeReport = Field(default_factory=TypeReport)
    details: list[QueryDetail] = Field(default_factory=list)

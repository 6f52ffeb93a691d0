from datetime import date
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

from research_engine.models.catalog_model import BBox


class IntentType(str, Enum):
    TYPE_A = "TYPE_A"  # specific data request
    TYPE_B = "TYPE_B"  # broad research goal


class UnderstandingMode(str, Enum):
    RULES = "RULES"
    PROVIDER = "PROVIDER"


class QueryConstraints(BaseModel):
    """Temporal and spatial constraints extracted from the user's query"""
    model_config = ConfigDict(frozen=True)

    temporal: tuple[date, date] | None = Field(default=None, description="(start, end), inclusive")
    spatial: BBox | None = Field(default=None, description="(west, south, east, north) in degrees")

    @model_validator(mode="after")
    def _ordered(self) -> "QueryConstraints":
        if self.temporal is not None and self.temporal[0] > self.temporal[1]:
            raise ValueError("temporal constraint start is after its end")
        if self.spatial is not None:
            _, south, _, north = self.spatial
            if not (-90 <= south <= north <= 90):
                raise ValueError("spatial constraint latitudes are out of order")
        return self

    @property
    def is_empty(self) -> bool:
        return self.temporal is None and self.spatial is None


class UnderstoodQuery(BaseModel):
    """A query after intent classification, rewriting and constraint extraction"""
    model_config = ConfigDict(frozen=True)

    original: str
    intent: IntentType
    rewritten: str = Field(min_length=1)
    rewrite_reasoning: str | None = None
    constraints: QueryConstraints = Field(default_factory=QueryConstraints)
    warnings: list[str] = Field(default_factory=list, description="Provider fallbacks taken while understanding")

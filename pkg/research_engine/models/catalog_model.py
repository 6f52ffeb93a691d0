from datetime import date
from enum import Enum
from typing import Iterator

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator

BBox = tuple[float, float, float, float]


class Source(str, Enum):
    CMR = "CMR"
    ONESTOP = "ONESTOP"
    CMIP6 = "CMIP6"
    ERA5 = "ERA5"
    OTHER = "OTHER"


class CatalogRecord(BaseModel):
    """One dataset metadata entry"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(description="Unique short name of the dataset")
    title: str = Field(default="", description="Dataset title")
    summary: str = Field(default="", description="Free-text abstract of the dataset")
    variables: list[str] = Field(default_factory=list, description="Measured or modelled variables")
    keywords: list[str] = Field(default_factory=list, description="Archive keywords")
    source: Source = Field(default=Source.OTHER, description="Repository the record was harvested from")
    temporal_start: date | None = Field(default=None, description="First day covered (UTC)")
    temporal_end: date | None = Field(default=None, description="Last day covered (UTC)")
    bbox: BBox | None = Field(default=None, description="(west, south, east, north) in degrees")
    urls: list[str] = Field(default_factory=list, description="Landing pages, DOIs, download links")

    @field_validator("temporal_start", "temporal_end", mode="before")
    @classmethod
    def _iso_date(cls, value):
        # dates must be plain "YYYY-MM-DD", datetimes are rejected
        if isinstance(value, str):
            return date.fromisoformat(value)
        return value

    def to_json_dict(self) -> dict:
        return self.model_dump(mode="json")


class Catalog(BaseModel):
    """Ordered, immutable collection of catalog records"""
    model_config = ConfigDict(frozen=True)

    records: tuple[CatalogRecord, ...] = Field(default_factory=tuple)
    _by_id: dict[str, int] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        self._by_id = {record.id: position for position, record in enumerate(self.records)}

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CatalogRecord]:
        return iter(self.records)

    def __getitem__(self, position: int) -> CatalogRecord:
        return self.records[position]

    def get(self, record_id: str) -> CatalogRecord | None:
        position = self._by_id.get(record_id)
        return None if position is None else self.records[position]

    def ids(self) -> list[str]:
        return [record.id for record in self.records]

    def source_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for record in self.records:
            counts[record.source.value] = counts.get(record.source.value, 0) + 1
        return counts


class VariableMap(BaseModel):
    """alias -> canonical variable name, looked up case-insensitively"""
    model_config = ConfigDict(frozen=True)

    entries: dict[str, str] = Field(default_factory=dict)
    _lookup: dict[str, str] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        lookup = {alias.lower(): canonical for alias, canonical in self.entries.items()}
        # canonical names are fixed points
        for canonical in set(self.entries.values()):
            lookup.setdefault(canonical.lower(), canonical)
        self._lookup = lookup

    def canonical(self, name: str) -> str:
        return self._lookup.get(name.lower(), name)

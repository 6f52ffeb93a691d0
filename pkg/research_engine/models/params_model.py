from enum import Enum

from pydantic import BaseModel, ConfigDict, Field


class Bm25Params(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k1: float = Field(default=1.2, gt=0, description="Term-frequency saturation")
    b: float = Field(default=0.75, ge=0, le=1, description="Document-length normalization")


class FusionMethod(str, Enum):
    RRF = "rrf"
    WEIGHTED = "weighted"


class FusionParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: FusionMethod = FusionMethod.RRF
    rrf_k: float = Field(default=60.0, gt=0)
    pool_size: int = Field(default=100, ge=1, description="Per-source candidate pool (N_pool)")
    lexical_weight: float = Field(default=0.5, ge=0, le=1, description="Weight of the lexical path in weighted fusion")


class RerankWeights(BaseModel):
    """Weights of the baseline reranker: fused score, title overlap, summary overlap"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(default=0.5, ge=0)
    beta: float = Field(default=0.3, ge=0)
    gamma: float = Field(default=0.2, ge=0)

from logging import getLogger

import numpy as np
from tqdm import tqdm

from research_engine.models.catalog_model import Catalog
from research_engine.models.errors import DataError, IndexBuildError, ProviderError
from research_engine.models.result_model import Provenance, ScoredCandidate
from research_engine.semantic.embedder import Embedder
from research_engine.textproc.text_tools import AbbrDict, indexed_text

log = getLogger(__name__)

# scores are compared at this precision so ties do not depend on BLAS summation order
SCORE_DECIMALS = 12


class VecIndex:
    """Dense matrix of unit (or zero) row vectors, one per catalog record, in catalog order."""
    __slots__ = ("matrix", "doc_ids", "embedder_name", "_nonzero")

    def __init__(self, matrix: np.ndarray, doc_ids: list[str], embedder_name: str = ""):
        if matrix.ndim != 2 or matrix.shape[0] != len(doc_ids):
            raise IndexBuildError(f"vector matrix shape {matrix.shape} does not match {len(doc_ids)} records")
        self.matrix = matrix
        self.doc_ids = doc_ids
        self.embedder_name = embedder_name
        self._nonzero = np.linalg.norm(matrix, axis=1) > 0

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.doc_ids)

    def to_dict(self) -> dict:
        return {
            "embedder": self.embedder_name,
            "dimension": self.dimension,
            "doc_ids": self.doc_ids,
            "rows": self.matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VecIndex":
        matrix = np.asarray(data["rows"], dtype=np.float64).reshape(len(data["doc_ids"]), int(data["dimension"]))
        return cls(matrix, list(data["doc_ids"]), data.get("embedder", ""))


def build_vector_index(catalog: Catalog, embedder: Embedder, abbreviations: AbbrDict,
                       batch_size: int = 64, show_progress: bool = False) -> VecIndex:
    """
    Embed the same expanded text the lexical index sees, one row per record in catalog order.
    """
    if len(catalog) == 0:
        raise IndexBuildError("nothing to index")

    records = list(catalog)
    rows: list[np.ndarray] = []
    with tqdm(total=len(records), desc="Embedding", disable=not show_progress) as bar:
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            try:
                vectors = embedder.embed_batch([indexed_text(r, abbreviations) for r in chunk])
            except ProviderError as e:
                position = e.index if e.index is not None and 0 <= e.index < len(chunk) else 0
                failing = chunk[position]
                raise IndexBuildError(f"embedding failed for record {failing.id!r}: {e}") from e
            rows.extend(vectors)
            bar.update(len(chunk))

    matrix = np.vstack(rows).astype(np.float64) if rows else np.zeros((0, embedder.dimension))
    log.info("Built vector index: %d rows x %d dimensions", matrix.shape[0], matrix.shape[1])
    return VecIndex(matrix, catalog.ids(), getattr(embedder, "name", type(embedder).__name__))


def vector_search(index: VecIndex, embedder: Embedder, query: str, k: int,
                  query_vector: np.ndarray | None = None) -> list[ScoredCandidate]:
    """
    Exact cosine search over every row with a nonzero vector.

    Returns at most k candidates by descending cosine, ties by ascending record id;
    an all-zero query vector returns nothing.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if embedder.dimension != index.dimension:
        raise DataError(f"embedder dimension {embedder.dimension} does not match index dimension {index.dimension}")

    vector = embedder.embed(query) if query_vector is None else query_vector
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        return []
    vector = vector / norm

    scores = np.round(index.matrix @ vector, SCORE_DECIMALS)
    candidates = [int(i) for i in np.flatnonzero(index._nonzero)]
    candidates.sort(key=lambda i: (-scores[i], index.doc_ids[i]))

    return [
        ScoredCandidate(id=index.doc_ids[i], score=float(scores[i]), provenance=(Provenance.SEMANTIC,),
                        semantic_rank=rank, semantic_score=float(scores[i]))
        for rank, i in enumerate(candidates[:k], start=1)
    ]

import json
import pathlib
from datetime import date
from logging import getLogger
from typing import Sequence

from research_engine.catalog.catalog_tools import ingest_records, load_variable_map
from research_engine.configuration.config import (
    INDEX_FORMAT_VERSION, EngineConfig, FilterMode, RecallPaths, RerankMode, read_json_file,
)
from research_engine.lexical.bm25_index import LexIndex, build_lexical_index, lexical_search
from research_engine.models.catalog_model import BBox, Catalog
from research_engine.models.errors import ConfigError, DataError, IndexMismatchError, ProviderError, RerankerError
from research_engine.models.params_model import FusionMethod, FusionParams
from research_engine.models.query_model import QueryConstraints, UnderstandingMode, UnderstoodQuery
from research_engine.models.result_model import (
    Provenance, ScoredCandidate, SearchExplain, SearchHit, SearchResponse, StageCounts,
)
from research_engine.pipeline.rerankers import BaselineReranker, LlmReranker, Reranker, min_max
from research_engine.providers.llm_provider import LlmProvider, PromptLibrary, build_provider
from research_engine.semantic.embedder import Embedder, build_embedder
from research_engine.semantic.vector_index import VecIndex, build_vector_index, vector_search
from research_engine.textproc.text_tools import AbbrDict, expand_abbreviations, load_abbreviations
from research_engine.understanding.query_understanding import QueryUnderstanding

log = getLogger(__name__)


def check_alignment(catalog: Catalog | None, lexical: LexIndex | None, vector: VecIndex | None) -> None:
    """Both indexes (and the catalog, when given) must list the same record ids in the same order."""
    orders = []
    if catalog is not None:
        orders.append(("catalog", catalog.ids()))
    if lexical is not None:
        orders.append(("lexical index", lexical.doc_ids))
    if vector is not None:
        orders.append(("vector index", vector.doc_ids))
    for (name, ids), (other_name, other_ids) in zip(orders, orders[1:]):
        if ids != other_ids:
            raise IndexMismatchError(f"{name} and {other_name} were not built over the same catalog")


def recall(uq: UnderstoodQuery, lexical: LexIndex | None, vector: VecIndex | None,
           embedder: Embedder | None, abbreviations: AbbrDict, params: FusionParams,
           paths: RecallPaths = RecallPaths.HYBRID, expand_query: bool = False,
           catalog: Catalog | None = None) -> list[ScoredCandidate]:
    """
    Stage 1: run both paths with k = pool size on the rewritten query and union the hits by id.

    Returns candidates in ascending id order, carrying per-source ranks and raw scores.
    """
    paths = RecallPaths(paths)
    use_lexical = paths in (RecallPaths.HYBRID, RecallPaths.BM25)
    use_semantic = paths in (RecallPaths.HYBRID, RecallPaths.EMBEDDING)
    if use_lexical and lexical is None:
        raise IndexMismatchError("lexical recall requested but no lexical index is loaded")
    if use_semantic and (vector is None or embedder is None):
        raise IndexMismatchError("semantic recall requested but no vector index / embedder is loaded")
    check_alignment(catalog, lexical if use_lexical else None, vector if use_semantic else None)

    query = uq.rewritten
    lexical_hits = lexical_search(lexical, query, abbreviations, params.pool_size,
                                  expand_query=expand_query) if use_lexical else []
    semantic_query = expand_abbreviations(query, abbreviations) if expand_query else query
    semantic_hits = vector_search(vector, embedder, semantic_query, params.pool_size) if use_semantic else []

    merged = {hit.id: hit for hit in lexical_hits}
    for hit in semantic_hits:
        known = merged.get(hit.id)
        if known is None:
            merged[hit.id] = hit
            continue
        merged[hit.id] = known.model_copy(update={
            "provenance": (Provenance.LEXICAL, Provenance.SEMANTIC),
            "semantic_rank": hit.semantic_rank,
            "semantic_score": hit.semantic_score,
        })

    log.debug("Recall: %d lexical, %d semantic, %d in union", len(lexical_hits), len(semantic_hits), len(merged))
    return [merged[record_id] for record_id in sorted(merged)]


def _longitude_spans(west: float, east: float) -> list[tuple[float, float]]:
    # west > east means the box crosses the antimeridian
    if west <= east:
        return [(west, east)]
    return [(west, 180.0), (-180.0, east)]


def bbox_intersects(a: BBox, b: BBox) -> bool:
    a_west, a_south, a_east, a_north = a
    b_west, b_south, b_east, b_north = b
    if a_south > b_north or b_south > a_north:
        return False
    return any(
        lo1 <= hi2 and lo2 <= hi1
        for lo1, hi1 in _longitude_spans(a_west, a_east)
        for lo2, hi2 in _longitude_spans(b_west, b_east)
    )


def satisfies_constraints(record, constraints: QueryConstraints) -> bool:
    """A record missing a field always satisfies the matching constraint."""
    if constraints.temporal is not None and (record.temporal_start or record.temporal_end):
        start = record.temporal_start or date.min
        end = record.temporal_end or date.max
        query_start, query_end = constraints.temporal
        if start > query_end or query_start > end:
            return False
    if constraints.spatial is not None and record.bbox is not None:
        if not bbox_intersects(record.bbox, constraints.spatial):
            return False
    return True


def filter_constraints(candidates: Sequence[ScoredCandidate], constraints: QueryConstraints, catalog: Catalog,
                       mode: FilterMode = FilterMode.SOFT) -> list[ScoredCandidate]:
    """
    HARD drops candidates that fail a present constraint; SOFT keeps them, flagged as demoted,
    after every passing candidate. Both keep the input order inside each block.
    """
    if constraints.is_empty:
        return list(candidates)

    passing: list[ScoredCandidate] = []
    failing: list[ScoredCandidate] = []
    for candidate in candidates:
        record = catalog.get(candidate.id)
        if record is None or satisfies_constraints(record, constraints):
            passing.append(candidate)
        else:
            failing.append(candidate)

    if FilterMode(mode) is FilterMode.HARD:
        return passing
    return passing + [c.model_copy(update={"demoted": True}) for c in failing]


def _ranking_key(candidate: ScoredCandidate):
    return candidate.demoted, -candidate.score, candidate.id


def fuse(candidates: Sequence[ScoredCandidate], params: FusionParams) -> list[ScoredCandidate]:
    """
    Merge per-source rankings into one score.

    rrf: sum over sources of 1 / (rrf_k + rank).
    weighted: w * minmax(lexical score) + (1 - w) * minmax(semantic score) over the pool.
    Demoted candidates always follow the others; ties go to the smaller id.
    """
    for candidate in candidates:
        if candidate.lexical_rank is None and candidate.semantic_rank is None:
            raise ValueError(f"candidate {candidate.id!r} has no per-source rank")

    if params.method is FusionMethod.RRF:
        scores = []
        for candidate in candidates:
            score = 0.0
            for rank in (candidate.lexical_rank, candidate.semantic_rank):
                if rank is not None:
                    score += 1.0 / (params.rrf_k + rank)
            scores.append(score)
    else:
        lexical = [c for c in candidates if c.lexical_score is not None]
        semantic = [c for c in candidates if c.semantic_score is not None]
        lexical_norm = dict(zip((c.id for c in lexical), min_max([c.lexical_score for c in lexical])))
        semantic_norm = dict(zip((c.id for c in semantic), min_max([c.semantic_score for c in semantic])))
        weight = params.lexical_weight
        scores = [weight * lexical_norm.get(c.id, 0.0) + (1 - weight) * semantic_norm.get(c.id, 0.0)
                  for c in candidates]

    fused = [c.model_copy(update={"score": s}) for c, s in zip(candidates, scores)]
    return sorted(fused, key=_ranking_key)


def rerank(query: str, fused: Sequence[ScoredCandidate], catalog: Catalog, reranker: Reranker,
           top_m: int) -> tuple[list[ScoredCandidate], str | None]:
    """
    Stage 2: rescore the first top_m fused candidates and reorder them; the rest keep fused order.

    Returns:
        (ranked candidates, warning); on reranker failure the fused order comes back with a warning
    """
    if top_m < 1:
        raise ValueError("top_m must be >= 1")
    head, tail = list(fused[:top_m]), list(fused[top_m:])
    if not head:
        return [], None

    records = [catalog.get(c.id) for c in head]
    if any(record is None for record in records):
        raise IndexMismatchError("a fused candidate is missing from the catalog")
    try:
        scores = reranker.score(query, head, records)
    except RerankerError as e:
        message = f"reranking failed ({e}); kept fused order"
        log.warning(message)
        return list(fused), message
    if len(scores) != len(head):
        message = f"reranker returned {len(scores)} scores for {len(head)} candidates; kept fused order"
        log.warning(message)
        return list(fused), message

    # lift the head so no reranked score falls below a fused score further down
    floor = max((c.score for c in tail), default=None)
    lowest = min(scores)
    offset = floor - lowest if floor is not None and lowest < floor else 0.0

    order = sorted(range(len(head)), key=lambda i: (head[i].demoted, -scores[i], i))
    reranked = [head[i].model_copy(update={"score": float(scores[i]) + offset}) for i in order]
    return reranked + tail, None


def save_index_bundle(path: str | pathlib.Path, catalog: Catalog, lexical: LexIndex, vector: VecIndex) -> None:
    check_alignment(catalog, lexical, vector)
    bundle = {
        "format_version": INDEX_FORMAT_VERSION,
        "catalog_ids": catalog.ids(),
        "lexical": lexical.to_dict(),
        "vector": vector.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(bundle, f)
    log.info("Saved index bundle for %d records to %s", len(catalog), path)


def load_index_bundle(path: str | pathlib.Path, catalog: Catalog) -> tuple[LexIndex, VecIndex]:
    bundle = read_json_file(path, "index bundle")
    if not isinstance(bundle, dict):
        raise DataError(f"index bundle {path} must hold a JSON object")

    version = bundle.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise IndexMismatchError(f"index format version {version} is not supported (expected {INDEX_FORMAT_VERSION})")
    if bundle.get("catalog_ids") != catalog.ids():
        raise IndexMismatchError(f"index bundle {path} was built over a different catalog")

    lexical = LexIndex.from_dict(bundle["lexical"])
    vector = VecIndex.from_dict(bundle["vector"])
    check_alignment(catalog, lexical, vector)
    return lexical, vector


def build_reranker(config: EngineConfig, provider: LlmProvider | None) -> Reranker:
    if config.rerank.mode is RerankMode.BASELINE:
        return BaselineReranker(config.rerank.weights)
    if provider is None:
        raise ConfigError("provider reranking needs a provider (provider.kind is none)")
    return LlmReranker(provider, PromptLibrary.load(config.paths.prompts), config.rerank.batch_size)


class SearchEngine:
    """Catalog, both indexes, Stage 0 and the reranker; immutable once built, safe to share between threads."""

    def __init__(self, catalog: Catalog, lexical: LexIndex, vector: VecIndex, embedder: Embedder,
                 abbreviations: AbbrDict, understanding: QueryUnderstanding, reranker: Reranker,
                 config: EngineConfig | None = None):
        check_alignment(catalog, lexical, vector)
        self.catalog = catalog
        self.lexical = lexical
        self.vector = vector
        self.embedder = embedder
        self.abbreviations = abbreviations
        self.understanding = understanding
        self.reranker = reranker
        self.config = config or EngineConfig()

    @staticmethod
    def build_indexes(catalog: Catalog, config: EngineConfig, abbreviations: AbbrDict, embedder: Embedder,
                      show_progress: bool = False) -> tuple[LexIndex, VecIndex]:
        lexical = build_lexical_index(catalog, abbreviations, config.bm25, workers=config.workers,
                                      show_progress=show_progress)
        vector = build_vector_index(catalog, embedder, abbreviations, show_progress=show_progress)
        return lexical, vector

    @classmethod
    def from_config(cls, config: EngineConfig, provider: LlmProvider | None = None,
                    catalog: Catalog | None = None, show_progress: bool = False) -> "SearchEngine":
        """
        Build an engine from config. A prebuilt index bundle is loaded from `paths.index` when it exists,
        otherwise both indexes are built in memory.
        """
        if catalog is None:
            if config.paths.catalog is None:
                raise ConfigError("no catalog configured (paths.catalog)")
            catalog = ingest_records(config.paths.catalog, variable_map=load_variable_map(config.paths.variable_map))

        if provider is None:
            provider = build_provider(config.provider)
        modes = (config.understanding.intent_mode, config.understanding.rewrite_mode)
        if UnderstandingMode.PROVIDER in modes and provider is None:
            raise ConfigError("PROVIDER understanding mode needs a provider (provider.kind is none)")

        abbreviations = load_abbreviations(config.paths.abbreviations, enabled=config.abbreviation_expansion)
        embedder = build_embedder(config.embedder)

        index_path = config.paths.index
        if index_path is not None and pathlib.Path(index_path).is_file():
            lexical, vector = load_index_bundle(index_path, catalog)
            if vector.dimension != embedder.dimension:
                raise IndexMismatchError(
                    f"index vectors have dimension {vector.dimension}, embedder produces {embedder.dimension}")
            log.info("Loaded index bundle %s", index_path)
        else:
            lexical, vector = cls.build_indexes(catalog, config, abbreviations, embedder, show_progress)

        return cls(catalog, lexical, vector, embedder, abbreviations,
                   QueryUnderstanding.from_config(config, provider), build_reranker(config, provider), config)

    def with_config(self, config: EngineConfig) -> "SearchEngine":
        """Same catalog and indexes, different query-time settings (recall paths, fusion, filter mode)."""
        return SearchEngine(self.catalog, self.lexical, self.vector, self.embedder, self.abbreviations,
                            self.understanding, self.reranker, config)

    def search(self, query: str, k: int | None = None) -> SearchResponse:
        """understand -> recall -> filter -> fuse -> rerank; returns the top k hits (result_k by default)."""
        config = self.config
        k = k or config.result_k
        if k < 1:
            raise ValueError("k must be >= 1")

        uq = self.understanding.understand(query)
        warnings = list(uq.warnings)
        try:
            candidates = recall(uq, self.lexical, self.vector, self.embedder, self.abbreviations, config.fusion,
                                paths=config.recall_paths, expand_query=config.expand_queries)
        except ProviderError as e:
            message = f"query embedding failed ({e}); fell back to lexical recall"
            log.warning(message)
            warnings.append(message)
            candidates = recall(uq, self.lexical, self.vector, self.embedder, self.abbreviations, config.fusion,
                                paths=RecallPaths.BM25, expand_query=config.expand_queries)
        filtered = filter_constraints(candidates, uq.constraints, self.catalog, config.filter_mode)
        fused = fuse(filtered, config.fusion)
        ranked, warning = rerank(uq.original, fused, self.catalog, self.reranker, config.rerank.top_m)

        hits = [
            SearchHit(id=c.id, score=c.score, rank=rank, provenance=[p.value for p in c.provenance],
                      demoted=c.demoted)
            for rank, c in enumerate(ranked[:k], start=1)
        ]
        counts = StageCounts(
            lexical=sum(Provenance.LEXICAL in c.provenance for c in candidates),
            semantic=sum(Provenance.SEMANTIC in c.provenance for c in candidates),
            recalled=len(candidates),
            demoted=sum(c.demoted for c in filtered),
            dropped=len(candidates) - len(filtered),
            reranked=min(config.rerank.top_m, len(fused)) if warning is None else 0,
            returned=len(hits),
        )
        if warning:
            warnings.append(warning)
        explain = SearchExplain(understood=uq, counts=counts, rerank_failed=warning is not None, warnings=warnings)
        return SearchResponse(query=query, hits=hits, explain=explain)

import pathlib
from concurrent.futures import ThreadPoolExecutor
from logging import getLogger
from typing import Protocol, Sequence

from pydantic import ValidationError
from tqdm import tqdm

from research_engine.configuration.config import EngineConfig, RecallPaths
from research_engine.evalbench.metrics import (
    average_precision, first_relevant_rank, reciprocal_rank, recall_at_k,
)
from research_engine.models.bench_model import BenchmarkCase, EvalReport, QueryDetail, QueryType, TypeReport
from research_engine.models.catalog_model import Catalog
from research_engine.models.errors import BenchmarkError
from research_engine.models.result_model import SearchResponse
from research_engine.pipeline.search_pipeline import SearchEngine
from research_engine.providers.llm_provider import LlmProvider

log = getLogger(__name__)

TABLE_KS = (10, 20, 50, 100)


class SearchesCatalog(Protocol):
    def search(self, query: str, k: int | None = None) -> SearchResponse:
        ...


def load_benchmark(path: str | pathlib.Path) -> list[BenchmarkCase]:
    cases: list[BenchmarkCase] = []
    with open(path, "rb") as f:
        for line_number, raw_line in enumerate(f, start=1):
            try:
                line = raw_line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise BenchmarkError(f"{path} line {line_number}: not valid UTF-8 ({e.reason})") from e
            if not line.strip():
                continue
            try:
                cases.append(BenchmarkCase.model_validate_json(line))
            except ValidationError as e:
                first = e.errors()[0]
                location = ".".join(str(part) for part in first["loc"]) or "line"
                raise BenchmarkError(f"{path} line {line_number}: {location}: {first['msg']}") from e
    if not cases:
        raise BenchmarkError(f"benchmark {path} holds no cases")
    log.info("Loaded %d benchmark cases from %s", len(cases), path)
    return cases


def write_benchmark(cases: Sequence[BenchmarkCase], path: str | pathlib.Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for case in cases:
            f.write(case.model_dump_json() + "\n")


def score_case(index: int, case: BenchmarkCase, ranked: Sequence[str], ks: Sequence[int]) -> QueryDetail:
    relevant = set(case.groundtruth)
    return QueryDetail(
        index=index,
        query=case.query,
        query_type=case.query_type,
        paper_id=case.paper_id,
        first_relevant_rank=first_relevant_rank(ranked, relevant),
        reciprocal_rank=reciprocal_rank(ranked, relevant),
        average_precision=average_precision(ranked, relevant),
        recall={k: recall_at_k(ranked, relevant, k) for k in ks},
        hits={k: len(set(ranked[:k]) & relevant) for k in ks},
    )


def _macro_average(details: Sequence[QueryDetail], ks: Sequence[int]) -> TypeReport:
    scored = [d for d in details if not d.failed]
    failed = len(details) - len(scored)
    if not scored:
        return TypeReport(n=0, failed=failed, recall={k: 0.0 for k in ks})
    n = len(scored)
    return TypeReport(
        n=n,
        failed=failed,
        recall={k: sum(d.recall[k] for d in scored) / n for k in ks},
        mrr=sum(d.reciprocal_rank for d in scored) / n,
        map=sum(d.average_precision for d in scored) / n,
    )


def evaluate(cases: Sequence[BenchmarkCase], engine: SearchesCatalog, ks: Sequence[int], result_depth: int,
             workers: int = 1, label: str = "", show_progress: bool = False) -> EvalReport:
    """
    Search every case at `result_depth` and macro-average the metrics per query type and overall.

    A case whose search raises is marked failed and left out of the averages. Results are keyed by
    case index, so the report does not depend on `workers`.
    """
    if not cases:
        raise BenchmarkError("no benchmark cases to evaluate")
    ks = sorted(set(ks))
    if not ks or ks[0] < 1:
        raise BenchmarkError("cutoffs must be positive integers")
    if result_depth < ks[-1]:
        raise BenchmarkError(f"result depth {result_depth} is smaller than the largest cutoff {ks[-1]}")

    def run(index: int) -> QueryDetail:
        case = cases[index]
        try:
            ranked = engine.search(case.query, k=result_depth).ranked_ids()
        except Exception as e:
            log.error("Case %d (%r) failed: %s", index, case.query, e)
            return QueryDetail(index=index, query=case.query, query_type=case.query_type, paper_id=case.paper_id,
                               failed=True, error=str(e))
        return score_case(index, case, ranked, ks)

    indexes = range(len(cases))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            details = list(tqdm(executor.map(run, indexes), total=len(cases), desc="Evaluating",
                                disable=not show_progress))
    else:
        details = [run(i) for i in tqdm(indexes, desc="Evaluating", disable=not show_progress)]
    details.sort(key=lambda d: d.index)

    by_type: dict[str, TypeReport] = {}
    for query_type in QueryType:
        of_type = [d for d in details if d.query_type is query_type]
        if of_type:
            by_type[query_type.value] = _macro_average(of_type, ks)

    return EvalReport(ks=ks, result_depth=result_depth, label=label, by_type=by_type,
                      overall=_macro_average(details, ks), details=details)


def render_table(report: EvalReport, ks: Sequence[int] | None = None) -> str:
    """Aligned text table: one row per query type plus overall; columns n, R@K..., MRR, MAP."""
    ks = list(ks or report.ks)
    header = ["query type", "n"] + [f"R@{k}" for k in ks] + ["MRR", "MAP"]
    rows = []
    for name, part in [*report.by_type.items(), ("overall", report.overall)]:
        rows.append([name, str(part.n)] + [f"{part.recall.get(k, 0.0):.4f}" for k in ks]
                    + [f"{part.mrr:.4f}", f"{part.map:.4f}"])

    widths = [max(len(row[i]) for row in [header, *rows]) for i in range(len(header))]
    lines = []
    if report.label:
        lines.append(report.label)
    for row in [header, *rows]:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines)


def run_ablation(cases: Sequence[BenchmarkCase], config: EngineConfig, ks: Sequence[int] = TABLE_KS,
                 result_depth: int | None = None, catalog: Catalog | None = None,
                 provider: LlmProvider | None = None, workers: int = 1) -> list[EvalReport]:
    """
    BM25 and embedding recall, each with and without index-time abbreviation expansion.

    Indexes are always rebuilt in memory, a configured bundle is ignored.
    """
    result_depth = result_depth or max(ks)
    reports: list[EvalReport] = []
    for expansion in (True, False):
        arm = config.model_copy(update={
            "paths": config.paths.model_copy(update={"index": None}),
            "abbreviation_expansion": expansion,
        })
        engine = SearchEngine.from_config(arm, provider=provider, catalog=catalog)
        for paths in (RecallPaths.BM25, RecallPaths.EMBEDDING):
            view = engine.with_config(arm.model_copy(update={"recall_paths": paths}))
            label = f"{paths.value} {'with' if expansion else 'without'} abbreviation expansion"
            log.info("Ablation arm: %s", label)
            reports.append(evaluate(cases, view, ks, result_depth, workers=workers, label=label))
    return reports

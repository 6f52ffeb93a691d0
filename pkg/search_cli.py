import argparse
import json
import pathlib
import sys
from logging import getLogger
from typing import Any, Sequence, TextIO

from research_engine.catalog.catalog_tools import ingest_records, load_variable_map, write_records
from research_engine.configuration.config import (
    INDEX_FORMAT_VERSION, VERSION, EngineConfig, FilterMode, RecallPaths, apply_overrides, load_engine_config,
)
from research_engine.evalbench.benchmark import (
    TABLE_KS, evaluate, load_benchmark, render_table, run_ablation, write_benchmark,
)
from research_engine.evalbench.groundtruth import DEFAULT_MATCH_THRESHOLD, match_groundtruth, parse_extraction
from research_engine.logging.logging_utils import setup_logger
from research_engine.models.errors import DataError, ResearchError
from research_engine.pipeline.search_pipeline import SearchEngine, save_index_bundle
from research_engine.regex_manager.regex_manager import UrlPatternSet
from research_engine.semantic.embedder import build_embedder
from research_engine.textproc.text_tools import expand_abbreviations, load_abbreviations

log = getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so cmd_dispatch owns the exit code."""

    def error(self, message: str):
        raise UsageError(message)


def parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cutoffs must be comma-separated integers, got {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("cutoffs must be positive integers")
    return ks


def build_parser() -> CliParser:
    parser = CliParser(prog="search_cli.py", description="Hybrid dataset search engine and evaluation harness")
    parser.add_argument("--config", type=pathlib.Path, help="YAML engine config")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--quiet", action="store_true", help="no progress bars")
    parser.add_argument("--version", action="store_true", help="print version and index format version")
    commands = parser.add_subparsers(dest="command", parser_class=CliParser)

    ingest = commands.add_parser("ingest", help="validate a JSON Lines catalog")
    ingest.add_argument("--catalog", type=pathlib.Path)
    ingest.add_argument("--variable-map", type=pathlib.Path, help="extra alias -> canonical map merged over the default")
    ingest.add_argument("--out", type=pathlib.Path, help="write the normalized catalog here")

    index = commands.add_parser("index", help="index operations")
    index_commands = index.add_subparsers(dest="index_command", parser_class=CliParser)
    build = index_commands.add_parser("build", help="build and save the lexical + vector index bundle")
    build.add_argument("--catalog", type=pathlib.Path)
    build.add_argument("--out", type=pathlib.Path)

    search = commands.add_parser("search", help="run one query")
    search.add_argument("query")
    search.add_argument("--k", type=int, help="number of results (result_k)")
    search.add_argument("--explain", action="store_true")
    search.add_argument("--filter-mode", choices=[m.value for m in FilterMode])
    search.add_argument("--method", choices=[p.value for p in RecallPaths])
    search.add_argument("--index", type=pathlib.Path)
    search.add_argument("--catalog", type=pathlib.Path)
    search.add_argument("--top-m", type=int)
    search.add_argument("--rrf-k", type=float)
    search.add_argument("--pool-size", type=int)

    evaluation = commands.add_parser("eval", help="benchmark evaluation")
    eval_commands = evaluation.add_subparsers(dest="eval_command", parser_class=CliParser)
    for name, help_text in (("run", "evaluate one configuration"),
                            ("ablation", "bm25 / embedding with and without abbreviation expansion")):
        sub = eval_commands.add_parser(name, help=help_text)
        sub.add_argument("--bench", type=pathlib.Path, required=True)
        sub.add_argument("--k", type=parse_ks, default=list(TABLE_KS), help="comma-separated cutoffs")
        sub.add_argument("--depth", type=int, help="results retrieved per query (default: largest cutoff)")
        sub.add_argument("--workers", type=int, default=1)
        sub.add_argument("--out", type=pathlib.Path, help="write the JSON report here")
        sub.add_argument("--table", action="store_true", help="print the text table instead of JSON")
        sub.add_argument("--catalog", type=pathlib.Path)
        if name == "run":
            sub.add_argument("--method", choices=[p.value for p in RecallPaths])
            sub.add_argument("--index", type=pathlib.Path)

    bench = commands.add_parser("bench", help="benchmark construction")
    bench_commands = bench.add_subparsers(dest="bench_command", parser_class=CliParser)
    match = bench_commands.add_parser("match", help="align paper extractions with the catalog")
    match.add_argument("--catalog", type=pathlib.Path)
    match.add_argument("--extraction", type=pathlib.Path, nargs="+", required=True)
    match.add_argument("--threshold", type=float, default=DEFAULT_MATCH_THRESHOLD)
    match.add_argument("--url-patterns", type=pathlib.Path)
    match.add_argument("--out", type=pathlib.Path, help="write cases as JSON Lines here")

    abbr = commands.add_parser("abbr", help="abbreviation tools")
    abbr_commands = abbr.add_subparsers(dest="abbr_command", parser_class=CliParser)
    expand = abbr_commands.add_parser("expand", help="expand abbreviations in text read from stdin")
    expand.add_argument("--abbreviations", type=pathlib.Path)

    return parser


def _write_json(stream: TextIO, data: Any) -> None:
    stream.write(json.dumps(data, indent=2, ensure_ascii=False, default=str) + "\n")


def _load_catalog(config: EngineConfig):
    if config.paths.catalog is None:
        raise UsageError("no catalog given (--catalog or paths.catalog in the config file)")
    return ingest_records(config.paths.catalog, variable_map=load_variable_map(config.paths.variable_map))


def cmd_ingest(args, config: EngineConfig, stdout: TextIO) -> int:
    config = apply_overrides(config, {"paths.catalog": args.catalog})
    if config.paths.catalog is None:
        raise UsageError("ingest needs --catalog")
    variable_map = load_variable_map(config.paths.variable_map, args.variable_map)
    catalog = ingest_records(config.paths.catalog, variable_map=variable_map)
    if args.out:
        write_records(catalog, args.out)
    _write_json(stdout, {"records": len(catalog), "sources": catalog.source_counts()})
    return EXIT_OK


def cmd_index_build(args, config: EngineConfig, stdout: TextIO, show_progress: bool) -> int:
    config = apply_overrides(config, {"paths.catalog": args.catalog, "paths.index": args.out})
    if config.paths.index is None:
        raise UsageError("index build needs --out (or paths.index in the config file)")
    catalog = _load_catalog(config)
    abbreviations = load_abbreviations(config.paths.abbreviations, enabled=config.abbreviation_expansion)
    lexical, vector = SearchEngine.build_indexes(catalog, config, abbreviations, build_embedder(config.embedder),
                                                 show_progress)
    save_index_bundle(config.paths.index, catalog, lexical, vector)
    _write_json(stdout, {"records": len(catalog), "terms": len(lexical.postings), "dimension": vector.dimension,
                         "format_version": INDEX_FORMAT_VERSION, "index": str(config.paths.index)})
    return EXIT_OK


def cmd_search(args, config: EngineConfig, stdout: TextIO, show_progress: bool) -> int:
    config = apply_overrides(config, {
        "result_k": args.k,
        "filter_mode": args.filter_mode,
        "recall_paths": args.method,
        "paths.index": args.index,
        "paths.catalog": args.catalog,
        "rerank.top_m": args.top_m,
        "fusion.rrf_k": args.rrf_k,
        "fusion.pool_size": args.pool_size,
    })
    engine = SearchEngine.from_config(config, catalog=_load_catalog(config), show_progress=show_progress)
    response = engine.search(args.query)
    results = [hit.model_dump(mode="json") for hit in response.hits]
    if args.explain:
        _write_json(stdout, {"results": results, "explain": response.explain.model_dump(mode="json")})
    else:
        _write_json(stdout, results)
    return EXIT_OK


def _emit_reports(args, reports, stdout: TextIO) -> None:
    payload = [report.model_dump(mode="json") for report in reports]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            _write_json(f, payload if len(payload) > 1 else payload[0])
    if args.table:
        stdout.write("\n\n".join(render_table(report, args.k) for report in reports) + "\n")
    else:
        _write_json(stdout, payload if len(payload) > 1 else payload[0])


def cmd_eval(args, config: EngineConfig, stdout: TextIO, show_progress: bool) -> int:
    if args.eval_command is None:
        raise UsageError("eval needs a subcommand: run or ablation")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    depth = args.depth or max(args.k)
    cases = load_benchmark(args.bench)

    if args.eval_command == "ablation":
        config = apply_overrides(config, {"paths.catalog": args.catalog})
        reports = run_ablation(cases, config, args.k, depth, catalog=_load_catalog(config), workers=args.workers)
    else:
        config = apply_overrides(config, {"paths.catalog": args.catalog, "paths.index": args.index,
                                          "recall_paths": args.method})
        engine = SearchEngine.from_config(config, catalog=_load_catalog(config), show_progress=show_progress)
        label = f"{config.recall_paths.value} recall"
        reports = [evaluate(cases, engine, args.k, depth, workers=args.workers, label=label,
                            show_progress=show_progress)]
    _emit_reports(args, reports, stdout)
    return EXIT_OK


def cmd_bench_match(args, config: EngineConfig, stdout: TextIO) -> int:
    if args.bench_command is None:
        raise UsageError("bench needs a subcommand: match")
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError("--threshold must be in [0, 1]")
    config = apply_overrides(config, {"paths.catalog": args.catalog, "paths.url_patterns": args.url_patterns})
    catalog = _load_catalog(config)
    url_patterns = UrlPatternSet.load(config.paths.url_patterns)

    cases = []
    for path in args.extraction:
        try:
            text = pathlib.Path(path).read_text(encoding="utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"extraction {path} is not valid UTF-8 ({e.reason})") from e
        extraction = parse_extraction(text)
        cases.extend(match_groundtruth(extraction, catalog, url_patterns, args.threshold, paper_id=path.stem))
    if args.out:
        write_benchmark(cases, args.out)
    for case in cases:
        stdout.write(case.model_dump_json() + "\n")
    return EXIT_OK


def cmd_abbr_expand(args, config: EngineConfig, stdin: TextIO, stdout: TextIO) -> int:
    if args.abbr_command is None:
        raise UsageError("abbr needs a subcommand: expand")
    abbreviations = load_abbreviations(args.abbreviations or config.paths.abbreviations)
    stdout.write(expand_abbreviations(stdin.read(), abbreviations))
    return EXIT_OK


def cmd_dispatch(argv: Sequence[str] | None = None, stdout: TextIO | None = None,
                 stderr: TextIO | None = None, stdin: TextIO | None = None) -> int:
    """
    Parse argv, run one subcommand and return its exit code.

    0 success, 1 usage error, 2 data error. Results go to stdout, diagnostics to stderr.
    """
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    stdin = stdin or sys.stdin
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)

    try:
        args = parser.parse_args(argv)
        if args.version:
            stdout.write(f"{VERSION} (index format {INDEX_FORMAT_VERSION})\n")
            return EXIT_OK
        if args.command is None:
            raise UsageError("no command given")
        if args.log_level:
            getLogger().setLevel(args.log_level)

        config = load_engine_config(args.config)
        show_progress = not args.quiet and stderr.isatty()

        match args.command:
            case "ingest":
                return cmd_ingest(args, config, stdout)
            case "index":
                if args.index_command is None:
                    raise UsageError("index needs a subcommand: build")
                return cmd_index_build(args, config, stdout, show_progress)
            case "search":
                return cmd_search(args, config, stdout, show_progress)
            case "eval":
                return cmd_eval(args, config, stdout, show_progress)
            case "bench":
                return cmd_bench_match(args, config, stdout)
            case "abbr":
                return cmd_abbr_expand(args, config, stdin, stdout)
            case _:
                raise UsageError(f"unknown command {args.command}")
    except UsageError as e:
        stderr.write(parser.format_usage())
        stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except (DataError, OSError) as e:
        stderr.write(f"error: {e}\n")
        return EXIT_DATA
    except ResearchError as e:
        log.error("Command failed: %s", e)
        stderr.write(f"error: {e}\n")
        return EXIT_DATA


def main():
    setup_logger()
    sys.exit(cmd_dispatch())


if __name__ == "__main__":
    main()

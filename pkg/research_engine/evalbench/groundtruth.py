import json
from logging import getLogger

from pydantic import ValidationError

from research_engine.models.bench_model import BenchmarkCase, ExtractionRecord, QueryType
from research_engine.models.catalog_model import Catalog, CatalogRecord
from research_engine.models.errors import ExtractionError
from research_engine.regex_manager.regex_manager import VERSION_TOKEN_REGEX, UrlPatternSet, contains_term
from research_engine.textproc.text_tools import tokenize

log = getLogger(__name__)

DEFAULT_MATCH_THRESHOLD = 0.85
EXTRACTION_KEYS = ("datasets", "keywords", "is_original_keywords", "i_want_to")
# cited names this short ("MODIS", "GPM/IMERG") name a family of products, not one product
BARE_NAME_MAX_TOKENS = 2


def parse_extraction(text: str) -> ExtractionRecord:
    """
    Strict parse of the four-key paper extraction object.

    Raises:
        ExtractionError: naming the first missing key, unknown key or wrongly typed field
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ExtractionError(f"not valid JSON: {e.msg}") from e
    if not isinstance(data, dict):
        raise ExtractionError("extraction must be a JSON object")

    for key in EXTRACTION_KEYS:
        if key not in data:
            raise ExtractionError(f"missing key {key}", field=key)
    for key in data:
        if key not in EXTRACTION_KEYS:
            raise ExtractionError(f"unknown key {key}", field=key)

    try:
        return ExtractionRecord.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        if first["type"] == "extra_forbidden":
            raise ExtractionError(f"unknown key {field}", field=field) from e
        if first["type"] == "missing":
            raise ExtractionError(f"missing key {field}", field=field) from e
        raise ExtractionError(f"wrong type for {field}: {first['msg']}", field=field) from e


def normalized_tokens(text: str) -> frozenset[str]:
    """Tokenize and fold version markers: "V06", "v006", "006" and "version 6" all become "v6"."""
    tokens = tokenize(text)
    normalized = []
    skip_next = False
    for position, token in enumerate(tokens):
        if skip_next:
            skip_next = False
            continue
        following = tokens[position + 1] if position + 1 < len(tokens) else ""
        if token == "version" and following.isdigit():
            normalized.append(f"v{int(following)}")
            skip_next = True
            continue
        match = VERSION_TOKEN_REGEX.match(token)
        if match:
            normalized.append(f"v{int(match.group(1) or match.group(2))}")
        else:
            normalized.append(token)
    return frozenset(normalized)


def record_tokens(record: CatalogRecord) -> frozenset[str]:
    return normalized_tokens(f"{record.title} {record.id}")


def name_similarity(name: str, record: CatalogRecord) -> float:
    left, right = normalized_tokens(name), record_tokens(record)
    union = left | right
    return len(left & right) / len(union) if union else 0.0


def fuzzy_match(name: str, catalog: Catalog, threshold: float = DEFAULT_MATCH_THRESHOLD) -> list[str]:
    """
    Catalog ids whose title+id token set is close enough to `name`.

    A record matches when the Jaccard similarity reaches `threshold`, when its id appears verbatim
    in the name, or (below threshold 1.0 only) when the name is a bare family name of at most two
    tokens that all occur in the record.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    name_tokens = normalized_tokens(name)
    if not name_tokens:
        return []
    bare = len(name_tokens) <= BARE_NAME_MAX_TOKENS and threshold < 1.0

    matched: list[str] = []
    for record in catalog:
        tokens = record_tokens(record)
        similarity = len(name_tokens & tokens) / len(name_tokens | tokens)
        if (similarity >= threshold
                or contains_term(name, record.id)
                or (bare and name_tokens <= tokens)):
            matched.append(record.id)
    return matched


def match_groundtruth(extraction: ExtractionRecord, catalog: Catalog, url_patterns: UrlPatternSet | None = None,
                      threshold: float = DEFAULT_MATCH_THRESHOLD, paper_id: str = "") -> list[BenchmarkCase]:
    """
    Turn one paper's extraction into benchmark cases.

    Each cited dataset is aligned by URL pattern first, by fuzzy name otherwise; the union of
    matched ids is the ground truth of one KEYWORD case and one TASK case per "I want to" statement.
    A paper with no matched dataset yields no case.
    """
    url_patterns = url_patterns or UrlPatternSet([])
    by_lower_id = {record_id.lower(): record_id for record_id in catalog.ids()}

    groundtruth: list[str] = []
    for dataset in extraction.datasets:
        matched: list[str] = []
        if dataset.doi_or_url:
            for extracted in url_patterns.extract_ids(dataset.doi_or_url):
                record_id = by_lower_id.get(extracted.lower())
                if record_id is not None and record_id not in matched:
                    matched.append(record_id)
        if not matched:
            matched = fuzzy_match(dataset.name, catalog, threshold)
        log.debug("Dataset %r matched %d records", dataset.name, len(matched))
        for record_id in matched:
            if record_id not in groundtruth:
                groundtruth.append(record_id)

    if not groundtruth:
        log.warning("Paper %s: no cited dataset matched the catalog, no cases emitted", paper_id or "<unnamed>")
        return []

    cases: list[BenchmarkCase] = []
    keyword_query = " ".join(k.strip() for k in extraction.keywords if k.strip())
    if keyword_query:
        cases.append(BenchmarkCase(query=keyword_query, query_type=QueryType.KEYWORD,
                                   groundtruth=groundtruth, paper_id=paper_id))
    for statement in extraction.i_want_to:
        if statement.strip():
            cases.append(BenchmarkCase(query=statement.strip(), query_type=QueryType.TASK,
                                       groundtruth=groundtruth, paper_id=paper_id))
    return cases

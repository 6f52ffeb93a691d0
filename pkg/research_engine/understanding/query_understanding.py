import json
import pathlib
import re
from datetime import date
from logging import getLogger
from typing import Iterable, Sequence

from rapidfuzz.distance import OSA

from research_engine.configuration.config import EngineConfig, UnderstandingConfig, read_json_file
from research_engine.models.catalog_model import BBox
from research_engine.models.errors import DataError, EmptyQueryError, ProviderError
from research_engine.models.query_model import IntentType, QueryConstraints, UnderstandingMode, UnderstoodQuery
from research_engine.providers.llm_provider import LlmProvider, PromptLibrary
from research_engine.regex_manager.regex_manager import (
    YEAR_RANGE_REGEX, YEAR_REGEX, contains_term, term_regex, trigger_regex,
)

log = getLogger(__name__)

_SPELL_WORD_REGEX = re.compile(r"[0-9A-Za-z]+")
# shorter words are too close to too many others to correct safely
MIN_SPELL_LENGTH = 5


def load_gazetteer(path: pathlib.Path) -> list[str]:
    """Flatten the platform / dataset / variable term lists into one term list."""
    data = read_json_file(path, "gazetteer")
    if isinstance(data, list):
        return [str(term) for term in data]
    if not isinstance(data, dict):
        raise DataError(f"gazetteer {path} must be a list or an object of lists")
    terms: list[str] = []
    for group in data.values():
        if not isinstance(group, list):
            raise DataError(f"gazetteer {path} must be a list or an object of lists")
        for term in group:
            if term not in terms:
                terms.append(str(term))
    return terms


def load_regions(path: pathlib.Path) -> dict[str, BBox]:
    data = read_json_file(path, "region file")
    if not isinstance(data, dict):
        raise DataError(f"region file {path} must be a JSON object of name -> bounding box")
    regions: dict[str, BBox] = {}
    for name, box in data.items():
        if not isinstance(box, list) or len(box) != 4 or not all(isinstance(v, (int, float)) for v in box):
            raise DataError(f"region {name!r} needs [west, south, east, north]")
        west, south, east, north = (float(v) for v in box)
        if not (-90 <= south <= north <= 90):
            raise DataError(f"region {name!r} has latitudes out of order")
        regions[name] = (west, south, east, north)
    return regions


def load_topics(path: pathlib.Path) -> dict[str, list[str]]:
    data = read_json_file(path, "topic map")
    if not isinstance(data, dict) or not all(isinstance(terms, list) for terms in data.values()):
        raise DataError(f"topic map {path} must be a JSON object of trigger -> term list")
    return {trigger: [str(term) for term in terms] for trigger, terms in data.items()}


def spelling_vocabulary(gazetteer: Iterable[str]) -> list[str]:
    vocabulary = set()
    for term in gazetteer:
        for word in _SPELL_WORD_REGEX.findall(term):
            if word.isalpha():
                vocabulary.add(word.lower())
    return sorted(vocabulary)


def spell_correct(query: str, vocabulary: Sequence[str]) -> str:
    """
    Edit-distance-1 correction (transpositions count as one edit) against the gazetteer vocabulary.

    A word is only replaced when exactly one vocabulary word is within distance 1.
    """
    known = set(vocabulary)
    pieces = []
    cursor = 0
    for match in _SPELL_WORD_REGEX.finditer(query):
        word = match.group(0)
        lowered = word.lower()
        if len(word) < MIN_SPELL_LENGTH or not word.isalpha() or lowered in known:
            continue
        candidates = [v for v in vocabulary if OSA.distance(lowered, v, score_cutoff=1) <= 1]
        if len(candidates) != 1:
            continue
        pieces.append(query[cursor:match.start()])
        pieces.append(candidates[0])
        cursor = match.end()
        log.debug("Spell pass: %s -> %s", word, candidates[0])
    pieces.append(query[cursor:])
    return "".join(pieces)


def _rules_intent(query: str, gazetteer: Sequence[str]) -> IntentType:
    return IntentType.TYPE_A if any(contains_term(query, term) for term in gazetteer) else IntentType.TYPE_B


def classify_intent(query: str, mode: UnderstandingMode, provider: LlmProvider | None, gazetteer: Sequence[str],
                    prompts: PromptLibrary | None = None, warnings: list[str] | None = None) -> IntentType:
    """
    Type A (specific data request) vs Type B (broad research goal).

    PROVIDER mode asks the model for "A" or "B"; anything else, or a transport failure,
    falls back to the gazetteer rule and records a warning.
    """
    mode = UnderstandingMode(mode)
    if mode is UnderstandingMode.RULES:
        return _rules_intent(query, gazetteer)
    if provider is None or prompts is None:
        raise DataError("PROVIDER intent mode requires a provider and prompt templates")

    try:
        reply = provider.complete(prompts.render("intent", query=query)).strip()
    except ProviderError as e:
        reply = None
        message = f"intent provider failed ({e}); used gazetteer rules"
    else:
        message = f"intent provider replied {reply[:40]!r}; used gazetteer rules"

    if reply == "A":
        return IntentType.TYPE_A
    if reply == "B":
        return IntentType.TYPE_B

    log.warning(message)
    if warnings is not None:
        warnings.append(message)
    return _rules_intent(query, gazetteer)


def _rules_rewrite(query: str, topic_map: dict[str, list[str]]) -> tuple[str, str]:
    added: list[str] = []
    matched: list[str] = []
    for trigger, terms in topic_map.items():
        if not trigger_regex(trigger).search(query):
            continue
        matched.append(trigger)
        for term in terms:
            if term not in added and not contains_term(query, term):
                added.append(term)
    if not added:
        return query, "no research topic recognized; query kept as written"
    return f"{query} {' '.join(added)}", f"topics {', '.join(matched)} call for: {', '.join(added)}"


def _parse_rewrite(reply: str) -> tuple[str, str] | None:
    text = reply.strip()
    candidates = [text]
    braces = re.search(r"\{.*\}", text, re.DOTALL)
    if braces and braces.group(0) != text:
        candidates.append(braces.group(0))

    for candidate in candidates:
        try:
            data = json.loads(candidate, strict=False)
        except json.JSONDecodeError:
            continue
        if not isinstance(data, dict):
            continue
        rewritten = data.get("query")
        if not isinstance(rewritten, str) or not rewritten.strip():
            return None
        reasoning = data.get("reasoning")
        reasoning = " ".join(reasoning.split()) if isinstance(reasoning, str) else ""
        return " ".join(rewritten.split()), reasoning
    return None


def rewrite_query(query: str, mode: UnderstandingMode, provider: LlmProvider | None,
                  topic_map: dict[str, list[str]], prompts: PromptLibrary | None = None,
                  warnings: list[str] | None = None) -> tuple[str, str]:
    """
    Turn a research goal into a data-oriented query.

    Returns:
        (rewritten query, reasoning)
    """
    mode = UnderstandingMode(mode)
    if mode is UnderstandingMode.RULES:
        return _rules_rewrite(query, topic_map)
    if provider is None or prompts is None:
        raise DataError("PROVIDER rewrite mode requires a provider and prompt templates")

    prompt = prompts.render("rewrite", query=query)
    problem = "unparseable reply"
    for attempt in range(2):
        try:
            parsed = _parse_rewrite(provider.complete(prompt))
        except ProviderError as e:
            parsed = None
            problem = f"provider error: {e}"
        if parsed is not None:
            return parsed
        log.debug("Rewrite attempt %d failed: %s", attempt + 1, problem)

    message = f"rewrite provider failed twice ({problem}); used topic rules"
    log.warning(message)
    if warnings is not None:
        warnings.append(message)
    return _rules_rewrite(query, topic_map)


def extract_constraints(query: str, region_gazetteer: dict[str, BBox]) -> QueryConstraints:
    """
    Years and year ranges become a temporal window, the longest region name a bounding box.

    Reversed ranges are swapped; several loose years span from the earliest to the latest.
    """
    temporal = None
    range_match = YEAR_RANGE_REGEX.search(query)
    if range_match:
        first, second = sorted((int(range_match.group(1)), int(range_match.group(2))))
        temporal = (date(first, 1, 1), date(second, 12, 31))
    else:
        years = [int(y) for y in YEAR_REGEX.findall(query)]
        if years:
            temporal = (date(min(years), 1, 1), date(max(years), 12, 31))

    spatial = None
    for name in sorted(region_gazetteer, key=lambda n: (-len(n), n)):
        if term_regex(name).search(query):
            spatial = region_gazetteer[name]
            break

    return QueryConstraints(temporal=temporal, spatial=spatial)


class QueryUnderstanding:
    """Stage 0: intent, rewrite, constraints."""

    def __init__(self, gazetteer: Sequence[str], regions: dict[str, BBox], topics: dict[str, list[str]],
                 config: UnderstandingConfig | None = None, provider: LlmProvider | None = None,
                 prompts: PromptLibrary | None = None):
        self.gazetteer = list(gazetteer)
        self.vocabulary = spelling_vocabulary(self.gazetteer)
        self.regions = regions
        self.topics = topics
        self.config = config or UnderstandingConfig()
        self.provider = provider
        self.prompts = prompts

    @classmethod
    def from_config(cls, config: EngineConfig, provider: LlmProvider | None = None) -> "QueryUnderstanding":
        needs_prompts = UnderstandingMode.PROVIDER in (config.understanding.intent_mode,
                                                       config.understanding.rewrite_mode)
        return cls(
            gazetteer=load_gazetteer(config.paths.gazetteer),
            regions=load_regions(config.paths.regions),
            topics=load_topics(config.paths.topics),
            config=config.understanding,
            provider=provider,
            prompts=PromptLibrary.load(config.paths.prompts) if needs_prompts else None,
        )

    def understand(self, query: str) -> UnderstoodQuery:
        original = query.strip()
        if not original:
            raise EmptyQueryError()

        warnings: list[str] = []
        intent = classify_intent(original, self.config.intent_mode, self.provider, self.gazetteer,
                                 self.prompts, warnings)

        reasoning = None
        if intent is IntentType.TYPE_A:
            rewritten = spell_correct(original, self.vocabulary) if self.config.spell_correction else original
        else:
            rewritten, reasoning = rewrite_query(original, self.config.rewrite_mode, self.provider, self.topics,
                                                 self.prompts, warnings)

        # constraints come from what the user typed, never from the rewrite
        constraints = extract_constraints(original, self.regions)
        return UnderstoodQuery(original=original, intent=intent, rewritten=rewritten or original,
                               rewrite_reasoning=reasoning, constraints=constraints, warnings=warnings)


def understand(query: str, config: EngineConfig, provider: LlmProvider | None = None) -> UnderstoodQuery:
    return QueryUnderstanding.from_config(config, provider).understand(query)

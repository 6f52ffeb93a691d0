import json
from datetime import date

import pytest

from research_engine.configuration.config import EngineConfig
from research_engine.models.errors import EmptyQueryError, ProviderError
from research_engine.models.query_model import IntentType, UnderstandingMode
from research_engine.providers.llm_provider import FailingProvider, RemoteLlmProvider, StubProvider
from research_engine.understanding.query_understanding import (
    QueryUnderstanding, classify_intent, extract_constraints, rewrite_query, spell_correct, understand,
)

RULES = UnderstandingMode.RULES
PROVIDER = UnderstandingMode.PROVIDER


def test_spell_pass_fixes_single_transposition(understanding):
    uq = understanding.understand("percipitation data GPM")
    assert uq.intent is IntentType.TYPE_A
    assert uq.rewritten == "precipitation data GPM"
    assert uq.rewrite_reasoning is None


def test_spell_pass_leaves_short_ambiguous_and_known_words():
    vocabulary = ["precipitation", "cloud", "clout", "salinity"]
    assert spell_correct("clod", vocabulary) == "clod"
    assert spell_correct("cloux", vocabulary) == "cloux"
    assert spell_correct("salinty and precipitation", vocabulary) == "salinity and precipitation"
    assert spell_correct("MOD11C3", vocabulary) == "MOD11C3"


def test_type_b_rules_rewrite_appends_topic_terms(understanding):
    uq = understanding.understand("flood analysis")
    assert uq.intent is IntentType.TYPE_B
    assert uq.rewritten.startswith("flood analysis ")
    assert "precipitation" in uq.rewritten
    assert "flood" in uq.rewrite_reasoning


def test_trigger_matches_word_prefix(understanding):
    rewritten, _ = rewrite_query("I want to study Florida flooding", RULES, None, understanding.topics)
    assert "storm surge" in rewritten


def test_rewrite_without_topic_keeps_query(understanding):
    rewritten, reasoning = rewrite_query("what is out there", RULES, None, understanding.topics)
    assert rewritten == "what is out there"
    assert reasoning


def test_constraints_come_from_the_original_query(understanding):
    uq = understanding.understand("I want to study Florida flooding")
    assert uq.constraints.spatial == understanding.regions["Florida"]
    assert uq.constraints.temporal is None


@pytest.mark.parametrize("query, expected", [
    ("ERA5 temperature 2020", (date(2020, 1, 1), date(2020, 12, 31))),
    ("rainfall 1984-2014", (date(1984, 1, 1), date(2014, 12, 31))),
    ("rainfall 1984 to 2014", (date(1984, 1, 1), date(2014, 12, 31))),
    ("rainfall 2015--2010", (date(2010, 1, 1), date(2015, 12, 31))),
    ("compare 2005 with 2001", (date(2001, 1, 1), date(2005, 12, 31))),
    ("MOD11C3 V006 land temperature", None),
])
def test_temporal_constraints(understanding, query, expected):
    assert extract_constraints(query, understanding.regions).temporal == expected


def test_longest_region_name_wins(understanding):
    constraints = extract_constraints("water levels in the Lower Mekong", understanding.regions)
    assert constraints.spatial == understanding.regions["Lower Mekong"]
    assert extract_constraints("no place here", understanding.regions).is_empty


def test_empty_query_is_rejected(understanding):
    with pytest.raises(EmptyQueryError, match="empty query"):
        understanding.understand("   ")


def test_provider_intent_reply_is_used(understanding, prompts):
    query = "ERA5 temperature 2020"
    provider = StubProvider.from_prompts({prompts.render("intent", query=query): " B\n"})
    assert classify_intent(query, PROVIDER, provider, understanding.gazetteer, prompts) is IntentType.TYPE_B


def test_unexpected_intent_reply_falls_back_to_rules(understanding, prompts):
    warnings = []
    provider = StubProvider(default="Type A, probably")
    intent = classify_intent("how to predict drought in Africa", PROVIDER, provider, understanding.gazetteer,
                             prompts, warnings)
    assert intent is IntentType.TYPE_B
    assert len(warnings) == 1


def test_provider_rewrite_parses_json(understanding, prompts):
    query = "I want to study Florida flooding"
    reply = json.dumps({
        "reasoning": "Flooding in Florida is driven by heavy rain and storm surge.",
        "query": "precipitation extreme rainfall storm surge sea level Florida Gulf of Mexico",
    })
    provider = StubProvider.from_prompts({prompts.render("rewrite", query=query): reply})
    rewritten, reasoning = rewrite_query(query, PROVIDER, provider, understanding.topics, prompts)
    assert rewritten == "precipitation extreme rainfall storm surge sea level Florida Gulf of Mexico"
    assert reasoning.startswith("Flooding in Florida")


def test_provider_rewrite_tolerates_surrounding_prose(understanding, prompts):
    provider = StubProvider(default='Here you go:\n{"reasoning": "r", "query": "soil\nmoisture drought"}\nThanks')
    rewritten, _ = rewrite_query("drought", PROVIDER, provider, understanding.topics, prompts)
    assert rewritten == "soil moisture drought"


def test_unparseable_rewrite_retries_once_then_uses_rules(understanding, prompts):
    provider = StubProvider(default='{"reasoning": "no query key"}')
    warnings = []
    rewritten, _ = rewrite_query("flood analysis", PROVIDER, provider, understanding.topics, prompts, warnings)
    assert provider.calls == 2
    assert "precipitation" in rewritten
    assert len(warnings) == 1


def test_failing_provider_degrades_to_rules(understanding, prompts):
    config = understanding.config.model_copy(update={"intent_mode": PROVIDER, "rewrite_mode": PROVIDER})
    provider = FailingProvider()
    degraded = QueryUnderstanding(understanding.gazetteer, understanding.regions, understanding.topics, config,
                                  provider, prompts)
    uq = degraded.understand("how to predict drought in Africa")
    assert uq.intent is IntentType.TYPE_B
    assert "soil moisture" in uq.rewritten
    assert len(uq.warnings) == 2
    assert uq.constraints.spatial == understanding.regions["Africa"]


def test_understand_from_config():
    uq = understand("ERA5 temperature 2020", EngineConfig())
    assert uq.intent is IntentType.TYPE_A
    assert uq.constraints.temporal == (date(2020, 1, 1), date(2020, 12, 31))
    assert uq.warnings == []


def test_non_json_provider_reply_degrades_to_rules(understanding, prompts, garbled_endpoint):
    provider = RemoteLlmProvider(garbled_endpoint, timeout=10)
    with pytest.raises(ProviderError, match="not valid JSON"):
        provider.complete("hello")

    warnings = []
    intent = classify_intent("how to predict drought in Africa", PROVIDER, provider, understanding.gazetteer,
                             prompts, warnings)
    assert intent is IntentType.TYPE_B
    assert len(warnings) == 1 and "used gazetteer rules" in warnings[0]


@pytest.mark.parametrize("query", [
    "ERA5 temperature 2020",
    "I want to study Florida flooding",
    "percipitation data GPM",
    "how to predict drought in Africa",
])
def test_rules_intent_ignores_letter_case(understanding, query):
    expected = classify_intent(query, RULES, None, understanding.gazetteer)
    for variant in (query.lower(), query.upper(), query.swapcase()):
        assert classify_intent(variant, RULES, None, understanding.gazetteer) is expected

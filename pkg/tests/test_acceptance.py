"""End-to-end properties checked against brute-force oracles and synthetic corpora."""
import json
import math
import random
from collections import Counter

import numpy as np
import pytest

from conftest import FIXTURE_BENCH, FIXTURE_CATALOG, MODIS_IDS
from research_engine.configuration.config import EngineConfig, apply_overrides
from research_engine.evalbench.benchmark import evaluate, load_benchmark
from research_engine.evalbench.groundtruth import fuzzy_match
from research_engine.evalbench.metrics import average_precision, reciprocal_rank, recall_at_k
from research_engine.lexical.bm25_index import build_lexical_index, lexical_search
from research_engine.models.catalog_model import Catalog, CatalogRecord
from research_engine.models.params_model import FusionParams
from research_engine.models.query_model import IntentType, UnderstandingMode, UnderstoodQuery
from research_engine.pipeline.search_pipeline import SearchEngine, recall
from research_engine.providers.llm_provider import FailingProvider
from research_engine.semantic.embedder import HashEmbedder
from research_engine.semantic.vector_index import build_vector_index, vector_search
from research_engine.textproc.text_tools import EMPTY_ABBREVIATIONS, tokenize
from research_engine.understanding.query_understanding import classify_intent

K1, B = 1.2, 0.75


def random_catalog(rng: random.Random, max_docs: int = 200, max_vocab: int = 50):
    words = [f"w{i}" for i in range(rng.randint(5, max_vocab))]
    n = rng.randint(1, max_docs)
    ids = [f"d{j:03d}" for j in range(n)]
    rng.shuffle(ids)
    records = [CatalogRecord(id=i, title=" ".join(rng.choices(words, k=rng.randint(1, 30)))) for i in ids]
    return Catalog(records=tuple(records)), words


def random_query(rng: random.Random, words):
    return " ".join(rng.choices(words + ["unseen"], k=rng.randint(1, 4)))


# ranking metrics against a brute-force recomputation

def naive_metrics(ranked, gt, k):
    recall = sum(1 for g in gt if g in ranked[:k]) / len(gt)
    positions = sorted(ranked.index(g) + 1 for g in gt if g in ranked)
    rr = 1.0 / positions[0] if positions else 0.0
    ap = sum((n + 1) / p for n, p in enumerate(positions)) / len(gt)
    return recall, rr, ap


def test_metrics_match_brute_force():
    rng = random.Random(11)
    pool = [f"r{i}" for i in range(80)]
    for _ in range(1000):
        ranked = rng.sample(pool, rng.randint(0, 50))
        gt = set(rng.sample(pool, rng.randint(1, 10)))
        k = rng.randint(1, 60)
        expected = naive_metrics(ranked, gt, k)
        actual = (recall_at_k(ranked, gt, k), reciprocal_rank(ranked, gt), average_precision(ranked, gt))
        assert actual == pytest.approx(expected, abs=1e-12)


# BM25 against scoring every document

def naive_bm25(catalog, query):
    docs = [tokenize(record.title) for record in catalog]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    df = Counter(term for d in docs for term in set(d))
    scored = []
    for record, tokens in zip(catalog, docs):
        score = 0.0
        for term in dict.fromkeys(tokenize(query)):
            tf = tokens.count(term)
            if tf:
                idf = math.log(1 + (n - df[term] + 0.5) / (df[term] + 0.5))
                score += idf * (tf * (K1 + 1)) / (tf + K1 * (1 - B + B * len(tokens) / avgdl))
        if score > 0:
            scored.append((record.id, score))
    return sorted(scored, key=lambda item: (-item[1], item[0]))


def test_bm25_matches_brute_force():
    rng = random.Random(23)
    for _ in range(100):
        catalog, words = random_catalog(rng)
        index = build_lexical_index(catalog, EMPTY_ABBREVIATIONS)
        for _ in range(20):
            query = random_query(rng, words)
            expected = naive_bm25(catalog, query)
            hits = lexical_search(index, query, EMPTY_ABBREVIATIONS, k=len(catalog))
            assert [h.id for h in hits] == [i for i, _ in expected]
            for hit, (_, score) in zip(hits, expected):
                assert abs(hit.score - score) <= 1e-9


# cosine search against comparing every vector

def test_vector_search_matches_brute_force():
    rng = random.Random(37)
    embedder = HashEmbedder()
    for _ in range(100):
        catalog, words = random_catalog(rng)
        index = build_vector_index(catalog, embedder, EMPTY_ABBREVIATIONS)
        vectors = {record.id: embedder.embed(record.title) for record in catalog}
        for _ in range(20):
            query = random_query(rng, words)
            q = embedder.embed(query)
            oracle = {i: float(np.dot(q, v)) for i, v in vectors.items() if v.any()}
            expected = sorted(oracle.items(), key=lambda item: (-item[1], item[0]))[:10]
            hits = vector_search(index, embedder, query, k=10)
            assert len(hits) == len(expected)
            for hit, (expected_id, expected_score) in zip(hits, expected):
                assert abs(hit.score - expected_score) <= 1e-9
                if hit.id != expected_id:
                    assert abs(oracle[hit.id] - expected_score) <= 1e-9


# abbreviation expansion on a synthetic corpus

@pytest.fixture(scope="module")
def acronym_corpus():
    """500 records: 50 relevant ones cite only an acronym, 20 queries spell out only the full form."""
    rng = random.Random(2024)
    filler = [f"filler{i}" for i in range(300)]
    abbreviations = {f"ZQ{i:02d}": f"lorum{i} ipsa{i} dolor{i}" for i in range(20)}

    records, groundtruth = [], {}
    for key_number, key in enumerate(abbreviations):
        copies = 3 if key_number < 10 else 2
        for _ in range(copies):
            record_id = f"R{len(records):03d}"
            title = " ".join([key] + rng.sample(filler, 5))
            records.append(CatalogRecord(id=record_id, title=title))
            groundtruth.setdefault(abbreviations[key], set()).add(record_id)
    for n in range(450):
        records.append(CatalogRecord(id=f"D{n:03d}", title=" ".join(rng.sample(filler, 6))))
    rng.shuffle(records)
    return Catalog(records=tuple(records)), abbreviations, groundtruth


def mean_recall(search, groundtruth, k=10):
    return sum(recall_at_k([h.id for h in search(query)], gt, k) for query, gt in groundtruth.items()) \
        / len(groundtruth)


def test_expansion_improves_recall_on_both_paths(acronym_corpus):
    catalog, abbreviations, groundtruth = acronym_corpus
    embedder = HashEmbedder()
    results = {}
    for name, table in (("with", abbreviations), ("without", EMPTY_ABBREVIATIONS)):
        lexical = build_lexical_index(catalog, table)
        vector = build_vector_index(catalog, embedder, table)
        results[name] = (
            mean_recall(lambda q: lexical_search(lexical, q, table, k=10), groundtruth),
            mean_recall(lambda q: vector_search(vector, embedder, q, k=10), groundtruth),
        )
    assert results["with"][0] > results["without"][0]
    assert results["with"][1] > results["without"][1]
    assert results["with"][0] == 1.0


def test_fused_pool_covers_each_single_path(acronym_corpus):
    catalog, abbreviations, groundtruth = acronym_corpus
    embedder = HashEmbedder()
    lexical = build_lexical_index(catalog, abbreviations)
    vector = build_vector_index(catalog, embedder, abbreviations)
    params = FusionParams(pool_size=100)
    queries = list(groundtruth) + ["filler1 filler2 ZQ05", "filler77"]
    for query in queries:
        gt = groundtruth.get(query) or {r.id for r in catalog if "filler77" in r.title.split()}
        uq = UnderstoodQuery(original=query, intent=IntentType.TYPE_A, rewritten=query)
        pool = {c.id for c in recall(uq, lexical, vector, embedder, abbreviations, params, catalog=catalog)}
        for k in (10, 20, 50, 100):
            lexical_top = {h.id for h in lexical_search(lexical, query, abbreviations, k)}
            semantic_top = {h.id for h in vector_search(vector, embedder, query, k)}
            assert pool & gt >= lexical_top & gt
            assert pool & gt >= semantic_top & gt


# query understanding and benchmark construction on the cited examples

@pytest.mark.parametrize("query, intent", [
    ("percipitation data GPM", IntentType.TYPE_A),
    ("I want to study Florida flooding", IntentType.TYPE_B),
    ("ERA5 temperature 2020", IntentType.TYPE_A),
    ("how to predict drought in Africa", IntentType.TYPE_B),
])
def test_rules_intent_on_labeled_examples(understanding, query, intent):
    assert classify_intent(query, UnderstandingMode.RULES, None, understanding.gazetteer) is intent


def test_citation_match_counts(cited_catalog):
    assert len(fuzzy_match("GPM IMERG Final Precipitation L3 1 day 0.1 degree x 0.1 degree V06",
                           cited_catalog)) == 1
    assert fuzzy_match("MODIS", cited_catalog) == MODIS_IDS


# whole-engine behaviour with stub and failing providers

def test_stubbed_engine_is_deterministic(tmp_path):
    stubs = tmp_path / "stubs.json"
    stubs.write_text(json.dumps({"*": "A"}), encoding="utf-8")
    config = apply_overrides(EngineConfig(), {
        "paths.catalog": str(FIXTURE_CATALOG),
        "provider.kind": "stub",
        "provider.stub_table": str(stubs),
        "understanding.intent_mode": "PROVIDER",
    })
    cases = load_benchmark(FIXTURE_BENCH)
    first, second = SearchEngine.from_config(config), SearchEngine.from_config(config)
    for case in cases:
        response = first.search(case.query)
        assert response.explain.understood.intent is IntentType.TYPE_A
        assert response.model_dump_json() == second.search(case.query).model_dump_json()

    serial = evaluate(cases, first, ks=[10, 20], result_depth=20, workers=1)
    parallel = evaluate(cases, second, ks=[10, 20], result_depth=20, workers=4)
    assert serial.model_dump_json() == parallel.model_dump_json()


def test_failing_provider_never_aborts_a_query(fixture_catalog):
    config = apply_overrides(EngineConfig(), {
        "understanding.intent_mode": "PROVIDER",
        "understanding.rewrite_mode": "PROVIDER",
        "rerank.mode": "provider",
    })
    engine = SearchEngine.from_config(config, provider=FailingProvider(), catalog=fixture_catalog)
    cases = load_benchmark(FIXTURE_BENCH)

    report = evaluate(cases, engine, ks=[10], result_depth=10)
    assert report.overall.failed == 0
    assert report.overall.n == len(cases)

    for case in cases:
        response = engine.search(case.query)
        assert response.hits
        assert response.explain.rerank_failed
        assert len(response.explain.warnings) >= 2

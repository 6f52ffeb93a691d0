import math
from concurrent.futures import ThreadPoolExecutor
from logging import getLogger
from typing import Sequence

from tqdm import tqdm

from research_engine.models.catalog_model import Catalog
from research_engine.models.errors import IndexBuildError
from research_engine.models.params_model import Bm25Params
from research_engine.models.result_model import Provenance, ScoredCandidate
from research_engine.textproc.text_tools import AbbrDict, TokenStream, expand_abbreviations, indexed_text, tokenize

log = getLogger(__name__)

FIELD_COMPOSITION = ("title", "summary", "variables", "keywords")

Posting = tuple[int, int]


class LexIndex:
    """Inverted index over one concatenated text field per catalog record."""
    __slots__ = ("postings", "doc_lengths", "avg_doc_length", "doc_count", "doc_ids",
                 "fields", "params", "abbreviation_expansion", "_doc_terms")

    def __init__(self, postings: dict[str, list[Posting]], doc_lengths: list[int], doc_ids: list[str],
                 params: Bm25Params, fields: Sequence[str] = FIELD_COMPOSITION, abbreviation_expansion: bool = True):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.doc_count = len(doc_lengths)
        self.avg_doc_length = sum(doc_lengths) / self.doc_count if self.doc_count else 0.0
        self.doc_ids = doc_ids
        self.fields = tuple(fields)
        self.params = params
        self.abbreviation_expansion = abbreviation_expansion

        self._doc_terms: list[dict[str, int]] = [{} for _ in range(self.doc_count)]
        for term, plist in postings.items():
            for doc, tf in plist:
                self._doc_terms[doc][term] = tf

    def document_frequency(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def term_frequency(self, term: str, doc: int) -> int:
        return self._doc_terms[doc].get(term, 0)

    def idf(self, term: str) -> float:
        df = self.document_frequency(term)
        return math.log(1 + (self.doc_count - df + 0.5) / (df + 0.5))

    def term_weight(self, term: str, tf: int, doc: int) -> float:
        k1, b = self.params.k1, self.params.b
        norm = 1 - b + b * self.doc_lengths[doc] / self.avg_doc_length if self.avg_doc_length else 1.0
        return self.idf(term) * (tf * (k1 + 1)) / (tf + k1 * norm)

    def to_dict(self) -> dict:
        return {
            "fields": list(self.fields),
            "params": self.params.model_dump(),
            "abbreviation_expansion": self.abbreviation_expansion,
            "doc_ids": self.doc_ids,
            "doc_lengths": self.doc_lengths,
            "postings": {term: [list(p) for p in plist] for term, plist in self.postings.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LexIndex":
        return cls(
            postings={term: [(int(d), int(tf)) for d, tf in plist] for term, plist in data["postings"].items()},
            doc_lengths=[int(n) for n in data["doc_lengths"]],
            doc_ids=list(data["doc_ids"]),
            params=Bm25Params(**data["params"]),
            fields=data.get("fields", FIELD_COMPOSITION),
            abbreviation_expansion=bool(data.get("abbreviation_expansion", True)),
        )


def build_lexical_index(catalog: Catalog, abbreviations: AbbrDict, params: Bm25Params | None = None,
                        workers: int = 1, show_progress: bool = False) -> LexIndex:
    """
    Build the BM25 inverted index: expand abbreviations, tokenize, count.

    Postings are sorted by document position whatever the number of workers.
    """
    if len(catalog) == 0:
        raise IndexBuildError("nothing to index")
    params = params or Bm25Params()

    def analyze(record) -> TokenStream:
        return tokenize(indexed_text(record, abbreviations))

    records = list(catalog)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            token_streams = list(tqdm(executor.map(analyze, records), total=len(records),
                                      desc="Tokenizing", disable=not show_progress))
    else:
        token_streams = [analyze(r) for r in tqdm(records, desc="Tokenizing", disable=not show_progress)]

    postings: dict[str, list[Posting]] = {}
    doc_lengths: list[int] = []
    for doc, tokens in enumerate(token_streams):
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((doc, tf))

    log.info("Built lexical index: %d documents, %d terms", len(doc_lengths), len(postings))
    return LexIndex(postings, doc_lengths, catalog.ids(), params, abbreviation_expansion=bool(abbreviations))


def bm25_score(index: LexIndex, query_terms: TokenStream, doc: int) -> float:
    if not 0 <= doc < index.doc_count:
        raise IndexError(f"document position {doc} out of range (0..{index.doc_count - 1})")
    score = 0.0
    for term in dict.fromkeys(query_terms):
        tf = index.term_frequency(term, doc)
        if tf:
            score += index.term_weight(term, tf, doc)
    return score


def lexical_search(index: LexIndex, query: str, abbreviations: AbbrDict, k: int,
                   expand_query: bool = False) -> list[ScoredCandidate]:
    """
    Score every document holding at least one query term and return the top k.

    Ties are broken by ascending record id. Abbreviations are only expanded in the query
    when `expand_query` is set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    text = expand_abbreviations(query, abbreviations) if expand_query else query
    terms = tokenize(text)

    # term-at-a-time accumulation, same summation order as bm25_score
    scores: dict[int, float] = {}
    for term in dict.fromkeys(terms):
        for doc, tf in index.postings.get(term, ()):
            scores[doc] = scores.get(doc, 0.0) + index.term_weight(term, tf, doc)

    ranked = sorted(scores.items(), key=lambda item: (-item[1], index.doc_ids[item[0]]))[:k]
    return [
        ScoredCandidate(id=index.doc_ids[doc], score=score, provenance=(Provenance.LEXICAL,),
                        lexical_rank=rank, lexical_score=score)
        for rank, (doc, score) in enumerate(ranked, start=1)
    ]

import pathlib
import re
from functools import lru_cache
from typing import Pattern

from research_engine.configuration.config import read_json_file
from research_engine.models.errors import ConfigError, DataError

TOKEN_SPLIT_REGEX = re.compile(r"[^0-9A-Za-z]+")

YEAR = r"(?:19|20)\d{2}"
YEAR_REGEX = re.compile(rf"(?<![0-9A-Za-z])({YEAR})(?![0-9A-Za-z])")
YEAR_RANGE_REGEX = re.compile(
    rf"(?<![0-9A-Za-z])({YEAR})\s*(?:-{{1,2}}|–|—|\s+to\s+)\s*({YEAR})(?![0-9A-Za-z])",
    re.IGNORECASE,
)

# "v06", "V006" and leading-zero numbers like "006" are version markers
VERSION_TOKEN_REGEX = re.compile(r"^(?:v0*(\d+)|0+(\d+))$")


@lru_cache(maxsize=4096)
def term_regex(term: str) -> Pattern:
    """Case-insensitive match of `term` delimited by non-alphanumeric characters (or the string ends)."""
    words = [re.escape(part) for part in term.split()]
    body = r"\s+".join(words)
    return re.compile(rf"(?<![0-9A-Za-z]){body}(?![0-9A-Za-z])", re.IGNORECASE)


@lru_cache(maxsize=4096)
def trigger_regex(trigger: str) -> Pattern:
    """A topic trigger matches any word starting with it ("flood" hits "flooding")."""
    return re.compile(rf"(?<![0-9A-Za-z]){re.escape(trigger)}[A-Za-z]*(?![0-9A-Za-z])", re.IGNORECASE)


def contains_term(text: str, term: str) -> bool:
    return term_regex(term).search(text) is not None


class UrlPatternSet:
    """
    Ordered URL patterns mapping a cited DOI / landing page to a catalog id.

    Every pattern must define a named group `id`.
    """

    def __init__(self, patterns: list[str]):
        self.patterns: list[Pattern] = []
        for raw in patterns:
            try:
                compiled = re.compile(raw, re.IGNORECASE)
            except re.error as e:
                raise ConfigError(f"invalid URL pattern {raw!r}: {e}") from e
            if "id" not in compiled.groupindex:
                raise ConfigError(f"URL pattern {raw!r} has no named group 'id'")
            self.patterns.append(compiled)

    @classmethod
    def load(cls, path: pathlib.Path | None) -> "UrlPatternSet":
        if path is None:
            return cls([])
        data = read_json_file(path, "URL pattern file")
        if not isinstance(data, list):
            raise DataError(f"URL pattern file {path} must be a JSON list")
        patterns = [entry.get("pattern") if isinstance(entry, dict) else entry for entry in data]
        if not all(isinstance(p, str) for p in patterns):
            raise DataError(f"URL pattern file {path} must list pattern strings or objects with a pattern key")
        return cls(patterns)

    def extract_ids(self, url: str) -> list[str]:
        found: list[str] = []
        for pattern in self.patterns:
            for match in pattern.finditer(url):
                candidate = match.group("id")
                if candidate and candidate not in found:
                    found.append(candidate)
        return found

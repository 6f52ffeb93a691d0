import pathlib
import re
from logging import getLogger
from types import MappingProxyType
from typing import Mapping

from research_engine.configuration.config import read_json_file
from research_engine.models.catalog_model import CatalogRecord
from research_engine.models.errors import DataError
from research_engine.regex_manager.regex_manager import TOKEN_SPLIT_REGEX

log = getLogger(__name__)

AbbrDict = Mapping[str, str]
TokenStream = list[str]

ABBREVIATION_KEY_REGEX = re.compile(r"^[A-Z0-9]{2,10}$")
# underscores glue product codes such as GPM_3IMERGDF together, so they are not delimiters here
_WORD_RUN_REGEX = re.compile(r"[0-9A-Za-z_]+")

EMPTY_ABBREVIATIONS: AbbrDict = MappingProxyType({})


def tokenize(text: str) -> TokenStream:
    """Split on every non-alphanumeric character and lowercase. No stemming, no stop words."""
    return [fragment.lower() for fragment in TOKEN_SPLIT_REGEX.split(text) if fragment]


def validate_abbreviations(entries: dict[str, str]) -> AbbrDict:
    for key, full_form in entries.items():
        if not isinstance(key, str) or not ABBREVIATION_KEY_REGEX.match(key):
            raise DataError(f"abbreviation {key!r} must be 2-10 uppercase letters or digits")
        if not isinstance(full_form, str) or not full_form.strip():
            raise DataError(f"abbreviation {key} has an empty full form")
        if full_form.strip() == key:
            raise DataError(f"abbreviation {key} maps to itself")
    # a full form holding another key would get expanded again on a second pass
    for key, full_form in entries.items():
        nested = [word for word in _WORD_RUN_REGEX.findall(full_form) if word in entries]
        if nested:
            raise DataError(f"full form of {key} contains the abbreviation {nested[0]}")
    return MappingProxyType({key: full_form.strip() for key, full_form in entries.items()})


def load_abbreviations(path: pathlib.Path | None, enabled: bool = True) -> AbbrDict:
    """
    Load an abbreviation dictionary from a JSON object file.

    Args:
        path: JSON file of abbreviation -> full form
        enabled: when False an empty dictionary is returned (index built without expansion)
    """
    if not enabled or path is None:
        return EMPTY_ABBREVIATIONS
    entries = read_json_file(path, "abbreviation file")
    if not isinstance(entries, dict):
        raise DataError(f"abbreviation file {path} must hold a JSON object")
    log.debug("Loaded %d abbreviations from %s", len(entries), path)
    return validate_abbreviations(entries)


def _is_expanded_at(text: str, end: int, full_form: str) -> bool:
    rest = text[end:].lstrip()
    return rest.startswith(f"({full_form}")


def _occurrences(text: str, abbreviations: AbbrDict) -> list[tuple[int, str, bool]]:
    found = []
    for match in _WORD_RUN_REGEX.finditer(text):
        word = match.group(0)
        full_form = abbreviations.get(word)
        if full_form is None:
            continue
        found.append((match.start(), word, _is_expanded_at(text, match.end(), full_form)))
    return found


def detect_abbreviations(text: str, abbreviations: AbbrDict) -> list[tuple[int, str]]:
    """Every delimited, case-sensitive occurrence of a dictionary key that is not already followed by its expansion."""
    if not abbreviations:
        return []
    return [(offset, word) for offset, word, expanded in _occurrences(text, abbreviations) if not expanded]


def expand_abbreviations(text: str, abbreviations: AbbrDict) -> str:
    """
    Insert " (Full Form)" after the first occurrence of each abbreviation.

    Only the first occurrence is considered: when it is already followed by its expansion the
    abbreviation is left alone, even if later occurrences are bare. One pass is a fixed point.
    """
    if not abbreviations:
        return text

    occurrences = _occurrences(text, abbreviations)
    seen: set[str] = set()
    insertions: dict[int, str] = {}
    for offset, word, expanded in occurrences:
        if word in seen:
            continue
        seen.add(word)
        if expanded:
            continue
        insertions[offset + len(word)] = f" ({abbreviations[word]})"

    if not insertions:
        return text

    pieces = []
    cursor = 0
    for position in sorted(insertions):
        pieces.append(text[cursor:position])
        pieces.append(insertions[position])
        cursor = position
    pieces.append(text[cursor:])
    return "".join(pieces)


def record_text(record: CatalogRecord) -> str:
    """The single indexed field: title + summary + variables + keywords."""
    parts = [record.title, record.summary, " ".join(record.variables), " ".join(record.keywords)]
    return " ".join(part for part in parts if part)


def indexed_text(record: CatalogRecord, abbreviations: AbbrDict) -> str:
    return expand_abbreviations(record_text(record), abbreviations)

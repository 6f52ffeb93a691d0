import json
import pathlib
from enum import Enum
from logging import getLogger

from pydantic import ValidationError

from research_engine.configuration.config import read_json_file
from research_engine.models.catalog_model import Catalog, CatalogRecord, VariableMap
from research_engine.models.errors import CatalogError, DataError

log = getLogger(__name__)


class IngestFormat(str, Enum):
    JSONL = "jsonl"


VIOLATION_EMPTY_ID = "empty id"
VIOLATION_LATITUDE_ORDER = "latitude order"
VIOLATION_TEMPORAL_ORDER = "temporal order"


def validate_record(record: CatalogRecord) -> list[str]:
    """Return one entry per failed record invariant; never raises."""
    violations: list[str] = []
    if not record.id or not record.id.strip():
        violations.append(VIOLATION_EMPTY_ID)
    if record.bbox is not None:
        # west > east is legal: the box crosses the antimeridian
        _, south, _, north = record.bbox
        if not (-90 <= south <= north <= 90):
            violations.append(VIOLATION_LATITUDE_ORDER)
    if record.temporal_start is not None and record.temporal_end is not None:
        if record.temporal_start > record.temporal_end:
            violations.append(VIOLATION_TEMPORAL_ORDER)
    return violations


def normalize_variables(record: CatalogRecord, variable_map: VariableMap) -> CatalogRecord:
    """Replace variable aliases by their canonical names, dropping duplicates (first occurrence wins)."""
    canonical: list[str] = []
    for variable in record.variables:
        name = variable_map.canonical(variable)
        if name not in canonical:
            canonical.append(name)
    if canonical == record.variables:
        return record
    return record.model_copy(update={"variables": canonical})


def load_variable_map(path: pathlib.Path | None, extra: pathlib.Path | None = None) -> VariableMap:
    """
    Load the shipped variable map, optionally merging a user file on top of it.
    """
    entries: dict[str, str] = {}
    for source in (path, extra):
        if source is None:
            continue
        data = read_json_file(source, "variable map")
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise DataError(f"variable map {source} must be a JSON object of alias -> canonical name")
        entries.update(data)

    aliases = {alias.lower(): canonical for alias, canonical in entries.items()}
    for canonical in set(entries.values()):
        target = aliases.get(canonical.lower())
        if target is not None and target.lower() != canonical.lower():
            raise DataError(f"canonical name {canonical!r} is itself an alias of {target!r}")
    return VariableMap(entries=entries)


def ingest_records(path: str | pathlib.Path, format: IngestFormat = IngestFormat.JSONL,
                   variable_map: VariableMap | None = None) -> Catalog:
    """
    Read a JSON Lines catalog dump.

    Args:
        path: catalog file, one record object per line
        format: only JSON Lines is supported
        variable_map: when given, variables are normalized while reading

    Returns:
        Catalog with every record in file order
    """
    if IngestFormat(format) is not IngestFormat.JSONL:
        raise CatalogError(f"unsupported catalog format {format}")

    records: list[CatalogRecord] = []
    first_seen: dict[str, int] = {}

    with open(path, "rb") as f:
        for line_number, raw_line in enumerate(f, start=1):
            try:
                line = raw_line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise CatalogError(f"line {line_number}: not valid UTF-8 ({e.reason})", line=line_number) from e
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise CatalogError(f"line {line_number}: not valid JSON ({e.msg})", line=line_number) from e
            if not isinstance(raw, dict):
                raise CatalogError(f"line {line_number}: expected a JSON object", line=line_number)

            try:
                record = CatalogRecord.model_validate(raw)
            except ValidationError as e:
                first = e.errors()[0]
                field = str(first["loc"][0]) if first["loc"] else None
                raise CatalogError(f"line {line_number}: field {field}: {first['msg']}",
                                   line=line_number, field=field) from e

            violations = validate_record(record)
            if violations:
                raise CatalogError(f"line {line_number}: record {record.id!r} violates {', '.join(violations)}",
                                   line=line_number, field=violations[0])

            if record.id in first_seen:
                raise CatalogError(
                    f"duplicate id {record.id!r} on lines {first_seen[record.id]} and {line_number}",
                    line=line_number, field="id")
            first_seen[record.id] = line_number

            if variable_map is not None:
                record = normalize_variables(record, variable_map)
            records.append(record)

    log.info("Ingested %d records from %s", len(records), path)
    return Catalog(records=tuple(records))


def write_records(catalog: Catalog, path: str | pathlib.Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in catalog:
            f.write(json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n")

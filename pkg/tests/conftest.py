import asyncio
import json
import pathlib
import socket
import threading
from typing import Callable

import pytest
from aiohttp import web

from research_engine.catalog.catalog_tools import ingest_records, load_variable_map
from research_engine.configuration.config import PAYLOAD_FOLDER, EngineConfig, apply_overrides
from research_engine.models.catalog_model import Catalog, CatalogRecord
from research_engine.pipeline.search_pipeline import SearchEngine
from research_engine.providers.llm_provider import PromptLibrary
from research_engine.textproc.text_tools import load_abbreviations
from research_engine.understanding.query_understanding import QueryUnderstanding

FIXTURE_CATALOG = PAYLOAD_FOLDER / "fixture_catalog.jsonl"
FIXTURE_BENCH = PAYLOAD_FOLDER / "fixture_bench.jsonl"

# five instrument products and five others, titles as cited in papers
CITED_RECORDS = [
    ("GPM_3IMERGDF", "GPM IMERG Final Precipitation L3 1 day 0.1 degree x 0.1 degree V06"),
    ("GPM_3IMERGM", "GPM IMERG Final Precipitation L3 1 month 0.1 degree x 0.1 degree V06"),
    ("GPM_3IMERGDL", "GPM IMERG Late Precipitation L3 1 day 0.1 degree x 0.1 degree V06"),
    ("MOD13C2", "MODIS/Terra Vegetation Indices Monthly L3 Global 0.05Deg CMG V061"),
    ("MOD11C3", "MODIS/Terra Land Surface Temperature Monthly L3 Global 0.05Deg CMG V006"),
    ("MCD12C1", "MODIS/Terra+Aqua Land Cover Type Yearly L3 Global 0.05Deg CMG V061"),
    ("MYD11A2", "MODIS/Aqua Land Surface Temperature/Emissivity 8-Day L3 Global 1km SIN Grid V061"),
    ("MOD08_M3", "MODIS/Terra Aerosol Cloud Water Vapor Ozone Monthly L3 Global 1Deg CMG"),
    ("M2T1NXSLV", "MERRA-2 tavg1_2d_slv_Nx: 2d,1-Hourly,Time-Averaged,Single-Level,Assimilation V5.12.4"),
    ("SPL3SMP", "SMAP L3 Radiometer Global Daily 36 km EASE-Grid Soil Moisture V008"),
]
MODIS_IDS = ["MOD13C2", "MOD11C3", "MCD12C1", "MYD11A2", "MOD08_M3"]


def write_jsonl(path: pathlib.Path, rows: list[dict]) -> pathlib.Path:
    path.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")
    return path


@pytest.fixture
def make_catalog() -> Callable[..., Catalog]:
    """make_catalog({"id": "A", "title": ...}, ...) or make_catalog(("A", "title text"), ...)"""

    def build(*rows) -> Catalog:
        records = []
        for row in rows:
            if isinstance(row, tuple):
                record_id, title = row
                row = {"id": record_id, "title": title}
            records.append(CatalogRecord(**row))
        return Catalog(records=tuple(records))

    return build


@pytest.fixture(scope="session")
def fixture_catalog() -> Catalog:
    return ingest_records(FIXTURE_CATALOG, variable_map=load_variable_map(PAYLOAD_FOLDER / "variable_map.json"))


@pytest.fixture(scope="session")
def cited_catalog() -> Catalog:
    return Catalog(records=tuple(CatalogRecord(id=i, title=t) for i, t in CITED_RECORDS))


@pytest.fixture(scope="session")
def abbreviations():
    return load_abbreviations(PAYLOAD_FOLDER / "abbreviations.json")


@pytest.fixture(scope="session")
def prompts() -> PromptLibrary:
    return PromptLibrary.load(PAYLOAD_FOLDER / "prompts")


@pytest.fixture(scope="session")
def understanding() -> QueryUnderstanding:
    return QueryUnderstanding.from_config(EngineConfig())


@pytest.fixture
def fixture_config() -> EngineConfig:
    return apply_overrides(EngineConfig(), {"paths.catalog": str(FIXTURE_CATALOG)})


@pytest.fixture(scope="session")
def fixture_engine(fixture_catalog) -> SearchEngine:
    return SearchEngine.from_config(EngineConfig(), catalog=fixture_catalog)


@pytest.fixture
def build_engine() -> Callable[..., SearchEngine]:
    def build(catalog: Catalog, config: EngineConfig = None, provider=None) -> SearchEngine:
        return SearchEngine.from_config(config or EngineConfig(), provider=provider, catalog=catalog)

    return build


@pytest.fixture
def garbled_endpoint():
    """URL of a local server that answers every POST with HTTP 200 and a body that is not JSON."""

    async def reply(request):
        return web.Response(text="<html>upstream timeout</html>", content_type="application/json")

    app = web.Application()
    app.router.add_post("/", reply)
    runner = web.AppRunner(app)
    loop = asyncio.new_event_loop()
    loop.run_until_complete(runner.setup())
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    loop.run_until_complete(web.SockSite(runner, sock).start())
    thread = threading.Thread(target=loop.run_forever, daemon=True)
    thread.start()

    yield f"http://127.0.0.1:{sock.getsockname()[1]}/"

    asyncio.run_coroutine_threadsafe(runner.cleanup(), loop).result()
    loop.call_soon_threadsafe(loop.stop)
    thread.join()
    loop.close()

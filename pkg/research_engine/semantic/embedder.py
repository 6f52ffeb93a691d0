import asyncio
from logging import getLogger
from typing import Protocol, Sequence, runtime_checkable

import aiohttp
import numpy as np
from anyio.from_thread import start_blocking_portal

from research_engine.configuration.config import EMBEDDER_API_KEY, EMBEDDER_ENDPOINT_OVERRIDE, EmbedderConfig
from research_engine.models.errors import ConfigError, ProviderError
from research_engine.textproc.text_tools import tokenize

log = getLogger(__name__)

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK_64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    value = FNV_OFFSET_BASIS
    for byte in data:
        value ^= byte
        value = (value * FNV_PRIME) & _MASK_64
    return value


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        return vector
    return vector / norm


@runtime_checkable
class Embedder(Protocol):
    """Anything that turns text into a fixed-length real vector, deterministically."""
    dimension: int

    def embed(self, text: str) -> np.ndarray:
        ...

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        ...


class HashEmbedder:
    """Hashed bag-of-tokens: FNV-1a(token) mod D bucket counts, L2-normalized."""

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ConfigError("embedding dimension must be positive")
        self.dimension = dimension
        self.name = f"hash-fnv1a-{dimension}"

    def bucket(self, token: str) -> int:
        return fnv1a_64(token.encode("utf-8")) % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            vector[self.bucket(token)] += 1.0
        return l2_normalize(vector)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(text) for text in texts]


class RemoteEmbedder:
    """
    HTTP embedding endpoint: POST {"input": [texts]} -> {"data": [{"embedding": [...]}, ...]}.

    Batches are sent with bounded concurrency; output order always equals input order.
    """

    def __init__(self, endpoint: str, dimension: int, model: str | None = None, api_key: str | None = None,
                 batch_size: int = 32, concurrency: int = 4, timeout: float = 30.0):
        self.endpoint = endpoint
        self.dimension = dimension
        self.model = model
        self.api_key = api_key
        self.batch_size = batch_size
        self.concurrency = concurrency
        self.timeout = timeout
        self.name = f"remote-{model or 'default'}-{dimension}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    async def _post_batch(self, session: aiohttp.ClientSession, semaphore: asyncio.Semaphore,
                          texts: Sequence[str], offset: int) -> list[np.ndarray]:
        payload = {"input": list(texts)}
        if self.model:
            payload["model"] = self.model
        async with semaphore:
            try:
                async with session.post(self.endpoint, json=payload, headers=self._headers()) as response:
                    if response.status != 200:
                        body = await response.text()
                        raise ProviderError(f"embedding endpoint returned HTTP {response.status}: {body[:300]}",
                                            index=offset)
                    data = await response.json()
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                raise ProviderError(f"embedding request failed: {e}", cause=e, index=offset) from e
            except ValueError as e:
                raise ProviderError(f"embedding response is not valid JSON: {e}", cause=e, index=offset) from e

        try:
            rows = [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as e:
            raise ProviderError("embedding response is missing data[].embedding", cause=e, index=offset) from e
        if len(rows) != len(texts):
            raise ProviderError(f"embedding endpoint returned {len(rows)} vectors for {len(texts)} inputs",
                                index=offset)

        vectors = []
        for position, row in enumerate(rows):
            try:
                vector = np.asarray(row, dtype=np.float64)
            except (TypeError, ValueError) as e:
                raise ProviderError("embedding holds non-numeric values", cause=e, index=offset + position) from e
            if vector.shape != (self.dimension,):
                raise ProviderError(f"embedding has length {vector.size}, expected {self.dimension}",
                                    index=offset + position)
            vectors.append(l2_normalize(vector))
        return vectors

    async def _embed_all(self, texts: Sequence[str]) -> list[np.ndarray]:
        semaphore = asyncio.Semaphore(self.concurrency)
        timeout = aiohttp.ClientTimeout(total=self.timeout)
        async with aiohttp.ClientSession(timeout=timeout) as session:
            batches = [
                self._post_batch(session, semaphore, texts[start:start + self.batch_size], start)
                for start in range(0, len(texts), self.batch_size)
            ]
            results = await asyncio.gather(*batches)
        return [vector for batch in results for vector in batch]

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        with start_blocking_portal() as portal:
            return portal.call(self._embed_all, list(texts))

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


def embed(embedder: Embedder, text: str) -> np.ndarray:
    return embedder.embed(text)


def build_embedder(config: EmbedderConfig) -> Embedder:
    if config.kind == "hash":
        return HashEmbedder(config.dimension)

    endpoint = EMBEDDER_ENDPOINT_OVERRIDE or config.endpoint
    if not endpoint:
        raise ConfigError("remote embedder selected but no endpoint configured")
    log.info("Using remote embedder at %s (dimension %d)", endpoint, config.dimension)
    return RemoteEmbedder(endpoint, config.dimension, model=config.model, api_key=EMBEDDER_API_KEY,
                          batch_size=config.batch_size, concurrency=config.concurrency, timeout=config.timeout)

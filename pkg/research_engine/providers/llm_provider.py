import asyncio
import hashlib
import pathlib
from logging import getLogger
from typing import Protocol, runtime_checkable

import aiohttp
from anyio.from_thread import start_blocking_portal

from research_engine.configuration.config import (
    PROVIDER_API_KEY, PROVIDER_ENDPOINT_OVERRIDE, ProviderConfig, read_json_file,
)
from research_engine.models.errors import ConfigError, DataError, ProviderError

log = getLogger(__name__)

STUB_DEFAULT_KEY = "*"


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@runtime_checkable
class LlmProvider(Protocol):
    def complete(self, prompt: str) -> str:
        ...


class RemoteLlmProvider:
    """OpenAI-compatible chat completion endpoint, called synchronously through an anyio portal."""

    def __init__(self, endpoint: str, model: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    async def _complete(self, prompt: str) -> str:
        payload = {
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        if self.model:
            payload["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        try:
            async with aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=self.timeout)) as session:
                async with session.post(self.endpoint, json=payload, headers=headers) as response:
                    if response.status != 200:
                        body = await response.text()
                        raise ProviderError(f"provider returned HTTP {response.status}: {body[:300]}")
                    data = await response.json()
        except (aiohttp.ClientError, asyncio.TimeoutError) as e:
            raise ProviderError(f"provider request failed: {e}", cause=e) from e
        except ValueError as e:
            raise ProviderError(f"provider response is not valid JSON: {e}", cause=e) from e

        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise ProviderError("provider response has no choices[0].message.content", cause=e) from e
        if not isinstance(content, str):
            raise ProviderError("provider response content is not text")
        return content

    def complete(self, prompt: str) -> str:
        with start_blocking_portal() as portal:
            return portal.call(self._complete, prompt)


class StubProvider:
    """
    Deterministic fake keyed by the SHA-256 of the exact prompt text.

    Args:
        table: prompt hash -> reply
        default: reply for unknown prompts; without it an unknown prompt is a provider error
    """

    def __init__(self, table: dict[str, str] | None = None, default: str | None = None):
        self.table = dict(table or {})
        self.default = default
        self.calls = 0

    @classmethod
    def from_prompts(cls, replies: dict[str, str], default: str | None = None) -> "StubProvider":
        return cls({prompt_hash(prompt): reply for prompt, reply in replies.items()}, default)

    @classmethod
    def load(cls, path: pathlib.Path) -> "StubProvider":
        table = read_json_file(path, "stub table")
        if not isinstance(table, dict) or not all(isinstance(v, str) for v in table.values()):
            raise DataError(f"stub table {path} must be a JSON object")
        default = table.pop(STUB_DEFAULT_KEY, None)
        return cls(table, default)

    def complete(self, prompt: str) -> str:
        self.calls += 1
        reply = self.table.get(prompt_hash(prompt), self.default)
        if reply is None:
            raise ProviderError("stub provider has no reply for this prompt")
        return reply


class FailingProvider:
    def __init__(self, message: str = "provider unavailable"):
        self.message = message
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        raise ProviderError(self.message)


class PromptLibrary:
    """Prompt templates stored as text assets; placeholders are filled by plain replacement."""

    NAMES = ("intent", "rewrite", "rerank")

    def __init__(self, templates: dict[str, str]):
        missing = [name for name in self.NAMES if name not in templates]
        if missing:
            raise ConfigError(f"missing prompt templates: {', '.join(missing)}")
        self.templates = templates

    @classmethod
    def load(cls, folder: pathlib.Path) -> "PromptLibrary":
        templates = {}
        for name in cls.NAMES:
            path = pathlib.Path(folder) / f"{name}.txt"
            if not path.is_file():
                raise ConfigError(f"prompt template not found: {path}")
            try:
                templates[name] = path.read_text(encoding="utf-8")
            except UnicodeDecodeError as e:
                raise ConfigError(f"prompt template {path} is not valid UTF-8 ({e.reason})") from e
        return cls(templates)

    def render(self, name: str, **values: str) -> str:
        text = self.templates[name]
        for key, value in values.items():
            text = text.replace("{" + key + "}", value)
        return text


def build_provider(config: ProviderConfig) -> LlmProvider | None:
    match config.kind:
        case "none":
            return None
        case "failing":
            return FailingProvider()
        case "stub":
            if config.stub_table is None:
                return StubProvider()
            return StubProvider.load(config.stub_table)
        case "remote":
            endpoint = PROVIDER_ENDPOINT_OVERRIDE or config.endpoint
            if not endpoint:
                raise ConfigError("remote provider selected but no endpoint configured")
            return RemoteLlmProvider(endpoint, model=config.model, api_key=PROVIDER_API_KEY, timeout=config.timeout)
        case _:
            raise ConfigError(f"unknown provider kind {config.kind}")

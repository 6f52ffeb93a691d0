class ResearchError(Exception):
    """Base class for every error raised by the search engine"""


class DataError(ResearchError, ValueError):
    """Something is wrong with user-supplied data (files, queries, config)"""


class ConfigError(DataError):
    pass


class CatalogError(DataError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.line = line
        self.field = field


class IndexBuildError(DataError):
    pass


class IndexMismatchError(DataError):
    pass


class EmptyQueryError(DataError):
    def __init__(self, message: str = "empty query"):
        super().__init__(message)


class ExtractionError(DataError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class BenchmarkError(DataError):
    pass


class ProviderError(ResearchError, RuntimeError):
    """Transport or protocol failure of a remote embedder / LLM provider.

    `index` is set by batched calls to the position of the first input of the failing batch.
    """

    def __init__(self, message: str, cause: BaseException | None = None, index: int | None = None):
        super().__init__(message)
        self.cause = cause
        self.index = index


class RerankerError(ResearchError, RuntimeError):
    pass

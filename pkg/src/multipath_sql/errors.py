"""Exception types shared across the pipeline stages."""


class PipelineError(Exception):
    """Base class for errors raised by this package."""


class DatabaseReadError(PipelineError, OSError):
    """The database file is missing or is not a readable SQLite database."""


class EmptyDatabase(PipelineError):
    """The database has no user tables."""


class InvalidSelection(PipelineError, ValueError):
    """A column selection references a table or column absent from the catalog."""


class BackendError(PipelineError):
    """A completion or embedding backend failed after exhausting its retries."""


class ParseError(PipelineError, ValueError):
    """No SQL could be recovered from a completion."""


class GenerationError(PipelineError):
    """Every generator failed to produce a parseable candidate."""


class SyntheticGenerationError(PipelineError):
    """Both synthetic-example generation calls failed."""


class SqlError(PipelineError):
    """The engine rejected a statement (used where an outcome object is not returned)."""


class FormatError(PipelineError, ValueError):
    """A benchmark or cache file could not be parsed."""

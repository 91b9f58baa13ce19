"""Shared exception types for the radpipe toolkit."""

from __future__ import annotations


class RadpipeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RadpipeError):
    """Invalid configuration, manifest, or command-line input."""


class DataError(RadpipeError):
    """Bad or inconsistent pipeline data: corpora, splits, records, studies."""


class TransportError(RadpipeError):
    """A single HTTP exchange with a completion backend failed; retryable."""


class BackendUnavailable(RadpipeError):
    """A completion backend stayed unreachable through the whole retry budget."""

    def __init__(self, message: str, last_error: Exception | None = None):
        super().__init__(message)
        self.last_error = last_error


class EmptyGeneration(RadpipeError):
    """A completion backend answered with empty text."""


class AuthError(RadpipeError):
    """Missing, unknown, or expired credential on the evaluation service."""


class AlreadyRated(RadpipeError):
    """A rater tried to re-score an item with a new submission id."""


class IncompleteStudy(RadpipeError):
    """Results were requested before every (rater, item) cell was scored."""

    def __init__(self, missing_cells: list[tuple[str, str]]):
        self.missing_cells = tuple(missing_cells)
        preview = ", ".join(f"{r}/{i}" for r, i in self.missing_cells[:5])
        more = "" if len(self.missing_cells) <= 5 else f" (+{len(self.missing_cells) - 5} more)"
        super().__init__(
            f"study has {len(self.missing_cells)} unscored (rater, item) cells: {preview}{more}"
        )

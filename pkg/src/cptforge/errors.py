"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
RemoteError -> 3.
"""

from __future__ import annotations


class CptForgeError(Exception):
    """Base class for all pipeline errors."""


class UsageError(CptForgeError):
    """Bad invocation: unknown flags, missing files named on the command line."""


class DataError(CptForgeError):
    """Malformed or contract-violating data (corpora, configs, lexicons, shards)."""


class IngestError(DataError):
    """A JSONL record failed validation; carries the 1-based line number."""

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class ShardIntegrityError(DataError):
    """Shard records disagree with their manifest."""


class RemoteError(CptForgeError):
    """A remote model service failed terminally (after retries where applicable)."""


class QAParseError(DataError):
    """A completion could not be split into problem/solution sections."""

    def __init__(self, reason: str, raw: str):
        self.reason = reason
        self.raw = raw
        super().__init__(reason)

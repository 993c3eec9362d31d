"""Exception hierarchy shared across the pipeline.

Exit-code mapping used by the CLI: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class StyleScopeError(Exception):
    pass


class UsageError(StyleScopeError):
    pass


class DataError(StyleScopeError):
    """Malformed or contract-violating input data."""


class NumericError(StyleScopeError):
    """A numeric routine failed (non-finite input, no convergence, ...)."""


class StageError(StyleScopeError):
    """A pipeline stage aborted; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

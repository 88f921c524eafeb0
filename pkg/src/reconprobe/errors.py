"""Error types that the CLI maps to distinct exit codes."""


class DiagnosticsError(Exception):
    """Base class for pipeline errors."""


class ManifestError(DiagnosticsError):
    """Manifest fails validation (duplicate ids, missing files, bad variant tags)."""


class MissingInputError(DiagnosticsError):
    """A stage needs interchange files that are absent."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class StageError(DiagnosticsError):
    """A stage failed mid-run."""

class ExtractorError(Exception):
    """Base class for extractor failures."""


class CheckpointLoadError(ExtractorError):
    """The requested checkpoint could not be resolved or loaded."""


class MalformedLine(ExtractorError):
    """A text-input line is not a valid {id, text} record."""

    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno


class ExportError(ExtractorError):
    """Export-level failure (empty input, duplicate ids, unwritable output)."""

"""Exception types shared across the package."""


class KatzGPTError(Exception):
    """Base for all package-specific errors."""


class ShapeError(KatzGPTError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(KatzGPTError, ValueError):
    """Invalid configuration value."""


class DataError(KatzGPTError, ValueError):
    """Bad input data: out-of-range ids, empty datasets, schema violations."""


class FormatError(DataError):
    """Malformed vocabulary, merges, or corpus file."""


class ContextLengthError(KatzGPTError, ValueError):
    """Sequence does not fit the model context window."""


class CheckpointError(KatzGPTError):
    """Corrupt or incompatible checkpoint file."""


class UpstreamError(KatzGPTError):
    """A bound provider (stt / detect / translate) failed."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class UnsupportedLanguageError(KatzGPTError, ValueError):
    """Detected language is outside the supported set."""

"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 2, provider
exhaustion -> 3, any other StageError -> 4.
"""


class SynthForgeError(Exception):
    """Base class for all package errors."""


class ConfigError(SynthForgeError):
    """Invalid configuration, vocabulary, or run-state mismatch."""


class VocabularyError(ConfigError):
    """Vocabulary file missing, empty, or containing duplicate names."""


class DegenerateVectorError(SynthForgeError):
    """Zero-norm vector where a direction is required."""


class DimensionMismatchError(SynthForgeError):
    """Embedding dimensions disagree."""


class DuplicateIdError(SynthForgeError):
    """An identifier was inserted twice into an index."""


class TemplateError(SynthForgeError):
    """Prompt template is malformed (placeholder count wrong)."""


class ScoringError(SynthForgeError):
    """Judge response could not be parsed into a numeric score."""


class ProviderError(SynthForgeError):
    """A model-provider call failed."""


class ProviderExhaustedError(ProviderError):
    """All retry attempts for a provider call failed."""


class RefusalError(ProviderError):
    """Provider declined to fulfil a generation request."""


class GridError(SynthForgeError):
    """Patch grid does not evenly divide the input image."""


class StageError(SynthForgeError):
    """A pipeline stage failed; the run directory keeps its checkpoints."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


class ExportError(StageError):
    def __init__(self, message: str):
        super().__init__("export", message)

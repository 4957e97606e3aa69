"""SynthForge: synthesize a weakly labeled image dataset from a class vocabulary.

Prompts are drafted and judged by a text model, deduplicated by embedding
similarity, rendered to images, pseudo-labeled through a dual similarity
gate, and finally relabeled by a small patch-wise classifier trained on
the high-confidence pairs. All model calls go through swappable providers;
a seeded offline simulator stands in for remote endpoints.
"""

from .core import (
    ClassVocabulary,
    DatasetManifest,
    ImageRecord,
    ManifestEntry,
    PipelineConfig,
    PromptRecord,
    load_vocabulary,
    read_manifest,
    validate_manifest,
    write_manifest,
)
from .embedding import NeighborIndex, cosine, normalize, scaled_similarity
from .errors import (
    ConfigError,
    ProviderError,
    ProviderExhaustedError,
    RefusalError,
    StageError,
    SynthForgeError,
)
from .image_agent import (
    CandidateEntry,
    CandidateLabelSet,
    HighConfidencePair,
    ImageAgent,
    embed_class_names,
    image_label_scores,
    select_top_n,
    text_candidate_labels,
)
from .pipeline import PipelineRun, RunState, STAGES, export_dataset, stats_report
from .prompt_agent import (
    MemoryBuffer,
    PromptAgent,
    PromptTemplate,
    RefinementPolicy,
    diversity_filter,
    load_templates,
    parse_judge_score,
)
from .relabeler import (
    PatchGridConfig,
    TrainingConfig,
    bce_loss,
    forward,
    labels_from_scores,
    load_classifier,
    loss_gradient,
    max_pool,
    patch_embed,
    predict,
    relabel,
    save_classifier,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateEntry",
    "CandidateLabelSet",
    "ClassVocabulary",
    "ConfigError",
    "DatasetManifest",
    "HighConfidencePair",
    "ImageAgent",
    "ImageRecord",
    "ManifestEntry",
    "MemoryBuffer",
    "NeighborIndex",
    "PatchGridConfig",
    "PipelineConfig",
    "PipelineRun",
    "PromptAgent",
    "PromptRecord",
    "PromptTemplate",
    "ProviderError",
    "ProviderExhaustedError",
    "RefinementPolicy",
    "RefusalError",
    "RunState",
    "STAGES",
    "StageError",
    "SynthForgeError",
    "TrainingConfig",
    "bce_loss",
    "cosine",
    "diversity_filter",
    "embed_class_names",
    "export_dataset",
    "forward",
    "image_label_scores",
    "labels_from_scores",
    "load_classifier",
    "load_templates",
    "load_vocabulary",
    "loss_gradient",
    "max_pool",
    "normalize",
    "parse_judge_score",
    "patch_embed",
    "predict",
    "read_manifest",
    "relabel",
    "save_classifier",
    "scaled_similarity",
    "select_top_n",
    "stats_report",
    "text_candidate_labels",
    "train",
    "validate_manifest",
    "write_manifest",
]

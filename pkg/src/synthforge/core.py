"""Domain types shared by every pipeline stage.

Vocabulary, prompt/image records, run configuration, and the dataset
manifest. All record types are frozen; stages evolve them with
``dataclasses.replace`` so partially-built state is never shared.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError, VocabularyError

MANIFEST_SCHEMA = "synthforge/1"

PROMPT_STATUSES = ("candidate", "refined", "accepted", "rejected_quality", "rejected_duplicate")
LABEL_SOURCES = ("dual_filter", "relabeler")


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered class list; ids are contiguous from 0 in file order."""

    classes: tuple[tuple[int, str], ...]
    dataset_name: str = "dataset"

    def __post_init__(self):
        ids = [cid for cid, _ in self.classes]
        if ids != list(range(len(ids))):
            raise VocabularyError("class ids must be contiguous from 0 in order")
        names = [name for _, name in self.classes]
        if any(not name for name in names):
            raise VocabularyError("class names must be non-empty")
        lowered = [name.lower() for name in names]
        if len(set(lowered)) != len(lowered):
            dupes = sorted({n for n in lowered if lowered.count(n) > 1})
            raise VocabularyError(f"duplicate class names (case-insensitive): {dupes}")

    @classmethod
    def from_names(cls, names: Sequence[str], dataset_name: str = "dataset") -> "ClassVocabulary":
        return cls(tuple(enumerate(names)), dataset_name)

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for _, name in self.classes)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(cid for cid, _ in self.classes)

    def name_of(self, class_id: int) -> str:
        return self.classes[class_id][1]

    def id_of(self, name: str) -> int:
        for cid, cname in self.classes:
            if cname == name:
                return cid
        raise KeyError(name)


def load_vocabulary(path: str | Path) -> ClassVocabulary:
    """Read a vocabulary file: UTF-8, one class name per line, '#' comments ignored."""
    path = Path(path)
    if not path.is_file():
        raise VocabularyError(f"vocabulary file not found: {path}")
    names: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        name = line.split("#", 1)[0].strip()
        if name:
            names.append(name)
    if not names:
        raise VocabularyError(f"vocabulary file is empty: {path}")
    return ClassVocabulary.from_names(names, dataset_name=path.stem)


@dataclass(frozen=True, eq=False)
class PromptRecord:
    """A generated prompt with its origin and gate outcomes."""

    prompt_id: str
    class_id: int
    text: str
    embedding: np.ndarray | None = None
    quality_score: float | None = None
    status: str = "candidate"
    below_quality_threshold: bool = False

    def __post_init__(self):
        if not self.text:
            raise ValueError("prompt text must be non-empty")
        if self.status not in PROMPT_STATUSES:
            raise ValueError(f"unknown prompt status: {self.status}")
        if self.status == "accepted" and (self.embedding is None or self.quality_score is None):
            raise ValueError("accepted prompts must carry an embedding and a quality score")

    def to_json(self) -> dict[str, Any]:
        return {
            "prompt_id": self.prompt_id,
            "class_id": self.class_id,
            "text": self.text,
            "quality_score": self.quality_score,
            "status": self.status,
            "below_quality_threshold": self.below_quality_threshold,
        }


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """A synthesized image, the prompt it came from, and its pseudo-label set."""

    image_id: str
    prompt_id: str
    file_path: str
    provider_seed: int
    embedding: np.ndarray | None = None
    pseudo_labels: frozenset[int] = frozenset()
    label_source: str = "dual_filter"

    def __post_init__(self):
        if self.label_source not in LABEL_SOURCES:
            raise ValueError(f"unknown label source: {self.label_source}")

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "prompt_id": self.prompt_id,
            "file_path": self.file_path,
            "provider_seed": self.provider_seed,
            "pseudo_labels": sorted(self.pseudo_labels),
            "label_source": self.label_source,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ImageRecord":
        return cls(
            image_id=doc["image_id"],
            prompt_id=doc["prompt_id"],
            file_path=doc["file_path"],
            provider_seed=int(doc["provider_seed"]),
            pseudo_labels=frozenset(int(c) for c in doc.get("pseudo_labels", [])),
            label_source=doc.get("label_source", "dual_filter"),
        )


@dataclass(frozen=True)
class PipelineConfig:
    """Thresholds and budgets for one run.

    Defaults follow the reference operating point: quality acceptance at
    0.95, diversity filtering at 0.92, and a 0.7 text gate.
    """

    epsilon: float = 0.95
    delta: float = 0.92
    gamma_text: float = 0.7
    top_n: int = 2
    relabel_threshold: float = 0.5
    prompts_per_class: int = 10
    max_refine_iterations: int = 5
    images_per_prompt: int = 1
    random_seed: int = 0
    providers: dict[str, Any] = field(default_factory=dict)
    grid: dict[str, int] = field(default_factory=lambda: {"input_side": 384, "patch_side": 16})
    training: dict[str, Any] = field(default_factory=dict)
    templates_dir: str | None = None
    vocabulary_path: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        for name in ("epsilon", "delta", "gamma_text", "relabel_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.top_n < 1:
            raise ConfigError("top_n must be a positive integer")
        if self.prompts_per_class < 0:
            raise ConfigError("prompts_per_class must be >= 0")
        if self.max_refine_iterations < 1:
            raise ConfigError("max_refine_iterations must be >= 1")
        if self.images_per_prompt < 1:
            raise ConfigError("images_per_prompt must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    labels: tuple[int, ...]


@dataclass(frozen=True)
class DatasetManifest:
    """The exported dataset: image paths plus image-level label lists."""

    vocabulary: ClassVocabulary
    entries: tuple[ManifestEntry, ...]
    generation_metadata: dict[str, Any] = field(default_factory=dict)
    base_dir: Path | None = field(default=None, compare=False)

    def header_json(self) -> dict[str, Any]:
        return {
            "schema": MANIFEST_SCHEMA,
            "dataset_name": self.vocabulary.dataset_name,
            "classes": [[cid, name] for cid, name in self.vocabulary.classes],
            "generation_metadata": self.generation_metadata,
        }


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Persist as line-delimited records: one header line, then one line per image."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest.header_json(), sort_keys=True) + "\n")
        for entry in manifest.entries:
            fh.write(json.dumps({"image_path": entry.image_path, "labels": list(entry.labels)}) + "\n")
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigError(f"manifest file is empty: {path}")
    header = json.loads(lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(f"unsupported manifest schema: {header.get('schema')!r}")
    vocab = ClassVocabulary(
        tuple((int(cid), name) for cid, name in header["classes"]),
        dataset_name=header.get("dataset_name", "dataset"),
    )
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        doc = json.loads(line)
        entries.append(ManifestEntry(doc["image_path"], tuple(int(c) for c in doc["labels"])))
    return DatasetManifest(
        vocabulary=vocab,
        entries=tuple(entries),
        generation_metadata=header.get("generation_metadata", {}),
        base_dir=path.parent,
    )


def validate_manifest(manifest: DatasetManifest) -> list[str]:
    """Return every invariant violation; an empty list means the manifest is valid.

    Violations are data, not faults: this never raises on bad content.
    """
    violations: list[str] = []
    valid_ids = set(manifest.vocabulary.class_ids)
    base = manifest.base_dir if manifest.base_dir is not None else Path(".")
    seen_paths: set[str] = set()
    for i, entry in enumerate(manifest.entries):
        where = f"entry {i} ({entry.image_path})"
        if not entry.labels:
            violations.append(f"{where}: empty label set")
        bad = [c for c in entry.labels if c not in valid_ids]
        if bad:
            violations.append(f"{where}: labels outside vocabulary: {bad}")
        if entry.image_path in seen_paths:
            violations.append(f"{where}: duplicate image path")
        seen_paths.add(entry.image_path)
        if not (base / entry.image_path).is_file():
            violations.append(f"{where}: image file missing: {entry.image_path}")
    return violations


def iter_jsonl(path: str | Path) -> Iterable[dict[str, Any]]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def append_jsonl(path: str | Path, docs: Iterable[dict[str, Any]]) -> None:
    with Path(path).open("a", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")

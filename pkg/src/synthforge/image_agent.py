"""Image synthesis and the dual similarity gate producing the high-confidence set.

Each accepted prompt is rendered to an image. Candidate labels for the
image are the vocabulary classes whose text embedding sits close to the
prompt embedding (scaled similarity strictly above the text gate), and
from those candidates the top N by image-to-class similarity are kept.
Every retained (image, class) pair is one high-confidence training sample
for the relabeling classifier.

Images whose candidate set comes out empty stay on disk with no labels;
the relabel stage picks them up later.
"""

from __future__ import annotations

import io
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from .backends.base import ProviderBundle
from .core import ClassVocabulary, ImageRecord, PipelineConfig, PromptRecord
from .embedding import normalize, scaled_similarity
from .errors import ProviderError
from .ids import IdFactory

logger = logging.getLogger(__name__)

# synthesis failures are retried this many times before the prompt is skipped
_SYNTH_ATTEMPTS = 3


@dataclass(frozen=True)
class CandidateEntry:
    class_id: int
    text_score: float
    image_score: float | None = None


@dataclass(frozen=True)
class CandidateLabelSet:
    """Classes whose text similarity to one prompt cleared the text gate."""

    prompt_id: str
    entries: tuple[CandidateEntry, ...]

    def class_ids(self) -> tuple[int, ...]:
        return tuple(e.class_id for e in self.entries)


@dataclass(frozen=True)
class HighConfidencePair:
    image_id: str
    class_id: int
    text_score: float
    image_score: float

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "class_id": self.class_id,
            "text_score": self.text_score,
            "image_score": self.image_score,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "HighConfidencePair":
        return cls(
            image_id=doc["image_id"],
            class_id=int(doc["class_id"]),
            text_score=float(doc["text_score"]),
            image_score=float(doc["image_score"]),
        )


@dataclass
class ImageAgentResult:
    pairs: list[HighConfidencePair]
    images: list[ImageRecord]
    failures: list[dict]


def embed_class_names(vocabulary: ClassVocabulary, provider) -> dict[int, np.ndarray]:
    """Unit-norm text embedding of every class name, keyed by class id."""
    return {
        cid: normalize(provider.embed_text(name)) for cid, name in vocabulary.classes
    }


def text_candidate_labels(
    prompt: PromptRecord,
    vocabulary: ClassVocabulary,
    gamma_text: float,
    provider,
    class_vectors: dict[int, np.ndarray] | None = None,
    prompt_vector: np.ndarray | None = None,
) -> CandidateLabelSet:
    """Classes whose scaled similarity to the prompt text is strictly above the gate."""
    if class_vectors is None:
        class_vectors = embed_class_names(vocabulary, provider)
    if prompt_vector is None:
        prompt_vector = normalize(provider.embed_text(prompt.text))
    entries = []
    for cid in vocabulary.class_ids:
        score = scaled_similarity(prompt_vector, class_vectors[cid])
        if score > gamma_text:
            entries.append(CandidateEntry(cid, score))
    return CandidateLabelSet(prompt.prompt_id, tuple(entries))


def image_label_scores(
    candidates: CandidateLabelSet,
    image_vector: np.ndarray,
    class_vectors: dict[int, np.ndarray],
) -> CandidateLabelSet:
    """Fill the image-side score for every candidate entry."""
    entries = tuple(
        replace(e, image_score=scaled_similarity(image_vector, class_vectors[e.class_id]))
        for e in candidates.entries
    )
    return CandidateLabelSet(candidates.prompt_id, entries)


def select_top_n(candidates: CandidateLabelSet, n: int) -> list[int]:
    """The n candidate classes with highest image score; ties go to the lower class id."""
    if n < 1:
        raise ValueError("n must be positive")
    for entry in candidates.entries:
        if entry.image_score is None:
            raise ValueError(f"candidate class {entry.class_id} has no image score")
    ranked = sorted(candidates.entries, key=lambda e: (-e.image_score, e.class_id))
    return [e.class_id for e in ranked[:n]]


def _safe_dir_name(name: str) -> str:
    return re.sub(r"[^\w\-.]+", "_", name)


def _looks_like_image(data: bytes) -> bool:
    from PIL import Image

    try:
        Image.open(io.BytesIO(data)).verify()
    except Exception:
        return False
    return True


class ImageAgent:
    """Runs synthesis and dual-gate labeling for a batch of accepted prompts."""

    def __init__(
        self,
        vocabulary: ClassVocabulary,
        config: PipelineConfig,
        providers: ProviderBundle,
        run_dir: str | Path,
        id_factory: IdFactory | None = None,
    ):
        self.vocabulary = vocabulary
        self.config = config
        self.providers = providers
        self.run_dir = Path(run_dir)
        self.ids = id_factory if id_factory is not None else IdFactory(config.random_seed, "image")
        self._class_vectors: dict[int, np.ndarray] | None = None

    def class_vectors(self) -> dict[int, np.ndarray]:
        if self._class_vectors is None:
            self._class_vectors = embed_class_names(self.vocabulary, self.providers.embedding)
        return self._class_vectors

    def _render(self, prompt_text: str, variation: int) -> tuple[bytes, int]:
        last: Exception | None = None
        for _ in range(_SYNTH_ATTEMPTS):
            try:
                data, seed = self.providers.image.generate_image(prompt_text, variation)
            except ProviderError as exc:
                last = exc
                continue
            if data and _looks_like_image(data):
                return data, seed
            last = ProviderError("image provider returned empty or undecodable bytes")
        raise last

    def synthesize(self, prompt: PromptRecord, variation: int = 0) -> tuple[ImageRecord, bytes]:
        """Render one image for a prompt and write it under images/<class>/."""
        data, provider_seed = self._render(prompt.text, variation)
        image_id = self.ids.next()
        class_name = self.vocabulary.name_of(prompt.class_id)
        rel_path = Path("images") / _safe_dir_name(class_name) / f"{image_id}.png"
        target = self.run_dir / rel_path
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        record = ImageRecord(
            image_id=image_id,
            prompt_id=prompt.prompt_id,
            file_path=str(rel_path),
            provider_seed=provider_seed,
        )
        return record, data

    def synthesize_batch(self, prompts: list[PromptRecord]) -> tuple[list[ImageRecord], list[dict]]:
        """All prompts in prompt-id order; failures are logged, never fatal."""
        records: list[ImageRecord] = []
        failures: list[dict] = []
        for prompt in sorted(prompts, key=lambda p: p.prompt_id):
            for variation in range(self.config.images_per_prompt):
                try:
                    record, _ = self.synthesize(prompt, variation)
                except ProviderError as exc:
                    logger.warning("synthesis failed for prompt %s: %s", prompt.prompt_id, exc)
                    failures.append(
                        {
                            "stage": "images",
                            "prompt_id": prompt.prompt_id,
                            "class_id": prompt.class_id,
                            "variation": variation,
                            "error_type": type(exc).__name__,
                            "reason": str(exc),
                        }
                    )
                    continue
                records.append(record)
        return records, failures

    def dual_gate(
        self,
        images: list[ImageRecord],
        prompts_by_id: dict[str, PromptRecord],
    ) -> tuple[list[HighConfidencePair], dict[str, frozenset[int]]]:
        """Text gate then image-side top-N for every synthesized image.

        Returns the retained pairs plus, per image id, the selected class set
        (possibly empty). Prompt embeddings are reused from the prompt records
        when present instead of re-calling the provider.
        """
        class_vectors = self.class_vectors()
        pairs: list[HighConfidencePair] = []
        selected: dict[str, frozenset[int]] = {}
        candidate_cache: dict[str, CandidateLabelSet] = {}
        for image in sorted(images, key=lambda r: r.image_id):
            prompt = prompts_by_id[image.prompt_id]
            if prompt.prompt_id not in candidate_cache:
                candidate_cache[prompt.prompt_id] = text_candidate_labels(
                    prompt,
                    self.vocabulary,
                    self.config.gamma_text,
                    self.providers.embedding,
                    class_vectors=class_vectors,
                    prompt_vector=prompt.embedding,
                )
            candidates = candidate_cache[prompt.prompt_id]
            if not candidates.entries:
                selected[image.image_id] = frozenset()
                continue
            data = (self.run_dir / image.file_path).read_bytes()
            image_vector = normalize(self.providers.embedding.embed_image(data))
            scored = image_label_scores(candidates, image_vector, class_vectors)
            top = select_top_n(scored, self.config.top_n)
            by_class = {e.class_id: e for e in scored.entries}
            for cid in top:
                entry = by_class[cid]
                pairs.append(
                    HighConfidencePair(image.image_id, cid, entry.text_score, entry.image_score)
                )
            selected[image.image_id] = frozenset(top)
        return pairs, selected

    def build_high_confidence_set(self, prompts: list[PromptRecord]) -> ImageAgentResult:
        """Synthesize then gate; the one-call form of the whole stage pair."""
        images, failures = self.synthesize_batch(prompts)
        prompts_by_id = {p.prompt_id: p for p in prompts}
        pairs, selected = self.dual_gate(images, prompts_by_id)
        labeled = [
            replace(img, pseudo_labels=selected[img.image_id], label_source="dual_filter")
            for img in images
        ]
        return ImageAgentResult(pairs=pairs, images=labeled, failures=failures)

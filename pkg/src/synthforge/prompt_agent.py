"""Prompt generation: template instantiation, judged refinement, diversity filtering.

For each class the agent repeatedly drafts a prompt, asks the judge model
to score it, and redrafts (feeding the critique back) until the score
clears the acceptance threshold or the iteration budget runs out; the
budget case keeps the best draft but flags it. Survivors are embedded,
normalized, and passed through a sequential novelty filter against a
memory of everything accepted so far in the run.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .backends.base import ProviderBundle, TextRequest
from .core import ClassVocabulary, PipelineConfig, PromptRecord
from .embedding import NeighborIndex, normalize
from .errors import ConfigError, ProviderError, ScoringError, TemplateError
from .ids import IdFactory

logger = logging.getLogger(__name__)

CLASS_PLACEHOLDER = "{class}"
PROMPT_PLACEHOLDER = "{prompt}"

_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")

# bounded retries for judge responses with no parsable score / empty generations
_PARSE_ATTEMPTS = 3
_EMPTY_TEXT_ATTEMPTS = 3


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction text with exactly one subject placeholder.

    Refine/judge variants additionally carry a candidate-prompt slot.
    """

    template_text: str
    variant_id: str = "default"

    def __post_init__(self):
        count = self.template_text.count(CLASS_PLACEHOLDER)
        if count != 1:
            raise TemplateError(
                f"template {self.variant_id!r} must contain exactly one "
                f"{CLASS_PLACEHOLDER!r} placeholder, found {count}"
            )

    @property
    def wants_prompt(self) -> bool:
        return PROMPT_PLACEHOLDER in self.template_text

    def render(self, class_name: str, prompt: str | None = None) -> str:
        text = self.template_text.replace(CLASS_PLACEHOLDER, class_name)
        if self.wants_prompt:
            if prompt is None:
                raise TemplateError(f"template {self.variant_id!r} requires a candidate prompt")
            text = text.replace(PROMPT_PLACEHOLDER, prompt)
        return text


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    if not path.is_file():
        raise TemplateError(f"template file not found: {path}")
    return PromptTemplate(path.read_text(encoding="utf-8"), variant_id=path.stem)


def load_templates(templates_dir: str | None = None) -> tuple[PromptTemplate, PromptTemplate]:
    """Return (generate, refine) templates from a directory or the shipped defaults."""
    if templates_dir is not None:
        base = Path(templates_dir)
        return load_template(base / "generate.txt"), load_template(base / "refine.txt")
    pkg = resources.files("synthforge").joinpath("templates")
    return (
        PromptTemplate(pkg.joinpath("generate.txt").read_text(encoding="utf-8"), "generate"),
        PromptTemplate(pkg.joinpath("refine.txt").read_text(encoding="utf-8"), "refine"),
    )


def instantiate_template(template: PromptTemplate, class_name: str) -> str:
    return template.render(class_name)


def parse_judge_score(response: str) -> float:
    """Extract the judge's score: the last number in the response, clamped to [0, 1]."""
    matches = _NUMBER_RE.findall(response)
    if not matches:
        raise ScoringError(f"no numeric score in judge response: {response[:80]!r}")
    value = float(matches[-1])
    if not 0.0 <= value <= 1.0:
        logger.warning("judge score %s outside [0, 1]; clamping", value)
        value = min(1.0, max(0.0, value))
    return value


@dataclass(frozen=True)
class RefinementPolicy:
    epsilon: float
    max_refine_iterations: int
    refine_template: PromptTemplate

    def __post_init__(self):
        if self.max_refine_iterations < 1:
            raise ConfigError("max_refine_iterations must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in [0, 1]")


class MemoryBuffer:
    """Accepted prompts and their unit-norm embeddings, searchable by cosine."""

    def __init__(self, dimension: int, index: NeighborIndex | None = None):
        self.index = index if index is not None else NeighborIndex(dimension)
        self.texts: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self.index)

    def add(self, record: PromptRecord) -> None:
        if record.embedding is None:
            raise ValueError("memory buffer entries need an embedding")
        self.index.insert(record.prompt_id, normalize(record.embedding))
        self.texts[record.prompt_id] = record.text

    def nearest(self, v) -> tuple[str, float] | None:
        return self.index.nearest(v)

    def save(self, path: str | Path) -> Path:
        return self.index.save(path)

    @classmethod
    def load(cls, path: str | Path) -> "MemoryBuffer":
        index = NeighborIndex.load(path)
        return cls(index.dimension, index=index)


def diversity_filter(
    candidates: list[PromptRecord],
    memory: MemoryBuffer,
    delta: float,
) -> list[PromptRecord]:
    """Sequential novelty gate over embedded candidates, in input order.

    A candidate is accepted iff the memory is empty or the raw cosine to its
    nearest stored neighbor is strictly below ``delta``. Each acceptance is
    inserted into the memory before the next candidate is examined, so the
    outcome is order-sensitive by construction.
    """
    accepted: list[PromptRecord] = []
    for record in candidates:
        if record.embedding is None:
            raise ValueError(f"candidate {record.prompt_id} has no embedding")
        hit = memory.nearest(record.embedding)
        if hit is not None and hit[1] >= delta:
            continue
        kept = dataclasses.replace(record, status="accepted")
        memory.add(kept)
        accepted.append(kept)
    return accepted


class PromptAgent:
    """Drives draft -> judge -> redraft per class, then the diversity filter.

    ``records`` accumulates every judged draft with its final status, for
    stats and audit. The memory buffer is shared across classes for the
    whole run.
    """

    def __init__(
        self,
        vocabulary: ClassVocabulary,
        config: PipelineConfig,
        providers: ProviderBundle,
        generate_template: PromptTemplate | None = None,
        refine_template: PromptTemplate | None = None,
        memory: MemoryBuffer | None = None,
        id_factory: IdFactory | None = None,
    ):
        if generate_template is None or refine_template is None:
            default_gen, default_ref = load_templates(config.templates_dir)
            generate_template = generate_template or default_gen
            refine_template = refine_template or default_ref
        self.vocabulary = vocabulary
        self.config = config
        self.providers = providers
        self.generate_template = generate_template
        self.policy = RefinementPolicy(config.epsilon, config.max_refine_iterations, refine_template)
        self.memory = memory if memory is not None else MemoryBuffer(providers.embedding_dim)
        self.ids = id_factory if id_factory is not None else IdFactory(config.random_seed, "prompt")
        self.records: list[PromptRecord] = []
        self._variation: dict[str, int] = {}

    def _next_variation(self, class_name: str) -> int:
        n = self._variation.get(class_name, 0)
        self._variation[class_name] = n + 1
        return n

    def _generate_text(self, class_name: str, feedback: str | None = None) -> str:
        content = self.generate_template.render(class_name)
        if feedback:
            content += f"\n\nYour previous attempt and the judge's critique:\n{feedback}"
        for _ in range(_EMPTY_TEXT_ATTEMPTS):
            request = TextRequest(
                purpose="generate",
                class_name=class_name,
                content=content,
                variation=self._next_variation(class_name),
            )
            text = self.providers.text.generate_text(request).strip()
            if text:
                return text
        raise ProviderError(f"text generation for {class_name!r} kept returning empty output")

    def generate_candidates(self, class_name: str, n: int) -> list[PromptRecord]:
        """Draft ``n`` raw candidates (no judging, no filtering)."""
        class_id = self.vocabulary.id_of(class_name)
        return [
            PromptRecord(self.ids.next(), class_id, self._generate_text(class_name))
            for _ in range(n)
        ]

    def quality_score(self, class_name: str, candidate: str) -> tuple[float, str]:
        """Judge one candidate; returns (score, raw judge response)."""
        content = self.policy.refine_template.render(class_name, prompt=candidate)
        last_error: ScoringError | None = None
        for attempt in range(_PARSE_ATTEMPTS):
            request = TextRequest(
                purpose="judge",
                class_name=class_name,
                content=content,
                variation=attempt,
                candidate=candidate,
            )
            response = self.providers.text.generate_text(request)
            try:
                return parse_judge_score(response), response
            except ScoringError as exc:
                last_error = exc
        raise last_error

    def refine_until_accepted(self, class_name: str) -> PromptRecord:
        """Draft-judge-redraft until the score clears epsilon or the budget ends.

        The budget case returns the best-scoring draft flagged
        ``below_quality_threshold``. Drafts superseded along the way land in
        ``records`` as rejected_quality.
        """
        class_id = self.vocabulary.id_of(class_name)
        attempts: list[tuple[PromptRecord, str]] = []
        feedback = None
        for _ in range(self.policy.max_refine_iterations):
            text = self._generate_text(class_name, feedback)
            score, response = self.quality_score(class_name, text)
            record = PromptRecord(
                self.ids.next(), class_id, text, quality_score=score, status="refined"
            )
            if score >= self.policy.epsilon:
                for superseded, _ in attempts:
                    self.records.append(
                        dataclasses.replace(superseded, status="rejected_quality")
                    )
                return record
            attempts.append((record, response))
            feedback = f"{text}\n{response}"
        best_pos = max(range(len(attempts)), key=lambda i: attempts[i][0].quality_score)
        for i, (record, _) in enumerate(attempts):
            if i != best_pos:
                self.records.append(dataclasses.replace(record, status="rejected_quality"))
        logger.info(
            "class %s: no draft reached %.2f in %d iterations; keeping best (%.4f)",
            class_name,
            self.policy.epsilon,
            self.policy.max_refine_iterations,
            attempts[best_pos][0].quality_score,
        )
        return dataclasses.replace(attempts[best_pos][0], below_quality_threshold=True)

    def run_class(self, class_name: str) -> list[PromptRecord]:
        """Produce up to ``prompts_per_class`` accepted prompts for one class."""
        target = self.config.prompts_per_class
        if target == 0:
            return []
        refined = [self.refine_until_accepted(class_name) for _ in range(target)]
        embedded = [
            dataclasses.replace(
                record, embedding=normalize(self.providers.embedding.embed_text(record.text))
            )
            for record in refined
        ]
        accepted = diversity_filter(embedded, self.memory, self.config.delta)
        accepted_ids = {record.prompt_id for record in accepted}
        by_id = {record.prompt_id: record for record in accepted}
        for record in embedded:
            if record.prompt_id in accepted_ids:
                self.records.append(by_id[record.prompt_id])
            else:
                self.records.append(dataclasses.replace(record, status="rejected_duplicate"))
        return accepted

    def run(self) -> list[PromptRecord]:
        """All classes in vocabulary order; returns the accepted prompts."""
        accepted: list[PromptRecord] = []
        for _, class_name in self.vocabulary.classes:
            accepted.extend(self.run_class(class_name))
        return accepted

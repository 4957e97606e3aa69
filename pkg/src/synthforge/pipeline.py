"""Stage orchestration, checkpointing, resume, export, and run statistics.

A run directory is owned by one process at a time and holds every stage's
checkpoint. Stages complete strictly in order; each records itself in
state.json only after its outputs are fully written. Restarting an
incomplete stage first wipes that stage's partial outputs, which is safe
because stage outputs are a deterministic function of the config, the
seed, and the predecessor checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .backends.base import build_provider_bundle
from .core import (
    ClassVocabulary,
    DatasetManifest,
    ImageRecord,
    ManifestEntry,
    PipelineConfig,
    PromptRecord,
    append_jsonl,
    iter_jsonl,
    load_vocabulary,
    read_manifest,
    validate_manifest,
    write_manifest,
)
from .errors import ConfigError, ExportError, ProviderExhaustedError, StageError
from .image_agent import HighConfidencePair, ImageAgent
from .prompt_agent import MemoryBuffer, PromptAgent
from .relabeler import (
    PatchGridConfig,
    TrainingConfig,
    load_classifier,
    patch_embed,
    relabel,
    save_classifier,
    train,
)

logger = logging.getLogger(__name__)

STAGES = ("prompts", "images", "dhigh", "classifier", "relabel", "export")

_STATE_FILE = "state.json"
_LOCK_FILE = "run.lock"


@dataclass
class RunState:
    run_id: str
    config_hash: str
    completed: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)

    def is_complete(self, stage: str) -> bool:
        return stage in self.completed

    def mark_complete(self, stage: str, counts: dict[str, int]) -> None:
        if stage not in self.completed:
            self.completed.append(stage)
        self.counts.update(counts)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        doc = {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "completed": self.completed,
            "counts": self.counts,
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "RunState":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            run_id=doc["run_id"],
            config_hash=doc["config_hash"],
            completed=list(doc.get("completed", [])),
            counts=dict(doc.get("counts", {})),
        )


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    except OSError:
        return False
    return True


def export_dataset(
    records: list[ImageRecord],
    vocabulary: ClassVocabulary,
    source_dir: str | Path,
    out_dir: str | Path,
    metadata: dict[str, Any] | None = None,
) -> DatasetManifest:
    """Write the downstream-consumable dataset: images tree, train list, manifest.

    Train-list lines are "<relative_path> <class_name> [...]" ordered by image
    id, names ordered by class id. Whitespace inside a class name would break
    the space-delimited list format, so it is replaced by underscores there;
    the manifest keeps exact names.
    """
    if not records:
        raise ExportError("nothing to export: no labeled images")
    source_dir = Path(source_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    list_names = {cid: "_".join(name.split()) for cid, name in vocabulary.classes}
    if len(set(list_names.values())) != len(list_names):
        raise ExportError("class names collide after whitespace normalization")

    entries: list[ManifestEntry] = []
    lines: list[str] = []
    for record in sorted(records, key=lambda r: r.image_id):
        if not record.pseudo_labels:
            raise ExportError(f"image {record.image_id} has no labels")
        src = source_dir / record.file_path
        if not src.is_file():
            raise ExportError(f"image file missing: {src}")
        dst = out_dir / record.file_path
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dst)
        labels = tuple(sorted(record.pseudo_labels))
        entries.append(ManifestEntry(record.file_path, labels))
        names = " ".join(list_names[c] for c in labels)
        lines.append(f"{record.file_path} {names}")

    (out_dir / "train_list.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # every on-disk image must land in the train list or the quarantine log
    listed = {str(Path(r.file_path)) for r in records}
    quarantined = []
    images_root = source_dir / "images"
    if images_root.is_dir():
        for png in sorted(images_root.rglob("*.png")):
            rel = str(png.relative_to(source_dir))
            if rel not in listed:
                quarantined.append(rel)
    (out_dir / "quarantined.txt").write_text(
        "".join(f"{rel}\n" for rel in quarantined), encoding="utf-8"
    )

    manifest = DatasetManifest(
        vocabulary=vocabulary,
        entries=tuple(entries),
        generation_metadata=metadata or {},
        base_dir=out_dir,
    )
    write_manifest(manifest, out_dir / "manifest.jsonl")
    violations = validate_manifest(manifest)
    if violations:
        raise ExportError(f"exported manifest failed validation: {violations[:5]}")
    return manifest


class PipelineRun:
    """One run directory: builds providers, executes and resumes stages."""

    def __init__(
        self,
        config: PipelineConfig,
        run_dir: str | Path,
        provider_mode: str = "simulated",
        fixtures=None,
    ):
        if config.vocabulary_path is None:
            raise ConfigError("config must set vocabulary_path")
        self.config = config
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.vocabulary = load_vocabulary(config.vocabulary_path)
        self.provider_mode = provider_mode
        self.providers = build_provider_bundle(
            config.providers,
            provider_mode,
            config.random_seed,
            cache_dir=self.run_dir / "cache",
        )
        if fixtures is not None:
            if provider_mode != "simulated":
                raise ConfigError("fixtures only apply to simulated providers")
            self.providers.text.state.fixtures = fixtures

        grid_doc = dict(config.grid)
        self.inference_side = grid_doc.pop("inference_side", None)
        self.grid = PatchGridConfig(**grid_doc)
        training_doc = {"seed": config.random_seed, **config.training}
        self.training_config = TrainingConfig.from_dict(training_doc)

    # -- paths -----------------------------------------------------------

    @property
    def state_path(self) -> Path:
        return self.run_dir / _STATE_FILE

    @property
    def prompts_path(self) -> Path:
        return self.run_dir / "prompts.jsonl"

    @property
    def memory_path(self) -> Path:
        return self.run_dir / "memory_index.bin"

    @property
    def images_path(self) -> Path:
        return self.run_dir / "images.jsonl"

    @property
    def failures_path(self) -> Path:
        return self.run_dir / "failures.jsonl"

    @property
    def dhigh_path(self) -> Path:
        return self.run_dir / "dhigh.jsonl"

    @property
    def classifier_path(self) -> Path:
        return self.run_dir / "classifier.bin"

    @property
    def training_log_path(self) -> Path:
        return self.run_dir / "training_log.jsonl"

    @property
    def relabeled_path(self) -> Path:
        return self.run_dir / "relabeled.jsonl"

    @property
    def export_dir(self) -> Path:
        if self.config.output_dir is not None:
            return Path(self.config.output_dir)
        return self.run_dir / "export"

    @property
    def manifest_path(self) -> Path:
        return self.export_dir / "manifest.jsonl"

    # -- state and locking -------------------------------------------------

    def _load_state(self) -> RunState:
        config_hash = self.config.config_hash()
        if self.state_path.is_file():
            state = RunState.load(self.state_path)
            if state.config_hash != config_hash:
                raise ConfigError(
                    f"run directory {self.run_dir} was started with config hash "
                    f"{state.config_hash}, current config hashes to {config_hash}"
                )
            return state
        (self.run_dir / "config.snapshot.json").write_text(
            json.dumps(self.config.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
        return RunState(run_id=f"run-{config_hash}", config_hash=config_hash)

    @contextmanager
    def _lock(self):
        path = self.run_dir / _LOCK_FILE
        if path.exists():
            try:
                pid = int(path.read_text(encoding="utf-8").strip())
            except ValueError:
                pid = None
            if pid is not None and pid != os.getpid() and _pid_alive(pid):
                raise ConfigError(f"run directory {self.run_dir} is locked by pid {pid}")
        path.write_text(str(os.getpid()), encoding="utf-8")
        try:
            yield
        finally:
            path.unlink(missing_ok=True)

    # -- stage plumbing ----------------------------------------------------

    def _stage_outputs(self, stage: str) -> list[Path]:
        return {
            "prompts": [self.prompts_path, self.memory_path],
            "images": [self.images_path, self.failures_path, self.run_dir / "images"],
            "dhigh": [self.dhigh_path],
            "classifier": [self.classifier_path, self.training_log_path],
            "relabel": [self.relabeled_path],
            "export": [self.export_dir],
        }[stage]

    def _wipe_outputs(self, stage: str) -> None:
        for path in self._stage_outputs(stage):
            if path.is_dir():
                shutil.rmtree(path)
            elif path.exists():
                path.unlink()

    def _execute(self, stage: str, state: RunState) -> None:
        runner = getattr(self, f"_stage_{stage}")
        self._wipe_outputs(stage)
        logger.info("stage %s starting", stage)
        try:
            counts = runner()
        except (ConfigError, ProviderExhaustedError, StageError):
            raise
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc
        state.mark_complete(stage, counts)
        state.save(self.state_path)
        logger.info("stage %s complete: %s", stage, counts)

    def run(self) -> DatasetManifest:
        """Execute every remaining stage in order; idempotent once complete."""
        with self._lock():
            state = self._load_state()
            for stage in STAGES:
                if not state.is_complete(stage):
                    self._execute(stage, state)
        return read_manifest(self.manifest_path)

    def run_stage(self, stage: str) -> RunState:
        """Execute a single stage (no-op if already complete); predecessors must be done."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage: {stage!r}")
        with self._lock():
            state = self._load_state()
            if state.is_complete(stage):
                logger.info("stage %s already complete", stage)
                return state
            for predecessor in STAGES[: STAGES.index(stage)]:
                if not state.is_complete(predecessor):
                    raise StageError(stage, f"predecessor stage '{predecessor}' is not complete")
            self._execute(stage, state)
            return state

    # -- the six stages ------------------------------------------------------

    def _stage_prompts(self) -> dict[str, int]:
        agent = PromptAgent(self.vocabulary, self.config, self.providers)
        accepted = agent.run()
        records = sorted(agent.records, key=lambda r: r.prompt_id)
        self.prompts_path.unlink(missing_ok=True)
        append_jsonl(self.prompts_path, (r.to_json() for r in records))
        agent.memory.save(self.memory_path)
        return {"prompt_candidates": len(records), "prompts_accepted": len(accepted)}

    def _load_accepted_prompts(self) -> list[PromptRecord]:
        memory = MemoryBuffer.load(self.memory_path)
        accepted = []
        for doc in iter_jsonl(self.prompts_path):
            if doc["status"] != "accepted":
                continue
            accepted.append(
                PromptRecord(
                    prompt_id=doc["prompt_id"],
                    class_id=int(doc["class_id"]),
                    text=doc["text"],
                    embedding=memory.index.vector_of(doc["prompt_id"]),
                    quality_score=doc["quality_score"],
                    status="accepted",
                    below_quality_threshold=bool(doc.get("below_quality_threshold", False)),
                )
            )
        return accepted

    def _load_images(self) -> list[ImageRecord]:
        return [ImageRecord.from_json(doc) for doc in iter_jsonl(self.images_path)]

    def _image_agent(self) -> ImageAgent:
        return ImageAgent(self.vocabulary, self.config, self.providers, self.run_dir)

    def _stage_images(self) -> dict[str, int]:
        accepted = self._load_accepted_prompts()
        agent = self._image_agent()
        records, failures = agent.synthesize_batch(accepted)
        self.images_path.unlink(missing_ok=True)
        append_jsonl(self.images_path, (r.to_json() for r in records))
        self.failures_path.unlink(missing_ok=True)
        append_jsonl(self.failures_path, failures)
        return {"images_synthesized": len(records), "images_failed": len(failures)}

    def _stage_dhigh(self) -> dict[str, int]:
        prompts_by_id = {p.prompt_id: p for p in self._load_accepted_prompts()}
        images = self._load_images()
        agent = self._image_agent()
        pairs, _selected = agent.dual_gate(images, prompts_by_id)
        self.dhigh_path.unlink(missing_ok=True)
        append_jsonl(self.dhigh_path, (p.to_json() for p in pairs))
        return {"dhigh_pairs": len(pairs)}

    def _load_pairs(self) -> list[HighConfidencePair]:
        return [HighConfidencePair.from_json(doc) for doc in iter_jsonl(self.dhigh_path)]

    def _stage_classifier(self) -> dict[str, int]:
        labels_by_image: dict[str, set[int]] = {}
        for pair in self._load_pairs():
            labels_by_image.setdefault(pair.image_id, set()).add(pair.class_id)
        images = [img for img in self._load_images() if labels_by_image.get(img.image_id)]
        if not images:
            raise StageError("classifier", "high-confidence set is empty; nothing to train on")
        num_classes = len(self.vocabulary)
        samples = []
        for image in sorted(images, key=lambda r: r.image_id):
            data = (self.run_dir / image.file_path).read_bytes()
            F = patch_embed(data, self.grid, self.providers.embedding)
            y = np.zeros(num_classes)
            for cid in labels_by_image[image.image_id]:
                y[cid] = 1.0
            samples.append((F, y))
        result = train(samples, num_classes, self.training_config)
        save_classifier(
            self.classifier_path, result.weights, self.grid, result.steps, result.head
        )
        self.training_log_path.unlink(missing_ok=True)
        append_jsonl(self.training_log_path, result.history)
        return {"classifier_samples": len(samples), "classifier_best_epoch": result.best_epoch}

    def _stage_relabel(self) -> dict[str, int]:
        weights, grid, _step, head = load_classifier(self.classifier_path)
        relabeled = []
        for image in sorted(self._load_images(), key=lambda r: r.image_id):
            data = (self.run_dir / image.file_path).read_bytes()
            labels = relabel(
                data,
                weights,
                grid,
                self.providers.embedding,
                threshold=self.config.relabel_threshold,
                head=head,
                inference_side=self.inference_side,
            )
            relabeled.append(
                dataclasses.replace(
                    image, pseudo_labels=frozenset(labels), label_source="relabeler"
                )
            )
        self.relabeled_path.unlink(missing_ok=True)
        append_jsonl(self.relabeled_path, (r.to_json() for r in relabeled))
        return {"images_relabeled": len(relabeled)}

    def _stage_export(self) -> dict[str, int]:
        records = [ImageRecord.from_json(doc) for doc in iter_jsonl(self.relabeled_path)]
        state = RunState.load(self.state_path) if self.state_path.is_file() else None
        metadata = {
            "run_id": state.run_id if state else f"run-{self.config.config_hash()}",
            "config_hash": self.config.config_hash(),
            "seed": self.config.random_seed,
            "provider_mode": self.provider_mode,
        }
        manifest = export_dataset(
            records, self.vocabulary, self.run_dir, self.export_dir, metadata
        )
        return {"images_exported": len(manifest.entries)}

    # -- reporting -------------------------------------------------------

    def stats(self) -> dict[str, Any]:
        return stats_report(self.run_dir)


def stats_report(run_dir: str | Path) -> dict[str, Any]:
    """Per-class generation and labeling counts for a run directory."""
    run_dir = Path(run_dir)
    state_path = run_dir / _STATE_FILE
    if not state_path.is_file():
        raise ConfigError(f"no run state in {run_dir}")
    state = RunState.load(state_path)
    if not state.completed:
        raise ConfigError(f"run {state.run_id} has no completed stages")
    snapshot = json.loads((run_dir / "config.snapshot.json").read_text(encoding="utf-8"))
    config = PipelineConfig.from_dict(snapshot)
    vocabulary = load_vocabulary(config.vocabulary_path)

    per_class: dict[str, dict[str, Any]] = {
        name: {
            "prompt_candidates": 0,
            "prompts_accepted": 0,
            "acceptance_rate": 0.0,
            "images_synthesized": 0,
            "images_failed": 0,
            "dhigh_pairs": 0,
        }
        for name in vocabulary.names
    }
    prompt_class: dict[str, int] = {}

    prompts_path = run_dir / "prompts.jsonl"
    if prompts_path.is_file():
        for doc in iter_jsonl(prompts_path):
            name = vocabulary.name_of(int(doc["class_id"]))
            prompt_class[doc["prompt_id"]] = int(doc["class_id"])
            per_class[name]["prompt_candidates"] += 1
            if doc["status"] == "accepted":
                per_class[name]["prompts_accepted"] += 1
        for name, row in per_class.items():
            if row["prompt_candidates"]:
                row["acceptance_rate"] = row["prompts_accepted"] / row["prompt_candidates"]

    image_class: dict[str, int] = {}
    images_path = run_dir / "images.jsonl"
    if images_path.is_file():
        for doc in iter_jsonl(images_path):
            cid = prompt_class.get(doc["prompt_id"])
            if cid is None:
                continue
            image_class[doc["image_id"]] = cid
            per_class[vocabulary.name_of(cid)]["images_synthesized"] += 1
    failures_path = run_dir / "failures.jsonl"
    if failures_path.is_file():
        for doc in iter_jsonl(failures_path):
            per_class[vocabulary.name_of(int(doc["class_id"]))]["images_failed"] += 1

    dual_hist = {name: 0 for name in vocabulary.names}
    dhigh_path = run_dir / "dhigh.jsonl"
    if dhigh_path.is_file():
        for doc in iter_jsonl(dhigh_path):
            name = vocabulary.name_of(int(doc["class_id"]))
            dual_hist[name] += 1
            prompt_cid = image_class.get(doc["image_id"])
            if prompt_cid is not None:
                per_class[vocabulary.name_of(prompt_cid)]["dhigh_pairs"] += 1

    relabel_hist = {name: 0 for name in vocabulary.names}
    relabeled_path = run_dir / "relabeled.jsonl"
    if relabeled_path.is_file():
        for doc in iter_jsonl(relabeled_path):
            for cid in doc.get("pseudo_labels", []):
                relabel_hist[vocabulary.name_of(int(cid))] += 1

    return {
        "run_id": state.run_id,
        "completed_stages": list(state.completed),
        "counts": dict(state.counts),
        "per_class": per_class,
        "label_histograms": {"dual_filter": dual_hist, "relabeler": relabel_hist},
    }

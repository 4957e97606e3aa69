"""Patch-wise linear relabeling classifier.

An image is resized and split into a grid of patches; a frozen encoder
embeds each patch (one row of F). The trainable part is a single weight
matrix W. Per-patch class scores are a row-wise softmax of F @ W, pooled
to an image-level prediction by a per-class max over patches, and trained
against multi-hot targets with binary cross-entropy. The gradient is
hand-derived: the max pool routes each class's error to exactly one patch
row.

A sigmoid head is available as a config switch; it decouples classes,
which the softmax head does not.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, GridError

CLIP_EPS = 1e-7
HEADS = ("softmax", "sigmoid")

_CHECKPOINT_MAGIC = b"SFCK1\n"


@dataclass(frozen=True)
class PatchGridConfig:
    """Square input of input_side pixels cut into non-overlapping square patches."""

    input_side: int = 384
    patch_side: int = 16

    def __post_init__(self):
        if self.input_side < 1 or self.patch_side < 1:
            raise GridError("grid sides must be positive")
        if self.input_side % self.patch_side != 0:
            raise GridError(
                f"patch side {self.patch_side} does not divide input side {self.input_side}"
            )

    @property
    def patches_per_side(self) -> int:
        return self.input_side // self.patch_side

    @property
    def patch_count(self) -> int:
        return self.patches_per_side ** 2

    def to_json(self) -> dict[str, int]:
        return {"input_side": self.input_side, "patch_side": self.patch_side}


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 16
    max_epochs: int = 50
    lr_initial: float = 1e-3
    lr_later: float = 1e-4
    lr_switch_epoch: int = 2
    val_fraction: float = 0.1
    seed: int = 0
    head: str = "softmax"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.lr_initial <= 0 or self.lr_later <= 0:
            raise ConfigError("learning rates must be positive")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**doc)


def _check_matrix(F: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    F = np.asarray(F, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if F.ndim != 2 or W.ndim != 2:
        raise ValueError("F and W must be 2-d matrices")
    if F.shape[1] != W.shape[0]:
        raise ValueError(f"inner dimensions disagree: F {F.shape} vs W {W.shape}")
    return F, W


def forward(F, W, head: str = "softmax") -> np.ndarray:
    """Per-patch class scores: row-softmax (or elementwise sigmoid) of F @ W."""
    F, W = _check_matrix(F, W)
    logits = F @ W
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if head == "softmax":
        shifted = logits - logits.max(axis=1, keepdims=True)
        exps = np.exp(shifted)
        return exps / exps.sum(axis=1, keepdims=True)
    if head == "sigmoid":
        return 1.0 / (1.0 + np.exp(-logits))
    raise ValueError(f"unknown head: {head!r}")


def max_pool(Z) -> np.ndarray:
    """Image-level prediction: per-class maximum over patch rows."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValueError("Z must be a nonempty 2-d matrix")
    return Z.max(axis=0)


def predict(F, W, head: str = "softmax") -> np.ndarray:
    return max_pool(forward(F, W, head))


def bce_loss(y_hat, y) -> float:
    """Multi-label binary cross-entropy, averaged over classes, clipped for stability."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    clipped = np.clip(y_hat, CLIP_EPS, 1.0 - CLIP_EPS)
    per_class = y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped)
    return float(-per_class.sum() / y.shape[0])


def loss_gradient(F, W, y, head: str = "softmax") -> np.ndarray:
    """Exact dL/dW of bce_loss(max_pool(forward(F, W)), y).

    The pool sends each class's gradient to that class's argmax patch
    (lowest row index on ties); where the clip is active the gradient
    is zero.
    """
    F, W = _check_matrix(F, W)
    y = np.asarray(y, dtype=np.float64)
    Z = forward(F, W, head)
    num_classes = Z.shape[1]
    rows = np.argmax(Z, axis=0)
    pooled = Z[rows, np.arange(num_classes)]
    inside = (pooled > CLIP_EPS) & (pooled < 1.0 - CLIP_EPS)
    clipped = np.clip(pooled, CLIP_EPS, 1.0 - CLIP_EPS)
    dpool = np.where(
        inside,
        -(y / clipped - (1.0 - y) / (1.0 - clipped)) / num_classes,
        0.0,
    )
    G = np.zeros_like(Z)
    G[rows, np.arange(num_classes)] = dpool
    if head == "softmax":
        dA = Z * (G - (G * Z).sum(axis=1, keepdims=True))
    else:
        dA = G * Z * (1.0 - Z)
    return F.T @ dA


def patch_embed(image_bytes: bytes, grid: PatchGridConfig, provider) -> np.ndarray:
    """Provider patch embeddings validated against the grid: (patch_count, e), finite."""
    F = np.asarray(
        provider.embed_patches(image_bytes, grid.input_side, grid.patch_side),
        dtype=np.float64,
    )
    if F.ndim != 2 or F.shape[0] != grid.patch_count:
        raise GridError(
            f"expected {grid.patch_count} patch rows for grid {grid.to_json()}, got {F.shape}"
        )
    if not np.all(np.isfinite(F)):
        raise ValueError("patch embeddings contain non-finite values")
    return F


@dataclass
class TrainResult:
    weights: np.ndarray
    head: str
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


def _mean_loss(pairs, indexes, W, head) -> float:
    if len(indexes) == 0:
        return float("nan")
    total = 0.0
    for i in indexes:
        F, y = pairs[i]
        total += bce_loss(predict(F, W, head), y)
    return total / len(indexes)


def train(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    num_classes: int,
    config: TrainingConfig | None = None,
) -> TrainResult:
    """Adam on mini-batches with the two-phase learning-rate schedule.

    Weights start at zero. A held-out fraction is split off up front; the
    returned weights are the snapshot with the lowest held-out loss (training
    loss stands in when the split is empty).
    """
    cfg = config or TrainingConfig()
    if not pairs:
        raise ValueError("training set is empty")
    dim = None
    for F, y in pairs:
        F = np.asarray(F)
        y = np.asarray(y)
        if F.ndim != 2:
            raise ValueError("each F must be a 2-d matrix")
        if dim is None:
            dim = F.shape[1]
        elif F.shape[1] != dim:
            raise ValueError("inconsistent embedding dimensions in training set")
        if y.shape != (num_classes,):
            raise ValueError(f"target shape {y.shape} != ({num_classes},)")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("targets must be multi-hot 0/1 vectors")
        if y.sum() < 1:
            raise ValueError("every training target needs at least one positive class")

    W = np.zeros((dim, num_classes))
    result = TrainResult(weights=W.copy(), head=cfg.head)
    if cfg.max_epochs == 0:
        return result

    rng = np.random.default_rng(cfg.seed)
    n = len(pairs)
    n_val = min(int(round(cfg.val_fraction * n)), n - 1)
    perm = rng.permutation(n)
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]

    m = np.zeros_like(W)
    v = np.zeros_like(W)
    best_val = float("inf")
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr_initial if epoch <= cfg.lr_switch_epoch else cfg.lr_later
        order = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad = np.zeros_like(W)
            for i in batch:
                F, y = pairs[i]
                grad += loss_gradient(F, W, y, cfg.head)
            grad /= len(batch)
            step += 1
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
            m_hat = m / (1.0 - cfg.beta1 ** step)
            v_hat = v / (1.0 - cfg.beta2 ** step)
            W = W - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            if not np.all(np.isfinite(W)):
                raise ValueError(f"weights became non-finite at step {step}")
        train_loss = _mean_loss(pairs, train_idx, W, cfg.head)
        val_loss = _mean_loss(pairs, val_idx, W, cfg.head) if n_val else train_loss
        improved = val_loss < best_val
        if improved:
            best_val = val_loss
            result.weights = W.copy()
            result.best_epoch = epoch
        result.history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "best": improved,
            }
        )
    result.steps = step
    return result


def labels_from_scores(y_hat, threshold: float) -> set[int]:
    """Classes at or above the threshold; falls back to the argmax so the set is never empty."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    picked = {int(c) for c in np.flatnonzero(y_hat >= threshold)}
    if not picked:
        picked = {int(np.argmax(y_hat))}
    return picked


def relabel(
    image_bytes: bytes,
    weights: np.ndarray,
    grid: PatchGridConfig,
    provider,
    threshold: float = 0.5,
    head: str = "softmax",
    inference_side: int | None = None,
) -> set[int]:
    """Label one image with the trained classifier.

    ``inference_side`` optionally resizes to a larger grid at inference
    time; the patch side stays fixed, so the weight matrix still applies.
    """
    side = inference_side if inference_side is not None else grid.input_side
    infer_grid = PatchGridConfig(side, grid.patch_side)
    F = patch_embed(image_bytes, infer_grid, provider)
    return labels_from_scores(predict(F, weights, head), threshold)


def save_classifier(
    path: str | Path,
    weights: np.ndarray,
    grid: PatchGridConfig,
    step: int = 0,
    head: str = "softmax",
) -> Path:
    """Checkpoint: magic, JSON header, then row-major little-endian float32 weights."""
    path = Path(path)
    weights = np.asarray(weights, dtype=np.float64)
    header = {
        "embedding_dim": int(weights.shape[0]),
        "num_classes": int(weights.shape[1]),
        "grid": grid.to_json(),
        "step": int(step),
        "head": head,
    }
    with path.open("wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(weights.astype("<f4").tobytes())
    return path


def load_classifier(path: str | Path) -> tuple[np.ndarray, PatchGridConfig, int, str]:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a classifier checkpoint: {path}")
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    shape = (header["embedding_dim"], header["num_classes"])
    weights = data.reshape(shape)
    grid = PatchGridConfig(**header["grid"])
    return weights, grid, int(header.get("step", 0)), header.get("head", "softmax")

"""Vector math and the nearest-neighbor index behind the prompt memory.

Similarities follow the two forms used by the filtering gates: raw cosine
for the diversity filter and the scaled form (1 + cos) / 2 mapped onto
[0, 1] for the text and image gates.

The index defaults to an exact linear scan; an opt-in approximate mode
partitions stored vectors with k-means and probes the closest partitions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DegenerateVectorError, DimensionMismatchError, DuplicateIdError

_SNAPSHOT_MAGIC = b"SFIX1\n"


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def normalize(v) -> np.ndarray:
    """Scale to unit Euclidean norm, preserving direction."""
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise DegenerateVectorError("cannot normalize the zero vector")
    return arr / norm


def cosine(a, b) -> float:
    """cos(a, b) = <a, b> / (|a| |b|), clipped into [-1, 1]."""
    va, vb = as_vector(a), as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine undefined for a zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def scaled_similarity(a, b) -> float:
    """(1 + cos(a, b)) / 2: identical -> 1.0, orthogonal -> 0.5, antiparallel -> 0.0."""
    return (1.0 + cosine(a, b)) / 2.0


class NeighborIndex:
    """Cosine nearest-neighbor search over unit vectors.

    Exact mode scans all stored vectors; ties break toward the earliest
    insertion. Approximate mode (opt-in) clusters the stored vectors and
    probes a fraction of the partitions; it falls back to an exact scan
    below ``min_partition_size`` where clustering buys nothing.
    """

    def __init__(
        self,
        dimension: int,
        mode: str = "exact",
        nprobe_fraction: float = 0.5,
        min_partition_size: int = 256,
    ):
        # the default probe fraction is calibrated on unstructured (uniform
        # random) vectors, where recall@1 stays >= 0.95; clustered data does
        # better and can afford a smaller fraction
        if mode not in ("exact", "approximate"):
            raise ValueError(f"unknown search mode: {mode}")
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.mode = mode
        self.nprobe_fraction = nprobe_fraction
        self.min_partition_size = min_partition_size
        self._ids: list[str] = []
        self._id_set: set[str] = set()
        self._vectors = np.empty((0, dimension), dtype=np.float64)
        self._count = 0
        self._partitions: tuple[np.ndarray, list[np.ndarray]] | None = None

    def __len__(self) -> int:
        return self._count

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def _matrix(self) -> np.ndarray:
        return self._vectors[: self._count]

    def insert(self, record_id: str, v) -> None:
        vec = as_vector(v)
        if vec.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"index dimension {self.dimension}, vector dimension {vec.shape[0]}"
            )
        if record_id in self._id_set:
            raise DuplicateIdError(f"id already indexed: {record_id}")
        if self._count == len(self._vectors):
            grown = np.empty((max(8, 2 * len(self._vectors)), self.dimension), dtype=np.float64)
            grown[: self._count] = self._vectors[: self._count]
            self._vectors = grown
        self._vectors[self._count] = vec
        self._count += 1
        self._ids.append(record_id)
        self._id_set.add(record_id)
        self._partitions = None

    def vector_of(self, record_id: str) -> np.ndarray:
        pos = self._ids.index(record_id)
        return self._vectors[pos].copy()

    def nearest(self, q) -> tuple[str, float] | None:
        """Return (id, cosine) of the stored vector closest to ``q``, or None if empty."""
        query = as_vector(q)
        if query.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"index dimension {self.dimension}, query dimension {query.shape[0]}"
            )
        if self._count == 0:
            return None
        if self.mode == "approximate" and self._count >= self.min_partition_size:
            return self._nearest_approximate(query)
        return self._nearest_exact(query, np.arange(self._count))

    def _nearest_exact(self, query: np.ndarray, rows: np.ndarray) -> tuple[str, float]:
        scores = self._matrix()[rows] @ query
        best = int(np.argmax(scores))  # first max <=> earliest insertion
        row = int(rows[best])
        return self._ids[row], float(scores[best])

    def _build_partitions(self) -> None:
        from scipy.cluster.vq import kmeans2

        data = self._matrix()
        k = max(8, int(np.sqrt(self._count)))
        centroids, assignment = kmeans2(data, k, minit="++", seed=12345)
        members = [np.flatnonzero(assignment == c) for c in range(len(centroids))]
        keep = [i for i, m in enumerate(members) if len(m)]
        self._partitions = (centroids[keep], [members[i] for i in keep])

    def _nearest_approximate(self, query: np.ndarray) -> tuple[str, float]:
        if self._partitions is None:
            self._build_partitions()
        centroids, members = self._partitions
        nprobe = max(2, int(np.ceil(self.nprobe_fraction * len(members))))
        order = np.argsort(-(centroids @ query), kind="stable")[:nprobe]
        rows = np.concatenate([members[i] for i in order])
        rows.sort()  # restore insertion order so ties break earliest-first
        return self._nearest_exact(query, rows)

    def save(self, path: str | Path) -> Path:
        """Snapshot: magic + JSON header (dimension, count, mode, ids) + packed float32."""
        path = Path(path)
        header = {
            "dimension": self.dimension,
            "count": self._count,
            "mode": self.mode,
            "ids": self._ids,
        }
        with path.open("wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(json.dumps(header).encode("utf-8") + b"\n")
            fh.write(self._matrix().astype("<f4").tobytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "NeighborIndex":
        path = Path(path)
        with path.open("rb") as fh:
            magic = fh.read(len(_SNAPSHOT_MAGIC))
            if magic != _SNAPSHOT_MAGIC:
                raise ValueError(f"not an index snapshot: {path}")
            header = json.loads(fh.readline().decode("utf-8"))
            data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
        index = cls(header["dimension"], mode=header["mode"])
        count = header["count"]
        vectors = data.reshape(count, header["dimension"])
        for record_id, vec in zip(header["ids"], vectors):
            index.insert(record_id, vec)
        return index

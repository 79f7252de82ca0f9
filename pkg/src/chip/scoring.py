"""Per-layer scoring, mask selection, and batch stability analysis.

This ties the CI metric to the pruning procedure: compute per-sample CI for
every channel, average over samples, sort ascending, and prune the channels
with the smallest averages. Batch-level intermediates are kept around because
the stability analysis correlates per-batch average CI vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ci import ci_all
from .errors import ManifestError, MaskError, ShapeMismatchError
from .tensor_io import DumpManifest, FeatureMapSet, load_sample, matricize


@dataclass(frozen=True)
class CIScoreVector:
    """Mean CI per channel for one layer, plus how many samples went in."""

    layer_id: str
    scores: tuple[tuple[int, float], ...]
    num_samples: int
    aggregation: str = "mean"

    def __post_init__(self):
        channels = [c for c, _ in self.scores]
        if channels != list(range(len(channels))):
            raise MaskError(
                f"layer {self.layer_id!r}: scores must cover channels 0..c-1 in order"
            )
        if self.num_samples < 1:
            raise MaskError("num_samples must be >= 1")

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.scores], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.scores)

    def to_json(self, seed: int | None = None) -> dict:
        obj = {
            "layer_id": self.layer_id,
            "scores": [[c, v] for c, v in self.scores],
            "num_samples": self.num_samples,
        }
        if seed is not None:
            obj["seed"] = seed
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CIScoreVector":
        return cls(
            layer_id=obj["layer_id"],
            scores=tuple((int(c), float(v)) for c, v in obj["scores"]),
            num_samples=int(obj["num_samples"]),
        )


@dataclass(frozen=True)
class PruneMask:
    """Per-channel keep decision with exactly kappa channels kept."""

    layer_id: str
    keep: tuple[bool, ...]
    kappa: int

    def __post_init__(self):
        kept = sum(self.keep)
        if kept != self.kappa:
            raise MaskError(
                f"layer {self.layer_id!r}: {kept} channels kept but kappa={self.kappa}"
            )
        if not 1 <= self.kappa <= len(self.keep):
            raise MaskError(f"kappa {self.kappa} out of range for {len(self.keep)} channels")

    @property
    def kept_channels(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.keep) if k)

    @property
    def pruned_channels(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.keep) if not k)

    def to_json(self) -> dict:
        return {"layer_id": self.layer_id, "keep": list(self.keep), "kappa": self.kappa}

    @classmethod
    def from_json(cls, obj: dict) -> "PruneMask":
        return cls(obj["layer_id"], tuple(bool(k) for k in obj["keep"]), int(obj["kappa"]))


def score_layer(samples: Sequence[FeatureMapSet], layer_id: str) -> CIScoreVector:
    """Mean CI per channel over a list of same-shaped samples."""
    if not samples:
        raise MaskError("need at least one sample")
    shape = samples[0].data.shape
    per_sample = []
    for s in samples:
        if s.data.shape != shape:
            raise ShapeMismatchError(
                f"layer {layer_id!r}: sample {s.sample_id} shape {s.data.shape} "
                f"differs from {shape}"
            )
        per_sample.append([v.value for v in ci_all(matricize(s))])
    means = np.mean(np.array(per_sample, dtype=np.float64), axis=0)
    return CIScoreVector(
        layer_id=layer_id,
        scores=tuple((i, float(v)) for i, v in enumerate(means)),
        num_samples=len(samples),
    )


def select_mask(scores: CIScoreVector, kappa: int) -> PruneMask:
    """Keep the kappa channels with the largest mean CI; ties keep lower indices."""
    c = len(scores)
    if not 1 <= kappa <= c:
        raise MaskError(f"kappa {kappa} out of range for {c} channels")
    order = sorted(range(c), key=lambda i: (-scores.scores[i][1], i))
    kept = set(order[:kappa])
    return PruneMask(scores.layer_id, tuple(i in kept for i in range(c)), kappa)


@dataclass(frozen=True)
class PearsonMatrix:
    """Pairwise Pearson correlations between batch score vectors.

    Pairs involving a zero-variance vector are undefined: NaN in the matrix and
    listed in ``undefined_pairs``. The diagonal is exactly 1.
    """

    layer_id: str
    matrix: np.ndarray = field(repr=False)
    undefined_pairs: tuple[tuple[int, int], ...] = ()

    def off_diagonal(self) -> np.ndarray:
        n = self.matrix.shape[0]
        mask = ~np.eye(n, dtype=bool)
        return self.matrix[mask]

    def to_csv(self, path: Path | str, comment: str | None = None) -> None:
        n = self.matrix.shape[0]
        lines = []
        if comment:
            lines.append(f"# {comment}")
        lines.append("batch," + ",".join(f"batch_{j}" for j in range(n)))
        for i in range(n):
            row = ",".join(f"{self.matrix[i, j]:.12g}" for j in range(n))
            lines.append(f"batch_{i},{row}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Plain Pearson correlation; NaN when either vector has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = x - x.mean()
    y0 = y - y.mean()
    sx = float(np.dot(x0, x0))
    sy = float(np.dot(y0, y0))
    if sx == 0.0 or sy == 0.0:
        return float("nan")
    return float(np.dot(x0, y0) / np.sqrt(sx * sy))


def stability_analysis(batches: Sequence[CIScoreVector]) -> PearsonMatrix:
    """Pearson correlation matrix between per-batch mean CI vectors."""
    if len(batches) < 2:
        raise MaskError("need at least 2 batches")
    layer_id = batches[0].layer_id
    length = len(batches[0])
    for b in batches:
        if b.layer_id != layer_id:
            raise MaskError(f"mixed layers: {b.layer_id!r} vs {layer_id!r}")
        if len(b) != length:
            raise MaskError("batch score vectors differ in length")
    vecs = [b.values for b in batches]
    n = len(vecs)
    mat = np.eye(n)
    undefined = []
    for i in range(n):
        for j in range(i + 1, n):
            r = pearson(vecs[i], vecs[j])
            mat[i, j] = mat[j, i] = r
            if np.isnan(r):
                undefined.append((i, j))
    return PearsonMatrix(layer_id, mat, tuple(undefined))


@dataclass(frozen=True)
class ModelScores:
    """Scores for every layer of a dump, with per-batch intermediates."""

    per_layer: dict[str, CIScoreVector]
    per_batch: dict[str, tuple[CIScoreVector, ...]]
    sample_ids: tuple[int, ...]
    seed: int
    batch_size: int


def _score_one_layer(
    root: Path, manifest: DumpManifest, layer_id: str, sample_ids: Sequence[int],
    batch_size: int,
) -> tuple[CIScoreVector, tuple[CIScoreVector, ...]]:
    per_sample = []
    for sid in sample_ids:
        fms = load_sample(root, manifest, layer_id, sid)
        per_sample.append(np.array([v.value for v in ci_all(matricize(fms))]))
    stacked = np.array(per_sample)
    mean_vec = CIScoreVector(
        layer_id,
        tuple((i, float(v)) for i, v in enumerate(stacked.mean(axis=0))),
        num_samples=len(sample_ids),
    )
    batch_vecs = []
    for start in range(0, len(sample_ids) - batch_size + 1, batch_size):
        chunk = stacked[start:start + batch_size]
        batch_vecs.append(
            CIScoreVector(
                layer_id,
                tuple((i, float(v)) for i, v in enumerate(chunk.mean(axis=0))),
                num_samples=batch_size,
            )
        )
    return mean_vec, tuple(batch_vecs)


def score_model(
    manifest: DumpManifest,
    sample_count: int,
    batch_size: int,
    *,
    root: Path | str,
    seed: int,
    threads: int = 1,
) -> ModelScores:
    """Score every layer of a dump over a seeded sample draw.

    Samples are drawn uniformly without replacement; batches are consecutive
    chunks of the draw (only full batches are emitted as intermediates). The
    overall mean is over all drawn samples.
    """
    if sample_count > manifest.num_samples:
        raise ManifestError(
            f"sample_count {sample_count} exceeds manifest num_samples "
            f"{manifest.num_samples}"
        )
    if sample_count < 1 or batch_size < 1:
        raise ManifestError("sample_count and batch_size must be >= 1")
    root = Path(root)
    rng = np.random.default_rng(seed)
    sample_ids = tuple(
        int(s) for s in rng.choice(manifest.num_samples, size=sample_count, replace=False)
    )
    layer_ids = manifest.layer_ids()

    def work(layer_id: str):
        return _score_one_layer(root, manifest, layer_id, sample_ids, batch_size)

    if threads > 1 and len(layer_ids) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, layer_ids))
    else:
        results = [work(lid) for lid in layer_ids]

    per_layer = {lid: mean for lid, (mean, _) in zip(layer_ids, results)}
    per_batch = {lid: batches for lid, (_, batches) in zip(layer_ids, results)}
    return ModelScores(per_layer, per_batch, sample_ids, seed, batch_size)


def write_score_json(vec: CIScoreVector, path: Path | str, seed: int | None = None) -> None:
    Path(path).write_text(json.dumps(vec.to_json(seed=seed), indent=2), encoding="utf-8")


def read_score_json(path: Path | str) -> CIScoreVector:
    return CIScoreVector.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def write_mask_json(mask: PruneMask, path: Path | str) -> None:
    Path(path).write_text(json.dumps(mask.to_json(), indent=2), encoding="utf-8")


def read_mask_json(path: Path | str) -> PruneMask:
    return PruneMask.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

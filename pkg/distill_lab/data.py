"""
Synthetic identity data: hyperspherical class blobs, batching and
verification pairs.

Each class has a latent unit direction; a sample is the normalized sum of
its direction and isotropic Gaussian noise. The last part of every class is
held out for evaluation.
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from distill_lab.errors import InsufficientSamples, InvalidBatchSize, InvalidSpec
from distill_lab.numkit import make_rng, normalize_rows

HOLDOUT_FRACTION = 0.2


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    class_count: int = 20
    samples_per_class: int = 50
    input_dim: int = 16
    intra_class_noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise InvalidSpec(f"Need at least 2 classes, got {self.class_count}")
        if self.samples_per_class < 2:
            raise InvalidSpec(f"Need at least 2 samples per class, got {self.samples_per_class}")
        if self.input_dim < 2:
            raise InvalidSpec(f"Input dimension must be at least 2, got {self.input_dim}")
        if not (math.isfinite(self.intra_class_noise) and self.intra_class_noise >= 0):
            raise InvalidSpec(f"Noise level must be finite and non-negative, got {self.intra_class_noise}")
        if self.seed < 0:
            raise InvalidSpec(f"Seed must be non-negative, got {self.seed}")

    @property
    def holdout_per_class(self) -> int:
        return min(self.samples_per_class - 1, max(1, int(round(HOLDOUT_FRACTION * self.samples_per_class))))


@dataclass
class Dataset:
    spec: SyntheticDatasetSpec
    inputs: np.ndarray
    labels: np.ndarray
    latent_directions: np.ndarray
    train_indices: np.ndarray
    holdout_indices: np.ndarray

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices: np.ndarray):
        """(inputs, labels) for the given sample indices."""
        return self.inputs[indices], self.labels[indices]


@dataclass
class PairList:
    """Index pairs into the dataset; each array is k x 2."""

    genuine: np.ndarray
    impostor: np.ndarray


def generate_dataset(spec: SyntheticDatasetSpec) -> Dataset:
    """Deterministic per spec.seed; samples are stored class-major."""
    if not isinstance(spec, SyntheticDatasetSpec):
        raise InvalidSpec(f"Expected a SyntheticDatasetSpec, got {type(spec).__name__}")
    rng = make_rng(spec.seed)
    directions, _ = normalize_rows(rng.standard_normal((spec.class_count, spec.input_dim)))

    per_class = spec.samples_per_class
    noise = rng.standard_normal((spec.class_count, per_class, spec.input_dim))
    raw = directions[:, None, :] + spec.intra_class_noise * noise
    inputs, _ = normalize_rows(raw.reshape(-1, spec.input_dim))
    labels = np.repeat(np.arange(spec.class_count, dtype=np.int64), per_class)

    position = np.tile(np.arange(per_class), spec.class_count)
    is_holdout = position >= per_class - spec.holdout_per_class
    return Dataset(
        spec=spec,
        inputs=inputs,
        labels=labels,
        latent_directions=directions,
        train_indices=np.flatnonzero(~is_holdout),
        holdout_indices=np.flatnonzero(is_holdout),
    )


def make_batches(dataset: Dataset, batch_size: int, epoch_seed: int) -> List[np.ndarray]:
    """Seeded permutation of the training indices, chunked; the last short chunk is dropped."""
    train_size = dataset.train_indices.shape[0]
    if batch_size < 1 or batch_size > train_size:
        raise InvalidBatchSize(
            f"Batch size {batch_size} must lie in [1, {train_size}]",
            {"batch_size": batch_size, "train_size": train_size},
        )
    order = make_rng(epoch_seed).permutation(dataset.train_indices)
    full = train_size // batch_size
    return [order[i * batch_size:(i + 1) * batch_size] for i in range(full)]


def _sample_rows(rng: np.random.Generator, pairs: np.ndarray, count: Optional[int], kind: str) -> np.ndarray:
    if count is None:
        return pairs
    if count > pairs.shape[0]:
        raise InsufficientSamples(
            f"Requested {count} {kind} pairs but only {pairs.shape[0]} exist",
            {"requested": count, "available": int(pairs.shape[0])},
        )
    chosen = np.sort(rng.choice(pairs.shape[0], size=count, replace=False))
    return pairs[chosen]


def generate_pairs(
    dataset: Dataset,
    n_genuine: Optional[int],
    n_impostor: Optional[int],
    seed: int,
    indices: Optional[np.ndarray] = None,
) -> PairList:
    """
    Sample genuine and impostor pairs without replacement.

    Args:
        dataset: Source dataset
        n_genuine: Number of same-label pairs (None for all of them)
        n_impostor: Number of different-label pairs (None for all of them)
        seed: Sampling seed
        indices: Sample indices to draw from (defaults to the holdout split)

    Returns:
        PairList: pairs (i, j) with i < j, in ascending enumeration order
    """
    pool = dataset.holdout_indices if indices is None else np.asarray(indices, dtype=np.int64)
    labels = dataset.labels[pool]
    _, counts = np.unique(labels, return_counts=True)
    if np.count_nonzero(counts >= 2) < 2:
        raise InsufficientSamples("Pairs need at least 2 classes with at least 2 samples each")

    first, second = np.triu_indices(pool.shape[0], k=1)
    same = labels[first] == labels[second]
    all_pairs = np.stack([pool[first], pool[second]], axis=1)

    rng = make_rng(seed)
    genuine = _sample_rows(rng, all_pairs[same], n_genuine, "genuine")
    impostor = _sample_rows(rng, all_pairs[~same], n_impostor, "impostor")
    return PairList(genuine=genuine, impostor=impostor)

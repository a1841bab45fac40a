"""
Verification and identification metrics over cosine scores.

Accept rule everywhere: a pair is accepted when score >= threshold.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from distill_lab.data import PairList
from distill_lab.errors import (
    EmptyGallery,
    EmptyScores,
    IndexOutOfRange,
    InsufficientSamples,
    InvalidArgument,
    UnreliableFarWarning,
)
from distill_lab.losses import CenterBank
from distill_lab.numkit import EPS_NORM, as_mat, normalize_rows

logger = logging.getLogger(__name__)

# Always-reject sentinel: the smallest double above the largest possible cosine
REJECT_ALL = float(np.nextafter(1.0, 2.0))
ACCEPT_ALL = -1.0


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).reshape(-1)
        self.impostor = np.asarray(self.impostor, dtype=np.float64).reshape(-1)

    @property
    def total(self) -> int:
        return self.genuine.shape[0] + self.impostor.shape[0]


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tar: float
    far: float


@dataclass
class CenterDistributions:
    """Sample-to-sample and sample-to-center cosines of the same identity."""

    sample_sample: np.ndarray
    sample_center: np.ndarray
    degenerate_classes: List[int] = field(default_factory=list)

    @property
    def mean_sample_sample(self) -> float:
        return float(self.sample_sample.mean()) if self.sample_sample.size else math.nan

    @property
    def mean_sample_center(self) -> float:
        return float(self.sample_center.mean()) if self.sample_center.size else math.nan


def _require_scores(scores: ScoreSet) -> None:
    if scores.genuine.size == 0 or scores.impostor.size == 0:
        raise EmptyScores(
            "Threshold metrics need both genuine and impostor scores",
            {"genuine": int(scores.genuine.size), "impostor": int(scores.impostor.size)},
        )


def score_pairs(embeddings: np.ndarray, pairs: PairList) -> ScoreSet:
    """Cosine score of every pair, in pair order."""
    embeddings = as_mat(embeddings, "embeddings")
    n = embeddings.shape[0]
    for kind, index_pairs in (("genuine", pairs.genuine), ("impostor", pairs.impostor)):
        index_pairs = np.asarray(index_pairs)
        if index_pairs.size and (index_pairs.min() < 0 or index_pairs.max() >= n):
            raise IndexOutOfRange(f"{kind} pair index outside [0, {n})")
    units, _ = normalize_rows(embeddings)

    def scores_for(index_pairs) -> np.ndarray:
        index_pairs = np.asarray(index_pairs, dtype=np.int64).reshape(-1, 2)
        return np.clip(np.sum(units[index_pairs[:, 0]] * units[index_pairs[:, 1]], axis=1), -1.0, 1.0)

    return ScoreSet(scores_for(pairs.genuine), scores_for(pairs.impostor))


def _candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    distinct = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    return np.unique(np.concatenate([[ACCEPT_ALL], midpoints, [REJECT_ALL]]))


def verification_accuracy(scores: ScoreSet):
    """
    Best-threshold pair classification accuracy.

    Candidates are the midpoints between adjacent distinct scores plus the
    accept-all and reject-all sentinels; ties go to the smaller threshold.

    Returns:
        tuple: (accuracy, best_threshold)
    """
    _require_scores(scores)
    genuine = np.sort(scores.genuine)
    impostor = np.sort(scores.impostor)
    candidates = _candidate_thresholds(scores)

    accepted_genuine = genuine.size - np.searchsorted(genuine, candidates, side="left")
    rejected_impostor = np.searchsorted(impostor, candidates, side="left")
    correct = accepted_genuine + rejected_impostor
    best = int(np.argmax(correct))
    return float(correct[best]) / scores.total, float(candidates[best])


def allowed_false_accepts(impostor_count: int, far_target: float) -> int:
    """Largest k with k / impostor_count <= far_target."""
    if impostor_count <= 0:
        raise EmptyScores("No impostor scores")
    ratios = np.arange(impostor_count + 1) / impostor_count
    return int(np.searchsorted(ratios, far_target, side="right")) - 1


def tar_at_far(scores: ScoreSet, far_target: float) -> RocPoint:
    """
    True accept rate at the smallest threshold whose empirical FAR <= far_target.

    With k the largest count such that k / |impostor| <= far_target, the
    threshold sits just above the (k+1)-th highest impostor score, so at most
    k impostors are accepted. k is found by comparing the exact ratios, not by
    flooring far_target * |impostor| (0.29 * 100 rounds down to 28).
    """
    _require_scores(scores)
    if not 0 < far_target <= 1:
        raise InvalidArgument(f"FAR target must lie in (0, 1], got {far_target}")
    impostor_count = scores.impostor.size
    allowed = allowed_false_accepts(impostor_count, far_target)
    if allowed == 0:
        message = (
            f"FAR target {far_target:g} is below the resolution of {impostor_count} impostor scores"
        )
        logger.warning(message)
        warnings.warn(message, UnreliableFarWarning, stacklevel=2)

    descending = np.sort(scores.impostor)[::-1]
    if allowed >= impostor_count:
        threshold = min(ACCEPT_ALL, float(scores.genuine.min()), float(descending[-1]))
    else:
        threshold = float(np.nextafter(descending[allowed], math.inf))

    tar = np.count_nonzero(scores.genuine >= threshold) / scores.genuine.size
    far = np.count_nonzero(scores.impostor >= threshold) / impostor_count
    return RocPoint(threshold=threshold, tar=float(tar), far=float(far))


def roc_points(scores: ScoreSet) -> List[RocPoint]:
    """Empirical ROC at every distinct score used as a threshold, in ascending threshold order."""
    _require_scores(scores)
    genuine = np.sort(scores.genuine)
    impostor = np.sort(scores.impostor)
    thresholds = np.unique(np.concatenate([genuine, impostor, [REJECT_ALL]]))
    tar = (genuine.size - np.searchsorted(genuine, thresholds, side="left")) / genuine.size
    far = (impostor.size - np.searchsorted(impostor, thresholds, side="left")) / impostor.size
    return [RocPoint(float(t), float(a), float(f)) for t, a, f in zip(thresholds, tar, far)]


def rank1_identification(
    probe_embeddings: np.ndarray,
    probe_labels: Sequence[int],
    gallery_embeddings: np.ndarray,
    gallery_labels: Sequence[int],
) -> float:
    """
    Fraction of probes whose most similar gallery entry has their label (ties: lowest gallery index).

    Raises:
        EmptyGallery: no gallery entries
        InsufficientSamples: no probes
    """
    gallery_labels = np.asarray(gallery_labels)
    probe_labels = np.asarray(probe_labels)
    gallery = np.asarray(gallery_embeddings, dtype=np.float64)
    if gallery.ndim != 2 or gallery.shape[0] == 0:
        raise EmptyGallery("Rank-1 identification needs a non-empty gallery")
    probes = as_mat(probe_embeddings, "probe_embeddings", cols=gallery.shape[1])
    if probes.shape[0] == 0:
        raise InsufficientSamples("Rank-1 identification needs at least one probe")
    probe_units, _ = normalize_rows(probes)
    gallery_units, _ = normalize_rows(as_mat(gallery, "gallery_embeddings"))
    nearest = np.argmax(probe_units @ gallery_units.T, axis=1)
    return float(np.mean(gallery_labels[nearest] == probe_labels))


def center_vs_sample_distributions(
    embeddings: np.ndarray, labels: Sequence[int], centers: Optional[CenterBank] = None
) -> CenterDistributions:
    """
    Cosines of all same-class sample pairs and of each sample to its class center.

    When no bank is given the center of a class is the normalized mean of its
    normalized samples; classes whose mean vanishes are reported in
    degenerate_classes and left out of both lists.
    """
    embeddings = as_mat(embeddings, "embeddings")
    labels = np.asarray(labels, dtype=np.int64)
    units, _ = normalize_rows(embeddings)
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < 2):
        raise InsufficientSamples(
            "Every class needs at least 2 samples",
            {"classes": classes[counts < 2][:10].tolist()},
        )

    sample_sample, sample_center, degenerate = [], [], []
    for label in classes:
        members = units[labels == label]
        if centers is not None:
            center = centers.row(int(label))
        else:
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm <= EPS_NORM:
                logger.warning(f"Class {label} has no defined center (samples cancel); excluded")
                degenerate.append(int(label))
                continue
            center = mean / norm
        first, second = np.triu_indices(members.shape[0], k=1)
        sample_sample.append(np.sum(members[first] * members[second], axis=1))
        sample_center.append(members @ center)

    def flat(parts) -> np.ndarray:
        return np.clip(np.concatenate(parts), -1.0, 1.0) if parts else np.zeros(0)

    return CenterDistributions(flat(sample_sample), flat(sample_center), degenerate)


def metric_summary(scores: ScoreSet, far_targets: Sequence[float]) -> Dict[str, object]:
    """Verification accuracy and TAR at each FAR target, as a flat dict for reports."""
    accuracy, threshold = verification_accuracy(scores)
    summary: Dict[str, object] = {
        "verification_accuracy": accuracy,
        "best_threshold": threshold,
        "genuine_pairs": int(scores.genuine.size),
        "impostor_pairs": int(scores.impostor.size),
    }
    for far_target in far_targets:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnreliableFarWarning)
            point = tar_at_far(scores, far_target)
        summary[f"tar@far={far_target:g}"] = point.tar
    return summary

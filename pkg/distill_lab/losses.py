"""
Margin-penalty softmax losses and the adaptive class-center machinery.

All losses return a LossOutput holding the batch-mean value and its exact
gradient with respect to the *unnormalized* feature rows. Normalization of
features and centers happens inside the losses; centers never receive a
gradient unless the caller asks for one explicitly
(aml_loss_trainable_centers, used when a classifier is being trained).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from distill_lab.errors import (
    DimensionMismatch,
    InsufficientSamples,
    InvalidArgument,
    InvalidSpec,
    LabelOutOfRange,
    NonFinite,
    ZeroNorm,
)
from distill_lab.numkit import EPS_NORM, as_mat, clip01, cosine, l2_normalize, normalize_rows

logger = logging.getLogger(__name__)

# Row norms of a CenterBank must stay within this distance of 1
UNIT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class MarginConfig:
    """
    Margin-penalty parameters: angular margin m1 (radians), cosine margin m2, scale s.

    With guarded set, targets whose angle exceeds pi - m1 fall back to
    cos(theta) - m1 * sin(pi - m1), which keeps the target logit monotone in
    theta. Unguarded, cos(theta + m1) turns back upward past pi - m1.
    """

    m1: float = 0.5
    m2: float = 0.0
    s: float = 64.0
    guarded: bool = False

    def __post_init__(self):
        for name in ("m1", "m2", "s"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidSpec(f"Margin parameter {name} must be finite")
        if self.m1 < 0 or self.m2 < 0:
            raise InvalidSpec(f"Margins must be non-negative (m1={self.m1}, m2={self.m2})")
        if self.s <= 0:
            raise InvalidSpec(f"Scale must be positive, got {self.s}")
        if not isinstance(self.guarded, bool):
            raise InvalidSpec(f"guarded must be a boolean, got {self.guarded!r}")

    @classmethod
    def arcface(cls, m1: float = 0.5, s: float = 64.0, guarded: bool = False) -> "MarginConfig":
        return cls(m1=m1, m2=0.0, s=s, guarded=guarded)

    @classmethod
    def cosface(cls, m2: float = 0.35, s: float = 64.0, guarded: bool = False) -> "MarginConfig":
        return cls(m1=0.0, m2=m2, s=s, guarded=guarded)

    @property
    def mode(self) -> str:
        """'arc', 'cos', 'plain' (no margin) or 'combined' (both margins set)."""
        if self.m1 > 0 and self.m2 == 0:
            return "arc"
        if self.m1 == 0 and self.m2 > 0:
            return "cos"
        if self.m1 == 0 and self.m2 == 0:
            return "plain"
        return "combined"

    @property
    def margin_value(self) -> float:
        return self.m2 if self.mode == "cos" else self.m1


@dataclass(frozen=True)
class CombinedLossConfig:
    """Weights of the task loss (lambda_) and the distillation loss (beta); they need not sum to one."""

    lambda_: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lambda_) and math.isfinite(self.beta)):
            raise InvalidSpec("Loss weights must be finite")
        if self.lambda_ < 0 or self.beta < 0:
            raise InvalidSpec(f"Loss weights must be non-negative (lambda={self.lambda_}, beta={self.beta})")


class AlphaMode(str, Enum):
    """PLAIN uses the clipped student/teacher cosine; HARD_WEIGHTED also weights by center/teacher cosine."""

    PLAIN = "plain"
    HARD_WEIGHTED = "hard_weighted"


@dataclass
class LossOutput:
    value: float
    grad_features: np.ndarray
    per_sample_logits: Optional[np.ndarray] = None


class CenterBank:
    """
    Class-center matrix (one unit row per class) with an iteration counter.

    Rows are kept unit-norm by every public operation. The bank is
    single-writer: adadistill_step works on a copy and hands back a new bank.
    """

    def __init__(self, centers: np.ndarray, k: int = 0):
        centers = as_mat(centers, "centers")
        norms = np.linalg.norm(centers, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
            raise InvalidSpec("Center rows must be unit-norm; use CenterBank.from_matrix to normalize")
        if k < 0:
            raise InvalidSpec(f"Iteration counter must be non-negative, got {k}")
        self.centers = centers
        self.k = int(k)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, k: int = 0) -> "CenterBank":
        """Build a bank from arbitrary non-zero rows (e.g. a trained classifier)."""
        unit, _ = normalize_rows(as_mat(matrix, "centers"))
        return cls(unit, k)

    @property
    def class_count(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def copy(self) -> "CenterBank":
        bank = CenterBank.__new__(CenterBank)
        bank.centers = self.centers.copy()
        bank.k = self.k
        return bank

    def row(self, label: int) -> np.ndarray:
        _check_label(label, self.class_count)
        return self.centers[label].copy()

    def __repr__(self) -> str:
        return f"CenterBank(classes={self.class_count}, dim={self.dim}, k={self.k})"


class AdaDistillResult(NamedTuple):
    loss: LossOutput
    bank: CenterBank
    alphas: List[float]
    # labels whose center update cancelled to zero and was skipped, in sample order
    skipped: List[int]


def _check_label(label: int, class_count: int) -> int:
    if not 0 <= int(label) < class_count:
        raise LabelOutOfRange(f"Label {label} outside [0, {class_count})", {"label": int(label)})
    return int(label)


def _check_labels(labels: Sequence[int], class_count: int, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DimensionMismatch(f"Got {labels.shape[0]} labels for {n} feature rows")
    bad = np.flatnonzero((labels < 0) | (labels >= class_count))
    if bad.size:
        raise LabelOutOfRange(
            f"{bad.size} label(s) outside [0, {class_count})",
            {"rows": bad[:10].tolist()},
        )
    return labels


def _through_normalization(units: np.ndarray, norms: np.ndarray, grad_units: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. x/||x|| back to x, row-wise."""
    radial = np.sum(units * grad_units, axis=1, keepdims=True)
    return (grad_units - units * radial) / norms[:, None]


def _margin_softmax(cos: np.ndarray, labels: np.ndarray, cfg: MarginConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-sample margin softmax cross-entropy over cosine logits.

    Returns:
        tuple: (per-sample losses, d loss_i / d cos_ij, scaled logits)
    """
    rows = np.arange(cos.shape[0])
    target_cos = cos[rows, labels]

    # cos(theta + m1) via the angle-sum identity; sin(theta) clamped at 0
    sin_theta = np.sqrt(np.clip(1.0 - target_cos * target_cos, 0.0, None))
    cos_m1, sin_m1 = math.cos(cfg.m1), math.sin(cfg.m1)
    target_logit = target_cos * cos_m1 - sin_theta * sin_m1 - cfg.m2
    if cfg.guarded:
        fallback = target_cos <= math.cos(math.pi - cfg.m1)
        fallback_logit = target_cos - math.sin(math.pi - cfg.m1) * cfg.m1 - cfg.m2
        target_logit = np.where(fallback, fallback_logit, target_logit)
    else:
        fallback = np.zeros_like(target_cos, dtype=bool)

    logits = cfg.s * cos
    logits[rows, labels] = cfg.s * target_logit

    # log-sum-exp with max subtraction; s=64 overflows exp() otherwise
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    sum_exp = exp.sum(axis=1)
    losses = shift[:, 0] + np.log(sum_exp) - logits[rows, labels]

    dlogits = exp / sum_exp[:, None]
    dlogits[rows, labels] -= 1.0

    # d cos(theta + m1) / d cos(theta); the kink at sin(theta) == 0 takes the zero subgradient
    has_angle = sin_theta > EPS_NORM
    safe_sin = np.where(has_angle, sin_theta, 1.0)
    ratio = np.where(has_angle, target_cos / safe_sin, 0.0)
    dtarget = np.where(fallback, 1.0, cos_m1 + sin_m1 * ratio)

    dcos = cfg.s * dlogits
    dcos[rows, labels] *= dtarget
    return losses, dcos, logits


def _aml(features, labels, centers, cfg: MarginConfig):
    features = as_mat(features, "features")
    centers = as_mat(centers, "centers", cols=features.shape[1])
    labels = _check_labels(labels, centers.shape[0], features.shape[0])

    units, norms = normalize_rows(features)
    center_units, center_norms = normalize_rows(centers)
    cos = np.clip(units @ center_units.T, -1.0, 1.0)

    losses, dcos, logits = _margin_softmax(cos, labels, cfg)
    value = float(losses.mean())
    if not math.isfinite(value):
        raise NonFinite("Margin softmax loss is not finite")

    dcos /= features.shape[0]
    grad_features = _through_normalization(units, norms, dcos @ center_units)
    return LossOutput(value, grad_features, logits), dcos, units, center_units, center_norms


def aml_loss(features: np.ndarray, labels: Sequence[int], centers: np.ndarray, cfg: MarginConfig) -> LossOutput:
    """
    Margin-penalty softmax loss (ArcFace when m1 > 0, CosFace when m2 > 0).

    Args:
        features: N x d raw feature rows (normalized internally)
        labels: N class indices in [0, c)
        centers: c x d class centers, one row per class
        cfg: Margin parameters

    Returns:
        LossOutput: mean loss, gradient w.r.t. the raw features, scaled logits
    """
    return _aml(features, labels, centers, cfg)[0]


def aml_loss_trainable_centers(
    features: np.ndarray, labels: Sequence[int], weights: np.ndarray, cfg: MarginConfig
) -> Tuple[LossOutput, np.ndarray]:
    """
    Same loss as aml_loss, also returning the gradient w.r.t. the raw classifier weights.

    Used when the classifier rows are trained alongside the network (teacher
    training and the student's own classifier).
    """
    output, dcos, units, center_units, center_norms = _aml(features, labels, weights, cfg)
    grad_weights = _through_normalization(center_units, center_norms, dcos.T @ units)
    return output, grad_weights


def amldistill_loss(
    student_features: np.ndarray, labels: Sequence[int], teacher_centers: np.ndarray, cfg: MarginConfig
) -> LossOutput:
    """Margin softmax of student features against frozen teacher centers; only the features get a gradient."""
    return aml_loss(student_features, labels, teacher_centers, cfg)


def mse_kd_loss(student_features: np.ndarray, teacher_features: np.ndarray) -> LossOutput:
    """Mean over the batch of squared Euclidean distances between student and teacher features."""
    student = as_mat(student_features, "student_features")
    teacher = as_mat(teacher_features, "teacher_features")
    if student.shape != teacher.shape:
        raise DimensionMismatch(f"Student features {student.shape} vs teacher features {teacher.shape}")
    n = student.shape[0]
    diff = student - teacher
    return LossOutput(float(np.sum(diff * diff) / n), (2.0 / n) * diff)


def combined_loss(main: LossOutput, kd: LossOutput, cfg: CombinedLossConfig) -> LossOutput:
    """lambda * main + beta * kd, for both the value and the feature gradient."""
    if main.grad_features.shape != kd.grad_features.shape:
        raise DimensionMismatch(
            f"Gradient shapes differ: {main.grad_features.shape} vs {kd.grad_features.shape}"
        )
    value = cfg.lambda_ * main.value + cfg.beta * kd.value
    grad = cfg.lambda_ * main.grad_features + cfg.beta * kd.grad_features
    logits = kd.per_sample_logits if cfg.beta > 0 else main.per_sample_logits
    return LossOutput(float(value), grad, logits)


def compute_alpha(student_feature: np.ndarray, teacher_feature: np.ndarray) -> float:
    """EMA momentum from student capability: the student/teacher cosine clipped to [0, 1]."""
    return clip01(cosine(student_feature, teacher_feature))


def compute_alpha_prime(student_feature: np.ndarray, teacher_feature: np.ndarray, prev_center: np.ndarray) -> float:
    """Momentum additionally weighted by how close the teacher feature is to its current class center."""
    return clip01(cosine(student_feature, teacher_feature) * cosine(prev_center, teacher_feature))


def _blend_row(centers: np.ndarray, label: int, teacher_unit: np.ndarray, alpha: float) -> None:
    # alpha == 1 is the fixed point: the row is left bit-for-bit untouched
    if alpha == 1.0:
        return
    centers[label] = l2_normalize(alpha * centers[label] + (1.0 - alpha) * teacher_unit)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise NonFinite(f"alpha must be finite, got {alpha}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def update_center(bank: CenterBank, label: int, teacher_feature: np.ndarray, alpha: float) -> CenterBank:
    """
    One EMA step on a class center, followed by re-normalization.

    row <- normalize(alpha * row + (1 - alpha) * normalize(teacher_feature)).
    Returns a new bank; the input bank is not modified and k is not advanced.

    Raises:
        ZeroNorm: when the blend cancels exactly; callers skip the update
    """
    label = _check_label(label, bank.class_count)
    alpha = _check_alpha(alpha)
    teacher_feature = np.asarray(teacher_feature, dtype=np.float64)
    if teacher_feature.shape != (bank.dim,):
        raise DimensionMismatch(f"Teacher feature shape {teacher_feature.shape} vs center dim {bank.dim}")
    updated = bank.copy()
    _blend_row(updated.centers, label, l2_normalize(teacher_feature), alpha)
    return updated


def adadistill_step(
    student_features: np.ndarray,
    teacher_features: np.ndarray,
    labels: Sequence[int],
    bank: CenterBank,
    cfg: MarginConfig,
    mode: AlphaMode = AlphaMode.HARD_WEIGHTED,
) -> AdaDistillResult:
    """
    Refine the class centers from one batch, then score the student against them.

    Samples are processed in ascending index order; each sample's momentum
    (and, for HARD_WEIGHTED, its center weighting) sees the center left by
    the previous sample. The loss is evaluated after all updates and the
    bank counter advances by one per batch.

    Args:
        student_features: N x d student features (receive the gradient)
        teacher_features: N x d teacher features (constants)
        labels: N class indices
        bank: Current centers; left unmodified
        cfg: Margin parameters
        mode: Momentum variant

    Returns:
        AdaDistillResult: (loss, updated bank, per-sample momentum values, labels of skipped updates)
    """
    student = as_mat(student_features, "student_features")
    teacher = as_mat(teacher_features, "teacher_features")
    if student.shape != teacher.shape:
        raise DimensionMismatch(f"Student features {student.shape} vs teacher features {teacher.shape}")
    if teacher.shape[1] != bank.dim:
        raise DimensionMismatch(f"Feature dim {teacher.shape[1]} vs center dim {bank.dim}")
    labels = _check_labels(labels, bank.class_count, student.shape[0])
    mode = AlphaMode(mode)

    updated = bank.copy()
    alphas: List[float] = []
    skipped: List[int] = []
    for i in range(student.shape[0]):
        label = int(labels[i])
        if mode is AlphaMode.PLAIN:
            alpha = compute_alpha(student[i], teacher[i])
        else:
            alpha = compute_alpha_prime(student[i], teacher[i], updated.centers[label])
        try:
            _blend_row(updated.centers, label, l2_normalize(teacher[i]), alpha)
        except ZeroNorm:
            logger.warning(f"Center update for class {label} cancelled to zero at sample {i}; skipped")
            skipped.append(label)
        alphas.append(alpha)

    updated.k = bank.k + 1
    loss = amldistill_loss(student, labels, updated.centers, cfg)
    return AdaDistillResult(loss, updated, alphas, skipped)


def init_centers_from_features(features: np.ndarray, labels: Sequence[int], class_count: int) -> CenterBank:
    """
    Warm-up center initialization: per-class mean of normalized teacher features.

    Raises:
        InsufficientSamples: when a class has no samples
        ZeroNorm: when a class mean vanishes
    """
    features = as_mat(features, "features")
    labels = _check_labels(labels, class_count, features.shape[0])
    units, _ = normalize_rows(features)
    counts = np.bincount(labels, minlength=class_count)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise InsufficientSamples(
            f"{missing.size} class(es) have no samples for center warm-up",
            {"classes": missing[:10].tolist()},
        )
    sums = np.zeros((class_count, features.shape[1]))
    np.add.at(sums, labels, units)
    return CenterBank.from_matrix(sums / counts[:, None])

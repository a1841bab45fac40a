"""
Teacher training, student distillation and evaluation of a single run.

Every random stream is derived from (run seed, stream id), so a (config,
seed) pair fixes every logged number on a given build.
"""

import logging
import math
import time
from collections import Counter
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from distill_lab.data import Dataset, PairList, generate_dataset, generate_pairs, make_batches
from distill_lab.errors import ConfigError, DimensionMismatch, DivergedRun, NonFinite, ZeroNorm
from distill_lab.evaluation import (
    allowed_false_accepts,
    center_vs_sample_distributions,
    metric_summary,
    rank1_identification,
    score_pairs,
)
from distill_lab.harness.config import ExperimentConfig
from distill_lab.harness.runlog import RunLog
from distill_lab.losses import (
    CenterBank,
    LossOutput,
    adadistill_step,
    aml_loss_trainable_centers,
    amldistill_loss,
    combined_loss,
    init_centers_from_features,
    mse_kd_loss,
)
from distill_lab.models import MlpNetwork, backward, embed, forward, init_network
from distill_lab.numkit import derive_seed, make_rng, normalize_rows
from distill_lab.optim import SgdState, lr_at, sgd_step

logger = logging.getLogger(__name__)

# Stream ids for derive_seed
TEACHER_STREAM = 1
STUDENT_STREAM = 2
BATCH_STREAM = 3
CLASSIFIER_STREAM = 4


class TeacherResult(NamedTuple):
    network: MlpNetwork
    centers: CenterBank
    log: RunLog


class StudentResult(NamedTuple):
    network: MlpNetwork
    log: RunLog


def prepare_data(cfg: ExperimentConfig, dataset: Optional[Dataset] = None) -> Tuple[Dataset, PairList]:
    """
    The dataset and the holdout evaluation pairs shared by every run of a config.

    A previously generated dataset may be passed in; it must have been built
    from the config's dataset spec.
    """
    if dataset is None:
        dataset = generate_dataset(cfg.dataset)
    elif dataset.spec != cfg.dataset:
        raise ConfigError(f"Saved dataset was generated from {dataset.spec}, config expects {cfg.dataset}")
    ev = cfg.evaluation
    pairs = generate_pairs(dataset, ev.n_genuine, ev.n_impostor, ev.pair_seed)
    return dataset, pairs


def _iterate_batches(dataset: Dataset, batch_size: int, seed: int, total: int) -> Iterator[Tuple[int, np.ndarray]]:
    iteration = 0
    epoch = 0
    while iteration < total:
        for batch in make_batches(dataset, batch_size, derive_seed(seed, BATCH_STREAM, epoch)):
            if iteration >= total:
                return
            yield iteration, batch
            iteration += 1
        epoch += 1


def _init_classifier(class_count: int, dim: int, seed: int) -> np.ndarray:
    unit, _ = normalize_rows(make_rng(seed).standard_normal((class_count, dim)))
    return unit


def _diverged(stage: str, iteration: int, error: Exception) -> DivergedRun:
    return DivergedRun(
        f"{stage} training diverged at iteration {iteration}: {error}",
        {"stage": stage, "iteration": iteration},
    )


def evaluate_network(
    net: MlpNetwork,
    dataset: Dataset,
    pairs: PairList,
    far_targets=(1e-2, 1e-3),
    log: Optional[RunLog] = None,
) -> Dict[str, object]:
    """
    Holdout metrics of an embedding network.

    The "warnings" list holds unreliable FAR targets followed by the
    warnings the training run recorded in log, if one is given.

    Rank-1 uses the first holdout sample of every class as the gallery and
    the remaining holdout samples as probes.
    """
    embeddings = embed(net, dataset.inputs)
    summary = metric_summary(score_pairs(embeddings, pairs), far_targets)

    holdout = dataset.holdout_indices
    labels = dataset.labels[holdout]
    _, first = np.unique(labels, return_index=True)
    is_gallery = np.zeros(holdout.size, dtype=bool)
    is_gallery[first] = True
    summary["rank1"] = rank1_identification(
        embeddings[holdout[~is_gallery]], labels[~is_gallery],
        embeddings[holdout[is_gallery]], labels[is_gallery],
    )

    warnings = []
    impostors = int(summary["impostor_pairs"])
    for far in far_targets:
        if allowed_false_accepts(impostors, far) == 0:
            warnings.append(f"tar@far={far:g} unreliable: only {impostors} impostor pairs")
    if log is not None:
        warnings.extend(w for w in log.warnings if w not in warnings)
    summary["warnings"] = warnings
    return summary


def _checkpoint(cfg: ExperimentConfig, log: RunLog, iteration: int, total: int, net, dataset, pairs) -> None:
    every = max(1, total // cfg.checkpoint_count)
    if (iteration + 1) % every != 0 and iteration + 1 != total:
        return
    metrics = evaluate_network(net, dataset, pairs, cfg.evaluation.far_targets)
    log.add_checkpoint(iteration + 1, {"verification_accuracy": metrics["verification_accuracy"]})
    logger.info(f"[{log.name}] checkpoint {iteration + 1}: accuracy {metrics['verification_accuracy']:.4f}")


def train_teacher(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    dataset: Optional[Dataset] = None,
    pairs: Optional[PairList] = None,
) -> TeacherResult:
    """
    Train the teacher with the margin softmax loss and a trainable classifier.

    The classifier rows are updated by gradient together with the network;
    the returned CenterBank holds their normalized final values, frozen.

    Raises:
        DivergedRun: loss or features became non-finite
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    if dataset is None or pairs is None:
        dataset, pairs = prepare_data(cfg)
    total = cfg.teacher_iterations
    schedule = cfg.teacher_lr_schedule
    opt = cfg.optimizer

    net = init_network(cfg.teacher_spec, derive_seed(seed, TEACHER_STREAM))
    classifier = _init_classifier(cfg.dataset.class_count, cfg.teacher_spec.embedding_dim,
                                  derive_seed(seed, TEACHER_STREAM, CLASSIFIER_STREAM))
    params = net.parameters() + [classifier]
    state = SgdState.zeros_like(params)
    log = RunLog(f"teacher/seed{seed}")

    for iteration, batch in _iterate_batches(dataset, cfg.batch_size, derive_seed(seed, TEACHER_STREAM), total):
        started = time.perf_counter()
        inputs, labels = dataset.subset(batch)
        try:
            embeddings, cache = forward(net, inputs)
            output, grad_classifier = aml_loss_trainable_centers(embeddings, labels, classifier, cfg.teacher_margin)
        except (NonFinite, ZeroNorm) as e:
            raise _diverged("teacher", iteration, e)

        grads = backward(net, cache, output.grad_features).as_list() + [grad_classifier]
        lr = lr_at(schedule, iteration)
        params, state = sgd_step(params, grads, state, lr, opt.momentum, opt.weight_decay)
        net = net.with_parameters(params[:-1])
        classifier = params[-1]

        log.record(iteration, output.value, lr, seconds=time.perf_counter() - started)
        if (iteration + 1) % cfg.log_every == 0:
            logger.info(f"[{log.name}] iteration {iteration + 1}/{total} loss {output.value:.4f} lr {lr:g}")
        _checkpoint(cfg, log, iteration, total, net, dataset, pairs)

    try:
        centers = CenterBank.from_matrix(classifier)
    except ZeroNorm as e:
        raise _diverged("teacher", total, e)
    logger.info(f"[{log.name}] finished {total} iterations in {log.total_seconds():.1f}s")
    return TeacherResult(net, centers, log)


def initial_bank(cfg: ExperimentConfig, teacher: MlpNetwork, teacher_centers: Optional[CenterBank], dataset: Dataset) -> CenterBank:
    """Starting centers for center refinement: the teacher classifier, or a warm-up pass over teacher features."""
    if cfg.center_init == "classifier" and teacher_centers is not None:
        return teacher_centers.copy()
    if cfg.center_init == "classifier":
        logger.warning("No teacher classifier available; falling back to warm-up center initialization")
    inputs, labels = dataset.subset(dataset.train_indices)
    return init_centers_from_features(embed(teacher, inputs), labels, cfg.dataset.class_count)


class _StudentObjective:
    """Dispatches one batch to the loss path of the configured method."""

    def __init__(self, cfg: ExperimentConfig, teacher: Optional[MlpNetwork], teacher_centers: Optional[CenterBank], bank: Optional[CenterBank]):
        self.cfg = cfg
        self.weights = cfg.weights
        self.teacher = teacher
        self.teacher_centers = teacher_centers
        self.bank = bank
        self.skipped_updates: Counter = Counter()
        self.uses_classifier = cfg.method == "standalone" or self.weights.lambda_ > 0

    def __call__(self, embeddings: np.ndarray, inputs: np.ndarray, labels: np.ndarray, classifier: Optional[np.ndarray]):
        method = self.cfg.method
        zero = LossOutput(0.0, np.zeros_like(embeddings))
        alphas: List[float] = []

        main, grad_classifier = zero, None
        if self.uses_classifier:
            main, grad_classifier = aml_loss_trainable_centers(embeddings, labels, classifier, self.cfg.margin)
            grad_classifier = self.weights.lambda_ * grad_classifier

        if method == "standalone":
            kd = zero
        else:
            teacher_features = embed(self.teacher, inputs)
            if method == "mse_kd":
                kd = mse_kd_loss(embeddings, teacher_features)
            elif method == "amldistill":
                kd = amldistill_loss(embeddings, labels, self.teacher_centers.centers, self.cfg.margin)
            else:
                kd, self.bank, alphas, skipped = adadistill_step(
                    embeddings, teacher_features, labels, self.bank, self.cfg.margin, self.cfg.alpha_mode
                )
                self.skipped_updates.update(skipped)
        return combined_loss(main, kd, self.weights), grad_classifier, alphas


def distill_student(
    cfg: ExperimentConfig,
    teacher: Optional[MlpNetwork],
    teacher_centers: Optional[CenterBank],
    seed: Optional[int] = None,
    dataset: Optional[Dataset] = None,
    pairs: Optional[PairList] = None,
    initial_student: Optional[MlpNetwork] = None,
) -> StudentResult:
    """
    Train a student with the configured method; the teacher stays frozen.

    Per batch: forward through the student (and the teacher when the method
    needs it), evaluate the method's loss, back-propagate through the
    student only and take an SGD step at lr_at(schedule, iteration).

    Raises:
        DivergedRun: loss or features became non-finite
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    if dataset is None or pairs is None:
        dataset, pairs = prepare_data(cfg)
    if cfg.method != "standalone" and teacher is None:
        raise ConfigError(f"Method '{cfg.method}' needs a trained teacher", {"method": cfg.method})
    if cfg.method == "standalone":
        teacher, teacher_centers = None, None
    elif cfg.method != "mse_kd":
        # fixed centers for amldistill, starting centers for center refinement
        teacher_centers = initial_bank(cfg, teacher, teacher_centers, dataset)

    student = initial_student.copy() if initial_student is not None else init_network(
        cfg.student_spec, derive_seed(seed, STUDENT_STREAM))
    if student.spec.input_dim != cfg.dataset.input_dim:
        raise DimensionMismatch(f"Student input width {student.spec.input_dim} vs dataset {cfg.dataset.input_dim}")

    bank = teacher_centers.copy() if cfg.alpha_mode is not None else None
    objective = _StudentObjective(cfg, teacher, teacher_centers, bank)
    classifier = None
    params = student.parameters()
    if objective.uses_classifier:
        classifier = _init_classifier(cfg.dataset.class_count, student.spec.embedding_dim,
                                      derive_seed(seed, STUDENT_STREAM, CLASSIFIER_STREAM))
        params = params + [classifier]
    state = SgdState.zeros_like(params)
    schedule = cfg.lr_schedule
    opt = cfg.optimizer
    total = cfg.total_iterations
    log = RunLog(f"{cfg.label}/seed{seed}")

    for iteration, batch in _iterate_batches(dataset, cfg.batch_size, derive_seed(seed, STUDENT_STREAM), total):
        started = time.perf_counter()
        inputs, labels = dataset.subset(batch)
        try:
            embeddings, cache = forward(student, inputs)
            output, grad_classifier, alphas = objective(embeddings, inputs, labels, classifier)
        except (NonFinite, ZeroNorm) as e:
            raise _diverged(cfg.method, iteration, e)
        if not math.isfinite(output.value):
            raise _diverged(cfg.method, iteration, NonFinite("loss is not finite"))

        grads = backward(student, cache, output.grad_features).as_list()
        if classifier is not None:
            grads.append(grad_classifier)
        lr = lr_at(schedule, iteration)
        params, state = sgd_step(params, grads, state, lr, opt.momentum, opt.weight_decay)
        if classifier is not None:
            student = student.with_parameters(params[:-1])
            classifier = params[-1]
        else:
            student = student.with_parameters(params)

        row = log.record(iteration, output.value, lr, alphas, seconds=time.perf_counter() - started)
        if (iteration + 1) % cfg.log_every == 0:
            alpha_text = "" if row.mean_alpha is None else f" mean alpha {row.mean_alpha:.4f}"
            logger.info(f"[{log.name}] iteration {iteration + 1}/{total} loss {output.value:.4f} lr {lr:g}{alpha_text}")
        _checkpoint(cfg, log, iteration, total, student, dataset, pairs)

    for label, count in sorted(objective.skipped_updates.items()):
        log.warn(f"{count} center update(s) of class {label} cancelled to zero and were skipped")
    logger.info(f"[{log.name}] finished {total} iterations in {log.total_seconds():.1f}s")
    return StudentResult(student, log)


def analyze_centers(teacher: TeacherResult, dataset: Dataset) -> Dict[str, object]:
    """
    Sample-sample vs sample-center cosine distributions of the teacher on the training identities.

    Returns:
        dict: both score lists, their means and any degenerate classes
    """
    inputs, labels = dataset.subset(dataset.train_indices)
    distributions = center_vs_sample_distributions(embed(teacher.network, inputs), labels, teacher.centers)
    return {
        "sample_sample": distributions.sample_sample,
        "sample_center": distributions.sample_center,
        "mean_sample_sample": distributions.mean_sample_sample,
        "mean_sample_center": distributions.mean_sample_center,
        "degenerate_classes": distributions.degenerate_classes,
    }

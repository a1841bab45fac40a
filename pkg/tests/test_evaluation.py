import warnings

import numpy as np
import pytest

from distill_lab.data import PairList
from distill_lab.errors import EmptyGallery, EmptyScores, IndexOutOfRange, InsufficientSamples, UnreliableFarWarning
from distill_lab.evaluation import (
    REJECT_ALL,
    ScoreSet,
    allowed_false_accepts,
    center_vs_sample_distributions,
    metric_summary,
    rank1_identification,
    roc_points,
    score_pairs,
    tar_at_far,
    verification_accuracy,
)
from distill_lab.losses import CenterBank


def random_scores(rng, max_size=1000):
    n_genuine = int(rng.integers(1, max_size // 2))
    n_impostor = int(rng.integers(1, max_size // 2))
    # two decimals produce plenty of ties
    genuine = np.round(np.clip(rng.normal(0.5, 0.25, n_genuine), -1, 1), 2)
    impostor = np.round(np.clip(rng.normal(0.1, 0.25, n_impostor), -1, 1), 2)
    return ScoreSet(genuine, impostor)


def brute_force_accuracy(scores):
    thresholds = sorted(set(scores.genuine.tolist()) | set(scores.impostor.tolist()) | {REJECT_ALL})
    best = 0
    for t in thresholds:
        correct = sum(1 for g in scores.genuine if g >= t) + sum(1 for i in scores.impostor if i < t)
        best = max(best, correct)
    return best / scores.total


def brute_force_tar(scores, far_target):
    impostors = sorted(scores.impostor.tolist())
    thresholds = set(scores.genuine.tolist()) | set(impostors) | {REJECT_ALL}
    thresholds |= {float(np.nextafter(i, np.inf)) for i in impostors}
    best = 0.0
    for t in thresholds:
        far = sum(1 for i in impostors if i >= t) / len(impostors)
        if far <= far_target:
            best = max(best, sum(1 for g in scores.genuine if g >= t) / len(scores.genuine))
    return best


def test_score_pairs():
    embeddings = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [-1.0, 0.0]])
    pairs = PairList(genuine=np.array([[0, 1]]), impostor=np.array([[0, 2], [0, 3]]))
    scores = score_pairs(embeddings, pairs)
    np.testing.assert_allclose(scores.genuine, [1.0])
    np.testing.assert_allclose(scores.impostor, [0.0, -1.0], atol=1e-15)
    with pytest.raises(IndexOutOfRange):
        score_pairs(embeddings, PairList(np.array([[0, 4]]), np.array([[0, 1]])))


def test_score_pairs_scale_invariant(rng):
    embeddings = rng.standard_normal((6, 3))
    pairs = PairList(np.array([[0, 1], [2, 3]]), np.array([[4, 5]]))
    a = score_pairs(embeddings, pairs)
    scaled = embeddings * rng.uniform(0.1, 10.0, (6, 1))
    b = score_pairs(scaled, pairs)
    np.testing.assert_allclose(a.genuine, b.genuine, atol=1e-14)


def test_verification_accuracy_simple_cases():
    assert verification_accuracy(ScoreSet([0.9, 0.8], [0.1, 0.2]))[0] == 1.0
    assert verification_accuracy(ScoreSet([0.3, 0.6], [0.3, 0.6]))[0] == 0.5
    with pytest.raises(EmptyScores):
        verification_accuracy(ScoreSet([], [0.1]))


def test_verification_accuracy_prefers_smaller_threshold():
    # thresholds 0.5 and 0.65 both give 3/4; the smaller one wins
    accuracy, threshold = verification_accuracy(ScoreSet([0.6, 0.7], [0.4, 0.6]))
    assert accuracy == 0.75
    assert threshold == pytest.approx(0.5)


def test_verification_accuracy_matches_brute_force(rng):
    for _ in range(200):
        scores = random_scores(rng)
        accuracy, threshold = verification_accuracy(scores)
        assert accuracy == brute_force_accuracy(scores)
        assert accuracy >= max(scores.genuine.size, scores.impostor.size) / scores.total
        correct = np.count_nonzero(scores.genuine >= threshold) + np.count_nonzero(scores.impostor < threshold)
        assert correct / scores.total == accuracy


def test_tar_at_far_matches_brute_force(rng):
    for _ in range(200):
        scores = random_scores(rng)
        far_target = float(rng.choice([0.01, 0.05, 0.1, 0.3]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnreliableFarWarning)
            point = tar_at_far(scores, far_target)
        assert point.far <= far_target
        assert point.tar == brute_force_tar(scores, far_target)


def test_tar_at_far_counts_allowed_impostors_exactly():
    scores = ScoreSet([0.705, 0.715], np.arange(100) / 100)
    point = tar_at_far(scores, 0.29)
    assert point.threshold == np.nextafter(0.70, np.inf)
    assert 0.70 < point.threshold < 0.705
    assert point.tar == 1.0
    assert point.far == 0.29


def test_allowed_false_accepts():
    assert allowed_false_accepts(100, 0.29) == 29
    assert allowed_false_accepts(100, 0.3) == 30
    assert allowed_false_accepts(100, 0.299) == 29
    assert allowed_false_accepts(7600, 1e-3) == 7
    assert allowed_false_accepts(50, 0.01) == 0
    assert allowed_false_accepts(3, 1.0) == 3
    with pytest.raises(EmptyScores):
        allowed_false_accepts(0, 0.1)


def test_tar_at_far_is_monotone(rng):
    scores = random_scores(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnreliableFarWarning)
        tars = [tar_at_far(scores, far).tar for far in (0.001, 0.01, 0.05, 0.1, 0.5, 1.0)]
    assert tars == sorted(tars)
    assert tars[-1] == 1.0


def test_tar_at_far_separable_and_warning():
    scores = ScoreSet([0.9, 0.95, 0.8], np.linspace(-0.5, 0.5, 50))
    with pytest.warns(UnreliableFarWarning):
        point = tar_at_far(scores, 0.01)
    assert point.tar == 1.0
    assert point.far == 0.0
    assert point.threshold > 0.5


def test_metrics_are_permutation_invariant(rng):
    scores = random_scores(rng)
    shuffled = ScoreSet(rng.permutation(scores.genuine), rng.permutation(scores.impostor))
    assert verification_accuracy(scores) == verification_accuracy(shuffled)
    assert tar_at_far(scores, 0.1) == tar_at_far(shuffled, 0.1)


def test_roc_points():
    points = roc_points(ScoreSet([0.8, 0.4], [0.2, 0.6]))
    assert [p.threshold for p in points] == sorted(p.threshold for p in points)
    assert (points[0].tar, points[0].far) == (1.0, 1.0)
    assert (points[-1].tar, points[-1].far) == (0.0, 0.0)


def brute_force_rank1(probes, probe_labels, gallery, gallery_labels):
    p = probes / np.linalg.norm(probes, axis=1, keepdims=True)
    g = gallery / np.linalg.norm(gallery, axis=1, keepdims=True)
    similarity = p @ g.T
    hits = 0
    for i in range(len(probes)):
        best = 0
        for j in range(1, len(gallery)):
            if similarity[i, j] > similarity[i, best]:
                best = j
        hits += gallery_labels[best] == probe_labels[i]
    return hits / len(probes)


def test_rank1_matches_brute_force(rng):
    for _ in range(200):
        gallery = rng.integers(-2, 3, (int(rng.integers(1, 8)), 3)).astype(float)
        gallery[np.all(gallery == 0, axis=1)] = 1.0
        gallery_labels = rng.integers(0, 4, len(gallery))
        probes = rng.standard_normal((int(rng.integers(1, 10)), 3))
        probe_labels = rng.integers(0, 4, len(probes))
        expected = brute_force_rank1(probes, probe_labels, gallery, gallery_labels)
        assert rank1_identification(probes, probe_labels, gallery, gallery_labels) == expected


def test_rank1_trivial_cases(rng):
    gallery = rng.standard_normal((5, 4))
    labels = np.arange(5)
    assert rank1_identification(gallery, labels, gallery, labels) == 1.0
    assert rank1_identification(gallery, labels + 10, gallery, labels) == 0.0
    with pytest.raises(EmptyGallery):
        rank1_identification(gallery, labels, np.zeros((0, 4)), [])
    with pytest.raises(InsufficientSamples):
        rank1_identification(np.zeros((0, 4)), [], gallery, labels)


def test_rank1_ties_go_to_lowest_gallery_index():
    gallery = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert rank1_identification(np.array([[2.0, 0.0]]), [7], gallery, [7, 3]) == 1.0
    assert rank1_identification(np.array([[2.0, 0.0]]), [3], gallery, [7, 3]) == 0.0


def test_center_distributions_identical_samples():
    embeddings = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0], [0.0, 1.0]])
    labels = [0, 0, 1, 1]
    result = center_vs_sample_distributions(embeddings, labels)
    np.testing.assert_allclose(result.sample_sample, 1.0)
    np.testing.assert_allclose(result.sample_center, 1.0)
    bank = CenterBank(np.array([[1.0, 0.0], [0.0, 1.0]]))
    with_bank = center_vs_sample_distributions(embeddings, labels, bank)
    np.testing.assert_allclose(with_bank.sample_center, 1.0)


def test_center_distributions_report_degenerate_classes():
    embeddings = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.1, 1.0]])
    result = center_vs_sample_distributions(embeddings, [0, 0, 1, 1])
    assert result.degenerate_classes == [0]
    assert result.sample_sample.size == 1
    assert result.sample_center.size == 2


def test_center_distributions_need_two_samples():
    with pytest.raises(InsufficientSamples):
        center_vs_sample_distributions(np.eye(3), [0, 1, 1])


def test_metric_summary_keys(rng):
    summary = metric_summary(random_scores(rng), (0.01, 0.001))
    assert {"verification_accuracy", "best_threshold", "genuine_pairs", "impostor_pairs",
            "tar@far=0.01", "tar@far=0.001"} <= set(summary)

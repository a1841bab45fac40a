import numpy as np
import pytest

from distill_lab.data import SyntheticDatasetSpec, generate_dataset, generate_pairs, make_batches
from distill_lab.errors import InsufficientSamples, InvalidBatchSize, InvalidSpec


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(SyntheticDatasetSpec())


def test_default_dataset_layout(dataset):
    assert dataset.inputs.shape == (1000, 16)
    assert dataset.latent_directions.shape == (20, 16)
    np.testing.assert_allclose(np.linalg.norm(dataset.inputs, axis=1), 1.0)
    np.testing.assert_allclose(np.linalg.norm(dataset.latent_directions, axis=1), 1.0)
    assert np.array_equal(np.bincount(dataset.labels), np.full(20, 50))


def test_holdout_split(dataset):
    assert dataset.train_indices.size == 800
    assert dataset.holdout_indices.size == 200
    assert not set(dataset.train_indices) & set(dataset.holdout_indices)
    # the last 10 samples of every class are held out
    positions = dataset.holdout_indices % 50
    assert positions.min() == 40
    assert np.array_equal(np.bincount(dataset.labels[dataset.holdout_indices]), np.full(20, 10))


def test_generation_is_deterministic(dataset):
    again = generate_dataset(SyntheticDatasetSpec())
    assert again.inputs.tobytes() == dataset.inputs.tobytes()
    other = generate_dataset(SyntheticDatasetSpec(seed=1))
    assert not np.array_equal(other.inputs, dataset.inputs)


def test_samples_cluster_around_their_direction(dataset):
    cos = dataset.inputs @ dataset.latent_directions.T
    own = cos[np.arange(dataset.size), dataset.labels]
    assert own.mean() > 0.5
    assert own.mean() > np.abs(cos).mean() + 0.3


def test_noiseless_samples_are_their_direction():
    clean = generate_dataset(SyntheticDatasetSpec(class_count=5, samples_per_class=4, input_dim=6, intra_class_noise=0.0))
    np.testing.assert_allclose(clean.inputs, clean.latent_directions[clean.labels], rtol=0, atol=1e-15)


def test_same_class_samples_agree_more_than_different_classes(dataset):
    assert dataset.spec.intra_class_noise == 0.3
    cos = dataset.inputs @ dataset.inputs.T
    same = dataset.labels[:, None] == dataset.labels[None, :]
    off_diagonal = ~np.eye(dataset.size, dtype=bool)
    intra = cos[same & off_diagonal].mean()
    inter = cos[~same].mean()
    assert intra - inter >= 0.2


@pytest.mark.parametrize("changes", [
    {"class_count": 1}, {"samples_per_class": 1}, {"input_dim": 1}, {"intra_class_noise": -0.1}, {"seed": -3},
])
def test_invalid_dataset_specs(changes):
    with pytest.raises(InvalidSpec):
        SyntheticDatasetSpec(**changes)


def test_batches_partition_training_set(dataset):
    batches = make_batches(dataset, 64, epoch_seed=5)
    assert len(batches) == 12
    assert all(b.size == 64 for b in batches)
    seen = np.concatenate(batches)
    assert np.unique(seen).size == seen.size
    assert set(seen) <= set(dataset.train_indices)
    again = make_batches(dataset, 64, epoch_seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    other = make_batches(dataset, 64, epoch_seed=6)
    assert not np.array_equal(batches[0], other[0])


def test_full_batch_and_bad_sizes(dataset):
    assert len(make_batches(dataset, 800, epoch_seed=0)) == 1
    for size in (0, 801):
        with pytest.raises(InvalidBatchSize):
            make_batches(dataset, size, epoch_seed=0)


def test_all_holdout_pairs(dataset):
    pairs = generate_pairs(dataset, None, None, seed=0)
    assert pairs.genuine.shape == (900, 2)
    assert pairs.impostor.shape == (19000, 2)
    labels = dataset.labels
    assert np.all(labels[pairs.genuine[:, 0]] == labels[pairs.genuine[:, 1]])
    assert np.all(labels[pairs.impostor[:, 0]] != labels[pairs.impostor[:, 1]])
    assert np.all(pairs.genuine[:, 0] < pairs.genuine[:, 1])
    assert set(pairs.genuine.ravel()) <= set(dataset.holdout_indices)


def test_sampled_pairs_are_distinct_and_seeded(dataset):
    pairs = generate_pairs(dataset, 100, 300, seed=4)
    assert len({tuple(p) for p in pairs.genuine}) == 100
    assert len({tuple(p) for p in pairs.impostor}) == 300
    again = generate_pairs(dataset, 100, 300, seed=4)
    assert np.array_equal(pairs.impostor, again.impostor)


def test_pairs_need_enough_samples(dataset):
    with pytest.raises(InsufficientSamples):
        generate_pairs(dataset, 901, None, seed=0)
    with pytest.raises(InsufficientSamples):
        generate_pairs(dataset, None, None, seed=0, indices=dataset.holdout_indices[:1])


def test_subset(dataset):
    inputs, labels = dataset.subset(np.array([0, 50, 999]))
    assert inputs.shape == (3, 16)
    assert labels.tolist() == [0, 1, 19]

import numpy as np
import pytest

from distill_lab.errors import DimensionMismatch, InvalidSpec, StaleCache
from distill_lab.losses import CenterBank, MarginConfig, amldistill_loss
from distill_lab.models import MlpNetwork, MlpSpec, backward, embed, forward, init_network
from distill_lab.numkit import finite_diff_grad, relative_error


def test_spec_properties():
    spec = MlpSpec((16, 24, 24, 8))
    assert spec.input_dim == 16
    assert spec.embedding_dim == 8
    assert spec.layer_count == 3
    assert spec.parameter_count() == 16 * 24 + 24 + 24 * 24 + 24 + 24 * 8 + 8
    assert spec.widened(2).layer_widths == (16, 48, 48, 8)


@pytest.mark.parametrize("widths, activation", [((4,), "relu"), ((4, 0, 2), "relu"), ((4, 2), "gelu")])
def test_invalid_specs(widths, activation):
    with pytest.raises(InvalidSpec):
        MlpSpec(widths, activation)


def test_forward_shapes_and_determinism(rng):
    spec = MlpSpec((5, 7, 3))
    inputs = rng.standard_normal((11, 5))
    a = init_network(spec, seed=9)
    b = init_network(spec, seed=9)
    out_a, _ = forward(a, inputs)
    out_b, _ = forward(b, inputs)
    assert out_a.shape == (11, 3)
    assert out_a.tobytes() == out_b.tobytes()
    assert not np.array_equal(embed(init_network(spec, seed=10), inputs), out_a)
    with pytest.raises(DimensionMismatch):
        forward(a, rng.standard_normal((2, 4)))


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_init_scale_follows_fan_in(activation):
    net = init_network(MlpSpec((400, 300, 8), activation), seed=0)
    gain = 2.0 if activation == "relu" else 1.0
    assert net.weights[0].std() == pytest.approx(np.sqrt(gain / 400), rel=0.03)
    assert not any(b.any() for b in net.biases)


def test_output_layer_is_linear(rng):
    net = init_network(MlpSpec((3, 4)), seed=1)
    x = rng.standard_normal((6, 3))
    np.testing.assert_allclose(embed(net, x), x @ net.weights[0].T + net.biases[0])


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_backward_matches_finite_differences(rng, activation):
    spec = MlpSpec((4, 6, 5, 3), activation)
    net = init_network(spec, seed=2)
    for layer in range(spec.layer_count):
        net.biases[layer] = 0.1 * rng.standard_normal(net.biases[layer].shape)
    inputs = rng.standard_normal((5, 4))
    upstream = rng.standard_normal((5, 3))

    _, cache = forward(net, inputs)
    grads = backward(net, cache, upstream).as_list()
    params = net.parameters()
    for index, param in enumerate(params):
        def objective(value, index=index):
            trial = list(params)
            trial[index] = value
            return float(np.sum(embed(net.with_parameters(trial), inputs) * upstream))

        numeric = finite_diff_grad(objective, param)
        assert relative_error(grads[index], numeric) < 1e-6


@pytest.mark.parametrize("widths, activation", [((4, 6, 3), "tanh"), ((5, 8, 4), "relu"), ((3, 5, 5, 3), "tanh")])
def test_distillation_loss_gradient_reaches_every_parameter(rng, widths, activation):
    spec = MlpSpec(widths, activation)
    assert spec.parameter_count() <= 200
    net = init_network(spec, seed=5)
    inputs = rng.standard_normal((6, spec.input_dim))
    labels = rng.integers(0, 4, 6)
    centers = CenterBank.from_matrix(rng.standard_normal((4, spec.embedding_dim))).centers
    margin = MarginConfig.arcface(0.5, 64.0, guarded=True)

    embeddings, cache = forward(net, inputs)
    loss = amldistill_loss(embeddings, labels, centers, margin)
    grads = backward(net, cache, loss.grad_features).as_list()
    params = net.parameters()
    for index, param in enumerate(params):
        def objective(value, index=index):
            trial = list(params)
            trial[index] = value
            return amldistill_loss(embed(net.with_parameters(trial), inputs), labels, centers, margin).value

        numeric = finite_diff_grad(objective, param, h=1e-6)
        assert relative_error(grads[index], numeric) < 1e-4


def test_relu_init_keeps_output_variance_near_one(rng):
    net = init_network(MlpSpec((16, 64, 64, 16), "relu"), seed=0)
    out = embed(net, rng.standard_normal((10_000, 16)))
    assert 0.25 < out.var() < 4.0


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_zero_network_maps_everything_to_zero(rng, activation):
    spec = MlpSpec((4, 6, 3), activation)
    zeros = MlpNetwork(spec, [np.zeros((6, 4)), np.zeros((3, 6))], [np.zeros(6), np.zeros(3)])
    np.testing.assert_array_equal(embed(zeros, rng.standard_normal((7, 4))), np.zeros((7, 3)))


def test_forward_commutes_with_batch_permutation(rng):
    net = init_network(MlpSpec((5, 9, 9, 4), "relu"), seed=3)
    inputs = rng.standard_normal((13, 5))
    order = rng.permutation(13)
    np.testing.assert_allclose(embed(net, inputs[order]), embed(net, inputs)[order], rtol=1e-12, atol=1e-12)


def test_cache_is_single_use(rng):
    net = init_network(MlpSpec((3, 4, 2)), seed=0)
    out, cache = forward(net, rng.standard_normal((2, 3)))
    backward(net, cache, np.ones_like(out))
    with pytest.raises(StaleCache):
        backward(net, cache, np.ones_like(out))


def test_cache_belongs_to_its_network(rng):
    net = init_network(MlpSpec((3, 4, 2)), seed=0)
    other = net.copy()
    out, cache = forward(net, rng.standard_normal((2, 3)))
    with pytest.raises(StaleCache):
        backward(other, cache, np.ones_like(out))


def test_backward_rejects_wrong_gradient_shape(rng):
    net = init_network(MlpSpec((3, 4, 2)), seed=0)
    _, cache = forward(net, rng.standard_normal((2, 3)))
    with pytest.raises(DimensionMismatch):
        backward(net, cache, np.ones((2, 3)))
    # a rejected call does not consume the cache
    backward(net, cache, np.ones((2, 2)))


def test_parameters_round_trip():
    net = init_network(MlpSpec((3, 5, 2)), seed=4)
    params = net.parameters()
    assert [p.shape for p in params] == [(5, 3), (5,), (2, 5), (2,)]
    rebuilt = net.with_parameters(params)
    for a, b in zip(rebuilt.parameters(), params):
        np.testing.assert_array_equal(a, b)
    copy = net.copy()
    copy.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != copy.weights[0][0, 0]


def test_network_rejects_mismatched_parameters():
    spec = MlpSpec((3, 2))
    with pytest.raises(InvalidSpec):
        MlpNetwork(spec, [np.zeros((3, 2))], [np.zeros(2)])
    with pytest.raises(InvalidSpec):
        MlpNetwork(spec, [np.full((2, 3), np.nan)], [np.zeros(2)])

"""
Toy feed-forward embedding networks with analytic forward and backward passes.

A network maps N x in_dim inputs to N x d unnormalized embeddings through
affine layers, with the chosen activation on every hidden layer and none on
the output. Teacher and student are both MlpNetwork instances; only their
widths differ.
"""

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from distill_lab.errors import DimensionMismatch, InvalidSpec, StaleCache
from distill_lab.numkit import as_mat, make_rng

ACTIVATIONS = ("relu", "tanh")

_cache_ids = itertools.count()


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input dim to embedding dim, and the hidden activation."""

    layer_widths: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise InvalidSpec(f"An MLP needs at least two widths, got {widths}")
        if any(w <= 0 for w in widths):
            raise InvalidSpec(f"Layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"Unknown activation '{self.activation}'. Available: {list(ACTIVATIONS)}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def layer_count(self) -> int:
        return len(self.layer_widths) - 1

    def parameter_count(self) -> int:
        return sum(o * i + o for i, o in zip(self.layer_widths[:-1], self.layer_widths[1:]))

    def widened(self, factor: int = 2) -> "MlpSpec":
        """Same depth with every hidden width multiplied by factor (the default teacher shape)."""
        widths = self.layer_widths
        hidden = tuple(w * factor for w in widths[1:-1])
        return MlpSpec((widths[0],) + hidden + (widths[-1],), self.activation)


class MlpNetwork:
    """Weights are stored out x in, so a layer computes a @ W.T + b."""

    def __init__(self, spec: MlpSpec, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != spec.layer_count or len(biases) != spec.layer_count:
            raise InvalidSpec(
                f"Expected {spec.layer_count} layers, got {len(weights)} weights and {len(biases)} biases"
            )
        self.spec = spec
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for layer, (fan_in, fan_out) in enumerate(zip(spec.layer_widths[:-1], spec.layer_widths[1:])):
            if self.weights[layer].shape != (fan_out, fan_in) or self.biases[layer].shape != (fan_out,):
                raise InvalidSpec(
                    f"Layer {layer} parameters have shapes {self.weights[layer].shape}/{self.biases[layer].shape}, "
                    f"expected {(fan_out, fan_in)}/{(fan_out,)}"
                )
            if not (np.all(np.isfinite(self.weights[layer])) and np.all(np.isfinite(self.biases[layer]))):
                raise InvalidSpec(f"Layer {layer} has non-finite parameters")

    def parameters(self) -> List[np.ndarray]:
        """Flat parameter list: W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MlpNetwork":
        """New network from a flat list in parameters() order."""
        return MlpNetwork(self.spec, list(params[0::2]), list(params[1::2]))

    def copy(self) -> "MlpNetwork":
        return self.with_parameters([p.copy() for p in self.parameters()])

    def __repr__(self) -> str:
        return f"MlpNetwork(widths={self.spec.layer_widths}, activation={self.spec.activation})"


@dataclass
class NetworkGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def as_list(self) -> List[np.ndarray]:
        """Flat list matching MlpNetwork.parameters()."""
        grads = []
        for w, b in zip(self.weights, self.biases):
            grads.extend([w, b])
        return grads


class BatchCache:
    """Per-layer values retained by one forward call; consumed by exactly one backward call."""

    def __init__(self, network_id: int, activations: List[np.ndarray], pre_activations: List[np.ndarray]):
        self.cache_id = next(_cache_ids)
        self.network_id = network_id
        self.activations = activations
        self.pre_activations = pre_activations
        self.consumed = False


def init_network(spec: MlpSpec, seed: int) -> MlpNetwork:
    """
    Random initialization scaled by fan-in.

    relu layers use He scaling (std sqrt(2/fan_in)), tanh layers use
    Xavier/LeCun scaling (std sqrt(1/fan_in)); biases start at zero.
    """
    if not isinstance(spec, MlpSpec):
        raise InvalidSpec(f"Expected an MlpSpec, got {type(spec).__name__}")
    rng = make_rng(seed)
    gain = 2.0 if spec.activation == "relu" else 1.0
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(gain / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(spec, weights, biases)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward(net: MlpNetwork, inputs: np.ndarray) -> Tuple[np.ndarray, BatchCache]:
    """
    Affine + activation chain; the output layer is linear.

    Returns:
        tuple: (N x d unnormalized embeddings, cache for backward)
    """
    a = as_mat(inputs, "inputs", cols=net.spec.input_dim)
    activations = [a]
    pre_activations = []
    last = net.spec.layer_count - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        pre_activations.append(z)
        a = z if layer == last else _activate(z, net.spec.activation)
        activations.append(a)
    return a, BatchCache(id(net), activations, pre_activations)


def backward(net: MlpNetwork, cache: BatchCache, grad_embeddings: np.ndarray) -> NetworkGrads:
    """
    Reverse-mode gradients of sum(embeddings * grad_embeddings) w.r.t. every parameter.

    Raises:
        StaleCache: cache already consumed or produced by a different network
        ShapeMismatch: grad_embeddings does not match the cached output
    """
    if cache.consumed:
        raise StaleCache(f"Forward cache {cache.cache_id} was already consumed by a backward call")
    if cache.network_id != id(net):
        raise StaleCache("Forward cache belongs to a different network")
    output = cache.activations[-1]
    grad = np.asarray(grad_embeddings, dtype=np.float64)
    if grad.shape != output.shape:
        raise DimensionMismatch(f"Embedding gradient shape {grad.shape} vs output shape {output.shape}")
    cache.consumed = True

    layer_count = net.spec.layer_count
    grad_w: List[Optional[np.ndarray]] = [None] * layer_count
    grad_b: List[Optional[np.ndarray]] = [None] * layer_count
    dz = grad
    for layer in reversed(range(layer_count)):
        a_prev = cache.activations[layer]
        grad_w[layer] = dz.T @ a_prev
        grad_b[layer] = dz.sum(axis=0)
        if layer > 0:
            da = dz @ net.weights[layer]
            dz = da * _activation_grad(cache.pre_activations[layer - 1], a_prev, net.spec.activation)
    return NetworkGrads(grad_w, grad_b)


def embed(net: MlpNetwork, inputs: np.ndarray) -> np.ndarray:
    """Forward pass without keeping a cache (evaluation and frozen teachers)."""
    return forward(net, inputs)[0]

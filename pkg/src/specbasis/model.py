"""Pointwise MLP feature extractor (coordinates -> K raw basis features)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndiff as nd
from .errors import ContractError, DimensionError
from .geometry import PointCloud

__all__ = ["MlpExtractor", "init_extractor", "extractor_forward", "ACTIVATIONS"]

ACTIVATIONS = {"relu": nd.relu, "gelu": nd.gelu, "tanh": nd.tanh}


@dataclass
class MlpExtractor:
    widths: list
    weights: list
    biases: list
    activation: str = "relu"
    seed: int = 0

    def parameters(self) -> list:
        """Tensors in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_parameters(self, arrays) -> None:
        arrays = list(arrays)
        for i in range(len(self.weights)):
            self.weights[i] = nd.tensor(arrays[2 * i], requires_grad=True)
            self.biases[i] = nd.tensor(arrays[2 * i + 1], requires_grad=True)

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def K(self) -> int:
        return self.widths[-1]


def init_extractor(widths, activation: str = "relu", seed: int = 0) -> MlpExtractor:
    """Glorot-uniform weights and biases, both in ``+-sqrt(6 / (fan_in + fan_out))``.

    Zero biases would make a ReLU net on non-negative 1D input exactly
    linear in ``x`` (rank-1 features), so QR would fail at step 0.  Biases
    on the weight scale put a good share of first-layer kinks ``-b/w``
    inside the unit range; the wider ``1/sqrt(fan_in)`` range left so few
    that some seeds lost rank within the first hundred steps.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 3 or min(widths) < 1:
        raise ContractError(f"need input, >= 1 hidden and output width, all >= 1; got {widths}")
    if activation not in ACTIVATIONS:
        raise ContractError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(nd.tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
        biases.append(nd.tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True))
    return MlpExtractor(widths, weights, biases, activation, seed)


def extractor_forward(model: MlpExtractor, pc) -> nd.Tensor:
    """Apply the MLP to every point independently; returns an (n, K) tensor."""
    x = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise DimensionError(f"model expects {model.d_in}-dim points, got shape {x.shape}")
    act = ACTIVATIONS[model.activation]
    h = nd.tensor(x)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = nd.add_row(nd.matmul(h, w), b)
        if i < last:
            h = act(h)
    return h

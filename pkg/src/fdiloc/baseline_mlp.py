"""Structure-blind MLP baseline over flattened [P, Q] features.

The network sees the (n, 2) node features as one vector of length 2n and
predicts n + 1 probabilities directly (the grid bit has its own logit).
Training reuses :mod:`fdiloc.gnn.training` unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gnn.layers import Linear
from .gnn.model import DetectorModel, build_mlp, sigmoid

__all__ = ["MlpParams", "mlp_forward", "build_mlp", "mlp_params"]


@dataclass(eq=False)
class MlpParams:
    weights: list[np.ndarray]  # (d_in, d_out) each
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("consecutive layer widths do not match")

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[1]


def mlp_forward(params: MlpParams, x_flat) -> np.ndarray:
    """Affine/ReLU stack with sigmoid outputs; (d_in,) or (B, d_in) input."""
    h = np.asarray(x_flat, float)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    if h.shape[1] != params.d_in:
        raise ValueError(f"expected input width {params.d_in}, got {h.shape[1]}")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    p = sigmoid(h)
    return p[0] if single else p


def mlp_params(model: DetectorModel) -> MlpParams:
    """View the linear layers of an MLP ``DetectorModel`` as :class:`MlpParams`."""
    lin = [layer for layer in model.layers if isinstance(layer, Linear)]
    return MlpParams([l.weight for l in lin], [l.bias for l in lin])

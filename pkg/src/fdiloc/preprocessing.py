"""Feature standardization for node-feature tensors of shape (N, n, c)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError

MIN_SCALE = 1e-12


def check_node_tensor(x, n: int | None = None, channels: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a finite float (N, n, c) tensor; a single (n, c) sample is promoted."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"{name} must have shape (samples, nodes, channels), got {a.shape}")
    if n is not None and a.shape[1] != n:
        raise ValueError(f"{name} has {a.shape[1]} nodes, expected {n}")
    if channels is not None and a.shape[2] != channels:
        raise ValueError(f"{name} has {a.shape[2]} channels, expected {channels}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite values")
    return a


class FeatureStandardizer(TransformerMixin, BaseEstimator):
    """Zero-mean, unit-variance scaling per (node, channel).

    Statistics are computed over the sample axis only. Features with zero
    spread keep a unit scale.
    """

    def fit(self, X, y=None):
        a = check_node_tensor(X)
        if a.shape[0] < 2:
            raise DataError("need at least two samples to fit a standardizer")
        self.mean_ = a.mean(axis=0)
        std = a.std(axis=0)
        self.scale_ = np.where(std < MIN_SCALE, 1.0, std)
        self.n_nodes_, self.n_channels_ = a.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        a = check_node_tensor(X, self.n_nodes_, self.n_channels_)
        return (a - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        a = check_node_tensor(X, self.n_nodes_, self.n_channels_)
        return a * self.scale_ + self.mean_

    def to_dict(self) -> dict:
        check_is_fitted(self, "mean_")
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStandardizer":
        s = cls()
        s.mean_ = np.asarray(d["mean"], dtype=np.float64)
        s.scale_ = np.asarray(d["scale"], dtype=np.float64)
        s.n_nodes_, s.n_channels_ = s.mean_.shape
        return s

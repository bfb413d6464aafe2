"""scikit-learn style estimators for joint detection and localization.

Inputs ``X`` are (N, n, 2) standardized node features and targets ``y`` are
(N, n + 1) binary labels (per bus, then the grid bit). ``predict_proba``
returns the same (N, n + 1) layout.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError
from .gnn.model import DetectorModel, build_gnn, build_mlp
from .gnn.training import TrainConfig, Trainer
from .grid import GridCase, case_topology, load_case
from .metrics import THRESHOLD, detection_metrics
from .preprocessing import check_node_tensor


def check_labels(y, n: int, samples: int) -> np.ndarray:
    a = np.asarray(y)
    if a.shape != (samples, n + 1):
        raise ValueError(f"y must have shape ({samples}, {n + 1}), got {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise DataError("labels must be binary")
    return a.astype(np.float64)


class _DetectorBase(ClassifierMixin, BaseEstimator):
    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
            patience=self.patience, min_delta=self.min_delta, seed=self.random_state,
        )

    def _build(self, n: int) -> DetectorModel:
        raise NotImplementedError

    def fit(self, X, y, X_val=None, y_val=None):
        """Train with early stopping on (X_val, y_val) when given."""
        x = check_node_tensor(X)
        n = x.shape[1]
        yy = check_labels(y, n, len(x))
        if X_val is not None:
            xv = check_node_tensor(X_val, n, x.shape[2], "X_val")
            yv = check_labels(y_val, n, len(xv))
        else:
            xv = yv = None
        self.model_ = self._build(n)
        trainer = Trainer(self.model_, self._train_config())
        self.train_state_ = trainer.run(x, yy, xv, yv)
        trainer.finish()
        self.history_ = self.train_state_.history
        self.n_nodes_ = n
        self.n_features_in_ = x.shape[2]
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(check_node_tensor(X, self.n_nodes_, self.n_features_in_))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= THRESHOLD).astype(np.uint8)

    def score(self, X, y, sample_weight=None) -> float:
        """Grid-level detection F1."""
        p = self.predict_proba(X)
        yy = check_labels(y, self.n_nodes_, len(p))
        return detection_metrics(p[:, -1], yy[:, -1])["f1"]


class ArmaDetector(_DetectorBase):
    """ARMA_K graph-filter detector."""

    def __init__(
        self, case="case14", layers=3, units=16, K=2, T=4, share_weights=True, iter_activation=False,
        weighted=True, lr=1e-3, batch_size=256, max_epochs=256, patience=16, min_delta=1e-4, random_state=0,
    ):
        self.case = case
        self.layers = layers
        self.units = units
        self.K = K
        self.T = T
        self.share_weights = share_weights
        self.iter_activation = iter_activation
        self.weighted = weighted
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_delta = min_delta
        self.random_state = random_state

    def _build(self, n):
        topo = _topology(self.case, self.weighted, n)
        return build_gnn(
            "arma", topo.l_modified, n, layers=self.layers, units=self.units, K=self.K, T=self.T,
            seed=self.random_state, share_weights=self.share_weights, iter_activation=self.iter_activation,
        )


class ChebDetector(_DetectorBase):
    """Chebyshev graph-filter detector."""

    def __init__(
        self, case="case14", layers=3, units=16, K=3, weighted=True,
        lr=1e-3, batch_size=256, max_epochs=256, patience=16, min_delta=1e-4, random_state=0,
    ):
        self.case = case
        self.layers = layers
        self.units = units
        self.K = K
        self.weighted = weighted
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_delta = min_delta
        self.random_state = random_state

    def _build(self, n):
        topo = _topology(self.case, self.weighted, n)
        return build_gnn("cheb", topo.l_scaled, n, layers=self.layers, units=self.units, K=self.K, seed=self.random_state)


class MlpDetector(_DetectorBase):
    """Structure-blind multilayer perceptron baseline."""

    def __init__(
        self, layers=2, units=32, lr=1e-3, batch_size=256, max_epochs=256, patience=16, min_delta=1e-4, random_state=0,
    ):
        self.layers = layers
        self.units = units
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.min_delta = min_delta
        self.random_state = random_state

    def _build(self, n):
        return build_mlp(n, layers=self.layers, units=self.units, seed=self.random_state)


def _topology(case, weighted, n):
    gc = case if isinstance(case, GridCase) else load_case(case)
    if gc.n != n:
        raise DataError(f"features have {n} nodes but case {gc.name!r} has {gc.n} buses")
    return case_topology(gc, weighted)


def make_detector(family: str, **params) -> _DetectorBase:
    table = {"arma": ArmaDetector, "cheb": ChebDetector, "mlp": MlpDetector}
    if family not in table:
        raise ValueError(f"unknown model family {family!r}")
    return table[family](**params)

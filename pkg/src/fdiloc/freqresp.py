"""Filter-approximation experiment: fit single linear CHEB / ARMA layers to an
ideal spectral filter and compare their empirical frequency responses.

Each model is one scalar-channel layer without bias or activation, trained
by mini-batch Adam on the mean squared error between its output and the
ideally filtered signal. The learning rate drops tenfold whenever the epoch
loss stops improving, and training ends after the last drop plateaus.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .exceptions import TrainingError
from .gnn.layers import ArmaLayer, ChebLayer, Layer
from .gnn.optim import Adam
from .grid import GraphTopology
from .spectral import (
    GraphSpectrum,
    IdealFilter,
    arma_response,
    chebyshev_response,
    empirical_frequency_response,
    response_mse,
    spectral_filter,
    symmetric_eig,
)

log = logging.getLogger(__name__)

_SPEC = re.compile(r"^(cheb|arma)(\d+)(u?)$")


@dataclass
class FitConfig:
    inputs: int = 4096
    batch_size: int = 64
    lr: float = 1e-2
    lr_drops: int = 3
    patience: int = 10
    min_rel_improvement: float = 1e-4
    max_epochs: int = 2000
    restarts: int = 4
    arma_T: int = 16
    seed: int = 0


@dataclass
class FitResult:
    name: str
    family: str
    K: int
    response: np.ndarray
    analytic: np.ndarray
    mse: float
    train_loss: float
    epochs: int
    params: dict = field(default_factory=dict)


def parse_model(spec: str):
    """``"cheb3"`` / ``"arma5"`` / ``"arma5u"`` (per-iteration weights)."""
    m = _SPEC.match(spec)
    if not m:
        raise ValueError(f"bad model spec {spec!r}; expected cheb<K>, arma<K> or arma<K>u")
    return m.group(1), int(m.group(2)), m.group(3) == "u"


def make_layer(spec: str, topo: GraphTopology, cfg: FitConfig, rng) -> Layer:
    family, K, unshared = parse_model(spec)
    if family == "cheb":
        return ChebLayer(topo.l_scaled, 1, 1, K, rng=rng, bias=False)
    return ArmaLayer(topo.l_modified, 1, 1, K, cfg.arma_T, rng=rng, share_weights=not unshared, bias=False)


def _fit_once(layer: Layer, x, y, cfg: FitConfig, rng) -> tuple[float, int]:
    params = layer.params()
    opt = Adam(params, lr=cfg.lr)
    best = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    wait = 0
    drops = 0
    m = len(x)
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(m)
        total = 0.0
        for i in range(0, m, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            out = layer.forward(x[idx])
            diff = out - y[idx]
            loss = float(np.mean(diff * diff))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss while fitting {layer.kind} at epoch {epoch}")
            layer.backward(2.0 * diff / diff.size)
            opt.step(layer.grads)
            total += loss * len(idx)
        total /= m
        if total < best * (1 - cfg.min_rel_improvement):
            best = total
            best_params = {k: v.copy() for k, v in params.items()}
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                if drops >= cfg.lr_drops:
                    break
                drops += 1
                opt.lr /= 10.0
                wait = 0
    for k, v in params.items():
        v[...] = best_params[k]
    return best, epoch


def _full_loss(layer, x, y) -> float:
    d = layer.forward(x) - y
    return float(np.mean(d * d))


def fit_filter(
    spec: str,
    topo: GraphTopology,
    spectrum: GraphSpectrum,
    target: IdealFilter,
    cfg: FitConfig | None = None,
) -> FitResult:
    """Train one model spec against ``target``; best of ``restarts`` by training loss."""
    cfg = cfg or FitConfig()
    family, K, unshared = parse_model(spec)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 11]))
    x2 = rng.standard_normal((cfg.inputs, spectrum.n))
    y2 = spectral_filter(spectrum, target, x2.T).T
    x = x2[:, :, None]
    y = y2[:, :, None]
    best = None
    for r in range(cfg.restarts):
        lrng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 12, r, K, _deterministic_hash(family)]))
        layer = make_layer(spec, topo, cfg, lrng)
        _, epochs = _fit_once(layer, x, y, cfg, lrng)
        loss = _full_loss(layer, x, y)
        log.info("%s restart %d: loss %.6f after %d epochs", spec, r, loss, epochs)
        if best is None or loss < best[0]:
            best = (loss, epochs, layer)
    loss, epochs, layer = best
    out = layer.forward(x)[:, :, 0]
    resp = empirical_frequency_response(spectrum, (x2, out))
    ideal = target(spectrum.lam)
    if family == "cheb":
        coeffs = layer.coeffs[:, 0, 0].copy()
        analytic = chebyshev_response(coeffs, spectrum.lam, topo.lambda_max)
        params = {"coeffs": coeffs.tolist()}
    elif not unshared:
        a = layer.alpha[:, 0, 0].copy()
        b = layer.beta[:, 0, 0].copy()
        analytic = arma_response(a, b, spectrum.lam, iterations=cfg.arma_T)
        params = {"a": a.tolist(), "b": b.tolist(), "T": cfg.arma_T}
    else:
        analytic = np.full(spectrum.n, np.nan)
        params = {"T": cfg.arma_T}
    return FitResult(spec, family, K, resp, analytic, response_mse(resp, ideal), loss, epochs, params)


def _deterministic_hash(name: str) -> int:
    return sum(ord(c) * (i + 1) for i, c in enumerate(name))


def run_experiment(topo: GraphTopology, models, target_kind: str = "bandpass_thirds", cfg: FitConfig | None = None):
    """Fit every model spec; returns ``(spectrum, ideal response, [FitResult])``."""
    spectrum = symmetric_eig(topo.l)
    target = IdealFilter.make(target_kind, spectrum)
    results = [fit_filter(m, topo, spectrum, target, cfg) for m in models]
    return spectrum, target(spectrum.lam), results

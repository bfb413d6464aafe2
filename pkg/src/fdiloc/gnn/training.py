"""Mini-batch training with Adam and validation early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import TrainingError
from .model import DetectorModel, bce_loss
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    batch_size: int = 256
    max_epochs: int = 256
    patience: int = 16
    min_delta: float = 1e-4
    seed: int = 0
    restore_best: bool = True

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        return self


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    elapsed_ms: float = 0.0


@dataclass
class TrainState:
    """Everything needed to continue training bit-identically."""

    epoch: int = 0
    best_loss: float = float("inf")
    best_epoch: int = 0
    wait: int = 0
    stopped: bool = False
    history: list[EpochRecord] = field(default_factory=list)
    best_params: dict | None = None
    rng_state: dict | None = None

    def summary(self) -> dict:
        return {
            "epoch": self.epoch,
            "best_loss": self.best_loss,
            "best_epoch": self.best_epoch,
            "wait": self.wait,
            "stopped": self.stopped,
            # wall-clock times stay out of checkpoints so they are reproducible
            "history": [{"epoch": r.epoch, "train_loss": r.train_loss, "val_loss": r.val_loss} for r in self.history],
            "rng_state": self.rng_state,
        }


def dataset_loss(model: DetectorModel, x, y, batch_size: int = 1024) -> float:
    p = model.predict_proba(x, batch_size)
    return bce_loss(p, y)


class Trainer:
    """Stateful training loop; ``run`` may be called repeatedly (resume)."""

    def __init__(self, model: DetectorModel, config: TrainConfig | None = None, state: TrainState | None = None):
        self.model = model
        self.config = (config or TrainConfig()).validate()
        self.params = model.named_params()
        c = self.config
        self.opt = Adam(self.params, c.lr, c.beta1, c.beta2, c.eps)
        self.state = state or TrainState()
        self.live_params: dict | None = None
        self.rng = np.random.default_rng(np.random.SeedSequence([int(c.seed), 3]))
        if self.state.rng_state is not None:
            self.rng.bit_generator.state = self.state.rng_state

    def _epoch(self, x, y) -> float:
        m = len(x)
        order = self.rng.permutation(m)
        total = 0.0
        bs = self.config.batch_size
        for i in range(0, m, bs):
            idx = order[i : i + bs]
            loss = self.model.loss_and_grad(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {self.state.epoch + 1}, batch {i // bs}"
                )
            self.opt.step(self.model.named_grads())
            total += loss * len(idx)
        return total / m

    def run(self, x, y, x_val=None, y_val=None, epochs: int | None = None) -> TrainState:
        """Train until early stopping, ``max_epochs``, or ``epochs`` more epochs."""
        c = self.config
        st = self.state
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        has_val = x_val is not None
        if has_val:
            x_val = np.asarray(x_val, float)
            y_val = np.asarray(y_val, float)
        budget = c.max_epochs if epochs is None else min(c.max_epochs, st.epoch + epochs)
        t0 = time.perf_counter()
        while not st.stopped and st.epoch < budget:
            train_loss = self._epoch(x, y)
            monitor = dataset_loss(self.model, x_val, y_val) if has_val else train_loss
            if not np.isfinite(monitor):
                raise TrainingError(f"non-finite validation loss at epoch {st.epoch + 1}")
            st.epoch += 1
            st.history.append(
                EpochRecord(st.epoch, train_loss, monitor if has_val else float("nan"), (time.perf_counter() - t0) * 1e3)
            )
            if monitor < st.best_loss - c.min_delta:
                st.best_loss = monitor
                st.best_epoch = st.epoch
                st.best_params = self.model.copy_params()
                st.wait = 0
            else:
                st.wait += 1
                if st.wait >= c.patience:
                    st.stopped = True
            log.debug("epoch %d train %.5f monitor %.5f", st.epoch, train_loss, monitor)
        st.rng_state = self.rng.bit_generator.state
        return st

    def finish(self) -> DetectorModel:
        """Restore the best weights; the live ones are kept for resuming."""
        self.live_params = self.model.copy_params()
        if self.config.restore_best and self.state.best_params is not None:
            self.model.set_params(self.state.best_params)
        return self.model


def train(model: DetectorModel, train_xy, val_xy=None, config: TrainConfig | None = None):
    """Fit ``model`` in place; returns ``(model, TrainState)``.

    Early stopping monitors the validation BCE (training BCE without a
    validation set) and the best weights are restored at the end.
    """
    tr = Trainer(model, config)
    xv, yv = (None, None) if val_xy is None else val_xy
    state = tr.run(train_xy[0], train_xy[1], xv, yv)
    return tr.finish(), state

"""Detection and localization metrics.

Conventions for a label set with no positive truth: an all-negative
prediction scores DR = 1, FA = 0, F1 = 1; any false positive scores DR = 0,
FA = 1, F1 = 0. FA with no negative truth is 0.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

THRESHOLD = 0.5
LOW_RATIO = 0.05
HIGH_RATIO = 0.95
WARMUP_CALLS = 10


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @classmethod
    def from_arrays(cls, truth, pred) -> "ConfusionCounts":
        t = np.asarray(truth).astype(bool)
        p = np.asarray(pred).astype(bool)
        if t.shape != p.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {p.shape}")
        return cls(
            tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)), fn=int(np.sum(t & ~p)), tn=int(np.sum(~t & ~p))
        )

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def dr_fa_f1(c: ConfusionCounts) -> tuple[float, float, float]:
    if c.tp + c.fn == 0:
        return (1.0, 0.0, 1.0) if c.fp == 0 else (0.0, 1.0, 0.0)
    dr = c.tp / (c.tp + c.fn)
    fa = c.fp / (c.fp + c.tn) if c.fp + c.tn else 0.0
    f1 = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    return dr, fa, f1


def accuracy(c: ConfusionCounts) -> float:
    return (c.tp + c.tn) / c.total if c.total else float("nan")


@dataclass(frozen=True)
class BoxStats:
    q1: float
    q2: float
    q3: float
    lw: float
    uw: float
    outliers: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outliers"] = list(self.outliers)
        return d


def box_stats(values) -> BoxStats:
    """Quartiles by linear interpolation; Tukey whiskers at 1.5 IQR snapped to data."""
    v = np.asarray(values, float).ravel()
    if v.size == 0:
        raise ValueError("box_stats of an empty sequence")
    q1, q2, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo) & (v <= hi)]
    lw = float(inside.min()) if inside.size else float(q1)
    uw = float(inside.max()) if inside.size else float(q3)
    out = tuple(float(x) for x in np.sort(v[(v < lw) | (v > uw)]))
    return BoxStats(float(q1), float(q2), float(q3), lw, uw, out)


@dataclass
class LocalizationReport:
    """Per-unit (sample or node) scores with summary statistics."""

    axis: str
    f1: np.ndarray
    acc: np.ndarray
    dr: np.ndarray
    fa: np.ndarray
    box: BoxStats
    ratio_low: float
    ratio_high: float
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "count": int(self.f1.size),
            "mean_f1": float(np.mean(self.f1)),
            "mean_acc": float(np.mean(self.acc)),
            "box_f1": self.box.to_dict(),
            "ratio_f1_le_5pct": self.ratio_low,
            "ratio_f1_ge_95pct": self.ratio_high,
            "counts": asdict(self.counts),
        }


def _binarize(pred, threshold):
    p = np.asarray(pred)
    return p >= threshold if p.dtype.kind == "f" else p.astype(bool)


def _localization(truth, pred, axis: int, name: str, threshold: float) -> LocalizationReport:
    t = np.asarray(truth).astype(bool)
    p = _binarize(pred, threshold)
    if t.shape != p.shape or t.ndim != 2:
        raise ValueError(f"expected matching (samples, nodes) arrays, got {t.shape} and {p.shape}")
    tt = t if axis == 0 else t.T
    pp = p if axis == 0 else p.T
    rows = [ConfusionCounts.from_arrays(a, b) for a, b in zip(tt, pp)]
    scores = np.array([dr_fa_f1(c) for c in rows]).reshape(-1, 3)
    f1 = scores[:, 2]
    acc = np.array([accuracy(c) for c in rows])
    total = ConfusionCounts.from_arrays(t, p)
    return LocalizationReport(
        axis=name,
        f1=f1,
        acc=acc,
        dr=scores[:, 0],
        fa=scores[:, 1],
        box=box_stats(f1) if f1.size else BoxStats(0, 0, 0, 0, 0),
        ratio_low=float(np.mean(f1 <= LOW_RATIO)) if f1.size else float("nan"),
        ratio_high=float(np.mean(f1 >= HIGH_RATIO)) if f1.size else float("nan"),
        counts=total,
    )


def sample_wise_eval(preds, labels, threshold: float = THRESHOLD) -> LocalizationReport:
    """Per sample: metrics over its n node labels. ``preds`` are probabilities
    (thresholded at ``threshold``) or booleans."""
    return _localization(labels, preds, 0, "sample", threshold)


def node_wise_eval(preds, labels, threshold: float = THRESHOLD) -> LocalizationReport:
    """Per bus: metrics over its label sequence across samples."""
    return _localization(labels, preds, 1, "node", threshold)


def detection_metrics(scores, truth, threshold: float = THRESHOLD) -> dict:
    """Grid-level DR / FA / F1 from per-sample scores."""
    c = ConfusionCounts.from_arrays(truth, _binarize(scores, threshold))
    dr, fa, f1 = dr_fa_f1(c)
    return {"dr": dr, "fa": fa, "f1": f1, "accuracy": accuracy(c), "counts": asdict(c)}


def evaluate_outputs(probs, labels, threshold: float = THRESHOLD) -> dict:
    """Full metric bundle for (N, n + 1) model outputs and labels."""
    probs = np.asarray(probs, float)
    labels = np.asarray(labels)
    n = probs.shape[1] - 1
    sw = sample_wise_eval(probs[:, :n], labels[:, :n], threshold)
    nw = node_wise_eval(probs[:, :n], labels[:, :n], threshold)
    return {
        "detection": detection_metrics(probs[:, n], labels[:, n], threshold),
        "sample_wise": sw.to_dict(),
        "node_wise": nw.to_dict(),
        "_reports": (sw, nw),
    }


@dataclass(frozen=True)
class TimingStats:
    mean_ms: float
    p95_ms: float
    calls: int

    def to_dict(self):
        return asdict(self)


def timing_benchmark(model, samples, warmup: int = WARMUP_CALLS, min_calls: int = 100) -> TimingStats:
    """Per-sample forward latency; the first ``warmup`` calls are discarded.

    ``model`` is anything with ``forward`` (or a callable). Samples are
    cycled until ``min_calls`` timed calls have been made.
    """
    xs = np.asarray(samples, float)
    if xs.ndim == 2:
        xs = xs[None]
    if len(xs) == 0:
        raise ValueError("timing_benchmark needs at least one sample")
    fn = model.forward if hasattr(model, "forward") else model
    calls = max(min_calls, len(xs))
    times = []
    for i in range(warmup + calls):
        x = xs[i % len(xs)][None]
        t0 = time.perf_counter()
        fn(x)
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(dt * 1e3)
    t = np.asarray(times)
    return TimingStats(float(t.mean()), float(np.percentile(t, 95)), int(t.size))

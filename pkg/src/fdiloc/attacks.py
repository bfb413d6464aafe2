"""False data injection attacks with target-area semantics.

An attack picks a connected set of buses ``t_x`` and alters only the
measurements in their support ``t_z``. Four kinds are provided:

* ``A_o`` stealth: a state perturbation pushed through ``h(x)``
* ``A_r`` replay of an earlier frame
* ``A_d`` draws from the historical per-measurement distribution
* ``A_s`` random multiplicative scaling
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DataError, NumericalError
from .grid import GridCase
from .powerflow import MeasurementFrame, StateVector, h_vector, measurement_layout, measurement_sigma

MAX_RESAMPLE = 10


class AttackKind(str, enum.Enum):
    NONE = "none"
    STEALTH = "A_o"
    REPLAY = "A_r"
    DISTRIBUTION = "A_d"
    SCALE = "A_s"

    @classmethod
    def parse(cls, value) -> "AttackKind":
        if isinstance(value, cls):
            return value
        for k in cls:
            if value in (k.value, k.name, k.name.lower()):
                return k
        raise ValueError(f"unknown attack kind {value!r}")


ATTACK_CODES = {k: i for i, k in enumerate(AttackKind)}


@dataclass(frozen=True)
class TargetArea:
    t_x: tuple[int, ...]
    t_z: tuple[int, ...]

    def __post_init__(self):
        if not self.t_x:
            raise ValueError("target area must contain at least one bus")

    @property
    def z_index(self) -> np.ndarray:
        return np.asarray(self.t_z, dtype=int)


@dataclass(frozen=True, eq=False)
class AttackLabel:
    per_bus: np.ndarray
    grid: bool

    @classmethod
    def clean(cls, n: int) -> "AttackLabel":
        return cls(np.zeros(n, dtype=bool), False)

    @classmethod
    def from_area(cls, area: TargetArea, n: int) -> "AttackLabel":
        per_bus = np.zeros(n, dtype=bool)
        per_bus[list(area.t_x)] = True
        return cls(per_bus, True)

    def vector(self) -> np.ndarray:
        """n + 1 labels: per bus, then the grid bit."""
        return np.r_[self.per_bus, self.grid].astype(np.uint8)


@dataclass(frozen=True)
class AttackSpec:
    """Attack parameters; defaults follow the package's declared choices."""

    size_range: tuple[int, int] | None = None  # None -> [1, ceil(n/5)]
    v_rel: float = 0.02
    theta_deg: float = 2.0
    magnitude: float = 1.0
    tau_range: tuple[int, int] = (30, 720)
    scale_range: tuple[float, float] = (0.9, 1.1)
    neighbor_injections: bool = True

    def sizes(self, n: int) -> tuple[int, int]:
        return tuple(self.size_range) if self.size_range else (1, max(1, math.ceil(n / 5)))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def measurement_support(case: GridCase, buses, neighbor_injections: bool = True) -> tuple[int, ...]:
    """Indices of the measurements that depend on the states of ``buses``.

    These are the P/Q injections at the buses and at their neighbours, plus
    the P/Q flows at both ends of every incident branch. With
    ``neighbor_injections=False`` only the buses' own injections are kept.
    """
    n, nb = case.n, len(case.branches)
    lay = measurement_layout(n, nb)
    sel = set(int(b) for b in buses)
    inj = set(sel)
    if neighbor_injections:
        for b in sel:
            inj.update(case.neighbors[b])
    adm = case.admittance
    br = np.flatnonzero(np.isin(adm.f, list(sel)) | np.isin(adm.t, list(sel)))
    idx = [lay["p_inj"].start + i for i in inj] + [lay["q_inj"].start + i for i in inj]
    for key in ("p_from", "p_to", "q_from", "q_to"):
        idx.extend(lay[key].start + br)
    return tuple(sorted(int(i) for i in idx))


def target_area(case: GridCase, buses, neighbor_injections: bool = True) -> TargetArea:
    t_x = tuple(sorted(set(int(b) for b in buses)))
    return TargetArea(t_x, measurement_support(case, t_x, neighbor_injections))


def is_connected_subset(case: GridCase, buses) -> bool:
    sel = set(buses)
    if not sel:
        return False
    start = next(iter(sel))
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for w in case.neighbors[u]:
            if w in sel and w not in seen:
                seen.add(w)
                stack.append(w)
    return seen == sel


def sample_target_area(case: GridCase, size_range=(1, 1), rng_seed=None, neighbor_injections: bool = True) -> TargetArea:
    """Grow a random connected bus set from a random non-slack seed bus.

    The set grows by repeatedly adding a uniformly chosen frontier bus; the
    target size is uniform over ``size_range``.
    """
    lo, hi = int(size_range[0]), int(size_range[1])
    candidates = [i for i in range(case.n) if i != case.slack]
    if not 1 <= lo <= hi <= len(candidates):
        raise ValueError(f"size_range {size_range} invalid for {case.n} buses (slack excluded)")
    rng = _rng(rng_seed)
    for _ in range(100):
        size = int(rng.integers(lo, hi + 1))
        chosen = [int(rng.choice(candidates))]
        members = set(chosen)
        while len(chosen) < size:
            frontier = sorted({w for u in chosen for w in case.neighbors[u]} - members - {case.slack})
            if not frontier:
                break
            nxt = int(frontier[rng.integers(len(frontier))])
            chosen.append(nxt)
            members.add(nxt)
        if len(chosen) == size:
            return target_area(case, chosen, neighbor_injections)
    raise DataError(f"could not grow a connected target area of size in {size_range}")


def _apply(frame: MeasurementFrame, area: TargetArea, values: np.ndarray) -> MeasurementFrame:
    z = frame.vector()
    z[area.z_index] = values
    return replace(frame.with_vector(z), state=None)


def perturb_state(x: StateVector, buses, v_rel=0.02, theta_deg=2.0, magnitude=1.0, rng_seed=None) -> StateVector:
    rng = _rng(rng_seed)
    idx = np.asarray(buses, int)
    v = x.v.copy()
    th = x.theta.copy()
    v[idx] *= 1.0 + magnitude * v_rel * rng.uniform(-1.0, 1.0, idx.size)
    th[idx] += magnitude * np.deg2rad(theta_deg) * rng.uniform(-1.0, 1.0, idx.size)
    return StateVector(v=v, theta=th)


def attack_stealth(
    case: GridCase,
    frame: MeasurementFrame | None,
    x_hat: StateVector | None,
    area: TargetArea,
    magnitude: float = 1.0,
    rng_seed=None,
    *,
    v_rel: float = 0.02,
    theta_deg: float = 2.0,
    mode: str = "matched",
):
    """State-perturbation stealth attack ``a = h(x_check) - h(x_hat)``.

    ``x_hat`` defaults to ``frame.state``. With ``frame=None`` the base is
    the noiseless ``h(x_hat)``.

    ``mode`` decides how the measurement noise already present in ``t_z``
    is carried over:

    * ``"matched"``: ``h(x_check) + e * sigma(h(x_check)) / sigma(h(x_hat))``
      with ``e = z - h(x_hat)``, so every altered value keeps the noise level
      the relative noise model implies for it
    * ``"additive"``: ``z + a``; residuals stay consistent in value but not
      in scale once ``a`` changes a measurement's magnitude
    * ``"replace"``: noiseless ``h(x_check)``

    Returns
    -------
    (MeasurementFrame, AttackLabel)
    """
    if x_hat is None:
        if frame is None or frame.state is None:
            raise ValueError("x_hat is required when the frame carries no state")
        x_hat = frame.state
    h0 = h_vector(case, x_hat)
    if frame is None:
        frame = MeasurementFrame(
            p_inj=np.zeros(case.n), q_inj=np.zeros(case.n),
            p_flow=np.zeros(2 * len(case.branches)), q_flow=np.zeros(2 * len(case.branches)),
        ).with_vector(h0)
    rng = _rng(rng_seed)
    idx = area.z_index
    for _ in range(MAX_RESAMPLE):
        x_chk = perturb_state(x_hat, area.t_x, v_rel, theta_deg, magnitude, rng)
        try:
            h1 = h_vector(case, x_chk)
        except NumericalError:
            continue
        if np.all(np.isfinite(h1[idx])):
            break
    else:
        raise NumericalError("stealth perturbation produced non-finite measurements")
    z = frame.vector()
    if mode == "matched":
        ratio = measurement_sigma(h1[idx], 1.0) / measurement_sigma(h0[idx], 1.0)
        values = h1[idx] + (z[idx] - h0[idx]) * ratio
    elif mode == "additive":
        values = z[idx] + (h1[idx] - h0[idx])
    elif mode == "replace":
        values = h1[idx]
    else:
        raise ValueError(f"unknown stealth mode {mode!r}")
    return _apply(frame, area, values), AttackLabel.from_area(area, case.n)


def attack_replay(history: Sequence[MeasurementFrame], t: int, tau: int, area: TargetArea):
    """Replace ``t_z`` of frame ``t`` with the values recorded at ``t - tau``."""
    if tau < 0 or t - tau < 0:
        raise DataError(f"replay needs history at index {t - tau}")
    if t >= len(history):
        raise DataError(f"frame index {t} outside history of length {len(history)}")
    cur = history[t]
    old = history[t - tau].vector()
    return _apply(cur, area, old[area.z_index]), AttackLabel.from_area(area, cur.n)


def attack_scale(frame: MeasurementFrame, area: TargetArea, rng_seed=None, low: float = 0.9, high: float = 1.1):
    """Multiply each ``t_z`` measurement by an independent U(low, high) draw."""
    idx = area.z_index
    factors = _rng(rng_seed).uniform(low, high, idx.size)
    return _apply(frame, area, frame.vector()[idx] * factors), AttackLabel.from_area(area, frame.n)


@dataclass(frozen=True, eq=False)
class MeasurementStats:
    mean: np.ndarray
    var: np.ndarray
    count: int

    @classmethod
    def from_frames(cls, frames) -> "MeasurementStats":
        """Welford running mean/variance over a frame sequence."""
        mean = None
        m2 = None
        k = 0
        for fr in frames:
            z = fr.vector()
            k += 1
            if mean is None:
                mean = np.zeros_like(z)
                m2 = np.zeros_like(z)
            d = z - mean
            mean += d / k
            m2 += d * (z - mean)
        if k == 0:
            raise DataError("empty history")
        return cls(mean=mean, var=m2 / k, count=k)


def attack_distribution(frame: MeasurementFrame, area: TargetArea, stats: MeasurementStats, rng_seed=None):
    """Replace each ``t_z`` measurement by a draw from N(mu, sigma^2) of its history."""
    idx = area.z_index
    draw = stats.mean[idx] + np.sqrt(stats.var[idx]) * _rng(rng_seed).standard_normal(idx.size)
    return _apply(frame, area, draw), AttackLabel.from_area(area, frame.n)

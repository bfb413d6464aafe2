"""Load profiles, scenario generation and labeled dataset assembly.

On-disk layout of a dataset directory::

    meta.json            case, seed, standardizer, split indices and kinds
    <split>.bin          node features, see ``write_features``
    <split>.labels       packed label bits, see ``write_labels``
    samples.csv          optional flat export (``export_csv``)

``<split>.bin`` starts with a 32-byte little-endian header
``magic(8) = b"FDIFEAT\\0", version u32, n u32, features u32, pad u32,
count u64`` followed by ``count * n * features`` float64 values in
(sample, node, feature) order. ``<split>.labels`` uses magic
``b"FDILABL\\0"`` with ``n_labels`` in place of ``features`` and stores each
sample's ``n + 1`` bits packed little-bit-first into ``ceil((n+1)/8)`` bytes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .attacks import (
    ATTACK_CODES,
    AttackKind,
    AttackLabel,
    AttackSpec,
    MeasurementStats,
    attack_distribution,
    attack_replay,
    attack_scale,
    attack_stealth,
    sample_target_area,
)
from .exceptions import DataError, NonConvergenceError, NumericalError
from .grid import GridCase
from .powerflow import MeasurementFrame, add_noise, measurement_function, solve_power_flow
from .preprocessing import FeatureStandardizer

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"FDIFEAT\0"
LABEL_MAGIC = b"FDILABL\0"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIQ")

SPLITS = ("train", "validation", "test")
SPLIT_KINDS = {
    "train": (AttackKind.STEALTH, AttackKind.DISTRIBUTION),
    "validation": (AttackKind.STEALTH, AttackKind.DISTRIBUTION),
    "test": (AttackKind.STEALTH, AttackKind.REPLAY, AttackKind.DISTRIBUTION, AttackKind.SCALE),
}
MIN_FRAMES = 48
MAX_SKIP_RATE = 0.01
MAX_GAP_MIN = 60


# -- load profiles ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LoadProfile:
    values: np.ndarray
    resolution_min: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DataError("load profile must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise DataError("load profile values must be finite and positive")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @classmethod
    def constant(cls, length: int, value: float = 1.0) -> "LoadProfile":
        return cls(np.full(length, float(value)))


def daily_shape(minutes: np.ndarray, low: float = 0.7, high: float = 1.15) -> np.ndarray:
    """Double-peak daily curve rescaled to exactly [low, high] over a day."""
    day = np.arange(1440)

    def raw(m):
        x = 2 * np.pi * ((np.asarray(m) - 120.0) % 1440) / 1440.0
        return -np.cos(x) - 0.5 * np.cos(2 * x)

    ref = raw(day)
    lo, hi = ref.min(), ref.max()
    return low + (raw(minutes) - lo) * (high - low) / (hi - lo)


def synth_load_profile(
    days: int,
    rng_seed=None,
    *,
    rho: float = 0.95,
    sigma: float = 0.01,
    low: float = 0.7,
    high: float = 1.15,
) -> LoadProfile:
    """Per-minute load factors: double-peak sinusoid plus AR(1) noise.

    ``sigma`` is the innovation standard deviation; ``sigma=0`` yields the
    exact deterministic curve.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    m = np.arange(days * 1440)
    base = daily_shape(m, low, high)
    if sigma > 0:
        rng = np.random.default_rng(rng_seed)
        eps = rng.standard_normal(m.size) * sigma
        noise = np.empty(m.size)
        acc = 0.0
        for i, e in enumerate(eps):
            acc = rho * acc + e
            noise[i] = acc
        base = base + noise
    return LoadProfile(np.maximum(base, 1e-3))


_TS_FORMATS = ("%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M")


def _parse_time(s: str) -> float:
    s = s.strip().strip('"')
    try:
        return float(s)
    except ValueError:
        pass
    for fmt in _TS_FORMATS:
        try:
            return datetime.strptime(s, fmt).timestamp() / 60.0
        except ValueError:
            continue
    try:
        return datetime.fromisoformat(s).timestamp() / 60.0
    except ValueError:
        raise DataError(f"unrecognized timestamp {s!r}") from None


def ingest_load_csv(text: str, normalize: bool = True) -> LoadProfile:
    """Parse ``timestamp,load`` rows and interpolate linearly to 1 minute.

    Timestamps are minutes (numeric) or date-times. With a header row the
    load column is the one named ``load`` (any case), otherwise the last
    column; rows sharing a timestamp (zonal files) are summed when the
    header also has a ``name`` column. The output covers
    ``[t_first, t_last)`` and is divided by its mean when ``normalize``.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty load file")
    t_col, l_col, zonal = 0, len(rows[0]) - 1, False
    try:
        _parse_time(rows[0][0])
        float(rows[0][l_col])
    except (DataError, ValueError):
        header = [h.strip().strip('"').lower() for h in rows[0]]
        rows = rows[1:]
        if "load" in header:
            l_col = header.index("load")
        zonal = "name" in header
    times, loads = [], []
    for i, r in enumerate(rows, start=2):
        try:
            t = _parse_time(r[t_col])
            v = float(r[l_col])
        except (IndexError, ValueError) as exc:
            raise DataError(f"row {i}: {exc}") from None
        if times and t == times[-1] and zonal:
            loads[-1] += v
            continue
        if times and t <= times[-1]:
            raise DataError(f"row {i}: timestamps are not strictly increasing")
        if times and t - times[-1] > MAX_GAP_MIN:
            raise DataError(f"row {i}: gap of {t - times[-1]:.0f} min exceeds {MAX_GAP_MIN} min")
        times.append(t)
        loads.append(v)
    if len(times) < 2:
        raise DataError("need at least two load samples to interpolate")
    times = np.asarray(times)
    grid = times[0] + np.arange(int(math.floor(times[-1] - times[0])))
    values = np.interp(grid, times, np.asarray(loads))
    if normalize:
        values = values / values.mean()
    return LoadProfile(values)


# -- scenarios --------------------------------------------------------------


def _frame_rng(seed: int, stream: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, int(t)]))


def _solve_one(args):
    case, factor, t, seed, jitter, noise = args
    rng = _frame_rng(seed, 1, t)
    loading = factor * (rng.uniform(1 - jitter, 1 + jitter, case.n) if jitter > 0 else np.ones(case.n))
    try:
        x = solve_power_flow(case, loading, gen_scale=factor)
    except (NonConvergenceError, NumericalError) as exc:
        return t, None, str(exc)
    frame = measurement_function(case, x, timestamp=t)
    if noise > 0:
        frame = add_noise(frame, noise, rng)
    return t, frame, None


def generate_scenarios(
    case: GridCase,
    profile: LoadProfile,
    count: int,
    rng_seed: int = 0,
    *,
    jitter: float = 0.02,
    noise: float = 0.01,
    start: int = 0,
    jobs: int = 1,
    max_skip_rate: float = MAX_SKIP_RATE,
) -> list[MeasurementFrame]:
    """One noisy frame per profile minute ``start .. start + count - 1``.

    Bus loads follow the profile factor times a per-bus U[1-jitter,
    1+jitter] draw; scheduled generation follows the factor. Frames keep
    their true power-flow state. Randomness is keyed on (seed, timestamp),
    so results do not depend on ``jobs``.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if start + count > len(profile):
        raise DataError(f"profile has {len(profile)} values, need {start + count}")
    tasks = [(case, float(profile.values[start + t]), t, rng_seed, jitter, noise) for t in range(count)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_solve_one, tasks, chunksize=64))
    else:
        results = [_solve_one(a) for a in tasks]
    frames, skipped = [], 0
    for t, fr, err in results:
        if fr is None:
            skipped += 1
            log.warning("scenario %d skipped: %s", t, err)
        else:
            frames.append(fr)
    if skipped > max_skip_rate * count:
        raise DataError(f"{skipped} of {count} scenarios failed to solve")
    return frames


# -- assembly ---------------------------------------------------------------


@dataclass(eq=False)
class SplitData:
    x: np.ndarray  # (N, n, 2) standardized
    y: np.ndarray  # (N, n + 1) uint8
    kinds: np.ndarray  # (N,) attack codes
    frame_index: np.ndarray  # (N,) position in the frame sequence
    x_raw: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.y)

    def kind_counts(self) -> dict[str, int]:
        return {k.value: int(np.sum(self.kinds == ATTACK_CODES[k])) for k in AttackKind}


@dataclass(eq=False)
class DatasetSplits:
    train: SplitData
    validation: SplitData
    test: SplitData
    standardizer: FeatureStandardizer
    case_name: str = ""
    seed: int = 0

    def __getitem__(self, name: str) -> SplitData:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    @property
    def n(self) -> int:
        return self.train.x.shape[1]


def split_sizes(total: int) -> dict[str, int]:
    """2/3 : 1/6 : 1/6 split sizes."""
    sixth = total // 6
    return {"train": total - 2 * sixth, "validation": sixth, "test": sixth}


def _even_counts(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (i < rem) for i in range(parts)]


def assemble_dataset(
    case: GridCase,
    frames: list[MeasurementFrame],
    attack_config: AttackSpec | None = None,
    rng_seed: int = 0,
) -> DatasetSplits:
    """Shuffle, split, attack half of each split and standardize on train.

    ``frames`` must be in chronological order (replay attacks look back
    ``tau`` positions).
    """
    spec = attack_config or AttackSpec()
    total = len(frames)
    if total < MIN_FRAMES:
        raise DataError(f"need at least {MIN_FRAMES} frames, got {total}")
    n = case.n
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 2]))
    order = rng.permutation(total)
    sizes = split_sizes(total)
    bounds = np.cumsum([0] + [sizes[s] for s in SPLITS])
    split_idx = {s: np.sort(order[bounds[i] : bounds[i + 1]]) for i, s in enumerate(SPLITS)}

    train_stats = MeasurementStats.from_frames(frames[i] for i in split_idx["train"])
    lo_tau, hi_tau = spec.tau_range
    sizes_rng = spec.sizes(n)

    raw = {}
    for s in SPLITS:
        idx = split_idx[s]
        m = len(idx)
        perm = rng.permutation(m)
        n_att = m // 2
        attacked = perm[:n_att]
        kinds = np.full(m, ATTACK_CODES[AttackKind.NONE], dtype=np.uint8)
        allowed = SPLIT_KINDS[s]
        counts = _even_counts(n_att, len(allowed))
        pool = list(attacked)
        if AttackKind.REPLAY in allowed:
            # replay needs enough history behind the frame
            k = allowed.index(AttackKind.REPLAY)
            eligible = [j for j in pool if idx[j] >= lo_tau]
            if len(eligible) < counts[k]:
                raise DataError("not enough history for the requested replay attacks")
            chosen = set(eligible[: counts[k]])
            kinds[list(chosen)] = ATTACK_CODES[AttackKind.REPLAY]
            pool = [j for j in pool if j not in chosen]
        pos = 0
        for kind, c in zip(allowed, counts):
            if kind is AttackKind.REPLAY:
                continue
            kinds[pool[pos : pos + c]] = ATTACK_CODES[kind]
            pos += c

        xs = np.empty((m, n, 2))
        ys = np.zeros((m, n + 1), dtype=np.uint8)
        for j in range(m):
            t = int(idx[j])
            fr = frames[t]
            kind = list(ATTACK_CODES)[kinds[j]]
            if kind is AttackKind.NONE:
                out, label = fr, AttackLabel.clean(n)
            else:
                area = sample_target_area(case, sizes_rng, rng, spec.neighbor_injections)
                if kind is AttackKind.STEALTH:
                    out, label = attack_stealth(
                        case, fr, fr.state, area, spec.magnitude, rng, v_rel=spec.v_rel, theta_deg=spec.theta_deg
                    )
                elif kind is AttackKind.REPLAY:
                    tau = int(rng.integers(lo_tau, min(hi_tau, t) + 1))
                    out, label = attack_replay(frames, t, tau, area)
                elif kind is AttackKind.DISTRIBUTION:
                    out, label = attack_distribution(fr, area, train_stats, rng)
                else:
                    out, label = attack_scale(fr, area, rng, *spec.scale_range)
            xs[j] = out.features()
            ys[j] = label.vector()
        raw[s] = (xs, ys, kinds, idx)

    stdz = FeatureStandardizer().fit(raw["train"][0])
    parts = {
        s: SplitData(x=stdz.transform(xs), y=ys, kinds=kinds, frame_index=idx.astype(np.int64), x_raw=xs)
        for s, (xs, ys, kinds, idx) in raw.items()
    }
    return DatasetSplits(**parts, standardizer=stdz, case_name=case.name, seed=int(rng_seed))


# -- persistence ------------------------------------------------------------


def write_features(path, x: np.ndarray) -> None:
    x = np.ascontiguousarray(x, dtype="<f8")
    count, n, f = x.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, n, f, 0, count))
        fh.write(x.tobytes())


def _read_header(buf: bytes, magic: bytes, path):
    if len(buf) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    mg, ver, n, f, _, count = _HEADER.unpack_from(buf)
    if mg != magic:
        raise DataError(f"{path}: bad magic {mg!r}")
    if ver != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported version {ver}")
    return n, f, count


def read_features(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    n, f, count = _read_header(buf, FEATURE_MAGIC, path)
    need = _HEADER.size + 8 * count * n * f
    if len(buf) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).reshape(count, n, f).astype(np.float64)


def write_labels(path, y: np.ndarray) -> None:
    y = np.asarray(y, dtype=np.uint8)
    count, nl = y.shape
    packed = np.packbits(y, axis=1, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(LABEL_MAGIC, FORMAT_VERSION, nl, 1, 0, count))
        fh.write(packed.tobytes())


def read_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    nl, _, count = _read_header(buf, LABEL_MAGIC, path)
    width = (nl + 7) // 8
    need = _HEADER.size + width * count
    if len(buf) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(buf)}")
    packed = np.frombuffer(buf, dtype=np.uint8, offset=_HEADER.size).reshape(count, width)
    return np.unpackbits(packed, axis=1, count=nl, bitorder="little")


def save_dataset(splits: DatasetSplits, directory, extra_meta: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "case": splits.case_name,
        "seed": splits.seed,
        "n": splits.n,
        "features": ["p_inj", "q_inj"],
        "standardizer": splits.standardizer.to_dict(),
        "splits": {},
    }
    for s in SPLITS:
        part = splits[s]
        write_features(d / f"{s}.bin", part.x)
        write_labels(d / f"{s}.labels", part.y)
        meta["splits"][s] = {
            "count": len(part),
            "frame_index": part.frame_index.tolist(),
            "kinds": [list(AttackKind)[k].value for k in part.kinds],
            "kind_counts": part.kind_counts(),
        }
    if extra_meta:
        meta.update(extra_meta)
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return d


def load_dataset(directory) -> DatasetSplits:
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{d}: no meta.json") from None
    codes = {k.value: ATTACK_CODES[k] for k in AttackKind}
    parts = {}
    for s in SPLITS:
        m = meta["splits"][s]
        x = read_features(d / f"{s}.bin")
        y = read_labels(d / f"{s}.labels")
        if len(x) != m["count"] or len(y) != m["count"]:
            raise DataError(f"{d}: {s} split size disagrees with meta.json")
        kinds = np.array([codes[k] for k in m["kinds"]], dtype=np.uint8)
        parts[s] = SplitData(x=x, y=y, kinds=kinds, frame_index=np.asarray(m["frame_index"], dtype=np.int64))
    stdz = FeatureStandardizer.from_dict(meta["standardizer"])
    return DatasetSplits(**parts, standardizer=stdz, case_name=meta.get("case", ""), seed=meta.get("seed", 0))


def export_csv(splits: DatasetSplits, path) -> None:
    n = splits.n
    head = ["split", "sample", "frame", "kind"]
    head += [f"{c}_{i}" for i in range(n) for c in ("p", "q")]
    head += [f"y_{i}" for i in range(n)] + ["y_grid"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for s in SPLITS:
            part = splits[s]
            for j in range(len(part)):
                row = [s, j, int(part.frame_index[j]), list(AttackKind)[part.kinds[j]].value]
                row += [repr(float(v)) for v in part.x[j].ravel()]
                row += [int(v) for v in part.y[j]]
                w.writerow(row)


def build_dataset(
    case: GridCase,
    samples: int,
    seed: int,
    *,
    profile: LoadProfile | None = None,
    noise: float = 0.01,
    jitter: float = 0.02,
    attack: AttackSpec | None = None,
    jobs: int = 1,
) -> DatasetSplits:
    """Profile -> scenarios -> assembled splits, all from one seed."""
    if profile is None:
        days = max(1, math.ceil(samples / 1440))
        profile = synth_load_profile(days, np.random.SeedSequence([int(seed), 0]))
    frames = generate_scenarios(case, profile, samples, seed, jitter=jitter, noise=noise, jobs=jobs)
    return assemble_dataset(case, frames, attack, seed)

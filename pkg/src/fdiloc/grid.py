"""Grid case model: MATPOWER-style case parsing, Y-bus assembly and the
graph operators (weighted adjacency, normalized Laplacian family) derived
from it.

Only the ``baseMVA``, ``bus``, ``gen`` and ``branch`` tables of the
MATPOWER text format are read. Columns used::

    bus     bus_i type Pd Qd Gs Bs area Vm Va ...
    gen     bus Pg Qg Qmax Qmin Vg mBase status ...
    branch  fbus tbus r x b rateA rateB rateC ratio angle status ...

Any other ``mpc.<field>`` assignment is skipped with a logged warning.
"""

from __future__ import annotations

import enum
import logging
import math
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import CaseParseError, GridModelError, SingularBranchError, TopologyError

logger = logging.getLogger(__name__)

POWER_ITERATIONS = 200
POWER_RTOL = 1e-6


class BusKind(str, enum.Enum):
    SLACK = "slack"
    PV = "PV"
    PQ = "PQ"


_MATPOWER_TYPES = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
_TYPE_CODES = {v: k for k, v in _MATPOWER_TYPES.items()}


@dataclass(frozen=True)
class Bus:
    """One bus; powers and shunts in per-unit on the case base.

    ``p_gen``/``q_gen`` aggregate in-service generators at the bus. ``vm`` and
    ``va_deg`` are the voltages printed in the case file (a published
    solution for the IEEE cases).
    """

    id: int
    kind: BusKind
    p_load: float = 0.0
    q_load: float = 0.0
    v_set: float = 1.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0
    vm: float = 1.0
    va_deg: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Series branch between internal bus indices ``f`` and ``t`` (0-based)."""

    f: int
    t: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: float = 1.0
    shift_deg: float = 0.0
    status: bool = True


@dataclass(frozen=True)
class GridCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    name: str = "case"

    @property
    def n(self) -> int:
        return len(self.buses)

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    @cached_property
    def pv(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PV], dtype=int)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buses) if b.kind is BusKind.PQ], dtype=int)

    @cached_property
    def index_of(self) -> dict[int, int]:
        """External bus number -> internal 0-based index."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[set[int]] = [set() for _ in self.buses]
        for br in self.branches:
            if br.status and br.f != br.t:
                adj[br.f].add(br.t)
                adj[br.t].add(br.f)
        return tuple(tuple(sorted(a)) for a in adj)

    def array(self, attr: str) -> np.ndarray:
        """Per-bus attribute as a float vector, e.g. ``case.array("p_load")``."""
        return np.array([getattr(b, attr) for b in self.buses], dtype=float)

    @cached_property
    def admittance(self) -> "AdmittanceMatrix":
        return build_ybus(self)


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """Dense nodal admittance ``y`` plus the branch matrices used for flows.

    ``yf @ V`` / ``yt @ V`` give the from-end / to-end branch currents; rows
    of out-of-service branches are zero.
    """

    y: np.ndarray
    yf: np.ndarray
    yt: np.ndarray
    f: np.ndarray
    t: np.ndarray


@dataclass(frozen=True, eq=False)
class GraphTopology:
    w: np.ndarray
    d: np.ndarray
    l: np.ndarray
    l_scaled: np.ndarray
    l_modified: np.ndarray
    lambda_max: float
    weighted: bool = True

    @property
    def n(self) -> int:
        return self.w.shape[0]


# -- parsing ---------------------------------------------------------------

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_KNOWN = {"version", "baseMVA", "bus", "gen", "branch"}


def _strip_comment(line: str) -> str:
    # MATPOWER strings never contain '%' in the tables we read.
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_rows(lines, start, lineno0, name):
    """Parse a ``[ ... ];`` matrix beginning on ``lines[start]``.

    Returns (rows, index of the closing line).
    """
    rows: list[tuple[int, list[float]]] = []
    buf = ""
    i = start
    first = True
    while i < len(lines):
        text = _strip_comment(lines[i])
        if first:
            text = text.split("[", 1)[1]
            first = False
        closing = "]" in text
        if closing:
            text = text.split("]", 1)[0]
        for chunk in re.split(r"[;\n]", text):
            buf = chunk.strip()
            if not buf:
                continue
            try:
                vals = [float(tok) for tok in re.split(r"[\s,]+", buf) if tok]
            except ValueError:
                raise CaseParseError(f"non-numeric entry in mpc.{name}: {buf!r}", lineno0 + i) from None
            rows.append((lineno0 + i, vals))
        if closing:
            return rows, i
        i += 1
    raise CaseParseError(f"unterminated matrix mpc.{name}", lineno0 + start)


def _to_pu(value: float, base: float) -> float:
    return value / base


def _from_pu(value: float, base: float) -> float:
    """Inverse of :func:`_to_pu` that survives the round trip exactly."""
    y = value * base
    if y / base == value:
        return y
    lo = hi = y
    for _ in range(8):
        lo = math.nextafter(lo, -math.inf)
        hi = math.nextafter(hi, math.inf)
        for cand in (lo, hi):
            if cand / base == value:
                return cand
    return y


def parse_case(text: str, name: str | None = None) -> GridCase:
    """Parse MATPOWER case text into a validated :class:`GridCase`.

    Raises
    ------
    CaseParseError
        Malformed or missing table (with the offending line number).
    GridModelError
        Zero or several slack buses, dangling branch endpoints, duplicate ids.
    TopologyError
        The in-service branch graph is not connected.
    """
    lines = text.splitlines()
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    base_mva = None
    i = 0
    m = re.search(r"function\s+\w+\s*=\s*(\w+)", text)
    if name is None:
        name = m.group(1) if m else "case"
    while i < len(lines):
        raw = _strip_comment(lines[i])
        mm = _ASSIGN.match(raw)
        if not mm:
            i += 1
            continue
        key, rhs = mm.group(1), mm.group(2).strip()
        if key not in _KNOWN:
            logger.warning("ignoring unsupported field mpc.%s (line %d)", key, i + 1)
            if "[" in rhs or "{" in rhs:
                opener, closer = ("[", "]") if "[" in rhs else ("{", "}")
                while closer not in _strip_comment(lines[i]):
                    i += 1
                    if i >= len(lines):
                        raise CaseParseError(f"unterminated mpc.{key}", i)
            i += 1
            continue
        if key == "baseMVA":
            try:
                base_mva = float(rhs.rstrip(";").strip())
            except ValueError:
                raise CaseParseError(f"bad baseMVA value {rhs!r}", i + 1) from None
            i += 1
        elif key == "version":
            i += 1
        else:
            if "[" not in rhs:
                raise CaseParseError(f"expected '[' after mpc.{key} =", i + 1)
            rows, end = _parse_rows(lines, i, 1, key)
            tables[key] = rows
            i = end + 1

    if base_mva is None or base_mva <= 0:
        raise CaseParseError("missing or non-positive mpc.baseMVA")
    for key, width in (("bus", 13), ("gen", 8), ("branch", 11)):
        if key not in tables:
            raise CaseParseError(f"missing table mpc.{key}")
        for lineno, row in tables[key]:
            if len(row) < width:
                raise CaseParseError(f"mpc.{key} row has {len(row)} columns, need >= {width}", lineno)
    return _build_case(base_mva, tables, name)


def _build_case(base, tables, name) -> GridCase:
    bus_rows = tables["bus"]
    ids = [int(r[0]) for _, r in bus_rows]
    if len(set(ids)) != len(ids):
        raise GridModelError("duplicate bus identifiers")
    index = {bid: k for k, bid in enumerate(ids)}

    p_gen = np.zeros(len(ids))
    q_gen = np.zeros(len(ids))
    v_gen: dict[int, float] = {}
    for lineno, r in tables["gen"]:
        bid = int(r[0])
        if bid not in index:
            raise GridModelError(f"generator at line {lineno} references unknown bus {bid}")
        if r[7] <= 0:
            continue
        k = index[bid]
        p_gen[k] += r[1]
        q_gen[k] += r[2]
        v_gen.setdefault(k, r[5])

    buses = []
    for k, (lineno, r) in enumerate(bus_rows):
        code = int(r[1])
        if code == 4:
            raise GridModelError(f"isolated bus {ids[k]} (type 4) is not supported")
        if code not in _MATPOWER_TYPES:
            raise CaseParseError(f"unknown bus type {code}", lineno)
        kind = _MATPOWER_TYPES[code]
        if kind is BusKind.PV and k not in v_gen:
            logger.warning("PV bus %d has no in-service generator; treating as PQ", ids[k])
            kind = BusKind.PQ
        v_set = v_gen.get(k, r[7]) if kind is not BusKind.PQ else r[7]
        if kind is not BusKind.PQ and v_set <= 0:
            raise GridModelError(f"non-positive voltage set point at bus {ids[k]}")
        buses.append(
            Bus(
                id=ids[k],
                kind=kind,
                p_load=_to_pu(r[2], base),
                q_load=_to_pu(r[3], base),
                v_set=float(v_set),
                shunt_g=_to_pu(r[4], base),
                shunt_b=_to_pu(r[5], base),
                p_gen=_to_pu(p_gen[k], base),
                q_gen=_to_pu(q_gen[k], base),
                vm=float(r[7]),
                va_deg=float(r[8]),
            )
        )
    n_slack = sum(b.kind is BusKind.SLACK for b in buses)
    if n_slack != 1:
        raise GridModelError(f"expected exactly one slack bus, found {n_slack}")

    branches = []
    for lineno, r in tables["branch"]:
        fb, tb = int(r[0]), int(r[1])
        for bid in (fb, tb):
            if bid not in index:
                raise GridModelError(f"branch at line {lineno} references unknown bus {bid}")
        tap = r[8] if r[8] != 0 else 1.0
        if tap <= 0:
            raise GridModelError(f"non-positive tap ratio at line {lineno}")
        branches.append(
            Branch(
                f=index[fb],
                t=index[tb],
                r=float(r[2]),
                x=float(r[3]),
                b_charging=float(r[4]),
                tap=float(tap),
                shift_deg=float(r[9]),
                status=bool(r[10]),
            )
        )
    case = GridCase(base_mva=float(base), buses=tuple(buses), branches=tuple(branches), name=name)
    _check_connected(case)
    return case


def _check_connected(case: GridCase) -> None:
    seen = {0}
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for j in case.neighbors[k]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    if len(seen) != case.n:
        missing = sorted(case.buses[k].id for k in set(range(case.n)) - seen)
        raise TopologyError(f"network is not connected; unreachable buses {missing[:10]}")


def load_case(path_or_name: str | Path) -> GridCase:
    """Load a case file, or a bundled case by name (``"case14"``, ``"case57"``)."""
    p = Path(path_or_name)
    if p.exists():
        return parse_case(p.read_text(), name=p.stem)
    name = str(path_or_name)
    res = resources.files("fdiloc") / "cases" / f"{name}.m"
    if res.is_file():
        return parse_case(res.read_text(), name=name)
    raise FileNotFoundError(f"no such case file or bundled case: {path_or_name}")


def format_case(case: GridCase) -> str:
    """Serialize to MATPOWER text readable by :func:`parse_case`."""
    base = case.base_mva
    fmt = repr
    out = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {fmt(base)};", "", "mpc.bus = ["]
    for b in case.buses:
        row = [
            b.id, _TYPE_CODES[b.kind], _from_pu(b.p_load, base), _from_pu(b.q_load, base),
            _from_pu(b.shunt_g, base), _from_pu(b.shunt_b, base), 1, b.vm, b.va_deg, 0, 1, 1.1, 0.9,
        ]
        out.append("\t" + "\t".join(fmt(float(v)) if isinstance(v, float) else str(v) for v in row) + ";")
    out += ["];", "", "mpc.gen = ["]
    for b in case.buses:
        if b.kind is BusKind.PQ and b.p_gen == 0 and b.q_gen == 0:
            continue
        # PQ-bus generators are fixed injections; Vg is irrelevant there.
        vg = b.v_set if b.kind is not BusKind.PQ else 1.0
        row = [b.id, _from_pu(b.p_gen, base), _from_pu(b.q_gen, base), 0.0, 0.0, vg, base, 1, 0.0, 0.0]
        out.append("\t" + "\t".join(fmt(float(v)) if isinstance(v, float) else str(v) for v in row) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in case.branches:
        ratio = 0.0 if br.tap == 1.0 else br.tap
        row = [
            case.buses[br.f].id, case.buses[br.t].id, br.r, br.x, br.b_charging,
            0.0, 0.0, 0.0, ratio, br.shift_deg, int(br.status), -360.0, 360.0,
        ]
        out.append("\t" + "\t".join(fmt(float(v)) if isinstance(v, float) else str(v) for v in row) + ";")
    out += ["];", ""]
    return "\n".join(out)


# -- admittance and graph operators ----------------------------------------


def build_ybus(case: GridCase) -> AdmittanceMatrix:
    """Assemble the nodal admittance matrix (MATPOWER conventions).

    Branch series admittance ``1/(r + jx)``, half the line charging at each
    end, and the off-nominal tap (with optional phase shift) on the from side.
    Bus shunts enter the diagonal.
    """
    n, nb = case.n, len(case.branches)
    f = np.array([br.f for br in case.branches], dtype=int)
    t = np.array([br.t for br in case.branches], dtype=int)
    yff = np.zeros(nb, complex)
    yft = np.zeros(nb, complex)
    ytf = np.zeros(nb, complex)
    ytt = np.zeros(nb, complex)
    for k, br in enumerate(case.branches):
        if not br.status:
            continue
        if br.r == 0 and br.x == 0:
            raise SingularBranchError(
                f"branch {case.buses[br.f].id}-{case.buses[br.t].id} has r = x = 0"
            )
        ys = 1.0 / complex(br.r, br.x)
        tap = br.tap * np.exp(1j * np.deg2rad(br.shift_deg))
        half_b = 1j * br.b_charging / 2
        ytt[k] = ys + half_b
        yff[k] = ytt[k] / (tap * np.conj(tap))
        yft[k] = -ys / np.conj(tap)
        ytf[k] = -ys / tap
    rows = np.arange(nb)
    yf = np.zeros((nb, n), complex)
    yt = np.zeros((nb, n), complex)
    yf[rows, f] = yff
    yf[rows, t] += yft
    yt[rows, f] = ytf
    yt[rows, t] += ytt
    y = np.zeros((n, n), complex)
    np.add.at(y, (f, slice(None)), yf)
    np.add.at(y, (t, slice(None)), yt)
    y[np.diag_indices(n)] += case.array("shunt_g") + 1j * case.array("shunt_b")
    return AdmittanceMatrix(y=y, yf=yf, yt=yt, f=f, t=t)


def power_iteration(a: np.ndarray, max_iter: int = POWER_ITERATIONS, rtol: float = POWER_RTOL, seed: int = 0) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix by the power method.

    The estimate is the Rayleigh quotient of the current iterate; iteration
    stops once it changes by less than ``rtol`` (relative).
    """
    v = np.random.default_rng(seed).standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    est = float(v @ a @ v)
    for _ in range(max_iter):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        new = float(v @ a @ v)
        if abs(new - est) <= rtol * abs(new):
            return new
        est = new
    return est


def build_topology(ybus: AdmittanceMatrix | np.ndarray, weighted: bool = True) -> GraphTopology:
    """Derive ``W = |Y_bus|`` (zero diagonal) and the Laplacian family.

    ``l`` is the normalized Laplacian ``I - D^-1/2 W D^-1/2``, ``l_scaled``
    the Chebyshev argument ``2 L / lambda_max - I`` and ``l_modified`` the
    ARMA propagation operator ``I - L``. With ``weighted=False`` the
    adjacency is binarized.
    """
    y = ybus.y if isinstance(ybus, AdmittanceMatrix) else np.asarray(ybus)
    w = np.abs(y).astype(float)
    np.fill_diagonal(w, 0.0)
    w = 0.5 * (w + w.T)
    if not weighted:
        w = (w > 0).astype(float)
    d = w.sum(axis=1)
    if np.any(d <= 0):
        raise TopologyError(f"isolated node(s) {np.flatnonzero(d <= 0).tolist()}")
    inv_sqrt = 1.0 / np.sqrt(d)
    n = w.shape[0]
    eye = np.eye(n)
    lap = eye - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    lam_max = power_iteration(lap)
    return GraphTopology(
        w=w,
        d=d,
        l=lap,
        l_scaled=2.0 * lap / lam_max - eye,
        l_modified=eye - lap,
        lambda_max=lam_max,
        weighted=weighted,
    )


def case_topology(case: GridCase, weighted: bool = True) -> GraphTopology:
    return build_topology(case.admittance, weighted=weighted)


# -- JSON views --------------------------------------------------------------


def case_to_dict(case: GridCase) -> dict:
    """``case.json`` payload: per-unit bus and branch tables."""
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "n_buses": case.n,
        "n_branches": len(case.branches),
        "slack": case.buses[case.slack].id,
        "buses": [
            {
                "id": b.id, "kind": b.kind.value, "p_load": b.p_load, "q_load": b.q_load,
                "p_gen": b.p_gen, "q_gen": b.q_gen, "v_set": b.v_set,
                "shunt_g": b.shunt_g, "shunt_b": b.shunt_b,
            }
            for b in case.buses
        ],
        "branches": [
            {
                "from": case.buses[br.f].id, "to": case.buses[br.t].id, "r": br.r, "x": br.x,
                "b_charging": br.b_charging, "tap": br.tap, "shift_deg": br.shift_deg,
                "status": br.status,
            }
            for br in case.branches
        ],
    }


def topology_to_dict(topo: GraphTopology, case: GridCase | None = None) -> dict:
    """``topology.json`` payload: dense matrices as nested lists."""
    out = {
        "n": topo.n,
        "weighted": topo.weighted,
        "lambda_max": topo.lambda_max,
        "degree": topo.d.tolist(),
        "w": topo.w.tolist(),
        "l": topo.l.tolist(),
        "l_scaled": topo.l_scaled.tolist(),
        "l_modified": topo.l_modified.tolist(),
    }
    if case is not None:
        out["bus_ids"] = [b.id for b in case.buses]
    return out

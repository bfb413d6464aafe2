import numpy as np
import pytest

from fdiloc.grid import load_case, parse_case


def case_text(buses, branches, gens=(), base=100.0, name="tiny"):
    """MATPOWER text from short rows.

    buses: (id, type, Pd, Qd, Gs, Bs, Vm); gens: (bus, Pg, Qg, Vg);
    branches: (f, t, r, x, b[, ratio, angle, status]).
    """
    lines = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {base};", "mpc.bus = ["]
    for bid, typ, pd, qd, gs, bs, vm in buses:
        lines.append(f"  {bid} {typ} {pd} {qd} {gs} {bs} 1 {vm} 0 135 1 1.1 0.9;")
    lines += ["];", "mpc.gen = ["]
    for bus, pg, qg, vg in gens:
        lines.append(f"  {bus} {pg} {qg} 100 -100 {vg} 100 1 200 0;")
    lines += ["];", "mpc.branch = ["]
    for row in branches:
        f, t, r, x, b, *rest = row
        ratio, angle, status = (list(rest) + [0, 0, 1][len(rest):])[:3]
        lines.append(f"  {f} {t} {r} {x} {b} 0 0 0 {ratio} {angle} {status} -360 360;")
    lines += ["];", ""]
    return "\n".join(lines)


TWO_BUS = case_text(
    buses=[(1, 3, 0, 0, 0, 0, 1.0), (2, 1, 10.0, 0, 0, 0, 1.0)],
    gens=[(1, 0, 0, 1.0)],
    branches=[(1, 2, 0.0, 0.1, 0.0)],
    name="two_bus",
)


@pytest.fixture(scope="session")
def two_bus():
    return parse_case(TWO_BUS)


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case57():
    return load_case("case57")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_splits(case14):
    from fdiloc.dataset import build_dataset

    return build_dataset(case14, 288, seed=5)

import numpy as np
import pytest

from fdiloc.exceptions import CaseParseError, GridModelError, SingularBranchError, TopologyError
from fdiloc.grid import (
    BusKind,
    build_topology,
    build_ybus,
    case_topology,
    format_case,
    parse_case,
    power_iteration,
)

from conftest import TWO_BUS, case_text


def naive_ybus(case):
    """Element-by-element assembly, written independently of build_ybus."""
    n = case.n
    y = np.zeros((n, n), complex)
    for br in case.branches:
        if not br.status:
            continue
        z = complex(br.r, br.x)
        ys = 1 / z
        a = br.tap * complex(np.cos(np.radians(br.shift_deg)), np.sin(np.radians(br.shift_deg)))
        bc = 1j * br.b_charging / 2
        i, k = br.f, br.t
        y[i, i] += (ys + bc) / abs(a) ** 2
        y[k, k] += ys + bc
        y[i, k] += -ys / a.conjugate()
        y[k, i] += -ys / a
    for i, b in enumerate(case.buses):
        y[i, i] += complex(b.shunt_g, b.shunt_b)
    return y


class TestParse:
    def test_two_bus(self, two_bus):
        assert two_bus.n == 2
        assert len(two_bus.branches) == 1
        assert two_bus.buses[0].kind is BusKind.SLACK
        assert two_bus.buses[1].p_load == pytest.approx(0.1)

    def test_ieee14_counts(self, case14):
        assert case14.n == 14
        assert len(case14.branches) == 20
        assert case14.slack == 0

    def test_ieee57_counts(self, case57):
        assert (case57.n, len(case57.branches)) == (57, 80)

    def test_per_unit(self, case14):
        # bus 3 carries 94.2 MW on a 100 MVA base
        assert case14.buses[2].p_load == pytest.approx(0.942)
        assert case14.buses[8].shunt_b == pytest.approx(0.19)

    def test_unknown_bus(self):
        text = case_text(
            buses=[(1, 3, 0, 0, 0, 0, 1.0), (2, 1, 10, 0, 0, 0, 1.0)],
            gens=[(1, 0, 0, 1.0)],
            branches=[(1, 2, 0, 0.1, 0), (2, 99, 0, 0.1, 0)],
        )
        with pytest.raises(GridModelError, match="99"):
            parse_case(text)

    def test_two_slacks(self):
        text = case_text(
            buses=[(1, 3, 0, 0, 0, 0, 1.0), (2, 3, 10, 0, 0, 0, 1.0)],
            gens=[(1, 0, 0, 1.0), (2, 0, 0, 1.0)],
            branches=[(1, 2, 0, 0.1, 0)],
        )
        with pytest.raises(GridModelError, match="slack"):
            parse_case(text)

    def test_no_slack(self):
        text = TWO_BUS.replace("  1 3 ", "  1 1 ")
        with pytest.raises(GridModelError):
            parse_case(text)

    def test_disconnected(self):
        text = case_text(
            buses=[(1, 3, 0, 0, 0, 0, 1.0), (2, 1, 10, 0, 0, 0, 1.0), (3, 1, 5, 0, 0, 0, 1.0)],
            gens=[(1, 0, 0, 1.0)],
            branches=[(1, 2, 0, 0.1, 0)],
        )
        with pytest.raises(TopologyError):
            parse_case(text)

    def test_out_of_service_branch_disconnects(self):
        text = case_text(
            buses=[(1, 3, 0, 0, 0, 0, 1.0), (2, 1, 10, 0, 0, 0, 1.0)],
            gens=[(1, 0, 0, 1.0)],
            branches=[(1, 2, 0, 0.1, 0, 0, 0, 0)],
        )
        with pytest.raises(TopologyError):
            parse_case(text)

    def test_malformed_line_number(self):
        lines = TWO_BUS.splitlines()
        bad = next(i for i, l in enumerate(lines) if l.strip().startswith("2 1 "))
        lines[bad] = "  2 1 10 zero 0 0 1 1.0 0 135 1 1.1 0.9;"
        with pytest.raises(CaseParseError) as info:
            parse_case("\n".join(lines))
        assert info.value.line == bad + 1

    def test_missing_table(self):
        text = TWO_BUS.split("mpc.branch")[0]
        with pytest.raises(CaseParseError):
            parse_case(text)

    def test_round_trip(self, case14, case57, two_bus):
        for case in (case14, case57, two_bus):
            again = parse_case(format_case(case), name=case.name)
            assert again == case


class TestYbus:
    def test_single_branch(self, two_bus):
        y = build_ybus(two_bus).y
        assert y[0, 1] == pytest.approx(10j)
        assert y[0, 0] == pytest.approx(-10j)

    def test_charging(self):
        text = case_text(
            buses=[(1, 3, 0, 0, 0, 0, 1.0), (2, 1, 10, 0, 0, 0, 1.0)],
            gens=[(1, 0, 0, 1.0)],
            branches=[(1, 2, 0, 0.1, 0.02)],
        )
        y = build_ybus(parse_case(text)).y
        assert y[0, 0] == pytest.approx(-10j + 0.01j)
        assert y[1, 1] == pytest.approx(-10j + 0.01j)

    def test_zero_impedance(self):
        text = TWO_BUS.replace("1 2 0.0 0.1", "1 2 0.0 0.0")
        case = parse_case(text)
        with pytest.raises(SingularBranchError):
            build_ybus(case)

    @pytest.mark.parametrize("name", ["case14", "case57"])
    def test_against_naive_assembly(self, name, request):
        case = request.getfixturevalue(name)
        np.testing.assert_allclose(build_ybus(case).y, naive_ybus(case), rtol=0, atol=1e-10)

    def test_symmetric_without_taps(self, two_bus):
        y = build_ybus(two_bus).y
        np.testing.assert_array_equal(y, y.T)

    def test_phase_shifter_breaks_symmetry(self):
        text = case_text(
            buses=[(1, 3, 0, 0, 0, 0, 1.0), (2, 1, 10, 0, 0, 0, 1.0)],
            gens=[(1, 0, 0, 1.0)],
            branches=[(1, 2, 0.01, 0.1, 0, 0.98, 5.0, 1)],
        )
        case = parse_case(text)
        y = build_ybus(case).y
        assert abs(y[0, 1] - y[1, 0]) > 1e-3
        np.testing.assert_allclose(y, naive_ybus(case), atol=1e-12)


class TestTopology:
    def test_two_node(self):
        top = build_topology(np.array([[0, 1], [1, 0]], float))
        np.testing.assert_allclose(top.l, [[1, -1], [-1, 1]], atol=1e-15)
        np.testing.assert_allclose(np.linalg.eigvalsh(top.l), [0, 2], atol=1e-12)

    def test_path_spectrum(self):
        w = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)
        top = build_topology(w)
        np.testing.assert_allclose(np.linalg.eigvalsh(top.l), [0, 1, 2], atol=1e-12)
        assert top.lambda_max == pytest.approx(2.0, rel=1e-4)

    @pytest.mark.parametrize("name", ["case14", "case57"])
    def test_invariants(self, name, request):
        case = request.getfixturevalue(name)
        top = case_topology(case)
        assert np.all(top.w >= 0)
        np.testing.assert_array_equal(np.diag(top.w), 0)
        np.testing.assert_array_equal(top.w, top.w.T)
        np.testing.assert_array_equal(top.w.sum(axis=1), top.d)
        assert np.abs(top.l - top.l.T).max() <= 1e-12
        np.testing.assert_array_equal(top.l_modified + top.l, np.eye(case.n))
        lam = np.linalg.eigvalsh(top.l)
        assert lam.min() >= -1e-9 and lam.max() <= 2 + 1e-9
        # power iteration within 1% of the exact value
        assert abs(top.lambda_max - lam.max()) <= 0.01 * lam.max()
        np.testing.assert_allclose(top.l_scaled, 2 * top.l / top.lambda_max - np.eye(case.n))

    def test_weights_are_admittance_magnitudes(self, case14):
        top = case_topology(case14)
        y = build_ybus(case14).y
        i, j = case14.branches[0].f, case14.branches[0].t
        assert top.w[i, j] == pytest.approx(abs(y[i, j]))

    def test_binary_adjacency(self, case14):
        top = case_topology(case14, weighted=False)
        assert set(np.unique(top.w)) == {0.0, 1.0}

    def test_isolated_node(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 1
        with pytest.raises(TopologyError):
            build_topology(w)

    def test_power_iteration(self, rng):
        a = rng.standard_normal((8, 8))
        a = a @ a.T
        assert power_iteration(a, max_iter=2000, rtol=1e-10) == pytest.approx(np.linalg.eigvalsh(a).max(), rel=1e-6)

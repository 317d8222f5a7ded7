import json
import re
import warnings
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_network
from opfkit.network import (Bus, CaseSemanticError, CaseSyntaxError, Line, Network,
                            build_admittance, format_case, incidence_and_branch_susceptance,
                            load_case, network_from_json, network_to_json, parse_case)
from opfkit.powerflow import dc_bus_matrix

TWO_BUS = """
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0   0 0 0 1 1 0 0 1 1.06 0.94;
  2 1 100 0 0 0 1 1 0 0 1 1.06 0.94;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 0 0 0 0 0 1;
];
mpc.gencost = [
  2 0 0 3 0.01 10 0;
];
"""


def _table_rows(text, name):
    """Count data rows of an ``mpc.<name>`` table straight from the text."""
    body = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\]", text, re.S).group(1)
    rows = [r for r in body.split(";") if r.strip() and not r.strip().startswith("%")]
    return len(rows)


def test_two_bus_case_parses():
    net = parse_case(TWO_BUS)
    assert net.n_bus == 2 and net.n_line == 1
    assert net.buses[1].p_demand == pytest.approx(1.0)
    assert net.buses[0].is_slack and not net.buses[1].is_slack


def test_bundled_case14_counts(case14):
    text = (resources.files("opfkit.data") / "case14.m").read_text()
    assert case14.n_bus == 14
    assert case14.n_line == _table_rows(text, "branch") == 20
    assert case14.n_gen == _table_rows(text, "gen") == 5


def test_dangling_line_is_rejected():
    bad = TWO_BUS.replace("1 2 0.01 0.1", "1 99 0.01 0.1")
    with pytest.raises(CaseSemanticError, match="dangling endpoint"):
        parse_case(bad)


@pytest.mark.parametrize("edit, message", [
    (("1 3 0   0 0 0", "1 3 0   0 5 0"), "shunt"),
    (("0.1 0 0 0 0 0 0 1", "0.1 0.02 0 0 0 0 0 1"), "line charging"),
    (("0.1 0 0 0 0 0 0 1", "0.1 0 0 0 0 0.95 0 1"), "tap"),
])
def test_unsupported_elements_are_rejected(edit, message):
    with pytest.raises(CaseSemanticError, match=message):
        parse_case(TWO_BUS.replace(*edit))


def test_syntax_error_reports_position():
    with pytest.raises(CaseSyntaxError):
        parse_case(TWO_BUS.replace("0.01 0.1 0 0", "0.01 0.1 @ 0"))


def test_single_line_admittance():
    line = Line(0, 1, 0.02, 0.1)
    net = Network((Bus(1, is_slack=True), Bus(2)), (), (line,))
    y = build_admittance(net)
    g, b = line.g, line.b
    np.testing.assert_allclose(y.g_matrix, [[g, -g], [-g, g]], rtol=0, atol=1e-15)
    np.testing.assert_allclose(y.b_matrix, [[b, -b], [-b, b]], rtol=0, atol=1e-15)


def test_no_lines_gives_zero_matrix():
    net = Network((Bus(1, is_slack=True),))
    y = build_admittance(net)
    assert not np.any(y.g_matrix) and not np.any(y.b_matrix)


def test_case5_admittance_matches_line_summation(case5):
    y = build_admittance(case5).complex
    oracle = np.zeros((5, 5), dtype=complex)
    for ln in case5.lines:
        ys = 1.0 / complex(ln.r, ln.x)
        for i, j in ((ln.from_bus, ln.to_bus), (ln.to_bus, ln.from_bus)):
            oracle[i, i] += ys
            oracle[i, j] -= ys
    np.testing.assert_allclose(y, oracle, rtol=1e-14, atol=1e-12)


def test_single_line_incidence():
    net = Network((Bus(1, is_slack=True), Bus(2)), (), (Line(0, 1, 0.0, 0.1),))
    a, b_br = incidence_and_branch_susceptance(net)
    np.testing.assert_array_equal(a, [[1.0, -1.0]])
    np.testing.assert_allclose(b_br, [[-10.0]])


def test_incidence_rows_sum_to_zero(case14):
    a, _ = incidence_and_branch_susceptance(case14)
    np.testing.assert_array_equal(a @ np.ones(14), np.zeros(case14.n_line))


def test_case14_dc_flows_match_line_formula(case14, rng):
    theta = rng.normal(scale=0.1, size=14)
    a, b_br = incidence_and_branch_susceptance(case14)
    flows = -b_br @ a @ theta
    oracle = [-ln.b * (theta[ln.from_bus] - theta[ln.to_bus]) for ln in case14.lines]
    np.testing.assert_allclose(flows, oracle, rtol=1e-13)


def test_admittance_is_symmetric_and_add_remove_restores(case14):
    y0 = build_admittance(case14)
    np.testing.assert_array_equal(y0.g_matrix, y0.g_matrix.T)
    np.testing.assert_array_equal(y0.b_matrix, y0.b_matrix.T)
    extra = case14.replace(lines=case14.lines + (Line(0, 13, 0.01, 0.07),))
    assert not np.array_equal(build_admittance(extra).b_matrix, y0.b_matrix)
    back = extra.replace(lines=extra.lines[:-1])
    np.testing.assert_array_equal(build_admittance(back).g_matrix, y0.g_matrix)
    np.testing.assert_array_equal(build_admittance(back).b_matrix, y0.b_matrix)


def test_reduced_dc_matrix_is_invertible(case5, case14):
    for net in (case5, case14):
        b = dc_bus_matrix(net)
        keep = np.delete(np.arange(net.n_bus), net.slack)
        assert np.linalg.cond(b[np.ix_(keep, keep)]) < 1e6


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 12))
def test_format_parse_round_trip(seed, n):
    net = random_network(np.random.default_rng(seed), n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        back = parse_case(format_case(net))
    assert back == net


def test_json_round_trip(case14):
    text = network_to_json(case14)
    assert json.loads(text)["schema"] == "opfkit.network/1"
    assert network_from_json(text) == case14


def test_bundled_names_resolve():
    assert load_case("case5").n_bus == 5
    with pytest.raises(FileNotFoundError, match="case file not found"):
        load_case("no_such_case")


def test_disconnected_network_is_rejected():
    with pytest.raises(CaseSemanticError, match="not connected"):
        Network((Bus(1, is_slack=True), Bus(2), Bus(3)), (), (Line(0, 1, 0.0, 0.1),))

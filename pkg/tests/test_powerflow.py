import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fixed_voltage_angles, random_network
from opfkit.cli import proportional_dispatch
from opfkit.network import (AdmittanceMatrix, Bus, Generator, Line, Network, build_admittance,
                            incidence_and_branch_susceptance)
from opfkit.powerflow import (ControlInput, DcState, Disturbance, PowerFlowError, SystemState,
                              ac_jacobian, ac_residual, dc_bus_matrix, line_flows_ac,
                              line_flows_dc, solve_ac_pf, solve_dc_pf)


def _two_bus(x=0.1, r=0.0, p_dem=0.0):
    return Network((Bus(1, is_slack=True), Bus(2, p_dem)),
                   (Generator(0, 0.0, 5.0, -5.0, 5.0),), (Line(0, 1, r, x),))


def _fd_jacobian(fun, z, h=1e-6):
    cols = []
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h * max(1.0, abs(z[k]))
        cols.append((fun(z + e) - fun(z - e)) / (2 * e[k]))
    return np.column_stack(cols)


def _random_point(rng, net):
    n, ng = net.n_bus, net.n_gen
    x = SystemState(rng.uniform(0.9, 1.1, n), np.r_[0.0, rng.uniform(-0.5, 0.5, n - 1)])
    u = ControlInput(rng.uniform(0, 2, ng), rng.uniform(-1, 1, ng))
    d = Disturbance(rng.uniform(0, 1, n), rng.uniform(-0.3, 0.3, n))
    return x, u, d


# -- residual ---------------------------------------------------------------

def test_isolated_bus_flat_state_has_zero_residual():
    net = Network((Bus(1, is_slack=True),))
    r = ac_residual(SystemState.flat(1), ControlInput.zeros(0), Disturbance.from_network(net),
                    build_admittance(net))
    np.testing.assert_array_equal(r, [0.0, 0.0])


def test_two_bus_flat_start_has_zero_residual():
    net = Network((Bus(1, is_slack=True), Bus(2)), (), (Line(0, 1, 0.0, 0.1),))
    r = ac_residual(SystemState.flat(2), ControlInput.zeros(0), Disturbance.from_network(net),
                    build_admittance(net))
    np.testing.assert_allclose(r, 0.0, atol=1e-15)


def test_case14_newton_solution_residual(case14):
    res = solve_ac_pf(case14, proportional_dispatch(case14), Disturbance.from_network(case14),
                      full_output=True)
    r = ac_residual(res.x, res.u, Disturbance.from_network(case14), build_admittance(case14),
                    case14.gen_bus)
    assert np.max(np.abs(r)) < 1e-8
    assert res.iterations <= 10
    assert res.x.theta[case14.slack] == 0.0


def test_residual_dimension_mismatch(case5):
    with pytest.raises(ValueError, match="dimension mismatch"):
        ac_residual(SystemState.flat(4), ControlInput.zeros(case5.n_gen),
                    Disturbance.from_network(case5), build_admittance(case5), case5.gen_bus)


def test_phase_shift_invariance(case14, rng):
    x, u, d = _random_point(rng, case14)
    y = build_admittance(case14)
    shifted = SystemState(x.v, x.theta + 0.7)
    np.testing.assert_allclose(ac_residual(shifted, u, d, y, case14.gen_bus),
                               ac_residual(x, u, d, y, case14.gen_bus), atol=1e-12)


# -- Jacobian ---------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 10))
def test_jacobian_matches_finite_differences(seed, n):
    rng = np.random.default_rng(seed)
    net = random_network(rng, n)
    y = build_admittance(net)
    x, u, d = _random_point(rng, net)
    nb, ng = net.n_bus, net.n_gen

    def fun(z):
        return ac_residual(SystemState(z[:nb], z[nb:2 * nb]),
                           ControlInput(z[2 * nb:2 * nb + ng], z[2 * nb + ng:]), d, y, net.gen_bus)

    z = np.concatenate([x.v, x.theta, u.p_gen, u.q_gen])
    jac = ac_jacobian(x, u, d, y, net.gen_bus)
    fd = _fd_jacobian(fun, z)
    assert np.max(np.abs(jac - fd)) <= 1e-6 * max(1.0, np.max(np.abs(jac)))


def test_generator_block_is_identity_pattern(case5, rng):
    x, u, d = _random_point(rng, case5)
    jac = ac_jacobian(x, u, d, build_admittance(case5), case5.gen_bus)
    n, ng = case5.n_bus, case5.n_gen
    expected = np.zeros((n, ng))
    expected[case5.gen_bus, np.arange(ng)] = 1.0
    np.testing.assert_array_equal(jac[:n, 2 * n:2 * n + ng], expected)
    np.testing.assert_array_equal(jac[n:, 2 * n + ng:], expected)
    np.testing.assert_array_equal(jac[n:, 2 * n:2 * n + ng], 0.0)


def test_zero_admittance_gives_zero_angle_block():
    y = AdmittanceMatrix(np.zeros((3, 3)), np.zeros((3, 3)))
    x = SystemState(np.array([1.0, 1.1, 0.9]), np.array([0.0, 0.2, -0.3]))
    jac = ac_jacobian(x, ControlInput.zeros(0), Disturbance(np.ones(3), np.ones(3)), y)
    np.testing.assert_array_equal(jac[:, 3:6], 0.0)


# -- Newton power flow --------------------------------------------------------

def test_zero_demand_gives_flat_solution():
    net = _two_bus(r=0.01)
    x = solve_ac_pf(net, ControlInput.zeros(1), Disturbance.from_network(net))
    np.testing.assert_allclose(x.v, 1.0, atol=1e-12)
    np.testing.assert_allclose(x.theta, 0.0, atol=1e-12)


@pytest.mark.parametrize("p", [1e-2, 1e-3])
def test_two_bus_small_transfer_angle(p):
    net = _two_bus(x=0.1, p_dem=p)
    x = solve_ac_pf(net, ControlInput.zeros(1), Disturbance.from_network(net))
    b = net.lines[0].b
    assert abs(x.theta[1] - p / b) <= 10 * p ** 2


def test_fixed_point_property(rng):
    for n in (3, 8, 15):
        net = random_network(rng, n)
        d = Disturbance.from_network(net)
        res = solve_ac_pf(net, proportional_dispatch(net), d, full_output=True)
        r = ac_residual(res.x, res.u, d, build_admittance(net), net.gen_bus)
        assert np.max(np.abs(r)) <= 1e-8


def test_nonzero_slack_phase_is_rejected(case5):
    x0 = SystemState(np.ones(5), np.full(5, 0.1))
    with pytest.raises(ValueError, match="slack phase"):
        solve_ac_pf(case5, proportional_dispatch(case5), Disturbance.from_network(case5), x0)


def test_heavy_load_fails_to_converge():
    net = _two_bus(x=0.1, p_dem=50.0)
    with pytest.raises(PowerFlowError):
        solve_ac_pf(net, ControlInput.zeros(1), Disturbance.from_network(net))


# -- DC power flow --------------------------------------------------------------

def test_dc_zero_injection(case14):
    np.testing.assert_array_equal(solve_dc_pf(case14, np.zeros(14)).theta, 0.0)


def test_dc_two_bus_hand_solution():
    net = _two_bus(x=0.1)
    assert net.lines[0].b == pytest.approx(-10.0)
    theta = solve_dc_pf(net, np.array([1.0, -1.0])).theta
    assert theta[1] == pytest.approx(-0.1, abs=1e-14)


def test_dc_linearity_and_residual(case14, rng):
    p = rng.normal(size=14)
    p -= p.mean()
    alpha = rng.uniform(-3, 3)
    th = solve_dc_pf(case14, p).theta
    np.testing.assert_allclose(solve_dc_pf(case14, alpha * p).theta, alpha * th, atol=1e-13)
    assert np.max(np.abs(p + dc_bus_matrix(case14) @ th)) <= 1e-10


def test_dc_unbalanced_injection_rejected(case5):
    with pytest.raises(ValueError, match="sum to zero"):
        solve_dc_pf(case5, np.ones(5))


def test_dc_ac_consistency_is_second_order(rng):
    net = random_network(rng, 9, lossless=True)
    base = np.asarray(net.p_demand)
    p = -base
    p[net.slack] += base.sum()
    errs = []
    eps_list = [1e-1, 1e-2, 1e-3]
    for eps in eps_list:
        dc = solve_dc_pf(net, eps * p).theta
        ac = fixed_voltage_angles(net, eps * p)
        errs.append(np.max(np.abs(ac - dc)))
    slope = np.polyfit(np.log(eps_list), np.log(errs), 1)[0]
    assert slope >= 1.9


# -- line flows -----------------------------------------------------------------

def test_equal_angles_give_zero_lossless_flow():
    net = _two_bus()
    p, _, _ = line_flows_ac(SystemState(np.ones(2), np.full(2, 0.3)), net)
    assert p[0] == 0.0


def test_lossless_flow_conservation(rng):
    net = random_network(rng, 8, lossless=True)
    x = SystemState(np.ones(8), rng.uniform(-0.3, 0.3, 8))
    p_fwd, _, s = line_flows_ac(x, net)
    p_rev, _, _ = line_flows_ac(x, net, reverse=True)
    np.testing.assert_allclose(p_fwd, -p_rev, atol=1e-14)
    np.testing.assert_allclose(s, np.hypot(*line_flows_ac(x, net)[:2]))


def test_case14_injections_equal_losses(case14):
    d = Disturbance.from_network(case14)
    res = solve_ac_pf(case14, proportional_dispatch(case14), d, full_output=True)
    p_fwd, _, _ = line_flows_ac(res.x, case14)
    p_rev, _, _ = line_flows_ac(res.x, case14, reverse=True)
    injected = res.u.p_gen.sum() - d.p_dem.sum()
    assert injected == pytest.approx((p_fwd + p_rev).sum(), abs=1e-8)
    assert injected > 0


def test_dc_flows_zero_and_per_line(case14, rng):
    np.testing.assert_array_equal(line_flows_dc(np.zeros(14), case14), 0.0)
    theta = rng.normal(scale=0.1, size=14)
    oracle = [-ln.b * (theta[ln.from_bus] - theta[ln.to_bus]) for ln in case14.lines]
    np.testing.assert_allclose(line_flows_dc(DcState(theta), case14), oracle, rtol=1e-13)


def test_dc_flows_satisfy_kcl(case14, rng):
    p = rng.normal(size=14)
    p -= p.mean()
    flows = line_flows_dc(solve_dc_pf(case14, p), case14)
    a, _ = incidence_and_branch_susceptance(case14)
    np.testing.assert_allclose(a.T @ flows, p, atol=1e-10)

import numpy as np
import pytest

from conftest import random_network
from opfkit.network import Bus, Generator, Line, Network
from opfkit.nlp import solve_nlp
from opfkit.opf import (CostFunction, OpfError, ac_initial_guess, assemble_ac_opf, assemble_dc_opf,
                        eliminate_dc_state, solve_ac_opf, solve_dc_opf)
from opfkit.powerflow import Disturbance, line_flows_ac


def _two_bus_ac(p_dem=0.5):
    return Network((Bus(1, is_slack=True), Bus(2, p_dem, 0.1)),
                   (Generator(0, 0.0, 2.0, -2.0, 2.0, 10.0, 100.0),), (Line(0, 1, 0.02, 0.1),))


def _two_bus_dc(s_max=None, p_dem=1.0):
    gens = (Generator(0, 0.0, 3.0, -3.0, 3.0, 0.0, 10.0), Generator(1, 0.0, 3.0, -3.0, 3.0, 0.0, 30.0))
    return Network((Bus(1, is_slack=True), Bus(2, p_dem)), gens, (Line(0, 1, 0.0, 0.1, s_max),))


# -- AC OPF -----------------------------------------------------------------------

def test_two_bus_generator_covers_load_and_losses():
    net = _two_bus_ac()
    sol = solve_ac_opf(net)
    p_fwd, _, _ = line_flows_ac(sol.x, net)
    p_rev, _, _ = line_flows_ac(sol.x, net, reverse=True)
    losses = p_fwd[0] + p_rev[0]
    assert losses > 0
    assert sol.u.p_gen[0] == pytest.approx(0.5 + losses, abs=1e-8)
    assert sol.certificate.ok


def test_case14_dimensions(case14):
    prob = assemble_ac_opf(case14)
    assert prob.n == 2 * 14 + 2 * case14.n_gen == 38
    assert prob.m_eq == 28
    assert prob.m_ineq == 0
    assert prob.lb[14 + case14.slack] == prob.ub[14 + case14.slack] == 0.0


def test_degrees_of_freedom_with_a_generator_at_every_bus(case5):
    assert case5.n_gen == case5.n_bus
    prob = assemble_ac_opf(case5)
    assert prob.n - prob.m_eq == 2 * case5.n_bus


def test_zero_demand_gives_zero_dispatch(case5):
    net = case5.with_demand(np.zeros(5), np.zeros(5))
    sol = solve_ac_opf(net)
    np.testing.assert_allclose(sol.u.p_gen, 0.0, atol=1e-7)
    np.testing.assert_allclose(sol.x.theta, 0.0, atol=1e-7)
    assert np.ptp(sol.x.v) <= 1e-6
    assert sol.objective == pytest.approx(0.0, abs=1e-4)


def test_case5_dispatch_prefers_cheapest_units(case5):
    sol = solve_ac_opf(case5)
    p = dict(zip((case5.buses[g.bus].id for g in case5.generators), sol.u.p_gen))
    assert sorted(p, key=p.get)[-2:] in ([1, 5], [5, 1])
    assert p[1] + p[5] > p[3] + p[4]


def test_ac_solution_kkt_and_certificate(case14):
    sol = solve_ac_opf(case14)
    assert sol.result.converged
    assert sol.result.kkt.max() <= 1e-8
    assert sol.certificate.ok
    assert sol.feasible


def test_infeasible_demand_is_reported(case5):
    net = case5.with_demand(case5.p_demand * 20.0)
    with pytest.raises(OpfError) as info:
        solve_ac_opf(net)
    assert info.value.status in ("infeasible_detected", "max_iter")


def test_dc_warm_start_for_ac(case14):
    cold = solve_ac_opf(case14)
    dc = solve_dc_opf(case14)
    prob = assemble_ac_opf(case14)
    z0 = ac_initial_guess(prob.model)
    z0[14:28] = dc.x.theta
    z0[28:28 + case14.n_gen] = dc.u.p_gen
    warm = solve_ac_opf(case14, z0=z0)
    # iteration counts are logged, not asserted: the effect is instance dependent
    print(f"AC OPF iterations: cold {cold.result.iterations}, DC warm start {warm.result.iterations}")
    assert warm.objective == pytest.approx(cold.objective, rel=1e-6)


def test_cost_function_validation():
    with pytest.raises(ValueError, match="nonnegative"):
        CostFunction([-1.0], [0.0])
    with pytest.raises(ValueError, match="same length"):
        CostFunction([1.0, 2.0], [0.0])


# -- DC OPF -----------------------------------------------------------------------

def test_dc_hessian_positive_on_dispatch(case14):
    prob = assemble_dc_opf(case14)
    h = prob.objective.hessian(np.zeros(prob.n))
    block = h[14:, 14:]
    quad = np.array([g.cost_quad for g in case14.generators])
    assert np.all(quad > 0)
    assert np.all(np.linalg.eigvalsh(block) > 0)
    np.testing.assert_array_equal(h[:14, :14], 0.0)


def test_dc_two_bus_cheapest_generator_serves_demand():
    sol = solve_dc_opf(_two_bus_dc())
    np.testing.assert_allclose(sol.u.p_gen, [1.0, 0.0], atol=1e-7)


def test_tighter_line_limit_raises_objective():
    free = solve_dc_opf(_two_bus_dc())
    tight = solve_dc_opf(_two_bus_dc(s_max=0.6))
    assert tight.objective > free.objective + 1.0
    np.testing.assert_allclose(tight.u.p_gen, [0.6, 0.4], atol=1e-7)
    assert any("s_max" in b for b in tight.binding_constraints)


def test_full_and_reduced_agree_on_case5(case5):
    full = solve_dc_opf(case5)
    red = solve_dc_opf(case5, eliminate=True)
    np.testing.assert_allclose(red.u.p_gen, full.u.p_gen, atol=1e-8)
    np.testing.assert_allclose(red.x.theta, full.x.theta, atol=1e-8)


def test_two_bus_reduced_problem_is_one_dimensional_box_qp():
    net = Network((Bus(1, is_slack=True), Bus(2, 1.0)),
                  (Generator(0, 0.0, 3.0, -3.0, 3.0, 5.0, 10.0),), (Line(0, 1, 0.0, 0.1),))
    red = eliminate_dc_state(assemble_dc_opf(net))
    assert red.n == 1 and red.m_ineq == 0
    assert red.lb[0] == 0.0 and red.ub[0] == 3.0
    assert red.objective.hessian(np.zeros(1))[0, 0] > 0


def test_reduced_problem_is_strictly_convex(case14):
    red = eliminate_dc_state(assemble_dc_opf(case14))
    assert np.min(np.linalg.eigvalsh(red.objective.hessian(np.zeros(red.n)))) > 0


def test_dc_zero_demand(case5):
    sol = solve_dc_opf(case5, p_dem=np.zeros(5))
    np.testing.assert_allclose(sol.u.p_gen, 0.0, atol=1e-7)
    assert sol.objective == pytest.approx(0.0, abs=1e-5)


@pytest.mark.parametrize("seed", range(10))
def test_random_instances_full_vs_eliminated(seed):
    rng = np.random.default_rng(1000 + seed)
    net = random_network(rng, int(rng.integers(3, 15)))
    full = solve_dc_opf(net)
    red = solve_dc_opf(net, eliminate=True)
    assert red.objective == pytest.approx(full.objective, rel=1e-8, abs=1e-8)
    assert full.certificate.ok and red.certificate.ok
    assert full.u.p_gen.sum() == pytest.approx(net.p_demand.sum(), abs=1e-9)


def test_linear_cost_argmin_invariant_under_scaling(case5):
    lin = np.array([g.cost_lin for g in case5.generators] + [0.0] * 5)
    ref = solve_dc_opf(case5, cost=CostFunction(np.zeros(10), lin))
    scaled = solve_dc_opf(case5, cost=CostFunction(np.zeros(10), 7.5 * lin))
    np.testing.assert_allclose(scaled.u.p_gen, ref.u.p_gen, atol=1e-6)
    assert scaled.objective == pytest.approx(7.5 * ref.objective, rel=1e-7)


def test_dc_kkt_tolerance(case5):
    sol = solve_dc_opf(case5)
    assert sol.result.kkt.max() <= 1e-8 and sol.result.converged
    assert np.all(sol.result.mu_ineq >= 0)


def test_solution_json_fields(case5):
    doc = solve_ac_opf(case5).to_dict(case5)
    assert doc["schema"] == "opfkit.opf-solution/1"
    assert doc["bus_ids"] == [1, 2, 3, 4, 5]
    assert set(doc["state"]) == {"v", "theta"}
    assert doc["certificate_ok"] is True

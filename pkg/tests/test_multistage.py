from importlib import resources

import numpy as np
import pytest

from opfkit.multistage import (LoadProfile, RampSpec, RegularizationSpec, assemble_multistage,
                               per_stage_rate, read_profile_csv, receding_horizon_run,
                               solve_multistage, write_profile_csv)
from opfkit.opf import CostFunction, OpfError, solve_ac_opf
from opfkit.powerflow import ControlInput, Disturbance

RAMP_PER_STAGE = per_stage_rate(3.2, 15.0)


@pytest.fixture(scope="module")
def profile(case5):
    return read_profile_csv(str(resources.files("opfkit.data") / "case5_profile.csv"), case5)


@pytest.fixture(scope="module")
def u0(case5, profile):
    return solve_ac_opf(case5.with_demand(profile.p_dem[0], profile.q_dem[0])).u


@pytest.fixture(scope="module")
def unramped(case5, profile, u0):
    return solve_multistage(assemble_multistage(case5, profile, u0=u0))


@pytest.fixture(scope="module")
def ramped(case5, profile, u0):
    ramps = RampSpec.symmetric(case5.n_gen, {0: RAMP_PER_STAGE})
    return solve_multistage(assemble_multistage(case5, profile, ramps=ramps, u0=u0))


def test_case5_costs_match_published_data(case5):
    cost = CostFunction.from_network(case5)
    np.testing.assert_allclose(cost.quad, [200, 0, 220, 240, 260] + [0] * 5, rtol=1e-12)
    np.testing.assert_allclose(cost.lin, [1500, 0, 3000, 4000, 1000] + [0] * 5, rtol=1e-12)


def test_ramp_conversion():
    assert RAMP_PER_STAGE == pytest.approx(0.8)


def test_horizon_one_reduces_to_single_stage(case5):
    d = Disturbance.from_network(case5)
    single = solve_ac_opf(case5)
    sol = solve_multistage(assemble_multistage(case5, LoadProfile.constant(d, 1), u0_free=True))
    assert sol.objective == pytest.approx(single.objective, rel=1e-8)
    pinned = solve_multistage(assemble_multistage(case5, LoadProfile.constant(d, 1),
                                                  u0=ControlInput(single.u.p_gen, single.u.q_gen)))
    assert pinned.objective == pytest.approx(single.objective, rel=1e-8)


def test_decision_dimension(case5):
    d = Disturbance.from_network(case5)
    prob = assemble_multistage(case5, LoadProfile.constant(d, 4), u0_free=True)
    n_x, n_u = 2 * case5.n_bus, 2 * case5.n_gen
    assert prob.n == (n_x + 2 * n_u) * 4


def test_constant_profile_at_optimum_has_zero_increments(case5):
    d = Disturbance.from_network(case5)
    single = solve_ac_opf(case5)
    sol = solve_multistage(assemble_multistage(case5, LoadProfile.constant(d, 4), u0=single.u))
    np.testing.assert_allclose(sol.delta_p, 0.0, atol=1e-6)


def test_five_bus_ordering_and_compensation(case5, unramped, ramped):
    assert ramped.objective > unramped.objective
    g3 = [case5.buses[g.bus].id for g in case5.generators].index(3)
    assert ramped.p_gen[:, g3].max() > 1e-3
    assert unramped.p_gen[:, g3].max() <= 1e-3


def test_unlimited_ramps_leave_no_binding_ramp(case5, profile, u0):
    prob = assemble_multistage(case5, profile, u0=u0)
    n_x, n_u = 2 * case5.n_bus, 2 * case5.n_gen
    for k in range(profile.horizon - 1):
        off = k * prob.block + n_x + n_u
        assert np.all(np.isinf(prob.lb[off:off + case5.n_gen]))
        assert np.all(np.isinf(prob.ub[off:off + case5.n_gen]))


def test_ramp_feasibility_and_dynamics(case5, ramped):
    p = ramped.p_gen
    steps = np.diff(p, axis=0)
    assert np.all(np.abs(steps[:, 0]) <= RAMP_PER_STAGE + 1e-9)
    u = np.array([u.as_vector() for u in ramped.u])
    du = np.array([d.as_vector() for d in ramped.delta_u])
    assert np.max(np.abs(u[1:] - u[:-1] - du[:-1])) == 0.0
    assert np.all(du[-1] == 0.0)


def test_every_stage_is_certified(unramped, ramped):
    assert unramped.feasible and ramped.feasible
    assert ramped.result.kkt.max() <= 1e-8


def test_tighter_ramps_never_lower_the_objective(case5, profile, u0):
    objectives = []
    for rate in (np.inf, 1.2, 0.8, 0.6):
        ramps = RampSpec.symmetric(case5.n_gen, {0: rate}) if np.isfinite(rate) else None
        objectives.append(solve_multistage(assemble_multistage(case5, profile, ramps=ramps, u0=u0)).objective)
    assert all(b >= a - 1e-6 for a, b in zip(objectives, objectives[1:]))


def test_infeasible_ramp_is_reported(case5, profile, u0):
    ramps = RampSpec.symmetric(case5.n_gen, {j: 1e-4 for j in range(case5.n_gen)})
    with pytest.raises(OpfError):
        solve_multistage(assemble_multistage(case5, profile, ramps=ramps, u0=u0))


def test_invalid_inputs(case5, profile):
    bad = ControlInput(np.full(5, 10.0), np.zeros(5))
    with pytest.raises(ValueError, match="outside"):
        assemble_multistage(case5, profile, u0=bad)
    with pytest.raises(ValueError):
        RampSpec(np.array([0.1]), np.array([0.2]))
    with pytest.raises(ValueError):
        RegularizationSpec(np.array([-1.0]))


def test_receding_horizon_with_full_window_matches_one_shot(case5, profile, u0, ramped):
    ramps = RampSpec.symmetric(case5.n_gen, {0: RAMP_PER_STAGE})
    closed = receding_horizon_run(case5, profile, None, ramps, None, u0, profile.horizon - 1)
    np.testing.assert_allclose(closed.solution.p_gen, ramped.p_gen, atol=1e-6)
    assert closed.accumulated_cost == pytest.approx(ramped.objective, rel=1e-6)


def test_window_one_is_greedy(case5, profile, u0):
    closed = receding_horizon_run(case5, profile, None, None, None, u0, 1)
    pinned = case5.gen_bus != case5.slack
    for k in range(1, profile.horizon):
        single = solve_ac_opf(case5.with_demand(profile.p_dem[k], profile.q_dem[k]))
        np.testing.assert_allclose(closed.solution.p_gen[k][pinned], single.u.p_gen[pinned], atol=1e-6)


def test_longer_window_is_not_worse_on_this_instance(case5, profile, u0):
    ramps = RampSpec.symmetric(case5.n_gen, {0: RAMP_PER_STAGE})
    short = receding_horizon_run(case5, profile, None, ramps, None, u0, 2)
    long = receding_horizon_run(case5, profile, None, ramps, None, u0, 4)
    assert long.accumulated_cost <= short.accumulated_cost + 1e-6


def test_window_validation(case5, profile, u0):
    with pytest.raises(ValueError):
        receding_horizon_run(case5, profile, None, None, None, u0, 0)
    with pytest.raises(ValueError):
        receding_horizon_run(case5, profile, None, None, None, u0, profile.horizon + 5)


def test_profile_csv_round_trip(case5, profile):
    back = read_profile_csv(write_profile_csv(profile, case5), case5)
    np.testing.assert_array_equal(back.p_dem, profile.p_dem)
    np.testing.assert_array_equal(back.q_dem, profile.q_dem)
    assert profile.horizon == 12


def test_profile_csv_validation(case5):
    with pytest.raises(ValueError, match="columns"):
        read_profile_csv("a,b\n1,2\n", case5)
    with pytest.raises(ValueError, match="without gaps"):
        read_profile_csv("stage,bus,p_demand,q_demand\n1,4,0.1,0\n", case5)


def test_dispatch_csv_schema(case5, ramped):
    text = ramped.to_csv(case5)
    lines = text.splitlines()
    assert lines[0] == "# opfkit-multistage v1"
    assert lines[1] == "stage,generator_bus,p,q,delta_p"
    assert len(lines) == 2 + 12 * case5.n_gen

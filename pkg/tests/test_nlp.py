import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opfkit.nlp import (Constraints, NlpError, NlpOptions, NlpProblem, Objective,
                        check_derivatives, eq_qp_kkt_residual, linear_constraints,
                        quadratic_objective, solve_eq_qp, solve_nlp, write_trace)
from opfkit.opf import ac_initial_guess, assemble_ac_opf


def _square_ge_one():
    return NlpProblem(1, quadratic_objective([[2.0]], [0.0]),
                      ineq_constraints=linear_constraints([[-1.0]], [-1.0]))


def _random_convex_qp(rng, n, m):
    q = rng.normal(size=(n, n))
    hess = q @ q.T + n * np.eye(n)
    grad = rng.normal(size=n)
    a = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    return hess, grad, a, b


# -- interior point ---------------------------------------------------------------

def test_bound_by_inequality():
    res = solve_nlp(_square_ge_one(), np.array([3.0]))
    assert res.converged
    assert res.z_star[0] == pytest.approx(1.0, abs=1e-8)
    assert res.mu_ineq[0] == pytest.approx(2.0, abs=1e-7)
    assert res.kkt.max() <= 1e-8


def test_projection_onto_line():
    prob = NlpProblem(2, quadratic_objective(2 * np.eye(2), [-2.0, -4.0], 5.0),
                      eq_constraints=linear_constraints([[1.0, 1.0]], [1.0]))
    res = solve_nlp(prob, np.zeros(2))
    np.testing.assert_allclose(res.z_star, [0.0, 1.0], atol=1e-9)


def test_nonconvex_circle():
    obj = Objective(lambda z: -z[0] * z[1], lambda z: np.array([-z[1], -z[0]]),
                    lambda z: np.array([[0.0, -1.0], [-1.0, 0.0]]))
    eq = Constraints(1, lambda z: np.array([z @ z - 2.0]), lambda z: 2 * z[None, :],
                     lambda z, w: 2 * w[0] * np.eye(2))
    res = solve_nlp(NlpProblem(2, obj, eq_constraints=eq), np.array([0.9, 1.1]))
    assert res.converged
    np.testing.assert_allclose(res.z_star, [1.0, 1.0], atol=1e-8)
    assert res.objective_value == pytest.approx(-1.0, abs=1e-8)


def test_start_outside_bounds_is_pushed_inside():
    prob = NlpProblem(1, quadratic_objective([[2.0]], [-6.0]), lb=np.array([0.0]), ub=np.array([2.0]))
    res = solve_nlp(prob, np.array([5.0]))
    assert res.converged and res.z_star[0] == pytest.approx(2.0, abs=1e-8)


def test_infeasible_problem_is_detected():
    prob = NlpProblem(1, quadratic_objective([[2.0]], [0.0]),
                      ineq_constraints=linear_constraints([[-1.0], [1.0]], [-1.0, 0.0]))
    res = solve_nlp(prob, np.array([0.5]))
    assert res.status == "infeasible_detected"


def test_max_iter_status():
    res = solve_nlp(_square_ge_one(), np.array([3.0]), NlpOptions(max_iter=2))
    assert res.status == "max_iter"


def test_nan_callback_raises():
    obj = Objective(lambda z: float("nan"), lambda z: np.full(1, np.nan), lambda z: np.full((1, 1), np.nan))
    with pytest.raises(NlpError):
        solve_nlp(NlpProblem(1, obj), np.zeros(1))


def test_trace_reports_correct_inertia_every_iteration(tmp_path):
    prob = _square_ge_one()
    path = tmp_path / "trace.csv"
    res = solve_nlp(prob, np.array([3.0]), NlpOptions(trace_path=str(path)))
    n_w, m = prob.n + prob.m_ineq, prob.m_eq + prob.m_ineq
    rows = [r for r in res.trace if "inertia" in r]
    assert len(rows) == res.iterations
    assert all(r["inertia"] == f"{n_w}/{m}/0" for r in rows)
    assert path.read_text().startswith("# opfkit-nlp-trace v1\n")


def test_inertia_on_nonconvex_problem():
    obj = Objective(lambda z: -z[0] * z[1], lambda z: np.array([-z[1], -z[0]]),
                    lambda z: np.array([[0.0, -1.0], [-1.0, 0.0]]))
    eq = Constraints(1, lambda z: np.array([z @ z - 2.0]), lambda z: 2 * z[None, :],
                     lambda z, w: 2 * w[0] * np.eye(2))
    res = solve_nlp(NlpProblem(2, obj, eq_constraints=eq), np.array([0.9, 1.1]))
    assert all(r["inertia"] == "2/1/0" for r in res.trace if "inertia" in r)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_multipliers_are_nonnegative(seed):
    rng = np.random.default_rng(seed)
    hess, grad, a, _ = _random_convex_qp(rng, 4, 3)
    b = a @ rng.normal(size=4) + rng.uniform(0.0, 1.0, 3)
    res = solve_nlp(NlpProblem(4, quadratic_objective(hess, grad),
                               ineq_constraints=linear_constraints(a, b)), np.zeros(4))
    assert res.converged
    assert np.all(res.mu_ineq >= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 8))
def test_ipm_and_eq_qp_agree_on_convex_qp(seed, n):
    rng = np.random.default_rng(seed)
    hess, grad, a, b = _random_convex_qp(rng, n, max(1, n // 2))
    res = solve_nlp(NlpProblem(n, quadratic_objective(hess, grad),
                               eq_constraints=linear_constraints(a, b)), np.zeros(n))
    dz, _ = solve_eq_qp(hess, grad, np.zeros((0, n)), (a, -b), math.inf)
    np.testing.assert_allclose(res.z_star, dz, atol=1e-7)


# -- coordination QP ---------------------------------------------------------------

def test_eq_qp_trivial_zero_step():
    blocks = [np.eye(2), np.eye(2)]
    dz, lam = solve_eq_qp(blocks, np.zeros(4), [], ([np.eye(2), -np.eye(2)], np.zeros(2)), 1e3)
    np.testing.assert_array_equal(dz, 0.0)
    np.testing.assert_array_equal(lam, 0.0)


def test_eq_qp_projection_identity():
    dz, _ = solve_eq_qp([np.eye(2)], np.array([1.0, 1.0]), [], ([np.array([[1.0, 1.0]])], np.zeros(1)),
                        math.inf)
    np.testing.assert_allclose(dz, [0.0, 0.0], atol=1e-15)
    dz, _ = solve_eq_qp([np.eye(2)], np.array([1.0, -1.0]), [], ([np.array([[1.0, 1.0]])], np.zeros(1)),
                        math.inf)
    np.testing.assert_allclose(dz, [-1.0, 1.0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), mu=st.sampled_from([1.0, 1e3, 1e8]))
def test_eq_qp_matches_explicit_slack_oracle(seed, mu):
    rng = np.random.default_rng(seed)
    n1, n2, ma, mc = 3, 4, 2, 2
    blocks = []
    for k in (n1, n2):
        q = rng.normal(size=(k, k))
        blocks.append(q @ q.T + np.eye(k))
    grad = rng.normal(size=n1 + n2)
    c_blocks = [rng.normal(size=(1, n1)), rng.normal(size=(1, n2))]
    a_blocks = [rng.normal(size=(ma, n1)), rng.normal(size=(ma, n2))]
    r = rng.normal(size=ma)
    lam = rng.normal(size=ma)
    dz, lam_qp, gamma = solve_eq_qp(blocks, grad, c_blocks, (a_blocks, r), mu, lam, return_gamma=True)

    # oracle: keep the slack as an explicit variable and solve the full KKT system
    n = n1 + n2
    h = np.zeros((n, n))
    h[:n1, :n1], h[n1:, n1:] = blocks
    c = np.zeros((mc, n))
    c[0, :n1], c[1, n1:] = c_blocks[0], c_blocks[1]
    a = np.hstack(a_blocks)
    size = n + ma + mc + ma
    k = np.zeros((size, size))
    k[:n, :n] = h
    k[n:n + ma, n:n + ma] = mu * np.eye(ma)
    k[:n, n + ma:n + ma + mc] = c.T
    k[n + ma:n + ma + mc, :n] = c
    k[:n, n + ma + mc:] = a.T
    k[n + ma + mc:, :n] = a
    k[n:n + ma, n + ma + mc:] = -np.eye(ma)
    k[n + ma + mc:, n:n + ma] = -np.eye(ma)
    rhs = np.concatenate([-grad, -lam, np.zeros(mc), -r])
    sol = np.linalg.solve(k, rhs)
    np.testing.assert_allclose(dz, sol[:n], rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(lam_qp, sol[n + ma + mc:], rtol=1e-7, atol=1e-8)
    assert eq_qp_kkt_residual(blocks, grad, c_blocks, (a_blocks, r), mu, lam, dz, lam_qp, gamma) <= 1e-10


def test_eq_qp_rejects_nonpositive_mu():
    with pytest.raises(ValueError):
        solve_eq_qp([np.eye(1)], np.zeros(1), [], ([np.eye(1)], np.zeros(1)), 0.0)


# -- derivative checks ---------------------------------------------------------------

def test_quadratic_derivatives_are_exact():
    rng = np.random.default_rng(3)
    hess, grad, a, b = _random_convex_qp(rng, 5, 2)
    prob = NlpProblem(5, quadratic_objective(hess, grad), eq_constraints=linear_constraints(a, b))
    # central differences are exact on quadratics, so a larger step only
    # removes rounding error from the differenced objective values
    assert check_derivatives(prob, rng.normal(size=5), step=1e-4) <= 1e-9


def test_case14_ac_opf_derivatives(case14, rng):
    prob = assemble_ac_opf(case14)
    z = ac_initial_guess(prob.model)
    n = case14.n_bus
    z[:n] = rng.uniform(0.95, 1.05, n)
    z[n + 1:2 * n] = rng.uniform(-0.2, 0.2, n - 1)
    z[2 * n:] += rng.uniform(-0.1, 0.1, z.size - 2 * n)
    assert check_derivatives(prob, z) <= 1e-5


def test_corrupted_jacobian_is_flagged():
    a = np.array([[1.0, 2.0]])
    bad = a.copy()
    bad[0, 1] += 0.5
    eq = Constraints(1, lambda z: a @ z, lambda z: bad, lambda z, w: np.zeros((2, 2)))
    prob = NlpProblem(2, quadratic_objective(np.eye(2), np.zeros(2)), eq_constraints=eq)
    report = check_derivatives(prob, np.ones(2), full_report=True)
    assert report.eq_jacobian > 0.1 and report.gradient <= 1e-9


def test_write_trace_round_trips_header(tmp_path):
    path = tmp_path / "t.csv"
    write_trace([{"iter": 0, "objective": 1.0}], path)
    lines = path.read_text().splitlines()
    assert lines[1].startswith("iter,objective,") and lines[2].startswith("0,1.0")

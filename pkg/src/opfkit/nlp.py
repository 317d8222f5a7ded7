"""Dense smooth nonlinear programming.

``solve_nlp`` is a primal-dual interior-point method for

    min f(z)  s.t.  c_E(z) = 0,  c_I(z) <= 0,  lb <= z <= ub.

Inequalities receive slacks ``c_I(z) + s = 0, s >= 0``; variables with
``lb == ub`` are removed from the iteration.  Each iteration factorizes the
reduced KKT matrix

    [ W + Sigma + dw I    J^T   ]
    [ J                  -dc I  ]

with a symmetric indefinite (Bunch-Kaufman) factorization and increases the
primal shift ``dw`` until the inertia is ``(n_w, m, 0)``.  Steps are
globalized by a backtracking Armijo search on the l1 merit function
``phi_mu + nu ||c||_1`` with one second-order correction.

``solve_eq_qp`` solves the equality-constrained QP with a penalized slack
used by the ALADIN coordination step.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.linalg import lapack


class NlpError(RuntimeError):
    pass


class QpError(RuntimeError):
    pass


@dataclass(frozen=True)
class Objective:
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class Constraints:
    """Vector constraint function with ``m`` rows.

    ``hessian(z, w)`` returns ``sum_j w_j * Hessian(c_j)(z)``.
    """

    m: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class NlpProblem:
    n: int
    objective: Objective
    eq_constraints: Constraints | None = None
    ineq_constraints: Constraints | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    @property
    def m_eq(self) -> int:
        return 0 if self.eq_constraints is None else self.eq_constraints.m

    @property
    def m_ineq(self) -> int:
        return 0 if self.ineq_constraints is None else self.ineq_constraints.m

    @property
    def lower(self) -> np.ndarray:
        return np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)

    @property
    def upper(self) -> np.ndarray:
        return np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    eq_violation: float
    ineq_violation: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.eq_violation, self.ineq_violation,
                   self.complementarity)


@dataclass
class SolveResult:
    z_star: np.ndarray
    lambda_eq: np.ndarray
    mu_ineq: np.ndarray
    status: str
    kkt: KktResiduals
    iterations: int
    objective_value: float
    z_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt_unscaled: KktResiduals | None = None
    objective_scale: float = 1.0
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass(frozen=True)
class NlpOptions:
    tol: float = 1e-8
    max_iter: int = 200
    bound_push: float = 1e-6
    slack_init: float = 1e-2
    mu_init: float = 0.1
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    kappa_eps: float = 10.0
    tau_min: float = 0.995
    armijo: float = 1e-4
    scale_objective: bool = True
    infeasibility_tol: float = 1e-6
    stall_iterations: int = 10
    trace_path: str | None = None


STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible_detected"

_TRACE_FIELDS = ["iter", "objective", "stationarity", "eq_violation", "ineq_violation",
                 "complementarity", "alpha_primal", "alpha_dual", "barrier_mu", "delta_w",
                 "inertia"]


# ---------------------------------------------------------------------------
# problem-building helpers
# ---------------------------------------------------------------------------

def quadratic_objective(hess, grad, const: float = 0.0) -> Objective:
    """``0.5 z^T H z + g^T z + c``."""
    hess = np.atleast_2d(np.asarray(hess, float))
    grad = np.asarray(grad, float)
    return Objective(lambda z: 0.5 * z @ hess @ z + grad @ z + const,
                     lambda z: hess @ z + grad,
                     lambda z: hess)


def linear_constraints(mat, rhs) -> Constraints:
    """``A z - b`` as a constraint function."""
    mat = np.atleast_2d(np.asarray(mat, float))
    rhs = np.asarray(rhs, float)
    n = mat.shape[1]
    return Constraints(mat.shape[0], lambda z: mat @ z - rhs, lambda z: mat,
                       lambda z, w: np.zeros((n, n)))


def stack_constraints(parts: list[Constraints | None], n: int) -> Constraints | None:
    parts = [p for p in parts if p is not None and p.m > 0]
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    sizes = np.cumsum([0] + [p.m for p in parts])
    has_hess = all(p.hessian is not None for p in parts)

    def hessian(z, w):
        out = np.zeros((n, n))
        for p, a, b in zip(parts, sizes[:-1], sizes[1:]):
            out += p.hessian(z, w[a:b])
        return out

    return Constraints(
        int(sizes[-1]),
        lambda z: np.concatenate([p.value(z) for p in parts]),
        lambda z: np.vstack([p.jacobian(z) for p in parts]),
        hessian if has_hess else None,
    )


# ---------------------------------------------------------------------------
# interior-point solver
# ---------------------------------------------------------------------------

def _inf_norm(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _ldl_inertia(mat):
    """Factorize a symmetric matrix; return ``(lu, ipiv, (pos, neg, zero))``."""
    lu, ipiv, info = lapack.dsytrf(mat, lower=1)
    if info < 0:
        raise NlpError("invalid argument to the symmetric factorization")
    pos = neg = zero = 0
    k = 0
    n = mat.shape[0]
    while k < n:
        if ipiv[k] > 0:
            d = lu[k, k]
            if abs(d) <= 1e-20 or not np.isfinite(d):
                zero += 1
            elif d > 0:
                pos += 1
            else:
                neg += 1
            k += 1
        else:
            a, b, c = lu[k, k], lu[k + 1, k], lu[k + 1, k + 1]
            det = a * c - b * b
            if not np.isfinite(det) or abs(det) <= 1e-14 * b * b:
                zero += 1
                tr = a + c
                if tr > 0:
                    pos += 1
                elif tr < 0:
                    neg += 1
                else:
                    zero += 1
            elif det < 0:
                pos += 1
                neg += 1
            elif a + c > 0:
                pos += 2
            else:
                neg += 2
            k += 2
    return lu, ipiv, (pos, neg, zero)


def _ldl_solve(lu, ipiv, rhs):
    sol, info = lapack.dsytrs(lu, ipiv, rhs, lower=1)
    if info != 0:
        raise NlpError("symmetric solve failed")
    return sol


class _Evaluator:
    """Evaluates the problem in the reduced variables ``w = (z_free, s)``."""

    def __init__(self, problem: NlpProblem, z_template: np.ndarray, free: np.ndarray,
                 obj_scale: float):
        self.p = problem
        self.template = z_template
        self.free = free
        self.nf = free.size
        self.me = problem.m_eq
        self.mi = problem.m_ineq
        self.sf = obj_scale

    def full(self, w):
        z = self.template.copy()
        z[self.free] = w[:self.nf]
        return z

    def values(self, w):
        z = self.full(w)
        f = float(self.p.objective.value(z))
        ce = self.p.eq_constraints.value(z) if self.me else np.zeros(0)
        ci = self.p.ineq_constraints.value(z) if self.mi else np.zeros(0)
        return f, np.asarray(ce, float), np.asarray(ci, float)

    def derivatives(self, w):
        z = self.full(w)
        g = np.asarray(self.p.objective.gradient(z), float)
        je = (np.asarray(self.p.eq_constraints.jacobian(z), float).reshape(self.me, -1)
              if self.me else np.zeros((0, self.p.n)))
        ji = (np.asarray(self.p.ineq_constraints.jacobian(z), float).reshape(self.mi, -1)
              if self.mi else np.zeros((0, self.p.n)))
        return g, je, ji

    def has_hessian(self):
        p = self.p
        return (p.objective.hessian is not None
                and (not self.me or p.eq_constraints.hessian is not None)
                and (not self.mi or p.ineq_constraints.hessian is not None))

    def lagrangian_hessian(self, w, y):
        z = self.full(w)
        h = self.sf * np.asarray(self.p.objective.hessian(z), float)
        if self.me:
            h = h + self.p.eq_constraints.hessian(z, y[:self.me])
        if self.mi:
            h = h + self.p.ineq_constraints.hessian(z, y[self.me:])
        return h[np.ix_(self.free, self.free)]


def solve_nlp(problem: NlpProblem, z0, opts: NlpOptions | None = None,
              y0: np.ndarray | None = None) -> SolveResult:
    """Solve ``problem`` from the initial guess ``z0``.

    Parameters
    ----------
    problem : NlpProblem
    z0 : array_like
        Initial point.  Components outside or on their bounds are moved
        inward by ``opts.bound_push`` (relative to ``max(1, |bound|)``).
    opts : NlpOptions, optional
    y0 : array_like, optional
        Initial equality/inequality multipliers (unscaled, stacked ``eq``
        then ``ineq``).  A least-squares estimate is used otherwise.

    Returns
    -------
    SolveResult
        Multipliers follow ``grad f + J_E^T lambda_eq + J_I^T mu_ineq
        - z_lower + z_upper = 0`` with ``mu_ineq, z_lower, z_upper >= 0``.
        ``kkt`` holds residuals of the scaled problem (objective multiplied
        by ``objective_scale``, stationarity divided by the multiplier-size
        factor); ``kkt_unscaled`` holds the raw residuals.
    """
    opts = opts or NlpOptions()
    n = problem.n
    lb, ub = problem.lower.copy(), problem.upper.copy()
    if lb.shape != (n,) or ub.shape != (n,):
        raise ValueError("bounds must have length n")
    if np.any(lb > ub):
        raise ValueError("lower bound exceeds upper bound")
    z = np.array(z0, dtype=float).reshape(n)
    fixed = lb == ub
    free = np.flatnonzero(~fixed)
    z[fixed] = lb[fixed]
    nf = free.size
    me, mi = problem.m_eq, problem.m_ineq
    m = me + mi
    nw = nf + mi

    # push free variables strictly inside their bounds
    lf, uf = lb[free], ub[free]
    zf = z[free]
    with np.errstate(invalid="ignore"):
        push_l = lf + opts.bound_push * np.maximum(1.0, np.abs(lf))
        push_u = uf - opts.bound_push * np.maximum(1.0, np.abs(uf))
        narrow = np.isfinite(lf) & np.isfinite(uf) & (push_l >= push_u)
        zf = np.where(np.isfinite(lf), np.maximum(zf, push_l), zf)
        zf = np.where(np.isfinite(uf), np.minimum(zf, push_u), zf)
        zf = np.where(narrow, 0.5 * (lf + uf), zf)
    z[free] = zf

    if not np.all(np.isfinite(z)):
        raise NlpError("initial point is not finite")

    # objective scaling
    g0 = np.asarray(problem.objective.gradient(z), float)
    if not np.all(np.isfinite(g0)):
        raise NlpError("NaN or Inf in objective gradient at the initial point")
    sf = 1.0
    if opts.scale_objective:
        gmax = _inf_norm(g0)
        sf = min(1.0, 100.0 / gmax) if gmax > 0 else 1.0

    ev = _Evaluator(problem, z, free, sf)
    exact_hessian = ev.has_hessian()

    L = np.concatenate([lf, np.zeros(mi)])
    U = np.concatenate([uf, np.full(mi, np.inf)])
    has_l = np.isfinite(L)
    has_u = np.isfinite(U)

    f_val, ce, ci = ev.values(np.concatenate([zf, np.zeros(mi)]))
    if not (np.isfinite(f_val) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
        raise NlpError("NaN or Inf from callbacks at the initial point")
    s0 = np.maximum(-ci, opts.slack_init)
    w = np.concatenate([zf, s0])

    def constraint_vector(ce_, ci_, w_):
        return np.concatenate([ce_, ci_ + w_[nf:]])

    def jac_w(je_, ji_):
        jac = np.zeros((m, nw))
        if me:
            jac[:me, :nf] = je_[:, free]
        if mi:
            jac[me:, :nf] = ji_[:, free]
            jac[me:, nf:] = np.eye(mi)
        return jac

    def grad_w(g_):
        return np.concatenate([sf * g_[free], np.zeros(mi)])

    mu = opts.mu_init
    mu_floor = opts.tol / 10.0
    zl = np.where(has_l, 1.0, 0.0)
    zu = np.where(has_u, 1.0, 0.0)
    c = constraint_vector(ce, ci, w)
    g, je, ji = ev.derivatives(w)
    jac = jac_w(je, ji)
    gw = grad_w(g)

    # least-squares multiplier estimate
    if y0 is not None:
        y = sf * np.asarray(y0, float).reshape(m)
    elif m:
        kkt = np.block([[np.eye(nw), jac.T], [jac, np.zeros((m, m))]])
        rhs = -np.concatenate([gw - zl + zu, np.zeros(m)])
        try:
            y = linalg.lstsq(kkt, rhs)[0][nw:]
        except (linalg.LinAlgError, ValueError):
            y = np.zeros(m)
        if _inf_norm(y) > 1e3:
            y = np.zeros(m)
    else:
        y = np.zeros(0)

    bfgs = None if exact_hessian else np.eye(nf)
    nu = 1.0
    delta_w_last = 0.0
    stall = 0
    trace = []
    status = STATUS_MAX_ITER
    it = 0
    alpha_pr = alpha_du = 1.0
    delta_w = 0.0

    def slacks(w_):
        return np.where(has_l, w_ - L, 1.0), np.where(has_u, U - w_, 1.0)

    def barrier_fn(f_, w_, mu_):
        dl, du = slacks(w_)
        # a trial point on a bound gets an infinite barrier and is rejected
        with np.errstate(divide="ignore"):
            return sf * f_ - mu_ * (np.sum(np.log(dl[has_l])) + np.sum(np.log(du[has_u])))

    def errors(mu_):
        dl, du = slacks(w)
        r_d = gw + jac.T @ y - zl + zu
        s_max = 100.0
        nmult = m + int(has_l.sum()) + int(has_u.sum())
        sd = max(s_max, (np.abs(y).sum() + zl.sum() + zu.sum()) / max(nmult, 1)) / s_max
        nb = int(has_l.sum() + has_u.sum())
        sc = max(s_max, (zl.sum() + zu.sum()) / max(nb, 1)) / s_max
        compl = max(_inf_norm((zl * dl - mu_)[has_l]), _inf_norm((zu * du - mu_)[has_u]))
        return _inf_norm(r_d) / sd, _inf_norm(c), compl / sc, sd, sc

    def original_kkt(scaled: bool):
        zfull = ev.full(w)
        dl, du = slacks(w)
        factor = 1.0 if scaled else 1.0 / sf
        lam = y[:me] * factor
        mu_i = zl[nf:] * factor
        zl_x, zu_x = zl[:nf] * factor, zu[:nf] * factor
        gg = (sf if scaled else 1.0) * g
        r = gg[free] + je[:, free].T @ lam + ji[:, free].T @ mu_i - zl_x + zu_x
        _, _, _, sd, sc = errors(0.0)
        stat = _inf_norm(r)
        comp = max(_inf_norm(mu_i * ci), _inf_norm((zl_x * dl[:nf])[has_l[:nf]]),
                   _inf_norm((zu_x * du[:nf])[has_u[:nf]]))
        if scaled:
            stat /= sd
            comp /= sc
        viol = max(_inf_norm(np.maximum(ci, 0.0)),
                   _inf_norm(np.maximum(lb - zfull, 0.0)), _inf_norm(np.maximum(zfull - ub, 0.0)))
        return KktResiduals(float(stat), _inf_norm(ce), float(viol), float(comp))

    while True:
        kkt_scaled = original_kkt(True)
        internal = _inf_norm(c)
        done = kkt_scaled.max() <= opts.tol and internal <= opts.tol
        infeas = max(kkt_scaled.eq_violation, kkt_scaled.ineq_violation)
        row = dict(iter=it, objective=float(f_val), stationarity=float(kkt_scaled.stationarity),
                   eq_violation=float(kkt_scaled.eq_violation),
                   ineq_violation=float(kkt_scaled.ineq_violation),
                   complementarity=float(kkt_scaled.complementarity), alpha_primal=float(alpha_pr),
                   alpha_dual=float(alpha_du), barrier_mu=float(mu), delta_w=float(delta_w))
        trace.append(row)
        if done:
            status = STATUS_CONVERGED
            break
        if stall >= opts.stall_iterations:
            status = STATUS_INFEASIBLE
            break
        if it >= opts.max_iter:
            status = STATUS_MAX_ITER
            break

        # barrier update (possibly several reductions)
        while mu > mu_floor:
            e_stat, e_c, e_comp, _, _ = errors(mu)
            if max(e_stat, e_c, e_comp) > opts.kappa_eps * mu:
                break
            mu = max(mu_floor, min(opts.kappa_mu * mu, mu ** opts.theta_mu))
        tau = max(opts.tau_min, 1.0 - mu)

        dl, du = slacks(w)
        sigma = np.where(has_l, zl / dl, 0.0) + np.where(has_u, zu / du, 0.0)
        grad_phi = gw - np.where(has_l, mu / dl, 0.0) + np.where(has_u, mu / du, 0.0)

        hess = np.zeros((nw, nw))
        if nf:
            hess[:nf, :nf] = ev.lagrangian_hessian(w, y) if exact_hessian else bfgs
        if not np.all(np.isfinite(hess)):
            raise NlpError("NaN or Inf in Hessian callback")
        base = hess + np.diag(sigma)

        # inertia-correcting factorization
        delta_w = 0.0
        delta_c = 0.0
        kmat = np.zeros((nw + m, nw + m))
        kmat[nw:, :nw] = jac
        kmat[:nw, nw:] = jac.T
        attempts = 0
        while True:
            kmat[:nw, :nw] = base + delta_w * np.eye(nw)
            kmat[nw:, nw:] = -delta_c * np.eye(m)
            lu, ipiv, (pos, neg, zero) = _ldl_inertia(kmat)
            if pos == nw and neg == m and zero == 0:
                break
            attempts += 1
            if zero and delta_c == 0.0 and m:
                delta_c = 1e-8 * mu ** 0.25
                if attempts == 1:
                    continue
            if delta_w == 0.0:
                delta_w = 1e-4 if delta_w_last == 0.0 else max(1e-20, delta_w_last / 3.0)
            else:
                delta_w *= 100.0 if delta_w_last == 0.0 else 8.0
            if delta_w > 1e40:
                raise NlpError("KKT matrix could not be regularized")
        if delta_w > 0:
            delta_w_last = delta_w
        row["delta_w"] = float(delta_w)
        row["inertia"] = f"{pos}/{neg}/{zero}"

        rhs = -np.concatenate([grad_phi, c])
        sol = _ldl_solve(lu, ipiv, rhs)
        dw, y_new = sol[:nw], sol[nw:]
        dy = y_new - y

        def dual_steps(dw_):
            dzl = np.where(has_l, mu / dl - zl - zl / dl * dw_, 0.0)
            dzu = np.where(has_u, mu / du - zu + zu / du * dw_, 0.0)
            return dzl, dzu

        def fraction_to_boundary(dw_):
            amax = 1.0
            neg_l = has_l & (dw_ < 0)
            if np.any(neg_l):
                amax = min(amax, float(np.min(-tau * dl[neg_l] / dw_[neg_l])))
            pos_u = has_u & (dw_ > 0)
            if np.any(pos_u):
                amax = min(amax, float(np.min(tau * du[pos_u] / dw_[pos_u])))
            return amax

        alpha_max = fraction_to_boundary(dw)

        # merit parameter update
        c_norm1 = float(np.abs(c).sum())
        curv = float(dw @ (base @ dw)) + delta_w * float(dw @ dw)
        dphi = float(grad_phi @ dw)
        if c_norm1 > 0:
            nu_req = (dphi + 0.5 * max(curv, 0.0)) / (0.9 * c_norm1)
            if nu < nu_req:
                nu = nu_req + 1.0
        phi0 = barrier_fn(f_val, w, mu) + nu * c_norm1
        dmerit = dphi - nu * c_norm1
        if dmerit >= 0:
            dmerit = -1e-12 * max(1.0, abs(phi0))

        def trial_point(dw_, alpha_):
            wt = w + alpha_ * dw_
            try:
                with np.errstate(all="ignore"):
                    ft, cet, cit = ev.values(wt)
            except (ValueError, FloatingPointError, ArithmeticError):
                return None
            if not (np.isfinite(ft) and np.all(np.isfinite(cet)) and np.all(np.isfinite(cit))):
                return None
            ct = constraint_vector(cet, cit, wt)
            return wt, ft, cet, cit, ct, barrier_fn(ft, wt, mu) + nu * float(np.abs(ct).sum())

        # Near a solution the primal step can shrink below the resolution of
        # the merit function while the multipliers still need their Newton
        # update; such steps are taken in full once the iterate is feasible.
        rel_step = _inf_norm(dw / (1.0 + np.abs(w)))
        tiny = (rel_step < 10 * np.finfo(float).eps
                or (rel_step < 1e-8 and _inf_norm(c) <= opts.tol))
        accepted = None
        alpha = alpha_max
        step_dw, step_y = dw, y_new
        if tiny:
            accepted = trial_point(dw, alpha)
        # merit changes below the rounding level of phi0 count as acceptable
        slack_merit = 10.0 * np.finfo(float).eps * max(1.0, abs(phi0))
        first = True
        while accepted is None and alpha > 1e-14:
            tp = trial_point(dw, alpha)
            if tp is not None and tp[5] <= phi0 + opts.armijo * alpha * dmerit + slack_merit:
                accepted = tp
                break
            if first and tp is not None and m and float(np.abs(tp[4]).sum()) >= c_norm1:
                # second-order corrections with the existing factorization,
                # repeated while each one still reduces the violation
                c_soc = alpha * c + tp[4]
                c_prev = float(np.abs(tp[4]).sum())
                for _ in range(4):
                    sol_soc = _ldl_solve(lu, ipiv, -np.concatenate([grad_phi, c_soc]))
                    d_soc = sol_soc[:nw]
                    a_soc = fraction_to_boundary(d_soc)
                    if a_soc < 0.5 * alpha:
                        # a correction that runs into the bounds would only
                        # trade the rejected step for a much shorter one
                        break
                    tps = trial_point(d_soc, a_soc)
                    if tps is None:
                        break
                    if tps[5] <= phi0 + opts.armijo * alpha * dmerit + slack_merit:
                        accepted = tps
                        step_dw, step_y, alpha = d_soc, sol_soc[nw:], a_soc
                        break
                    c_new = float(np.abs(tps[4]).sum())
                    if c_new > 0.99 * c_prev:
                        break
                    c_prev = c_new
                    c_soc = a_soc * c_soc + tps[4]
                if accepted is not None:
                    break
            first = False
            alpha *= 0.5
        if accepted is None:
            # no acceptable step: take the smallest trial to keep moving
            alpha = max(alpha, 1e-14)
            accepted = trial_point(dw, alpha)
            if accepted is None:
                raise NlpError("NaN from callbacks along the search direction")

        dzl, dzu = dual_steps(step_dw)
        alpha_z = 1.0
        neg = has_l & (dzl < 0)
        if np.any(neg):
            alpha_z = min(alpha_z, float(np.min(-tau * zl[neg] / dzl[neg])))
        neg = has_u & (dzu < 0)
        if np.any(neg):
            alpha_z = min(alpha_z, float(np.min(-tau * zu[neg] / dzu[neg])))

        w_old, gw_old, jac_old = w, gw, jac
        w, f_val, ce, ci, c = accepted[0], accepted[1], accepted[2], accepted[3], accepted[4]
        y = y + alpha * (step_y - y)
        zl = zl + alpha_z * dzl
        zu = zu + alpha_z * dzu
        # keep bound multipliers close to the primal-dual central path
        dl, du = slacks(w)
        kappa = 1e10
        zl = np.where(has_l, np.clip(zl, mu / (kappa * dl), kappa * mu / dl), 0.0)
        zu = np.where(has_u, np.clip(zu, mu / (kappa * du), kappa * mu / du), 0.0)
        g, je, ji = ev.derivatives(w)
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(je)) or not np.all(np.isfinite(ji)):
            raise NlpError("NaN or Inf in derivative callbacks")
        jac = jac_w(je, ji)
        gw = grad_w(g)
        alpha_pr, alpha_du = alpha, alpha_z

        if bfgs is not None and nf:
            sk = (w - w_old)[:nf]
            yk = (gw + jac.T @ y - gw_old - jac_old.T @ y)[:nf]
            bs = bfgs @ sk
            sbs = float(sk @ bs)
            if sbs > 1e-16:
                sy = float(sk @ yk)
                theta = 1.0 if sy >= 0.2 * sbs else 0.8 * sbs / (sbs - sy)
                r = theta * yk + (1 - theta) * bs
                bfgs = bfgs - np.outer(bs, bs) / sbs + np.outer(r, r) / float(sk @ r)

        viol = max(_inf_norm(ce), _inf_norm(np.maximum(ci, 0.0)))
        if viol > opts.infeasibility_tol and (mu <= mu_floor or alpha < 1e-8):
            stall += 1
        else:
            stall = 0
        it += 1

    z_star = ev.full(w)
    kkt_scaled = original_kkt(True)
    kkt_raw = original_kkt(False)
    z_lower = np.zeros(n)
    z_upper = np.zeros(n)
    z_lower[free] = zl[:nf] / sf
    z_upper[free] = zu[:nf] / sf
    if np.any(fixed):
        r = g + je.T @ (y[:me] / sf) + ji.T @ (zl[nf:] / sf)
        fx = np.flatnonzero(fixed)
        z_lower[fx] = np.maximum(r[fx], 0.0)
        z_upper[fx] = np.maximum(-r[fx], 0.0)
    result = SolveResult(
        z_star=z_star, lambda_eq=y[:me] / sf, mu_ineq=zl[nf:] / sf, status=status,
        kkt=kkt_scaled, iterations=it, objective_value=float(problem.objective.value(z_star)),
        z_lower=z_lower, z_upper=z_upper, kkt_unscaled=kkt_raw, objective_scale=sf, trace=trace,
    )
    if opts.trace_path:
        write_trace(trace, opts.trace_path)
    return result


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# opfkit-nlp-trace v1\n")
        writer = csv.DictWriter(fh, fieldnames=_TRACE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (f"{v:.12e}" if isinstance(v, float) else v) for k, v in row.items()})


# ---------------------------------------------------------------------------
# equality-constrained QP with penalized slack
# ---------------------------------------------------------------------------

def _as_matrix(blocks, diagonal: bool):
    if isinstance(blocks, np.ndarray):
        return np.atleast_2d(blocks)
    blocks = [np.atleast_2d(np.asarray(b, float)) for b in blocks]
    if diagonal:
        return linalg.block_diag(*blocks) if blocks else np.zeros((0, 0))
    return np.hstack(blocks)


def eq_qp_system(hess, grad, cmat, amat, residual, mu, lam):
    """KKT matrix and right-hand side of the slack-eliminated coordination QP.

    Unknowns are ``(dz, gamma, lambda_qp)``::

        [ H   C^T  A^T     ] [dz       ]   [ -g               ]
        [ C   0    0       ] [gamma    ] = [  0               ]
        [ A   0   -I / mu  ] [lambda_qp]   [ -r - lambda / mu ]

    where the eliminated slack is ``s = (lambda_qp - lambda) / mu``.
    """
    n = hess.shape[0]
    mc = cmat.shape[0]
    ma = amat.shape[0]
    inv_mu = 0.0 if math.isinf(mu) else 1.0 / mu
    kmat = np.zeros((n + mc + ma, n + mc + ma))
    kmat[:n, :n] = hess
    kmat[n:n + mc, :n] = cmat
    kmat[:n, n:n + mc] = cmat.T
    kmat[n + mc:, :n] = amat
    kmat[:n, n + mc:] = amat.T
    kmat[n + mc:, n + mc:] = -inv_mu * np.eye(ma)
    rhs = np.concatenate([-grad, np.zeros(mc), -residual - inv_mu * lam])
    return kmat, rhs


def eq_qp_kkt_residual(hess, grad, cmat, consensus, mu, lam, dz, lambda_qp, gamma=None) -> float:
    """Normwise relative residual of the coordination QP optimality system."""
    hess = _as_matrix(hess, True)
    cmat = _as_matrix(cmat, True) if len(cmat) else np.zeros((0, hess.shape[0]))
    amat = _as_matrix(consensus[0], False)
    residual = np.asarray(consensus[1], float)
    lam = np.zeros(amat.shape[0]) if lam is None else np.asarray(lam, float)
    kmat, rhs = eq_qp_system(hess, np.asarray(grad, float), cmat, amat, residual, mu, lam)
    if gamma is None:
        # recover the C multipliers by least squares on the stationarity rows
        r0 = -np.asarray(grad) - hess @ dz - amat.T @ lambda_qp
        gamma = linalg.lstsq(cmat.T, r0)[0] if cmat.shape[0] else np.zeros(0)
    sol = np.concatenate([dz, gamma, lambda_qp])
    res = kmat @ sol - rhs
    denom = np.max(np.abs(kmat)) * _inf_norm(sol) + _inf_norm(rhs)
    return _inf_norm(res) / max(denom, np.finfo(float).tiny)


def solve_eq_qp(hess, grad, cmat, consensus, mu: float, lam=None, return_gamma=False):
    """Solve the coordination QP

        min  0.5 dz^T H dz + g^T dz + lam^T s + mu/2 ||s||^2
        s.t. C dz = 0,   A dz + r = s   (multiplier lambda_qp)

    by eliminating the slack ``s``.

    Parameters
    ----------
    hess : ndarray or list of ndarray
        Full matrix or per-region blocks (block diagonal).
    grad : ndarray
    cmat : ndarray or list of ndarray
        Full matrix or per-region blocks (block diagonal); may have no rows.
    consensus : tuple
        ``(A, r)`` with ``A`` a full matrix or list of per-region column
        blocks and ``r = sum_i A_i z_i - b`` the current consensus residual.
    mu : float
        Slack penalty; ``math.inf`` enforces ``A dz + r = 0`` exactly.
    lam : ndarray, optional
        Current consensus multiplier (zero by default).

    Returns
    -------
    dz, lambda_qp (and gamma, the multiplier of ``C dz = 0``, if requested)
    """
    hess = _as_matrix(hess, True)
    n = hess.shape[0]
    if isinstance(cmat, np.ndarray):
        cmat = cmat.reshape(-1, n) if cmat.size else np.zeros((0, n))
    else:
        cmat = _as_matrix(cmat, True) if len(cmat) else np.zeros((0, n))
        if cmat.shape[1] != n:
            raise ValueError("C blocks do not match the Hessian dimension")
    amat = _as_matrix(consensus[0], False).reshape(-1, n)
    residual = np.asarray(consensus[1], float).reshape(amat.shape[0])
    grad = np.asarray(grad, float).reshape(n)
    lam = np.zeros(amat.shape[0]) if lam is None else np.asarray(lam, float)
    if not mu > 0:
        raise ValueError("mu must be positive")
    kmat, rhs = eq_qp_system(hess, grad, cmat, amat, residual, mu, lam)
    scale = max(1.0, _inf_norm(rhs))
    sol = None
    with warnings.catch_warnings():
        # ill-conditioning alone is acceptable; the residual decides
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        try:
            sol = linalg.solve(kmat, rhs, assume_a="sym")
        except linalg.LinAlgError:
            sol = None
    if sol is None or not np.all(np.isfinite(sol)) or _inf_norm(kmat @ sol - rhs) > 1e-8 * scale:
        sol = linalg.lstsq(kmat, rhs, cond=1e-14)[0]
        if _inf_norm(kmat @ sol - rhs) > 1e-8 * scale:
            raise QpError("singular coordination QP KKT matrix")
    mc = cmat.shape[0]
    dz, gamma, lambda_qp = sol[:n], sol[n:n + mc], sol[n + mc:]
    if return_gamma:
        return dz, lambda_qp, gamma
    return dz, lambda_qp


# ---------------------------------------------------------------------------
# derivative checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivativeReport:
    gradient: float
    eq_jacobian: float
    ineq_jacobian: float
    hessian: float

    @property
    def max_deviation(self) -> float:
        return max(self.gradient, self.eq_jacobian, self.ineq_jacobian, self.hessian)


def _fd_jacobian(fun, z, step):
    z = np.asarray(z, float)
    cols = []
    for j in range(z.size):
        h = step * max(1.0, abs(z[j]))
        e = np.zeros_like(z)
        e[j] = h
        cols.append((np.atleast_1d(fun(z + e)) - np.atleast_1d(fun(z - e))) / (2 * h))
    return np.array(cols).T


def _deviation(analytic, fd):
    analytic = np.atleast_2d(np.asarray(analytic, float))
    fd = np.atleast_2d(fd)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))


def check_derivatives(problem: NlpProblem, z, step: float = 1e-6, hessians: bool = True,
                      seed: int = 0, full_report: bool = False):
    """Compare analytic derivatives with central differences.

    Returns the maximum entry-wise deviation ``|a - fd| / max(1, |fd|)``
    over the objective gradient, constraint Jacobians and (optionally) the
    Lagrangian Hessian for random multipliers.
    """
    z = np.asarray(z, float)
    p = problem
    dev_g = _deviation(p.objective.gradient(z)[None, :],
                       _fd_jacobian(lambda x: np.array([p.objective.value(x)]), z, step))
    dev_e = dev_i = dev_h = 0.0
    if p.m_eq:
        dev_e = _deviation(p.eq_constraints.jacobian(z), _fd_jacobian(p.eq_constraints.value, z, step))
    if p.m_ineq:
        dev_i = _deviation(p.ineq_constraints.jacobian(z),
                           _fd_jacobian(p.ineq_constraints.value, z, step))
    if hessians and p.objective.hessian is not None:
        rng = np.random.default_rng(seed)
        we = rng.standard_normal(p.m_eq)
        wi = rng.standard_normal(p.m_ineq)

        def lag_grad(x):
            out = np.asarray(p.objective.gradient(x), float).copy()
            if p.m_eq:
                out += p.eq_constraints.jacobian(x).T @ we
            if p.m_ineq:
                out += p.ineq_constraints.jacobian(x).T @ wi
            return out

        hess = np.asarray(p.objective.hessian(z), float).copy()
        ok = True
        if p.m_eq:
            ok &= p.eq_constraints.hessian is not None
            if ok:
                hess += p.eq_constraints.hessian(z, we)
        if p.m_ineq:
            ok &= p.ineq_constraints.hessian is not None
            if ok:
                hess += p.ineq_constraints.hessian(z, wi)
        if ok:
            dev_h = _deviation(hess, _fd_jacobian(lag_grad, z, step))
    report = DerivativeReport(dev_g, dev_e, dev_i, dev_h)
    return report if full_report else report.max_deviation

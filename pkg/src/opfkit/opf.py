"""Single-stage AC and DC optimal power flow.

AC decision vector ``z = (v[N], theta[N], p_gen[G], q_gen[G])``; DC decision
vector ``z = (theta[N], p_gen[G])``.  The cost is ``u^T H u + h^T u + c``
with diagonal ``H`` over ``u = (p_gen, q_gen)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .network import Network
from .nlp import (Constraints, NlpOptions, NlpProblem, Objective, SolveResult,
                  linear_constraints, solve_nlp, stack_constraints)
from .powerflow import ControlInput, DcState, Disturbance, SystemState


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostFunction:
    """Diagonal quadratic cost ``u^T diag(quad) u + lin^T u + constant``."""

    quad: np.ndarray
    lin: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "quad", np.asarray(self.quad, float))
        object.__setattr__(self, "lin", np.asarray(self.lin, float))
        if self.quad.shape != self.lin.shape:
            raise ValueError("quad and lin must have the same length")
        if np.any(self.quad < 0):
            raise ValueError("quadratic cost entries must be nonnegative")

    @classmethod
    def from_network(cls, net: Network) -> "CostFunction":
        ng = net.n_gen
        quad = np.zeros(2 * ng)
        lin = np.zeros(2 * ng)
        quad[:ng] = [g.cost_quad for g in net.generators]
        lin[:ng] = [g.cost_lin for g in net.generators]
        return cls(quad, lin, float(sum(g.cost_const for g in net.generators)))

    def active(self, n_gen: int) -> "CostFunction":
        """Restriction to the active-power entries."""
        return CostFunction(self.quad[:n_gen], self.lin[:n_gen], self.constant)

    def evaluate(self, u) -> float:
        u = np.asarray(u, float)
        k = self.quad.size
        return float(self.quad @ u[:k] ** 2 + self.lin @ u[:k] + self.constant)


@dataclass(frozen=True)
class GridModel:
    """Array form of an OPF instance; also used for network fragments.

    ``slack`` is the bus whose phase is pinned to zero, or ``None``.
    Line limits of ``inf`` mean unlimited.  Lines flagged in ``half_line``
    end at an auxiliary midpoint node; their limit is enforced at the
    from-bus only.
    """

    p_dem: np.ndarray
    q_dem: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    gen_bus: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    line_from: np.ndarray
    line_to: np.ndarray
    line_g: np.ndarray
    line_b: np.ndarray
    line_smax: np.ndarray
    cost: CostFunction
    slack: int | None = 0
    half_line: np.ndarray | None = None

    @property
    def n_bus(self) -> int:
        return self.p_dem.size

    @property
    def n_gen(self) -> int:
        return self.gen_bus.size

    @property
    def n_line(self) -> int:
        return self.line_from.size

    @property
    def n_ac(self) -> int:
        return 2 * self.n_bus + 2 * self.n_gen

    @property
    def limited(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.line_smax))

    @property
    def limited_to_end(self) -> np.ndarray:
        """Limited lines whose to-end limit is enforced as well."""
        lim = self.limited
        if self.half_line is None:
            return lim
        return lim[~np.asarray(self.half_line, bool)[lim]]

    def admittance(self) -> np.ndarray:
        n = self.n_bus
        y = np.zeros((n, n), dtype=complex)
        ys = self.line_g + 1j * self.line_b
        a, b = self.line_from, self.line_to
        np.add.at(y, (a, a), ys)
        np.add.at(y, (b, b), ys)
        np.add.at(y, (a, b), -ys)
        np.add.at(y, (b, a), -ys)
        return y

    def susceptance(self) -> np.ndarray:
        return self.admittance().imag

    def incidence(self) -> np.ndarray:
        a = np.zeros((self.n_line, self.n_bus))
        rows = np.arange(self.n_line)
        a[rows, self.line_from] = 1.0
        a[rows, self.line_to] = -1.0
        return a

    def gen_matrix(self) -> np.ndarray:
        c = np.zeros((self.n_bus, self.n_gen))
        c[self.gen_bus, np.arange(self.n_gen)] = 1.0
        return c


def grid_model(net: Network, d: Disturbance | None = None,
               cost: CostFunction | None = None) -> GridModel:
    d = Disturbance.from_network(net) if d is None else d
    cost = CostFunction.from_network(net) if cost is None else cost
    if cost.quad.size not in (net.n_gen, 2 * net.n_gen):
        raise ValueError(f"cost must have {2 * net.n_gen} (or {net.n_gen}) entries")
    if cost.quad.size == net.n_gen:
        cost = CostFunction(np.concatenate([cost.quad, np.zeros(net.n_gen)]),
                            np.concatenate([cost.lin, np.zeros(net.n_gen)]), cost.constant)
    gens = net.generators
    lines = net.lines
    return GridModel(
        p_dem=np.asarray(d.p_dem, float).copy(), q_dem=np.asarray(d.q_dem, float).copy(),
        v_min=net.v_min, v_max=net.v_max, gen_bus=net.gen_bus.copy(),
        p_min=np.array([g.p_min for g in gens]), p_max=np.array([g.p_max for g in gens]),
        q_min=np.array([g.q_min for g in gens]), q_max=np.array([g.q_max for g in gens]),
        line_from=np.array([ln.from_bus for ln in lines], dtype=int),
        line_to=np.array([ln.to_bus for ln in lines], dtype=int),
        line_g=np.array([ln.g for ln in lines]), line_b=np.array([ln.b for ln in lines]),
        line_smax=np.array([math.inf if ln.s_max is None else ln.s_max for ln in lines]),
        cost=cost, slack=net.slack,
    )


@dataclass(frozen=True)
class OpfProblem(NlpProblem):
    """An :class:`NlpProblem` that remembers the OPF instance it encodes."""

    model: GridModel | None = None
    kind: str = "ac"
    net: Network | None = None


# ---------------------------------------------------------------------------
# AC building blocks
# ---------------------------------------------------------------------------

def _ac_injection_hessian(v, theta, ybus, lam_p, lam_q):
    """Hessian of ``lam_p^T P + lam_q^T Q`` over ``(v, theta)``."""
    volt = v * np.exp(1j * theta)
    n = volt.size

    def d2s(lam):
        ibus = ybus @ volt
        a = np.diag(lam * volt)
        b = ybus * volt[None, :]
        c = a @ np.conj(b)
        dmat = np.conj(ybus).T * volt[None, :]
        e = np.diag(np.conj(volt)) @ (dmat * lam[None, :] - np.diag(dmat @ lam))
        f = c - a * np.conj(ibus)[None, :]
        ginv = 1.0 / np.abs(volt)
        gaa = e + f
        gva = 1j * ginv[:, None] * (e - f)
        gav = gva.T
        gvv = ginv[:, None] * (c + c.T) * ginv[None, :]
        return gvv, gva, gav, gaa

    pvv, pva, pav, paa = d2s(lam_p.astype(complex))
    qvv, qva, qav, qaa = d2s(lam_q.astype(complex))
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n] = pvv.real + qvv.imag
    out[:n, n:] = pva.real + qva.imag
    out[n:, :n] = pav.real + qav.imag
    out[n:, n:] = paa.real + qaa.imag
    return out


def _flow_terms(va, vb, t, g, b):
    """Branch flow at the ``a`` end and derivatives over ``(va, vb, theta_a, theta_b)``."""
    cos, sin = np.cos(t), np.sin(t)
    p1 = g * cos + b * sin
    p2 = b * cos - g * sin
    p = va ** 2 * g - va * vb * p1
    q = -va ** 2 * b + va * vb * p2
    k = va.size
    dp = np.stack([2 * va * g - vb * p1, -va * p1, -va * vb * p2, va * vb * p2], axis=1)
    dq = np.stack([-2 * va * b + vb * p2, va * p2, -va * vb * p1, va * vb * p1], axis=1)
    hp = np.zeros((k, 4, 4))
    hq = np.zeros((k, 4, 4))
    # second derivatives over (va, vb, t), then mapped to (theta_a, theta_b)
    hp3 = np.zeros((k, 3, 3))
    hq3 = np.zeros((k, 3, 3))
    hp3[:, 0, 0] = 2 * g
    hp3[:, 0, 1] = hp3[:, 1, 0] = -p1
    hp3[:, 0, 2] = hp3[:, 2, 0] = -vb * p2
    hp3[:, 1, 2] = hp3[:, 2, 1] = -va * p2
    hp3[:, 2, 2] = va * vb * p1
    hq3[:, 0, 0] = -2 * b
    hq3[:, 0, 1] = hq3[:, 1, 0] = p2
    hq3[:, 0, 2] = hq3[:, 2, 0] = -vb * p1
    hq3[:, 1, 2] = hq3[:, 2, 1] = -va * p1
    hq3[:, 2, 2] = -va * vb * p2
    m = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, -1]], dtype=float)
    hp = np.einsum("ia,kij,jb->kab", m, hp3, m)
    hq = np.einsum("ia,kij,jb->kab", m, hq3, m)
    return p, q, dp, dq, hp, hq


def ac_flow_constraint(model: GridModel, offset: int = 0, n_total: int | None = None) -> Constraints | None:
    """``p^2 + q^2 - s_max^2 <= 0`` at both ends of every limited line
    (from-end only for half-lines).

    Voltage magnitudes start at ``offset`` and phases at ``offset + N`` in
    the decision vector of length ``n_total``.
    """
    lim = model.limited
    if lim.size == 0:
        return None
    back = model.limited_to_end
    n = model.n_bus
    n_total = model.n_ac if n_total is None else n_total
    a = np.concatenate([model.line_from[lim], model.line_to[back]])
    b = np.concatenate([model.line_to[lim], model.line_from[back]])
    ends = np.concatenate([lim, back])
    g = model.line_g[ends]
    bb = model.line_b[ends]
    smax2 = model.line_smax[ends] ** 2
    rows = a.size
    cols = np.stack([offset + a, offset + b, offset + n + a, offset + n + b], axis=1)

    def terms(z):
        v = z[offset:offset + n]
        th = z[offset + n:offset + 2 * n]
        return _flow_terms(v[a], v[b], th[a] - th[b], g, bb)

    def value(z):
        p, q, *_ = terms(z)
        return p ** 2 + q ** 2 - smax2

    def jacobian(z):
        p, q, dp, dq, _, _ = terms(z)
        jac = np.zeros((rows, n_total))
        grad = 2 * (p[:, None] * dp + q[:, None] * dq)
        np.add.at(jac, (np.repeat(np.arange(rows), 4), cols.ravel()), grad.ravel())
        return jac

    def hessian(z, w):
        p, q, dp, dq, hp, hq = terms(z)
        hk = 2 * (np.einsum("ki,kj->kij", dp, dp) + np.einsum("ki,kj->kij", dq, dq)
                  + p[:, None, None] * hp + q[:, None, None] * hq)
        hk *= w[:, None, None]
        out = np.zeros((n_total, n_total))
        ii = np.repeat(cols, 4, axis=1).ravel()
        jj = np.tile(cols, (1, 4)).ravel()
        np.add.at(out, (ii, jj), hk.reshape(rows, 16).ravel())
        return out

    return Constraints(rows, value, jacobian, hessian)


def ac_balance_constraint(model: GridModel, offset: int = 0,
                          n_total: int | None = None) -> Constraints:
    """The ``2N`` AC power-flow residuals for the block ``(v, theta, p, q)``
    starting at ``offset``."""
    n, ng = model.n_bus, model.n_gen
    n_total = model.n_ac if n_total is None else n_total
    ybus = model.admittance()
    gb = model.gen_bus
    sl = slice(offset, offset + 2 * n + 2 * ng)

    def unpack(z):
        blk = z[sl]
        return blk[:n], blk[n:2 * n], blk[2 * n:2 * n + ng], blk[2 * n + ng:]

    def value(z):
        v, th, p, q = unpack(z)
        volt = v * np.exp(1j * th)
        s = volt * np.conj(ybus @ volt)
        p_net = -model.p_dem.copy()
        q_net = -model.q_dem.copy()
        np.add.at(p_net, gb, p)
        np.add.at(q_net, gb, q)
        return np.concatenate([p_net - s.real, q_net - s.imag])

    def jacobian(z):
        v, th, _, _ = unpack(z)
        volt = v * np.exp(1j * th)
        current = ybus @ volt
        unit = volt / v
        ds_dth = 1j * volt[:, None] * np.conj(np.diag(current) - ybus * volt[None, :])
        ds_dv = volt[:, None] * np.conj(ybus * unit[None, :]) + np.diag(np.conj(current) * unit)
        jac = np.zeros((2 * n, n_total))
        jac[:n, offset:offset + n] = -ds_dv.real
        jac[n:, offset:offset + n] = -ds_dv.imag
        jac[:n, offset + n:offset + 2 * n] = -ds_dth.real
        jac[n:, offset + n:offset + 2 * n] = -ds_dth.imag
        cols = np.arange(ng)
        jac[gb, offset + 2 * n + cols] = 1.0
        jac[n + gb, offset + 2 * n + ng + cols] = 1.0
        return jac

    def hessian(z, w):
        v, th, _, _ = unpack(z)
        out = np.zeros((n_total, n_total))
        out[offset:offset + 2 * n, offset:offset + 2 * n] = -_ac_injection_hessian(
            v, th, ybus, w[:n], w[n:])
        return out

    return Constraints(2 * n, value, jacobian, hessian)


def ac_bounds(model: GridModel, pin_slack: bool = True):
    n, ng = model.n_bus, model.n_gen
    lb = np.concatenate([model.v_min, np.full(n, -np.inf), model.p_min, model.q_min])
    ub = np.concatenate([model.v_max, np.full(n, np.inf), model.p_max, model.q_max])
    if pin_slack and model.slack is not None:
        lb[n + model.slack] = ub[n + model.slack] = 0.0
    return lb, ub


def cost_objective(cost: CostFunction, offset: int, n_total: int,
                   tikhonov: float = 0.0, x_ref: np.ndarray | None = None,
                   x_offset: int = 0) -> Objective:
    """``J(u)`` for ``u`` stored at ``offset``; optional ``tikhonov * ||x - x_ref||^2``."""
    k = cost.quad.size
    idx = slice(offset, offset + k)
    hdiag = np.zeros(n_total)
    hdiag[idx] = 2 * cost.quad
    if tikhonov and x_ref is not None:
        xs = slice(x_offset, x_offset + x_ref.size)
        hdiag[xs] += 2 * tikhonov

    def value(z):
        u = z[idx]
        out = float(cost.quad @ u ** 2 + cost.lin @ u + cost.constant)
        if tikhonov and x_ref is not None:
            dx = z[x_offset:x_offset + x_ref.size] - x_ref
            out += tikhonov * float(dx @ dx)
        return out

    def gradient(z):
        g = np.zeros(n_total)
        g[idx] = 2 * cost.quad * z[idx] + cost.lin
        if tikhonov and x_ref is not None:
            g[x_offset:x_offset + x_ref.size] += 2 * tikhonov * (z[x_offset:x_offset + x_ref.size] - x_ref)
        return g

    hmat = np.diag(hdiag)
    return Objective(value, gradient, lambda z: hmat)


def _forced_at_minimum(model: GridModel) -> bool:
    """True when the demand equals the total minimum output.

    Generation can then only sit at ``p_min`` (line losses are nonnegative),
    and the feasible set has no interior in ``p_gen``; fixing the dispatch
    up front keeps the interior-point iteration well posed.
    """
    total = model.p_dem.sum()
    floor = model.p_min.sum()
    return abs(total - floor) <= 1e-12 * max(1.0, abs(total), abs(floor))


def _ac_problem(model: GridModel, tikhonov: float = 0.0, net=None) -> OpfProblem:
    n = model.n_bus
    lb, ub = ac_bounds(model)
    if _forced_at_minimum(model):
        ub[2 * n:2 * n + model.n_gen] = lb[2 * n:2 * n + model.n_gen]
    x_ref = np.concatenate([np.ones(n), np.zeros(n)]) if tikhonov else None
    return OpfProblem(
        n=model.n_ac,
        objective=cost_objective(model.cost, 2 * n, model.n_ac, tikhonov, x_ref, 0),
        eq_constraints=ac_balance_constraint(model),
        ineq_constraints=ac_flow_constraint(model),
        lb=lb, ub=ub, model=model, kind="ac", net=net,
    )


def assemble_ac_opf(net: Network, d: Disturbance | None = None, cost: CostFunction | None = None,
                    tikhonov: float = 0.0) -> OpfProblem:
    """AC OPF as an NLP over ``(v, theta, p_gen, q_gen)``.

    Equalities are the ``2N`` power-flow residuals, inequalities the squared
    apparent-power limits at both ends of each limited line, and bounds the
    voltage and generator boxes plus the slack phase pinned to zero.
    ``tikhonov`` adds ``tikhonov * ||x - x_flat||^2`` to the objective.
    """
    return _ac_problem(grid_model(net, d, cost), tikhonov, net)


def ac_initial_guess(model: GridModel) -> np.ndarray:
    """Flat voltages and a uniform dispatch that covers the total demand when possible."""
    n = model.n_bus
    v = np.clip(np.ones(n), model.v_min, model.v_max)
    span = model.p_max - model.p_min
    total = model.p_dem.sum() - model.p_min.sum()
    beta = 0.0 if span.sum() <= 0 else float(np.clip(total / span.sum(), 0.0, 1.0))
    p = model.p_min + beta * span
    q = np.where(np.isfinite(model.q_min) & np.isfinite(model.q_max),
                 0.5 * (model.q_min + model.q_max), np.clip(0.0, model.q_min, model.q_max))
    return np.concatenate([v, np.zeros(n), p, q])


# ---------------------------------------------------------------------------
# DC building blocks
# ---------------------------------------------------------------------------

def _dc_problem(model: GridModel, net=None) -> OpfProblem:
    n, ng = model.n_bus, model.n_gen
    nz = n + ng
    bmat = model.susceptance()
    cg = model.gen_matrix()
    eq = linear_constraints(np.hstack([bmat, cg]), model.p_dem)
    lim = model.limited
    ineq = None
    if lim.size:
        flow = -(model.line_b[:, None] * model.incidence())[lim]
        rows = np.vstack([np.hstack([flow, np.zeros((lim.size, ng))]),
                          np.hstack([-flow, np.zeros((lim.size, ng))])])
        ineq = linear_constraints(rows, np.tile(model.line_smax[lim], 2))
    lb = np.concatenate([np.full(n, -np.inf), model.p_min])
    ub = np.concatenate([np.full(n, np.inf), model.p_max])
    if _forced_at_minimum(model):
        ub[n:] = lb[n:]
    if model.slack is not None:
        lb[model.slack] = ub[model.slack] = 0.0
    active = model.cost.active(ng)
    return OpfProblem(n=nz, objective=cost_objective(active, n, nz), eq_constraints=eq,
                      ineq_constraints=ineq, lb=lb, ub=ub, model=model, kind="dc", net=net)


def assemble_dc_opf(net: Network, p_dem=None, cost: CostFunction | None = None) -> OpfProblem:
    """DC OPF over ``(theta, p_gen)``: ``p_gen - p_dem + B theta = 0``,
    ``|-B_br A theta| <= s_max`` and generator boxes; slack phase pinned."""
    p_dem = net.p_demand if p_dem is None else np.asarray(p_dem, float)
    d = Disturbance(p_dem, np.zeros(net.n_bus))
    return _dc_problem(grid_model(net, d, cost), net)


@dataclass(frozen=True)
class ReducedDcProblem(OpfProblem):
    """DC OPF over ``p_gen`` only; ``theta = theta_offset + theta_map @ p_gen``."""

    theta_map: np.ndarray | None = None
    theta_offset: np.ndarray | None = None

    def theta(self, p_gen) -> np.ndarray:
        return self.theta_offset + self.theta_map @ np.asarray(p_gen, float)


def eliminate_dc_state(problem: OpfProblem) -> ReducedDcProblem:
    """Eliminate the phases of a DC OPF through the reduced inverse of ``B``.

    The remaining equality is the total balance ``sum(p_gen) = sum(p_dem)``
    and line limits become affine in ``p_gen`` (shift factors).
    """
    if problem.kind != "dc" or problem.model is None:
        raise ValueError("eliminate_dc_state needs a problem from assemble_dc_opf")
    model = problem.model
    n, ng = model.n_bus, model.n_gen
    slack = model.slack if model.slack is not None else 0
    keep = np.delete(np.arange(n), slack)
    bmat = model.susceptance()
    cg = model.gen_matrix()
    theta_map = np.zeros((n, ng))
    theta_offset = np.zeros(n)
    if keep.size:
        b_red = bmat[np.ix_(keep, keep)]
        try:
            lu = linalg.lu_factor(b_red)
        except linalg.LinAlgError as exc:
            raise linalg.LinAlgError("singular reduced DC matrix") from exc
        if np.min(np.abs(np.diag(lu[0]))) < 1e-12 * max(1.0, np.max(np.abs(b_red))):
            raise linalg.LinAlgError("singular reduced DC matrix")
        theta_map[keep] = -linalg.lu_solve(lu, cg[keep])
        theta_offset[keep] = linalg.lu_solve(lu, model.p_dem[keep])
    eq = linear_constraints(np.ones((1, ng)), [model.p_dem.sum()])
    lim = model.limited
    ineq = None
    if lim.size:
        flow = -(model.line_b[:, None] * model.incidence())[lim]
        ptdf = flow @ theta_map
        shift = flow @ theta_offset
        ineq = linear_constraints(np.vstack([ptdf, -ptdf]),
                                  np.concatenate([model.line_smax[lim] - shift,
                                                  model.line_smax[lim] + shift]))
    active = model.cost.active(ng)
    return ReducedDcProblem(
        n=ng, objective=cost_objective(active, 0, ng), eq_constraints=eq, ineq_constraints=ineq,
        lb=model.p_min.copy(), ub=(model.p_min if _forced_at_minimum(model) else model.p_max).copy(),
        model=model, kind="dc-reduced",
        net=problem.net, theta_map=theta_map, theta_offset=theta_offset,
    )


# ---------------------------------------------------------------------------
# feasibility certificate (independent of the solver callbacks)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityReport:
    balance: float
    bounds: float
    line_limits: float
    slack_phase: float
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.balance, self.bounds, self.line_limits, self.slack_phase) <= self.tol


def certify_ac(model: GridModel, x: SystemState, u: ControlInput, tol: float = 1e-6) -> FeasibilityReport:
    """Re-check a solution by summing complex branch flows bus by bus."""
    volt = x.v * np.exp(1j * x.theta)
    out = np.zeros(model.n_bus, dtype=complex)
    worst_line = 0.0
    for k in range(model.n_line):
        a, b = model.line_from[k], model.line_to[k]
        y = complex(model.line_g[k], model.line_b[k])
        s_ab = volt[a] * np.conj(y * (volt[a] - volt[b]))
        s_ba = volt[b] * np.conj(y * (volt[b] - volt[a]))
        out[a] += s_ab
        out[b] += s_ba
        if math.isfinite(model.line_smax[k]):
            worst_line = max(worst_line, abs(s_ab) - model.line_smax[k])
            if model.half_line is None or not model.half_line[k]:
                worst_line = max(worst_line, abs(s_ba) - model.line_smax[k])
    inj = -(model.p_dem + 1j * model.q_dem).astype(complex)
    for j, bus in enumerate(model.gen_bus):
        inj[bus] += complex(u.p_gen[j], u.q_gen[j])
    balance = float(np.max(np.abs(np.concatenate([(inj - out).real, (inj - out).imag])), initial=0.0))
    bounds = max(
        float(np.max(model.v_min - x.v, initial=0.0)), float(np.max(x.v - model.v_max, initial=0.0)),
        float(np.max(model.p_min - u.p_gen, initial=0.0)), float(np.max(u.p_gen - model.p_max, initial=0.0)),
        float(np.max(model.q_min - u.q_gen, initial=0.0)), float(np.max(u.q_gen - model.q_max, initial=0.0)),
    )
    slack = 0.0 if model.slack is None else abs(float(x.theta[model.slack]))
    return FeasibilityReport(balance, max(bounds, 0.0), max(worst_line, 0.0), slack, tol)


def certify_dc(model: GridModel, theta: np.ndarray, p_gen: np.ndarray, tol: float = 1e-6) -> FeasibilityReport:
    """Re-check a DC solution with per-line flows and bus balances."""
    out = np.zeros(model.n_bus)
    worst_line = 0.0
    for k in range(model.n_line):
        a, b = model.line_from[k], model.line_to[k]
        flow = -model.line_b[k] * (theta[a] - theta[b])
        out[a] += flow
        out[b] -= flow
        if math.isfinite(model.line_smax[k]):
            worst_line = max(worst_line, abs(flow) - model.line_smax[k])
    inj = -model.p_dem.copy()
    for j, bus in enumerate(model.gen_bus):
        inj[bus] += p_gen[j]
    balance = float(np.max(np.abs(inj - out), initial=0.0))
    bounds = max(float(np.max(model.p_min - p_gen, initial=0.0)),
                 float(np.max(p_gen - model.p_max, initial=0.0)))
    slack = 0.0 if model.slack is None else abs(float(theta[model.slack]))
    return FeasibilityReport(balance, bounds, max(worst_line, 0.0), slack, tol)


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------

@dataclass
class OpfSolution:
    x: SystemState | DcState
    u: ControlInput
    objective: float
    line_loading: np.ndarray
    binding_constraints: list[str]
    status: str
    result: SolveResult
    certificate: FeasibilityReport
    kind: str = "ac"
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def feasible(self) -> bool:
        return self.status == "converged" and self.certificate.ok

    def to_dict(self, net: Network | None = None) -> dict:
        bus_ids = [b.id for b in net.buses] if net else list(range(1, len(self.x.theta) + 1))
        gen_ids = [bus_ids[g.bus] for g in net.generators] if net else list(range(1, len(self.u.p_gen) + 1))
        state = {"theta": self.x.theta.tolist()}
        if isinstance(self.x, SystemState):
            state["v"] = self.x.v.tolist()
        return {
            "schema": "opfkit.opf-solution/1",
            "kind": self.kind,
            "status": self.status,
            "objective": self.objective,
            "bus_ids": bus_ids,
            "state": state,
            "dispatch": {"gen_bus": gen_ids, "p_gen": self.u.p_gen.tolist(),
                         "q_gen": self.u.q_gen.tolist()},
            "line_loading": [None if not np.isfinite(v) else float(v) for v in self.line_loading],
            "binding_constraints": list(self.binding_constraints),
            "iterations": self.result.iterations,
            "certificate_ok": bool(self.certificate.ok),
        }


class OpfError(RuntimeError):
    def __init__(self, message: str, status: str):
        super().__init__(message)
        self.status = status


def _near(a, b, tol=1e-6):
    return np.isfinite(b) & (np.abs(a - b) <= tol * np.maximum(1.0, np.abs(b)))


def _binding(model: GridModel, x, p, q, loading, bus_ids, gen_ids) -> list[str]:
    out = []
    if x is not None and isinstance(x, SystemState):
        for i in range(model.n_bus):
            if _near(x.v[i], model.v_min[i]):
                out.append(f"bus {bus_ids[i]}: v_min")
            if _near(x.v[i], model.v_max[i]):
                out.append(f"bus {bus_ids[i]}: v_max")
    for j in range(model.n_gen):
        if model.p_min[j] == model.p_max[j]:
            continue
        if _near(p[j], model.p_min[j]):
            out.append(f"gen {gen_ids[j]}: p_min")
        if _near(p[j], model.p_max[j]):
            out.append(f"gen {gen_ids[j]}: p_max")
        if q is not None:
            if _near(q[j], model.q_min[j]):
                out.append(f"gen {gen_ids[j]}: q_min")
            if _near(q[j], model.q_max[j]):
                out.append(f"gen {gen_ids[j]}: q_max")
    for k in range(model.n_line):
        if np.isfinite(loading[k]) and loading[k] >= 1 - 1e-6:
            out.append(f"line {bus_ids[model.line_from[k]]}-{bus_ids[model.line_to[k]]}: s_max")
    return out


def _ids(net, model):
    if net is None:
        return list(range(1, model.n_bus + 1)), [int(b) + 1 for b in model.gen_bus]
    bus_ids = [b.id for b in net.buses]
    return bus_ids, [bus_ids[b] for b in model.gen_bus]


def ac_solution_from_z(model: GridModel, z: np.ndarray, result: SolveResult,
                       net: Network | None = None, tol: float = 1e-6) -> OpfSolution:
    n, ng = model.n_bus, model.n_gen
    v, th = z[:n].copy(), z[n:2 * n].copy()
    p, q = z[2 * n:2 * n + ng].copy(), z[2 * n + ng:2 * n + 2 * ng].copy()
    x, u = SystemState(v, th), ControlInput(p, q)
    volt = v * np.exp(1j * th)
    a, b = model.line_from, model.line_to
    y = model.line_g + 1j * model.line_b
    s_ab = np.abs(volt[a] * np.conj(y * (volt[a] - volt[b])))
    s_ba = np.abs(volt[b] * np.conj(y * (volt[b] - volt[a])))
    with np.errstate(divide="ignore", invalid="ignore"):
        loading = np.where(np.isfinite(model.line_smax), np.maximum(s_ab, s_ba) / model.line_smax, np.nan)
    bus_ids, gen_ids = _ids(net, model)
    return OpfSolution(
        x=x, u=u, objective=model.cost.evaluate(np.concatenate([p, q])), line_loading=loading,
        binding_constraints=_binding(model, x, p, q, loading, bus_ids, gen_ids),
        status=result.status, result=result, certificate=certify_ac(model, x, u, tol),
        kind="ac", z=z.copy(),
    )


def dc_solution(model: GridModel, theta: np.ndarray, p: np.ndarray, result: SolveResult,
                net: Network | None = None, tol: float = 1e-6) -> OpfSolution:
    flows = -model.line_b * (theta[model.line_from] - theta[model.line_to])
    with np.errstate(divide="ignore", invalid="ignore"):
        loading = np.where(np.isfinite(model.line_smax), np.abs(flows) / model.line_smax, np.nan)
    bus_ids, gen_ids = _ids(net, model)
    u = ControlInput(p.copy(), np.zeros_like(p))
    return OpfSolution(
        x=DcState(theta.copy()), u=u, objective=model.cost.active(model.n_gen).evaluate(p),
        line_loading=loading, binding_constraints=_binding(model, None, p, None, loading, bus_ids, gen_ids),
        status=result.status, result=result, certificate=certify_dc(model, theta, p, tol), kind="dc",
        z=np.concatenate([theta, p]),
    )


def _raise_on_failure(result: SolveResult, what: str):
    if result.status != "converged":
        raise OpfError(f"{what}: solver status {result.status} after {result.iterations} iterations",
                       result.status)


def solve_ac_opf(net: Network, d: Disturbance | None = None, cost: CostFunction | None = None,
                 opts: NlpOptions | None = None, z0: np.ndarray | None = None,
                 tikhonov: float = 0.0, raise_on_failure: bool = True) -> OpfSolution:
    """Solve the AC OPF; the default start is flat voltages with a uniform dispatch."""
    problem = assemble_ac_opf(net, d, cost, tikhonov)
    z0 = ac_initial_guess(problem.model) if z0 is None else z0
    result = solve_nlp(problem, z0, opts)
    if raise_on_failure:
        _raise_on_failure(result, "AC OPF")
    return ac_solution_from_z(problem.model, result.z_star, result, net)


def solve_dc_opf(net: Network, p_dem=None, cost: CostFunction | None = None,
                 opts: NlpOptions | None = None, eliminate: bool = False,
                 raise_on_failure: bool = True) -> OpfSolution:
    """Solve the DC OPF, optionally on the phase-eliminated formulation."""
    problem = assemble_dc_opf(net, p_dem, cost)
    model = problem.model
    n = model.n_bus
    span = model.p_max - model.p_min
    beta = 0.0 if span.sum() <= 0 else float(np.clip(
        (model.p_dem.sum() - model.p_min.sum()) / span.sum(), 0.0, 1.0))
    p0 = model.p_min + beta * span
    if eliminate:
        reduced = eliminate_dc_state(problem)
        result = solve_nlp(reduced, p0, opts)
        if raise_on_failure:
            _raise_on_failure(result, "DC OPF")
        p = result.z_star
        theta = reduced.theta(p)
    else:
        result = solve_nlp(problem, np.concatenate([np.zeros(n), p0]), opts)
        if raise_on_failure:
            _raise_on_failure(result, "DC OPF")
        theta, p = result.z_star[:n], result.z_star[n:]
    return dc_solution(model, theta, p, result, net)

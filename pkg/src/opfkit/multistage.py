"""Ramp-constrained multi-stage AC OPF, one-shot and receding horizon.

Stage ``k`` owns the block ``(x(k), u(k), du(k))`` with
``x = (v, theta)``, ``u = (p_gen, q_gen)`` and ``du = (dp, dq)``.  The
dynamics ``u(k+1) = u(k) + du(k)`` link consecutive stages.  The increment
of the last stage has no successor and is fixed to zero.  The initial
active injections are pinned to ``u0`` except at the slack bus, whose
generator absorbs the stage-0 losses; the initial reactive injections are
left to the stage-0 power flow.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .network import Network
from .nlp import (Constraints, NlpOptions, NlpProblem, Objective, SolveResult, solve_nlp,
                  stack_constraints)
from .opf import (CostFunction, FeasibilityReport, GridModel, OpfError, ac_balance_constraint,
                  ac_bounds, ac_flow_constraint, ac_initial_guess, certify_ac, grid_model)
from .powerflow import ControlInput, Disturbance, SystemState

CSV_SCHEMA = "# opfkit-multistage v1"


@dataclass(frozen=True)
class LoadProfile:
    """Per-stage bus demands, arrays of shape ``(T, N)`` in p.u."""

    p_dem: np.ndarray
    q_dem: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.p_dem, float))
        q = np.atleast_2d(np.asarray(self.q_dem, float))
        if p.shape != q.shape:
            raise ValueError("p_dem and q_dem must have the same shape")
        object.__setattr__(self, "p_dem", p)
        object.__setattr__(self, "q_dem", q)

    @property
    def horizon(self) -> int:
        return self.p_dem.shape[0]

    def stage(self, k: int) -> Disturbance:
        return Disturbance(self.p_dem[k].copy(), self.q_dem[k].copy())

    def window(self, start: int, stop: int) -> "LoadProfile":
        return LoadProfile(self.p_dem[start:stop], self.q_dem[start:stop])

    @classmethod
    def constant(cls, d: Disturbance, horizon: int) -> "LoadProfile":
        return cls(np.tile(d.p_dem, (horizon, 1)), np.tile(d.q_dem, (horizon, 1)))


def read_profile_csv(path_or_text, net: Network) -> LoadProfile:
    """Read ``stage,bus,p_demand,q_demand`` rows (p.u.).

    Buses not listed for a stage keep the demand of ``net``.  Lines starting
    with ``#`` are comments.
    """
    text = path_or_text
    if "\n" not in str(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    need = {"stage", "bus", "p_demand", "q_demand"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ValueError(f"profile CSV needs columns {sorted(need)}")
    entries = [(int(r["stage"]), int(r["bus"]), float(r["p_demand"]), float(r["q_demand"]))
               for r in reader]
    if not entries:
        raise ValueError("empty load profile")
    stages = sorted({e[0] for e in entries})
    if stages != list(range(len(stages))):
        raise ValueError("profile stages must be numbered 0..T-1 without gaps")
    p = np.tile(net.p_demand, (len(stages), 1))
    q = np.tile(net.q_demand, (len(stages), 1))
    for k, bus, pd, qd in entries:
        i = net.index_of(bus)
        p[k, i], q[k, i] = pd, qd
    return LoadProfile(p, q)


def write_profile_csv(profile: LoadProfile, net: Network) -> str:
    out = io.StringIO()
    out.write("stage,bus,p_demand,q_demand\n")
    for k in range(profile.horizon):
        for i, b in enumerate(net.buses):
            out.write(f"{k},{b.id},{float(profile.p_dem[k, i])!r},{float(profile.q_dem[k, i])!r}\n")
    return out.getvalue()


@dataclass(frozen=True)
class RampSpec:
    """Per-generator active-power increment bounds (p.u. per stage)."""

    dp_min: np.ndarray
    dp_max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.dp_min, float)
        hi = np.asarray(self.dp_max, float)
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("ramp bounds must satisfy dp_min <= 0 <= dp_max")
        object.__setattr__(self, "dp_min", lo)
        object.__setattr__(self, "dp_max", hi)

    @classmethod
    def unlimited(cls, n_gen: int) -> "RampSpec":
        return cls(np.full(n_gen, -np.inf), np.full(n_gen, np.inf))

    @classmethod
    def from_network(cls, net: Network) -> "RampSpec":
        lo = [-np.inf if g.ramp_down is None else g.ramp_down for g in net.generators]
        hi = [np.inf if g.ramp_up is None else g.ramp_up for g in net.generators]
        return cls(np.array(lo, float), np.array(hi, float))

    @classmethod
    def symmetric(cls, n_gen: int, limits: dict[int, float]) -> "RampSpec":
        """Symmetric limits ``{generator index: rate per stage}``; others unlimited."""
        spec = cls.unlimited(n_gen)
        lo, hi = spec.dp_min.copy(), spec.dp_max.copy()
        for j, rate in limits.items():
            lo[j], hi[j] = -rate, rate
        return cls(lo, hi)


def per_stage_rate(rate_per_hour: float, stage_minutes: float) -> float:
    """Convert a ramp rate in p.u./h to p.u. per stage."""
    return rate_per_hour * stage_minutes / 60.0


@dataclass(frozen=True)
class RegularizationSpec:
    """Diagonal weight ``sigma`` (length ``2G``) of ``du^T diag(sigma) du``."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma, float)
        if np.any(s < 0):
            raise ValueError("regularization weights must be nonnegative")
        object.__setattr__(self, "sigma", s)

    @classmethod
    def zero(cls, n_gen: int) -> "RegularizationSpec":
        return cls(np.zeros(2 * n_gen))


@dataclass(frozen=True)
class MultiStageProblem(NlpProblem):
    models: tuple = ()
    block: int = 0
    net: Network | None = None
    cost: CostFunction | None = None
    reg: RegularizationSpec | None = None
    u0: ControlInput | None = None

    @property
    def horizon(self) -> int:
        return len(self.models)


def _stage_offsets(n_bus, n_gen):
    nx, nu = 2 * n_bus, 2 * n_gen
    return nx, nu, nx + 2 * nu


def assemble_multistage(net: Network, profile: LoadProfile, cost: CostFunction | None = None,
                        ramps: RampSpec | None = None, reg: RegularizationSpec | None = None,
                        u0: ControlInput | None = None, u0_free: bool = False) -> MultiStageProblem:
    """Multi-stage AC OPF over ``(x(k), u(k), du(k))``, ``k = 0..T-1``.

    Objective ``sum_k J(u(k)) + du(k)^T Sigma du(k)``; constraints are the
    stage power flows, line limits and boxes, the dynamics and the ramp box
    on the active increments.  ``u0`` pins the stage-0 active injections
    unless ``u0_free`` is set; the generator at the slack bus is exempt so
    that it can absorb the stage-0 losses (pinning it as well leaves the
    stage-0 power flow with no active degree of freedom).
    """
    T = profile.horizon
    if T < 1:
        raise ValueError("horizon must be at least 1")
    ng = net.n_gen
    cost = CostFunction.from_network(net) if cost is None else cost
    ramps = RampSpec.unlimited(ng) if ramps is None else ramps
    reg = RegularizationSpec.zero(ng) if reg is None else reg
    if not u0_free:
        if u0 is None:
            raise ValueError("u0 is required unless u0_free is set")
        p_min = np.array([g.p_min for g in net.generators])
        p_max = np.array([g.p_max for g in net.generators])
        q_min = np.array([g.q_min for g in net.generators])
        q_max = np.array([g.q_max for g in net.generators])
        tol = 1e-9
        if (np.any(u0.p_gen < p_min - tol) or np.any(u0.p_gen > p_max + tol)
                or np.any(u0.q_gen < q_min - tol) or np.any(u0.q_gen > q_max + tol)):
            raise ValueError("u0 lies outside the generator limits")
    models = tuple(grid_model(net, profile.stage(k), cost) for k in range(T))
    n = net.n_bus
    nx, nu, nb = _stage_offsets(n, ng)
    nz = nb * T

    eq_parts, ineq_parts = [], []
    lb = np.empty(nz)
    ub = np.empty(nz)
    for k, model in enumerate(models):
        off = k * nb
        eq_parts.append(ac_balance_constraint(model, off, nz))
        ineq_parts.append(ac_flow_constraint(model, off, nz))
        blo, bhi = ac_bounds(model)
        lb[off:off + nx + nu], ub[off:off + nx + nu] = blo, bhi
        du_lo = np.concatenate([ramps.dp_min, np.full(ng, -np.inf)])
        du_hi = np.concatenate([ramps.dp_max, np.full(ng, np.inf)])
        if k == T - 1:
            du_lo = du_hi = np.zeros(nu)
        lb[off + nx + nu:off + nb], ub[off + nx + nu:off + nb] = du_lo, du_hi
    if not u0_free:
        pinned = net.gen_bus != net.slack
        p0 = np.clip(u0.p_gen, lb[nx:nx + ng], ub[nx:nx + ng])
        idx = nx + np.flatnonzero(pinned)
        lb[idx] = ub[idx] = p0[pinned]

    if T > 1:
        rows = []
        for k in range(T - 1):
            r = np.zeros((nu, nz))
            a = k * nb
            b = (k + 1) * nb
            r[:, b + nx:b + nx + nu] = np.eye(nu)
            r[:, a + nx:a + nx + nu] = -np.eye(nu)
            r[:, a + nx + nu:a + nb] = -np.eye(nu)
            rows.append(r)
        dyn = np.vstack(rows)
        eq_parts.append(Constraints(dyn.shape[0], lambda z: dyn @ z, lambda z: dyn,
                                    lambda z, w: np.zeros((nz, nz))))

    quad = np.zeros(nz)
    lin = np.zeros(nz)
    for k in range(T):
        off = k * nb
        quad[off + nx:off + nx + nu] = cost.quad
        lin[off + nx:off + nx + nu] = cost.lin
        quad[off + nx + nu:off + nb] = reg.sigma
    const = T * cost.constant
    hmat = np.diag(2 * quad)
    objective = Objective(lambda z: float(quad @ z ** 2 + lin @ z + const),
                          lambda z: 2 * quad * z + lin, lambda z: hmat)
    return MultiStageProblem(
        n=nz, objective=objective, eq_constraints=stack_constraints(eq_parts, nz),
        ineq_constraints=stack_constraints(ineq_parts, nz), lb=lb, ub=ub,
        models=models, block=nb, net=net, cost=cost, reg=reg, u0=u0,
    )


@dataclass
class MultiStageSolution:
    x: list[SystemState]
    u: list[ControlInput]
    delta_u: list[ControlInput]
    objective: float
    stage_costs: np.ndarray
    status: str
    result: SolveResult | None = None
    certificates: list[FeasibilityReport] = field(default_factory=list)

    @property
    def p_gen(self) -> np.ndarray:
        return np.array([u.p_gen for u in self.u])

    @property
    def q_gen(self) -> np.ndarray:
        return np.array([u.q_gen for u in self.u])

    @property
    def delta_p(self) -> np.ndarray:
        return np.array([du.p_gen for du in self.delta_u])

    @property
    def feasible(self) -> bool:
        return all(c.ok for c in self.certificates)

    def to_csv(self, net: Network) -> str:
        out = io.StringIO()
        out.write(CSV_SCHEMA + "\n")
        out.write("stage,generator_bus,p,q,delta_p\n")
        for k, (u, du) in enumerate(zip(self.u, self.delta_u)):
            for j, g in enumerate(net.generators):
                out.write(f"{k},{net.buses[g.bus].id},{u.p_gen[j]:.10f},{u.q_gen[j]:.10f},"
                          f"{du.p_gen[j]:.10f}\n")
        return out.getvalue()


def _unpack(problem: MultiStageProblem, z: np.ndarray, result, status):
    net = problem.net
    n, ng = net.n_bus, net.n_gen
    nx, nu, nb = _stage_offsets(n, ng)
    xs, us, dus, costs, certs = [], [], [], [], []
    reg = problem.reg.sigma
    for k, model in enumerate(problem.models):
        off = k * nb
        x = SystemState(z[off:off + n].copy(), z[off + n:off + nx].copy())
        u = ControlInput(z[off + nx:off + nx + ng].copy(), z[off + nx + ng:off + nx + nu].copy())
        xs.append(x)
        us.append(u)
        certs.append(certify_ac(model, x, u))
    # report increments as differences of the returned inputs so that the
    # dynamics hold exactly; they match the solver's du to its tolerance
    for k in range(len(us)):
        if k + 1 < len(us):
            du_vec = us[k + 1].as_vector() - us[k].as_vector()
        else:
            du_vec = np.zeros(nu)
        dus.append(ControlInput(du_vec[:ng], du_vec[ng:]))
        costs.append(problem.cost.evaluate(us[k].as_vector()) + float(reg @ du_vec ** 2))
    costs = np.array(costs)
    return MultiStageSolution(xs, us, dus, float(costs.sum()), costs, status, result, certs)


def multistage_initial_guess(problem: MultiStageProblem) -> np.ndarray:
    net = problem.net
    n, ng = net.n_bus, net.n_gen
    nx, nu, nb = _stage_offsets(n, ng)
    z = np.zeros(problem.n)
    for k, model in enumerate(problem.models):
        off = k * nb
        guess = ac_initial_guess(model)
        z[off:off + nx + nu] = guess
        if problem.u0 is not None:
            z[off + nx:off + nx + ng] = problem.u0.p_gen
    return z


def solve_multistage(problem: MultiStageProblem, opts: NlpOptions | None = None,
                     z0: np.ndarray | None = None, raise_on_failure: bool = True) -> MultiStageSolution:
    """Solve an assembled multi-stage problem; every stage is re-certified."""
    z0 = multistage_initial_guess(problem) if z0 is None else z0
    result = solve_nlp(problem, z0, opts)
    if raise_on_failure and result.status != "converged":
        raise OpfError(f"multi-stage OPF: solver status {result.status}", result.status)
    return _unpack(problem, result.z_star, result, result.status)


class RecedingHorizonError(RuntimeError):
    def __init__(self, stage: int, status: str):
        super().__init__(f"receding-horizon step {stage}: solver status {status}")
        self.stage = stage
        self.status = status


@dataclass
class ClosedLoopResult:
    solution: MultiStageSolution
    accumulated_cost: float
    window: int
    solves: int


def receding_horizon_run(net: Network, profile: LoadProfile, cost: CostFunction | None,
                         ramps: RampSpec | None, reg: RegularizationSpec | None,
                         u0: ControlInput, window: int,
                         opts: NlpOptions | None = None) -> ClosedLoopResult:
    """Closed-loop receding-horizon operation.

    At step ``k`` the problem over stages ``k .. min(k + window, T - 1)`` is
    solved with the stage-``k`` active injections pinned to the applied
    ``u(k)``.  The first planned increment is applied,
    ``u(k+1) = u(k) + du(k)``, and the planned ``x(k+1)`` is kept.  With
    ``window = T - 1`` the first window is the one-shot problem.
    """
    T = profile.horizon
    if window < 1:
        raise ValueError("window must be at least 1")
    if window > max(T - 1, 1):
        raise ValueError(f"window {window} exceeds the look-ahead available in {T} stages")
    cost = CostFunction.from_network(net) if cost is None else cost
    ng = net.n_gen
    reg = RegularizationSpec.zero(ng) if reg is None else reg
    xs: list[SystemState] = []
    us: list[ControlInput] = []
    dus: list[ControlInput] = []
    certs = []
    u_applied = u0
    x_applied = None
    solves = 0
    prev = None
    for k in range(T - 1):
        stop = min(k + window, T - 1) + 1
        problem = assemble_multistage(net, profile.window(k, stop), cost, ramps, reg, u_applied)
        z0 = None
        if prev is not None:
            z0 = _shift_guess(problem, prev)
        try:
            sol = solve_multistage(problem, opts, z0)
        except OpfError as exc:
            raise RecedingHorizonError(k, exc.status) from exc
        solves += 1
        if k == 0:
            x_applied = sol.x[0]
        xs.append(x_applied)
        us.append(sol.u[0])
        dus.append(sol.delta_u[0])
        certs.append(sol.certificates[0])
        u_applied = ControlInput(sol.u[0].p_gen + sol.delta_u[0].p_gen,
                                 sol.u[0].q_gen + sol.delta_u[0].q_gen)
        x_applied = sol.x[1]
        prev = (sol, problem)
    # the last stage follows from the last applied increment
    last_sol, last_problem = prev if prev else (None, None)
    if last_sol is None:
        problem = assemble_multistage(net, profile.window(0, 1), cost, ramps, reg, u0)
        sol = solve_multistage(problem, opts)
        xs, us, dus, certs = [sol.x[0]], [sol.u[0]], [sol.delta_u[0]], [sol.certificates[0]]
    else:
        xs.append(last_sol.x[1])
        us.append(last_sol.u[1])
        dus.append(ControlInput(np.zeros(ng), np.zeros(ng)))
        certs.append(last_sol.certificates[1])
    costs = np.array([cost.evaluate(u.as_vector()) + float(reg.sigma @ du.as_vector() ** 2)
                      for u, du in zip(us, dus)])
    closed = MultiStageSolution(xs, us, dus, float(costs.sum()), costs, "converged", None, certs)
    return ClosedLoopResult(closed, float(costs.sum()), window, solves)


def _shift_guess(problem: MultiStageProblem, prev) -> np.ndarray:
    """Warm start from the previous window shifted by one stage."""
    sol, _ = prev
    z = multistage_initial_guess(problem)
    net = problem.net
    n, ng = net.n_bus, net.n_gen
    nx, nu, nb = _stage_offsets(n, ng)
    for k in range(problem.horizon):
        src = k + 1
        if src >= len(sol.x):
            break
        off = k * nb
        z[off:off + n] = sol.x[src].v
        z[off + n:off + nx] = sol.x[src].theta
        z[off + nx:off + nx + nu] = sol.u[src].as_vector()
        z[off + nx + nu:off + nb] = sol.delta_u[src].as_vector() if k < problem.horizon - 1 else 0.0
    return z

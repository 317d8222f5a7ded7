"""Chance-constrained DC OPF with affine participation policies.

A disturbance ``xi = d - d_mean`` perturbs the bus demands.  Generators
follow the affine policy ``p(xi) = p_base + alpha * Delta`` with the total
imbalance ``Delta = 1^T xi`` and ``sum(alpha) = 1``.  The sum of the
realized net injections is then zero for every outcome, so each realization
is a valid DC power flow.

Under a Gaussian model the expected cost and every individual chance
constraint have closed forms:

* ``E[J] = sum_j H_j (p_j^2 + alpha_j^2 s2) + h_j p_j + c`` with
  ``s2 = 1^T Cov 1``;
* a row ``a^T y(xi) <= b`` holds with probability ``1 - eps`` iff
  ``a^T y_mean + z_{1-eps} std(a^T y) <= b``.

The standard deviations enter through ``sqrt(var + eta^2)``, which is
twice differentiable and never below the true value (it exceeds it by at
most ``eta``), so every smoothed row is conservative.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, stats

from .network import Network
from .nlp import Constraints, NlpOptions, NlpProblem, Objective, SolveResult, solve_nlp
from .opf import CostFunction, grid_model, linear_constraints
from .powerflow import dc_bus_matrix

STD_SMOOTHING = 1e-8
REPORT_SCHEMA = "opfkit.viability-report/1"
DISTURBANCE_SCHEMA = "opfkit.disturbance/1"


class ChanceInfeasibleError(ValueError):
    """The chance-constraint tightening leaves no feasible dispatch."""


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisturbanceModel:
    """Gaussian (``mean``, ``covariance``) or empirical (``samples``) demand model.

    ``mean`` is the expected demand vector (p.u., length N).  For an
    empirical model the samples are demand realizations and the mean and
    covariance are their sample moments.  ``affected_buses`` lists the
    bus indices with nonzero variance.
    """

    kind: str
    mean: np.ndarray
    covariance: np.ndarray | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, float)
        object.__setattr__(self, "mean", mean)
        n = mean.size
        if self.kind == "gaussian":
            cov = np.asarray(self.covariance, float)
            if cov.shape != (n, n):
                raise ValueError(f"covariance must be {n} x {n}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("covariance must be symmetric")
            if np.min(linalg.eigvalsh(cov), initial=0.0) < -1e-10 * max(1.0, np.max(np.abs(cov))):
                raise ValueError("covariance must be positive semidefinite")
            object.__setattr__(self, "covariance", cov)
        elif self.kind == "empirical":
            smp = np.atleast_2d(np.asarray(self.samples, float))
            if smp.shape[1] != n:
                raise ValueError(f"samples must have {n} columns")
            object.__setattr__(self, "samples", smp)
            object.__setattr__(self, "covariance", np.atleast_2d(np.cov(smp, rowvar=False, bias=False))
                               if smp.shape[0] > 1 else np.zeros((n, n)))
        else:
            raise ValueError("kind must be 'gaussian' or 'empirical'")

    @property
    def n_bus(self) -> int:
        return self.mean.size

    @property
    def affected_buses(self) -> np.ndarray:
        return np.flatnonzero(np.diag(self.covariance) > 0)

    @classmethod
    def gaussian(cls, mean, covariance) -> "DisturbanceModel":
        return cls("gaussian", mean, covariance)

    @classmethod
    def independent(cls, mean, std) -> "DisturbanceModel":
        """Gaussian with independent bus demands of standard deviation ``std``."""
        return cls("gaussian", mean, np.diag(np.asarray(std, float) ** 2))

    @classmethod
    def empirical(cls, samples) -> "DisturbanceModel":
        smp = np.atleast_2d(np.asarray(samples, float))
        return cls("empirical", smp.mean(axis=0), samples=smp)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` demand realizations, one per row."""
        if self.kind == "gaussian":
            return rng.multivariate_normal(self.mean, self.covariance, size=n, method="eigh")
        idx = rng.integers(0, self.samples.shape[0], size=n)
        return self.samples[idx]

    def scaled(self, factor: float) -> "DisturbanceModel":
        """Gaussian model with the standard deviations multiplied by ``factor``."""
        if self.kind != "gaussian":
            raise ValueError("only Gaussian models can be scaled")
        return DisturbanceModel("gaussian", self.mean, self.covariance * factor ** 2)


@dataclass(frozen=True)
class AffinePolicy:
    """``p(Delta) = base + participation * Delta``; participations sum to one."""

    base: np.ndarray
    participation: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, float)
        part = np.asarray(self.participation, float)
        if base.shape != part.shape:
            raise ValueError("base and participation must have the same length")
        if abs(part.sum() - 1.0) > 1e-10:
            raise ValueError(f"participation factors must sum to one (sum = {part.sum():.12g})")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "participation", part)

    def dispatch(self, imbalance) -> np.ndarray:
        """Dispatch for a scalar imbalance, or one row per imbalance in an array."""
        imb = np.asarray(imbalance, float)
        return self.base + np.multiply.outer(imb, self.participation)


@dataclass(frozen=True)
class ChanceSpec:
    """Risk levels for generator limits, state limits and line limits."""

    eps_u: float = 0.05
    eps_x: float = 0.05
    eps_c: float = 0.05

    def __post_init__(self):
        for name in ("eps_u", "eps_x", "eps_c"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def z_score(eps: float) -> float:
    """``Phi^{-1}(1 - eps)``."""
    return float(stats.norm.ppf(1.0 - eps))


# ---------------------------------------------------------------------------
# DC maps
# ---------------------------------------------------------------------------

def injection_to_theta(net: Network) -> np.ndarray:
    """Matrix ``M`` with ``theta = M p_net`` (slack phase zero)."""
    n = net.n_bus
    keep = np.delete(np.arange(n), net.slack)
    bmat = dc_bus_matrix(net)
    m = np.zeros((n, n))
    if keep.size:
        m[np.ix_(keep, keep)] = -linalg.inv(bmat[np.ix_(keep, keep)])
    return m


def flow_map(net: Network) -> np.ndarray:
    """Shift-factor matrix ``Phi`` with line flows ``Phi p_net``."""
    model = grid_model(net)
    return -(model.line_b[:, None] * model.incidence()) @ injection_to_theta(net)


def _smooth_std(var, eta=STD_SMOOTHING):
    root = np.sqrt(np.maximum(var, 0.0) + eta ** 2)
    return root, 0.5 / root, -0.25 / root ** 3


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CcDcProblem(NlpProblem):
    """Chance-constrained DC OPF over ``z = (base[G], participation[G], t[G])``.

    ``t_j >= |participation_j|`` is an epigraph variable that keeps the
    generator rows linear.
    """

    net: Network | None = None
    model: DisturbanceModel | None = None
    chance: ChanceSpec | None = None
    row_names: tuple = ()
    imbalance_var: float = 0.0


def assemble_cc_dcopf(net: Network, model: DisturbanceModel, cost: CostFunction | None = None,
                      chance: ChanceSpec | None = None, nonnegative: bool = False) -> CcDcProblem:
    """Deterministic convex reformulation with individual chance constraints.

    Generators with ``p_min == p_max`` keep their fixed output and do not
    participate.  State limits are absent in the DC setting, so ``eps_x``
    has no rows.  ``nonnegative`` restricts participations to ``>= 0``.
    """
    if model.n_bus != net.n_bus:
        raise ValueError(f"disturbance model must have {net.n_bus} buses")
    chance = ChanceSpec() if chance is None else chance
    gm = grid_model(net, cost=cost)
    cost = gm.cost.active(gm.n_gen)
    ng = net.n_gen
    cov = model.covariance
    ones = np.ones(net.n_bus)
    s2 = float(ones @ cov @ ones)
    fixed = gm.p_min == gm.p_max
    z_u = z_score(chance.eps_u)
    z_c = z_score(chance.eps_c)
    if s2 > 0 and (math.isinf(z_u) or math.isinf(z_c)):
        raise ChanceInfeasibleError("a zero risk level cannot be met under nonzero variance")
    z_u = 0.0 if math.isinf(z_u) else z_u
    z_c = 0.0 if math.isinf(z_c) else z_c
    if not np.any(cov):
        # a point mass: no tightening, not even the smoothing offset
        z_u = z_c = 0.0
    movable = np.flatnonzero(~fixed)
    if movable.size == 0 and s2 > 0:
        raise ChanceInfeasibleError("no generator can absorb the imbalance")
    if movable.size == 1 and s2 > 0:
        j = movable[0]
        half = z_u * math.sqrt(s2)
        if gm.p_min[j] + half > gm.p_max[j] - half:
            raise ChanceInfeasibleError(f"tightened box of generator {j} is empty")

    nz = 3 * ng
    names: list[str] = []
    bus_ids = [b.id for b in net.buses]

    # generator rows: +-(p_j) + z sqrt(s2) t_j - bound <= 0 with t_j >= |alpha_j|,
    # so that the standard deviation |alpha_j| sqrt(s2) enters without a kink
    gen_rows = [(j, sgn) for j in movable for sgn in (1.0, -1.0)
                if np.isfinite(gm.p_max[j] if sgn > 0 else gm.p_min[j])]
    for j, sgn in gen_rows:
        names.append(f"gen {bus_ids[gm.gen_bus[j]]} {'p_max' if sgn > 0 else 'p_min'}")

    phi = flow_map(net)
    cg = gm.gen_matrix()
    lim = gm.limited
    kvec = (phi @ cg)[lim]                  # flow response to base dispatch
    t_vec = (phi @ cov @ ones)[lim]         # 1^T Cov phi_l^T
    w_vec = np.einsum("li,ij,lj->l", phi[lim], cov, phi[lim])
    flow_rows = [(r, sgn) for r in range(lim.size) for sgn in (1.0, -1.0)]
    for r, sgn in flow_rows:
        k = lim[r]
        names.append(f"line {bus_ids[gm.line_from[k]]}-{bus_ids[gm.line_to[k]]} "
                     f"{'forward' if sgn > 0 else 'reverse'}")
    offset = (phi @ -model.mean)[lim]
    abs_rows = [(j, sgn) for j in movable for sgn in (1.0, -1.0)]
    for j, sgn in abs_rows:
        names.append(f"gen {bus_ids[gm.gen_bus[j]]} {'+' if sgn > 0 else '-'}participation bound")

    n_rows = len(gen_rows) + len(flow_rows) + len(abs_rows)
    sigma_tot = math.sqrt(s2)

    def pieces(z):
        p, a = z[:ng], z[ng:2 * ng]
        val = np.zeros(n_rows)
        jac = np.zeros((n_rows, nz))
        curv = []  # (row, ds/dv, d2s/dv2, grad_v, hess_v)
        r = 0
        t = z[2 * ng:]
        for j, sgn in gen_rows:
            bound = gm.p_max[j] if sgn > 0 else -gm.p_min[j]
            val[r] = sgn * p[j] + z_u * sigma_tot * t[j] - bound
            jac[r, j] = sgn
            jac[r, 2 * ng + j] = z_u * sigma_tot
            r += 1
        for rr, sgn in flow_rows:
            u = float(kvec[rr] @ a)
            var = s2 * u ** 2 - 2 * t_vec[rr] * u + w_vec[rr]
            s, ds, d2s = _smooth_std(var)
            mean_flow = float(kvec[rr] @ p) + offset[rr]
            val[r] = sgn * mean_flow + z_c * s - gm.line_smax[lim[rr]]
            gv = np.zeros(nz)
            gv[ng:2 * ng] = (2 * s2 * u - 2 * t_vec[rr]) * kvec[rr]
            hv = np.zeros((nz, nz))
            hv[ng:2 * ng, ng:2 * ng] = 2 * s2 * np.outer(kvec[rr], kvec[rr])
            jac[r, :ng] = sgn * kvec[rr]
            jac[r] += z_c * ds * gv
            curv.append((r, z_c, ds, d2s, gv, hv))
            r += 1
        for j, sgn in abs_rows:
            val[r] = sgn * a[j] - t[j]
            jac[r, ng + j] = sgn
            jac[r, 2 * ng + j] = -1.0
            r += 1
        return val, jac, curv

    def hessian(z, w):
        _, _, curv = pieces(z)
        out = np.zeros((nz, nz))
        for r, zs, ds, d2s, gv, hv in curv:
            out += w[r] * zs * (d2s * np.outer(gv, gv) + ds * hv)
        return out

    ineq = Constraints(n_rows, lambda z: pieces(z)[0], lambda z: pieces(z)[1], hessian) if n_rows else None
    eq_rows = [np.concatenate([np.ones(ng), np.zeros(2 * ng)])]
    eq_rhs = [model.mean.sum()]
    if s2 > 0.0:
        eq_rows.append(np.concatenate([np.zeros(ng), np.ones(ng), np.zeros(ng)]))
        eq_rhs.append(1.0)
    eq = linear_constraints(np.vstack(eq_rows), eq_rhs)

    quad, lin = cost.quad, cost.lin
    hdiag = np.concatenate([2 * quad, 2 * quad * s2, np.zeros(ng)])

    def value(z):
        p, a = z[:ng], z[ng:2 * ng]
        return float(quad @ (p ** 2 + a ** 2 * s2) + lin @ p + cost.constant)

    def gradient(z):
        p, a = z[:ng], z[ng:2 * ng]
        return np.concatenate([2 * quad * p + lin, 2 * quad * a * s2, np.zeros(ng)])

    lb = np.concatenate([gm.p_min, np.full(ng, 0.0 if nonnegative else -np.inf), np.zeros(ng)])
    ub = np.concatenate([gm.p_max, np.full(2 * ng, np.inf)])
    for block in (ng, 2 * ng):
        lb[block + np.flatnonzero(fixed)] = ub[block + np.flatnonzero(fixed)] = 0.0
    if s2 == 0.0:
        # participations do not affect anything without imbalance; pin them
        share = (~fixed) / max(int((~fixed).sum()), 1)
        lb[ng:2 * ng] = ub[ng:2 * ng] = share
        # t enters nothing but its own rows here; pin it clear of them
        lb[2 * ng:] = ub[2 * ng:] = 2.0 * (~fixed)
    return CcDcProblem(
        n=nz, objective=Objective(value, gradient, lambda z: np.diag(hdiag)),
        eq_constraints=eq, ineq_constraints=ineq, lb=lb, ub=ub,
        net=net, model=model, chance=chance, row_names=tuple(names), imbalance_var=s2,
    )


@dataclass
class CcSolution:
    policy: AffinePolicy
    objective: float
    status: str
    result: SolveResult
    gen_std: np.ndarray
    flow_mean: np.ndarray
    flow_std: np.ndarray

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def solve_cc_dcopf(net: Network, model: DisturbanceModel, cost: CostFunction | None = None,
                   chance: ChanceSpec | None = None, nonnegative: bool = False,
                   opts: NlpOptions | None = None) -> CcSolution:
    """Assemble and solve the chance-constrained DC OPF."""
    problem = assemble_cc_dcopf(net, model, cost, chance, nonnegative)
    ng = net.n_gen
    gm = grid_model(net)
    movable = gm.p_min != gm.p_max
    span = np.where(movable, gm.p_max - gm.p_min, 0.0)
    beta = float(np.clip((model.mean.sum() - gm.p_min.sum()) / max(span.sum(), 1e-12), 0.0, 1.0))
    p0 = gm.p_min + beta * span
    a0 = movable / max(movable.sum(), 1)
    res = solve_nlp(problem, np.concatenate([p0, a0, 2.0 * a0]), opts)
    if res.status == "infeasible_detected":
        raise ChanceInfeasibleError("the tightened chance constraints are infeasible")
    p, a = res.z_star[:ng], res.z_star[ng:2 * ng]
    # remove the rounding left by the solver so that the policy is exactly balanced
    a = a + (1.0 - a.sum()) / max(movable.sum(), 1) * movable
    policy = AffinePolicy(p, a)
    s2 = problem.imbalance_var
    phi = flow_map(net)
    cg = gm.gen_matrix()
    ones = np.ones(net.n_bus)
    resp = phi @ (np.outer(cg @ a, ones) - np.eye(net.n_bus))
    flow_std = np.sqrt(np.maximum(np.einsum("li,ij,lj->l", resp, model.covariance, resp), 0.0))
    flow_mean = phi @ (cg @ p - model.mean)
    return CcSolution(policy, float(problem.objective.value(np.concatenate([p, a, np.abs(a)]))), res.status,
                      res, np.abs(a) * math.sqrt(s2), flow_mean, flow_std)


# ---------------------------------------------------------------------------
# evaluation and Monte-Carlo validation
# ---------------------------------------------------------------------------

@dataclass
class PolicyEvaluation:
    dispatch: np.ndarray
    theta: np.ndarray
    flows: np.ndarray
    residual: np.ndarray


def evaluate_policy(policy: AffinePolicy, realization, net: Network, mean_demand) -> PolicyEvaluation:
    """Apply the policy to one realization (or one per row) of the bus demands.

    The phases come from the reduced DC power flow; ``residual`` is
    ``||p_net + B theta||_inf`` per realization.
    """
    d = np.atleast_2d(np.asarray(realization, float))
    mean_demand = np.asarray(mean_demand, float)
    imbalance = (d - mean_demand).sum(axis=1)
    dispatch = policy.dispatch(imbalance)
    if dispatch.ndim == 1:
        dispatch = dispatch[None, :]
    n = net.n_bus
    p_net = -d.copy()
    np.add.at(p_net.T, net.gen_bus, dispatch.T)
    keep = np.delete(np.arange(n), net.slack)
    bmat = dc_bus_matrix(net)
    theta = np.zeros_like(p_net)
    if keep.size:
        lu = linalg.lu_factor(bmat[np.ix_(keep, keep)])
        theta[:, keep] = -linalg.lu_solve(lu, p_net[:, keep].T).T
    gm = grid_model(net)
    flows = -(theta[:, gm.line_from] - theta[:, gm.line_to]) * gm.line_b
    residual = np.max(np.abs(p_net + theta @ bmat.T), axis=1)
    single = np.ndim(realization) == 1
    if single:
        return PolicyEvaluation(dispatch[0], theta[0], flows[0], residual[:1])
    return PolicyEvaluation(dispatch, theta, flows, residual)


def clopper_pearson(k: int, n: int, level: float = 0.99) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


@dataclass
class ConstraintViolation:
    name: str
    epsilon: float
    violations: int
    frequency: float
    ci_low: float
    ci_high: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    @property
    def passed(self) -> bool:
        return self.frequency <= self.epsilon + self.half_width


@dataclass
class ViabilityReport:
    n_samples: int
    max_residual: float
    residuals: np.ndarray
    constraints: list
    joint_violation: float
    level: float = 0.99
    seed: int | None = None

    @property
    def viable(self) -> bool:
        return self.max_residual <= 1e-9

    @property
    def passed(self) -> bool:
        return self.viable and all(c.passed for c in self.constraints)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "confidence_level": self.level,
            "max_balance_residual": self.max_residual,
            "viable": self.viable,
            "joint_violation_frequency": self.joint_violation,
            "passed": self.passed,
            "constraints": [
                {"name": c.name, "epsilon": c.epsilon, "violations": c.violations,
                 "frequency": c.frequency, "ci_low": c.ci_low, "ci_high": c.ci_high,
                 "passed": c.passed} for c in self.constraints
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def monte_carlo_validate(policy: AffinePolicy, model: DisturbanceModel, chance: ChanceSpec,
                         net: Network, n_samples: int = 10_000, seed: int = 0,
                         level: float = 0.99, tol: float = 1e-9) -> ViabilityReport:
    """Sample the disturbance, apply the policy and count violations of
    every generator and line limit (each side separately)."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    rng = np.random.default_rng(seed)
    d = model.sample(n_samples, rng)
    ev = evaluate_policy(policy, d, net, model.mean)
    gm = grid_model(net)
    bus_ids = [b.id for b in net.buses]
    rows = []
    masks = []
    for j in range(net.n_gen):
        name = f"gen {bus_ids[gm.gen_bus[j]]}"
        if np.isfinite(gm.p_max[j]):
            rows.append((f"{name} p_max", chance.eps_u))
            masks.append(ev.dispatch[:, j] > gm.p_max[j] + tol)
        if np.isfinite(gm.p_min[j]):
            rows.append((f"{name} p_min", chance.eps_u))
            masks.append(ev.dispatch[:, j] < gm.p_min[j] - tol)
    for k in gm.limited:
        name = f"line {bus_ids[gm.line_from[k]]}-{bus_ids[gm.line_to[k]]}"
        rows.append((f"{name} forward", chance.eps_c))
        masks.append(ev.flows[:, k] > gm.line_smax[k] + tol)
        rows.append((f"{name} reverse", chance.eps_c))
        masks.append(ev.flows[:, k] < -gm.line_smax[k] - tol)
    table = []
    for (name, eps), mask in zip(rows, masks):
        k = int(mask.sum())
        lo, hi = clopper_pearson(k, n_samples, level)
        table.append(ConstraintViolation(name, eps, k, k / n_samples, lo, hi))
    joint = float(np.any(np.vstack(masks), axis=0).mean()) if masks else 0.0
    return ViabilityReport(n_samples, float(ev.residual.max()), ev.residual, table, joint, level, seed)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def disturbance_from_dict(data: dict, net: Network, base_dir: Path | None = None) -> DisturbanceModel:
    """Build a model from JSON data.

    ``mean`` (optional, defaults to the case demand) and ``std`` map bus ids
    to p.u. values; ``covariance`` may instead give the full matrix.  An
    empirical model names a CSV ``sample_file`` (one realization per row,
    one column per bus) or inlines ``samples``.
    """
    kind = data.get("kind", "gaussian")
    mean = net.p_demand.copy()
    for bus, value in (data.get("mean") or {}).items():
        mean[net.index_of(int(bus))] = float(value)
    if kind == "gaussian":
        if "covariance" in data:
            cov = np.asarray(data["covariance"], float)
        else:
            std = np.zeros(net.n_bus)
            for bus, value in (data.get("std") or {}).items():
                std[net.index_of(int(bus))] = float(value)
            cov = np.diag(std ** 2)
        return DisturbanceModel.gaussian(mean, cov)
    if kind == "empirical":
        if "samples" in data:
            smp = np.asarray(data["samples"], float)
        else:
            path = Path(data["sample_file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            smp = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return DisturbanceModel.empirical(smp)
    raise ValueError(f"unknown disturbance kind {kind!r}")


def load_disturbance(path, net: Network) -> DisturbanceModel:
    p = Path(path)
    if not p.exists() and p.suffix == "" and not p.parent.parts:
        from importlib.resources import files
        p = files("opfkit.data") / f"{path}.json"
        return disturbance_from_dict(json.loads(p.read_text()), net)
    return disturbance_from_dict(json.loads(p.read_text()), net, p.parent)


def disturbance_to_dict(model: DisturbanceModel, net: Network) -> dict:
    ids = [b.id for b in net.buses]
    out = {"schema": DISTURBANCE_SCHEMA, "kind": model.kind,
           "mean": {str(i): float(v) for i, v in zip(ids, model.mean)}}
    if model.kind == "gaussian":
        out["covariance"] = model.covariance.tolist()
    else:
        out["samples"] = model.samples.tolist()
    return out


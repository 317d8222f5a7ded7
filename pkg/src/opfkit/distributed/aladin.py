"""ALADIN for partitioned OPF problems.

Each iteration

1. solves the regional problems
   ``min J_i(z_i) + lambda^T A_i z_i + rho/2 ||z_i - zbar_i||^2_Sigma_i``
   subject to the regional power flow, limits and boxes;
2. collects at every local solution the gradient ``g_i``, the Lagrangian
   Hessian ``B_i`` (eigenvalues clamped from below) and the Jacobian ``C_i``
   of the equalities and active inequalities/bounds;
3. solves the coordination QP
   ``min sum 1/2 dz_i^T B_i dz_i + g_i^T dz_i + lambda^T s + mu/2 ||s||^2``
   s.t. ``C_i dz_i = 0`` and ``sum A_i (z_i + dz_i) = s``;
4. updates ``zbar <- zbar + a1 (z - zbar) + a2 dz`` and
   ``lambda <- lambda + a3 (lambda_qp - lambda)``.

Gradient variant: ``g_i = rho Sigma_i (zbar_i - z_i) - A_i^T lambda``.  By
the local optimality conditions this equals the gradient of the regional
Lagrangian ``J_i + kappa_i^T h_i`` at ``z_i``, up to terms in the row space
of ``C_i`` that the constraint ``C_i dz_i = 0`` makes irrelevant.  The QP
is therefore consistent with the local KKT points and its stationary point
coincides with the full-space Newton step when all ``B_i`` are exact.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ..nlp import NlpOptions, SolveResult, eq_qp_kkt_residual, solve_eq_qp, solve_nlp
from .partition import ConsensusSystem, Region

LOG_SCHEMA = "# opfkit-distributed-log v1"


class DistributedError(RuntimeError):
    """Failure inside a distributed solve; ``region`` names the failing region."""

    def __init__(self, message: str, status: str, region: int | None = None):
        super().__init__(message)
        self.status = status
        self.region = region


DEFAULT_SIGMA = {"v": 1.0, "theta": 1.0, "p": 1.0, "q": 1.0}


@dataclass(frozen=True)
class AladinConfig:
    """Parameters of :func:`aladin_solve`.

    ``sigma`` gives the diagonal of every ``Sigma_i`` per variable type.
    The iteration stops once ``rho ||z - zbar||_inf <= eps`` and
    ``||A z||_inf <= consensus_eps`` (``None`` means ``eps``).

    The default growth factors are mild.  Faster growth converges in fewer
    iterations on well-conditioned partitions (see
    :func:`fourteen_bus_config`) but can diverge on arbitrary ones.
    """

    rho0: float = 1e2
    mu0: float = 1e3
    r_rho: float = 1.2
    r_mu: float = 1.2
    rho_max: float = 1e5
    mu_max: float = 1e8
    sigma: dict = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    eps: float = 1e-6
    consensus_eps: float | None = 1e-10
    max_iter: int = 60
    active_set_tol: float = 1e-8
    hessian_floor: float = 1e-6
    line_search: bool = False
    local_tol: float = 1e-10
    local_max_iter: int = 200

    def __post_init__(self):
        for name in ("rho0", "mu0", "rho_max", "mu_max", "eps", "active_set_tol", "hessian_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r_rho < 1 or self.r_mu < 1:
            raise ValueError("penalty growth factors must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if any(v <= 0 for v in self.sigma.values()):
            raise ValueError("sigma weights must be positive")
        if self.consensus_eps is not None and not self.consensus_eps > 0:
            raise ValueError("consensus_eps must be positive")

    @property
    def consensus_tol(self) -> float:
        return self.eps if self.consensus_eps is None else self.consensus_eps

    def local_options(self) -> NlpOptions:
        return NlpOptions(tol=self.local_tol, max_iter=self.local_max_iter)


def fourteen_bus_config() -> AladinConfig:
    """Shipped parameters for the 14-bus three-region study.

    The consensus tolerance is tighter than ``eps`` so that the merged
    solution passes the 1e-6 power-balance certificate on the original
    network even across stiff tie lines.
    """
    return AladinConfig(rho0=1e2, mu0=1e3, r_rho=1.5, r_mu=2.0, rho_max=1e5, mu_max=1e8,
                        sigma={"v": 1.0, "theta": 1.0, "p": 1.0, "q": 1.0}, eps=1e-6,
                        consensus_eps=1e-10, max_iter=40)


# ---------------------------------------------------------------------------
# iteration log
# ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    consensus_violation: float
    local_step_norm: float
    distance_to_reference: float
    rho: float
    mu: float
    alpha: tuple
    region_objectives: tuple
    region_generation: tuple
    message_floats: int
    qp_residual: float = math.nan


@dataclass
class IterationLog:
    records: list = field(default_factory=list)
    algorithm: str = "aladin"

    def __len__(self):
        return len(self.records)

    def append(self, rec: IterationRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iteration index must increase")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], float)

    def first_iteration(self, consensus_tol: float, distance_tol: float | None = None) -> int | None:
        """First iteration whose consensus violation (and optionally distance
        to the reference) is within tolerance."""
        for r in self.records:
            if r.consensus_violation <= consensus_tol and (
                    distance_tol is None or r.distance_to_reference <= distance_tol):
                return r.iteration
        return None

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(LOG_SCHEMA + "\n")
        n_reg = len(self.records[0].region_objectives) if self.records else 0
        header = ["iter", "consensus_violation", "local_step_norm", "distance_to_reference",
                  "rho", "mu", "alpha1", "alpha2", "alpha3"]
        header += [f"objective_region{i + 1}" for i in range(n_reg)]
        header += [f"generation_region{i + 1}" for i in range(n_reg)]
        header += ["message_floats"]
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        for r in self.records:
            row = [r.iteration] + [_fmt(v) for v in (r.consensus_violation, r.local_step_norm,
                                                     r.distance_to_reference, r.rho, r.mu)]
            row += [_fmt(a) for a in r.alpha]
            row += [_fmt(v) for v in r.region_objectives]
            row += [_fmt(v) for v in r.region_generation]
            row.append(r.message_floats)
            writer.writerow(row)
        return out.getvalue()


def _fmt(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.12e}"


# ---------------------------------------------------------------------------
# local step
# ---------------------------------------------------------------------------

@dataclass
class LocalStep:
    """Output of :func:`local_step` for one region.

    ``kappa_eq``/``kappa_ineq`` are the multipliers of the regional
    equalities and inequalities; they enter ``B_i`` and are otherwise kept
    for diagnostics.
    """

    z: np.ndarray
    active_set: np.ndarray
    active_bounds: np.ndarray
    g: np.ndarray
    B: np.ndarray
    C: np.ndarray
    kappa_eq: np.ndarray
    kappa_ineq: np.ndarray
    objective: float
    result: SolveResult


def _active_bounds(z, lb, ub, z_lower, z_upper, tol):
    fixed = lb == ub
    dl = z - lb
    du = ub - z
    with np.errstate(invalid="ignore"):
        low = np.isfinite(lb) & ((dl <= tol) | (z_lower > dl))
        up = np.isfinite(ub) & ((du <= tol) | (z_upper > du))
    return np.flatnonzero(fixed | low | up)


def clamp_eigenvalues(mat: np.ndarray, floor: float) -> np.ndarray:
    """Symmetric eigenvalue clamping ``max(lambda_j, floor)``."""
    sym = 0.5 * (mat + mat.T)
    w, v = linalg.eigh(sym)
    return (v * np.maximum(w, floor)) @ v.T


def local_step(region: Region, lam_term: np.ndarray, z_bar: np.ndarray, rho: float,
               sigma: np.ndarray, config: AladinConfig | None = None,
               z0: np.ndarray | None = None) -> LocalStep:
    """Solve the regional problem and build the coordination data.

    ``lam_term`` is ``A_i^T lambda``.  The active set holds the
    inequalities with ``|h_j| <= active_set_tol`` together with those whose
    multiplier exceeds their distance to the boundary (interior-point
    solutions approach active constraints only up to the barrier level).
    """
    config = AladinConfig() if config is None else config
    problem = region.local_problem(lam_term, z_bar, rho, sigma)
    start = z_bar if z0 is None else z0
    lb, ub = problem.lower, problem.upper
    start = np.where(np.isfinite(lb), np.maximum(start, lb), start)
    start = np.where(np.isfinite(ub), np.minimum(start, ub), start)
    res = solve_nlp(problem, start, config.local_options())
    if res.status != "converged":
        raise DistributedError(f"local problem of region {region.region_id}: {res.status}",
                               res.status, region.region_id)
    z = res.z_star
    eq, ineq = region.constraints()
    rows = [eq.jacobian(z)] if eq is not None else []
    kappa_in = res.mu_ineq
    if ineq is not None:
        h = ineq.value(z)
        active = np.flatnonzero((np.abs(h) <= config.active_set_tol) | (kappa_in > -h))
        if active.size:
            rows.append(ineq.jacobian(z)[active])
    else:
        active = np.zeros(0, int)
    bounds = _active_bounds(z, lb, ub, res.z_lower, res.z_upper, config.active_set_tol)
    if bounds.size:
        unit = np.zeros((bounds.size, region.n))
        unit[np.arange(bounds.size), bounds] = 1.0
        rows.append(unit)
    cmat = np.vstack(rows) if rows else np.zeros((0, region.n))

    hess = region.objective_hessian()
    if eq is not None and eq.hessian is not None:
        hess = hess + eq.hessian(z, res.lambda_eq)
    if ineq is not None and ineq.hessian is not None:
        hess = hess + ineq.hessian(z, kappa_in)
    bmat = clamp_eigenvalues(hess, config.hessian_floor)
    g = rho * sigma * (z_bar - z) - lam_term
    return LocalStep(z=z, active_set=active, active_bounds=bounds, g=g, B=bmat, C=cmat,
                     kappa_eq=res.lambda_eq, kappa_ineq=kappa_in,
                     objective=region.objective_value(z), result=res)


# ---------------------------------------------------------------------------
# coordination and update
# ---------------------------------------------------------------------------

@dataclass
class CoordinationResult:
    dz: list
    lambda_qp: np.ndarray
    kkt_residual: float


def coordination_step(locals_: list[LocalStep], consensus: ConsensusSystem, lam: np.ndarray,
                      mu: float) -> CoordinationResult:
    """Solve the coordination QP; returns per-region steps and ``lambda_qp``."""
    sizes = [loc.z.size for loc in locals_]
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    hess = [loc.B for loc in locals_]
    grad = np.concatenate([loc.g for loc in locals_])
    cmat = [loc.C for loc in locals_]
    residual = consensus.residual([loc.z for loc in locals_])
    blocks = list(consensus.blocks)
    dz, lambda_qp, gamma = solve_eq_qp(hess, grad, cmat, (blocks, residual), mu, lam,
                                       return_gamma=True)
    kkt = eq_qp_kkt_residual(hess, grad, cmat, (blocks, residual), mu, lam, dz, lambda_qp, gamma)
    return CoordinationResult([dz[a:b] for a, b in zip(offs[:-1], offs[1:])], lambda_qp, kkt)


@dataclass
class AladinState:
    z_bar: list
    lam: np.ndarray
    rho: float
    mu: float


def _merit(regions, consensus, zs, weight):
    """``sum J_i + weight (||A z||_1 + ||c_E||_1 + ||max(c_I, 0)||_1)``."""
    total = 0.0
    viol = float(np.abs(consensus.residual(zs)).sum()) if consensus.m else 0.0
    for reg, z in zip(regions, zs):
        total += reg.objective_value(z)
        eq, ineq = reg.constraints()
        if eq is not None:
            viol += float(np.abs(eq.value(z)).sum())
        if ineq is not None:
            viol += float(np.maximum(ineq.value(z), 0.0).sum())
        lb, ub = reg.bounds()
        with np.errstate(invalid="ignore"):
            viol += float(np.nansum(np.maximum(lb - z, 0.0)) + np.nansum(np.maximum(z - ub, 0.0)))
    return total + weight * viol


def update_and_linesearch(state: AladinState, zs: list, dz: list, lambda_qp: np.ndarray,
                          config: AladinConfig, regions=None, consensus=None):
    """Primal/dual update with optional merit line search and penalty growth.

    Returns ``(next_state, (alpha1, alpha2, alpha3))``.  Without line search
    all step sizes are one, so ``zbar+ = z + dz`` and ``lambda+ =
    lambda_qp``.  With line search, the full step is tried first against the
    l1 merit at ``zbar``; otherwise a common step ``alpha`` along
    ``z + dz - zbar`` is halved until the merit decreases.  Penalties grow
    only after full steps.
    """
    alphas = (1.0, 1.0, 1.0)
    if config.line_search:
        if regions is None or consensus is None:
            raise ValueError("line search needs the regions and the consensus system")
        weight = max(1.0, 2.0 * float(np.max(np.abs(lambda_qp), initial=0.0)))
        base = _merit(regions, consensus, state.z_bar, weight)
        full = [z + d for z, d in zip(zs, dz)]
        if _merit(regions, consensus, full, weight) > base:
            alpha = 0.5
            while alpha > 1e-4:
                trial = [zb + alpha * (z + d - zb) for zb, z, d in zip(state.z_bar, zs, dz)]
                if _merit(regions, consensus, trial, weight) < base:
                    break
                alpha *= 0.5
            alphas = (alpha, alpha, alpha)
    a1, a2, a3 = alphas
    z_bar = [zb + a1 * (z - zb) + a2 * d for zb, z, d in zip(state.z_bar, zs, dz)]
    lam = state.lam + a3 * (lambda_qp - state.lam)
    rho, mu = state.rho, state.mu
    if alphas == (1.0, 1.0, 1.0):
        rho = min(config.rho_max, config.r_rho * rho) if rho < config.rho_max else rho
        mu = min(config.mu_max, config.r_mu * mu) if mu < config.mu_max else mu
    return AladinState(z_bar, lam, rho, mu), alphas


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class DistributedResult:
    zs: list
    lam: np.ndarray
    status: str
    iterations: int
    log: IterationLog
    objective: float
    elapsed: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def z(self) -> np.ndarray:
        return np.concatenate(self.zs)


def _distance(zs, reference):
    if reference is None:
        return math.nan
    return float(np.max(np.abs(np.concatenate(zs) - np.concatenate(reference))))


def _generation(reg: Region, z: np.ndarray) -> float:
    return float(sum(z[reg.p_index(j)] for j in range(reg.generators.size)))


def message_floats(loc: LocalStep) -> int:
    """Floats sent by one region: ``z_i``, ``g_i``, the upper triangle of
    ``B_i`` and ``C_i``."""
    n = loc.z.size
    return 2 * n + n * (n + 1) // 2 + loc.C.size


def aladin_solve(regions: list[Region], consensus: ConsensusSystem,
                 config: AladinConfig | None = None, reference: list | None = None,
                 z_bar0: list | None = None, lam0: np.ndarray | None = None,
                 raise_on_failure: bool = False) -> DistributedResult:
    """Run ALADIN from ``z_bar0`` (default: regional initial guesses) and
    ``lam0`` (default: zero).

    ``reference`` holds regional vectors of a centralized solution; the log
    then records ``||z - z*||_inf``.  With a single region and no coupling
    the regional problem is solved once with ``rho = 0``.
    """
    config = AladinConfig() if config is None else config
    t0 = time.perf_counter()
    log = IterationLog(algorithm="aladin")
    z_bar = [r.initial_guess() for r in regions] if z_bar0 is None else [np.array(z, float) for z in z_bar0]
    lam = np.zeros(consensus.m) if lam0 is None else np.array(lam0, float)
    sigmas = [r.scaling(config.sigma) for r in regions]

    if consensus.m == 0:
        locs = [local_step(r, np.zeros(r.n), zb, 0.0, s, config) for r, zb, s in zip(regions, z_bar, sigmas)]
        zs = [loc.z for loc in locs]
        log.append(IterationRecord(1, 0.0, 0.0, _distance(zs, reference), 0.0, config.mu0,
                                   (1.0, 1.0, 1.0), tuple(loc.objective for loc in locs),
                                   tuple(_generation(r, z) for r, z in zip(regions, zs)),
                                   sum(message_floats(loc) for loc in locs)))
        return DistributedResult(zs, lam, "converged", 1, log, sum(loc.objective for loc in locs),
                                 time.perf_counter() - t0)

    state = AladinState(z_bar, lam, config.rho0, config.mu0)
    prev = [None] * len(regions)
    status = "max_iter"
    zs = z_bar
    for k in range(1, config.max_iter + 1):
        locs = []
        for i, reg in enumerate(regions):
            try:
                locs.append(local_step(reg, consensus.multiplier_term(i, state.lam), state.z_bar[i],
                                       state.rho, sigmas[i], config, prev[i]))
            except DistributedError:
                if raise_on_failure:
                    raise
                return _failed(locs, zs, state, log, t0, "local_failure")
        zs = [loc.z for loc in locs]
        prev = zs
        viol = float(np.max(np.abs(consensus.residual(zs))))
        step = state.rho * max(float(np.max(np.abs(z - zb))) for z, zb in zip(zs, state.z_bar))
        rec = IterationRecord(
            k, viol, step, _distance(zs, reference), state.rho, state.mu, (math.nan,) * 3,
            tuple(loc.objective for loc in locs), tuple(_generation(r, z) for r, z in zip(regions, zs)),
            sum(message_floats(loc) for loc in locs))
        if viol <= config.consensus_tol and step <= config.eps:
            log.append(rec)
            status = "converged"
            break
        coord = coordination_step(locs, consensus, state.lam, state.mu)
        state, alphas = update_and_linesearch(state, zs, coord.dz, coord.lambda_qp, config,
                                              regions, consensus)
        rec.alpha = alphas
        rec.qp_residual = coord.kkt_residual
        log.append(rec)
    if status != "converged" and raise_on_failure:
        raise DistributedError(f"ALADIN stopped after {config.max_iter} iterations", status)
    return DistributedResult(zs, state.lam, status, len(log), log,
                             sum(r.objective_value(z) for r, z in zip(regions, zs)),
                             time.perf_counter() - t0)


def _failed(locs, zs, state, log, t0, status):
    return DistributedResult(zs, state.lam, status, len(log), log, math.nan, time.perf_counter() - t0)



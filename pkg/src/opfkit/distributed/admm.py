"""Consensus ADMM over the same region and auxiliary-pair structure.

Every consensus row ``z_a + c z_b = 0`` (``c = +-1``) gets a global value
``y``: the entry of region ``a`` should equal ``y`` and the entry of region
``b`` should equal ``-c y``.  One iteration

1. solves the regional augmented-Lagrangian problems
   ``min J_i(z_i) + w_i^T z_i + rho/2 ||z_i - t_i||^2_Sigma_i`` over the
   coupled entries, with targets ``t_i`` built from ``y``;
2. averages the two sides of each row into the new ``y``;
3. performs the dual ascent ``w_i <- w_i + rho Sigma_i (z_i - t_i)``.

The penalty ``rho`` is fixed.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..nlp import NlpOptions, solve_nlp
from .aladin import (DEFAULT_SIGMA, DistributedError, DistributedResult, IterationLog,
                     IterationRecord, _distance, _generation)
from .partition import ConsensusSystem, Region


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1e3
    sigma: dict = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    eps: float = 1e-4
    max_iter: int = 300
    local_tol: float = 1e-10
    local_max_iter: int = 200

    def __post_init__(self):
        if not self.rho > 0 or not self.eps > 0:
            raise ValueError("rho and eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def dc_config() -> AdmmConfig:
    """Parameters for DC splits.

    Phase mismatches across stiff tie lines carry large flow errors, so
    phases are weighted more heavily than injections.
    """
    return AdmmConfig(rho=1e3, sigma={"v": 1.0, "theta": 3e3, "p": 1.0, "q": 1.0}, eps=1e-6,
                      max_iter=600)


@dataclass(frozen=True)
class _Coupling:
    """Per consensus row: (region, entry) of both sides and the sign of side b."""

    region_a: np.ndarray
    entry_a: np.ndarray
    region_b: np.ndarray
    entry_b: np.ndarray
    sign_b: np.ndarray


def _coupling(consensus: ConsensusSystem) -> _Coupling:
    ra, ea, rb, eb, sb = [], [], [], [], []
    for row in range(consensus.m):
        hits = [(i, int(j), blk[row, j]) for i, blk in enumerate(consensus.blocks)
                for j in np.flatnonzero(blk[row])]
        if len(hits) != 2 or abs(hits[0][2]) != 1.0 or abs(hits[1][2]) != 1.0:
            raise ValueError("ADMM expects consensus rows that match two entries")
        (i, j, ca), (k, l, cb) = hits
        ra.append(i)
        ea.append(j)
        rb.append(k)
        eb.append(l)
        sb.append(cb / ca)
    return _Coupling(*(np.array(v) for v in (ra, ea, rb, eb, sb)))


def admm_solve(regions: list[Region], consensus: ConsensusSystem, config: AdmmConfig | None = None,
               reference: list | None = None, z0: list | None = None,
               raise_on_failure: bool = False) -> DistributedResult:
    """Run consensus ADMM until ``||A z||_inf <= eps`` and the change of the
    global values, scaled by ``rho``, is at most ``eps``."""
    config = AdmmConfig() if config is None else config
    t0 = time.perf_counter()
    log = IterationLog(algorithm="admm")
    opts = NlpOptions(tol=config.local_tol, max_iter=config.local_max_iter)
    zs = [r.initial_guess() for r in regions] if z0 is None else [np.array(z, float) for z in z0]
    sigmas = [r.scaling(config.sigma) for r in regions]

    if consensus.m == 0:
        out = []
        for reg, z in zip(regions, zs):
            res = solve_nlp(reg.local_problem(), z, opts)
            if res.status != "converged":
                raise DistributedError(f"region {reg.region_id}: {res.status}", res.status, reg.region_id)
            out.append(res.z_star)
        objs = tuple(r.objective_value(z) for r, z in zip(regions, out))
        log.append(IterationRecord(1, 0.0, 0.0, _distance(out, reference), config.rho, math.nan,
                                   (1.0, 1.0, 1.0), objs,
                                   tuple(_generation(r, z) for r, z in zip(regions, out)), 0))
        return DistributedResult(out, np.zeros(0), "converged", 1, log, sum(objs),
                                 time.perf_counter() - t0)

    cp = _coupling(consensus)
    masks = [np.zeros(r.n) for r in regions]
    for i, j in zip(cp.region_a, cp.entry_a):
        masks[i][j] = 1.0
    for i, j in zip(cp.region_b, cp.entry_b):
        masks[i][j] = 1.0
    duals = [np.zeros(r.n) for r in regions]
    # global values start from the average of the initial guesses
    y = 0.5 * (np.array([zs[i][j] for i, j in zip(cp.region_a, cp.entry_a)])
               - cp.sign_b * np.array([zs[i][j] for i, j in zip(cp.region_b, cp.entry_b)]))
    status = "max_iter"
    for k in range(1, config.max_iter + 1):
        targets = [z.copy() for z in zs]
        for row in range(consensus.m):
            targets[cp.region_a[row]][cp.entry_a[row]] = y[row]
            targets[cp.region_b[row]][cp.entry_b[row]] = -cp.sign_b[row] * y[row]
        new = []
        for i, reg in enumerate(regions):
            problem = reg.local_problem(duals[i], targets[i], config.rho, sigmas[i] * masks[i])
            lb, ub = problem.lower, problem.upper
            start = np.clip(zs[i], np.where(np.isfinite(lb), lb, -np.inf), np.where(np.isfinite(ub), ub, np.inf))
            res = solve_nlp(problem, start, opts)
            if res.status != "converged":
                if raise_on_failure:
                    raise DistributedError(f"local problem of region {reg.region_id}: {res.status}",
                                           res.status, reg.region_id)
                return DistributedResult(zs, np.zeros(consensus.m), "local_failure", len(log), log,
                                         math.nan, time.perf_counter() - t0)
            new.append(res.z_star)
        zs = new
        ta = np.array([zs[i][j] + duals[i][j] / (config.rho * sigmas[i][j])
                       for i, j in zip(cp.region_a, cp.entry_a)])
        tb = np.array([zs[i][j] + duals[i][j] / (config.rho * sigmas[i][j])
                       for i, j in zip(cp.region_b, cp.entry_b)])
        y_new = 0.5 * (ta - cp.sign_b * tb)
        for row in range(consensus.m):
            i, j = cp.region_a[row], cp.entry_a[row]
            duals[i][j] += config.rho * sigmas[i][j] * (zs[i][j] - y_new[row])
            i, j = cp.region_b[row], cp.entry_b[row]
            duals[i][j] += config.rho * sigmas[i][j] * (zs[i][j] + cp.sign_b[row] * y_new[row])
        viol = float(np.max(np.abs(consensus.residual(zs))))
        change = config.rho * float(np.max(np.abs(y_new - y)))
        y = y_new
        log.append(IterationRecord(
            k, viol, change, _distance(zs, reference), config.rho, math.nan, (1.0, 1.0, 1.0),
            tuple(r.objective_value(z) for r, z in zip(regions, zs)),
            tuple(_generation(r, z) for r, z in zip(regions, zs)),
            sum(int(m.sum()) for m in masks)))
        if viol <= config.eps and change <= config.eps:
            status = "converged"
            break
    if status != "converged" and raise_on_failure:
        raise DistributedError(f"ADMM stopped after {config.max_iter} iterations", status)
    lam = np.array([duals[i][j] for i, j in zip(cp.region_a, cp.entry_a)])
    return DistributedResult(zs, lam, status, len(log), log,
                             sum(r.objective_value(z) for r, z in zip(regions, zs)),
                             time.perf_counter() - t0)

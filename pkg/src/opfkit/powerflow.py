"""AC and DC power flow in polar coordinates.

Residual convention: for every bus ``l`` the AC residual is the net
injection minus the power leaving the bus through the network,

    F_p[l] = p_net[l] - v_l sum_m v_m (G_lm cos t_lm + B_lm sin t_lm)
    F_q[l] = q_net[l] - v_l sum_m v_m (G_lm sin t_lm - B_lm cos t_lm)

with ``p_net = p_gen - p_dem`` at generator buses and ``-p_dem`` elsewhere.
Derivatives use the complex formulation ``S = diag(V) conj(Y V)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .network import AdmittanceMatrix, Network, build_admittance, incidence_and_branch_susceptance


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemState:
    v: np.ndarray
    theta: np.ndarray

    @classmethod
    def flat(cls, n: int) -> "SystemState":
        return cls(np.ones(n), np.zeros(n))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.theta])


@dataclass(frozen=True)
class ControlInput:
    p_gen: np.ndarray
    q_gen: np.ndarray

    @classmethod
    def zeros(cls, n_gen: int) -> "ControlInput":
        return cls(np.zeros(n_gen), np.zeros(n_gen))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_gen, self.q_gen])


@dataclass(frozen=True)
class Disturbance:
    p_dem: np.ndarray
    q_dem: np.ndarray

    @classmethod
    def from_network(cls, net: Network) -> "Disturbance":
        return cls(net.p_demand, net.q_demand)


@dataclass(frozen=True)
class DcState:
    theta: np.ndarray


@dataclass(frozen=True)
class PfOptions:
    tol: float = 1e-8
    max_iter: int = 20
    armijo: float = 1e-4
    min_step: float = 2.0 ** -20


@dataclass(frozen=True)
class PfResult:
    x: SystemState
    u: ControlInput
    iterations: int
    residual_norm: float


def _check_dims(x, u, d, y, gen_bus):
    n = y.g_matrix.shape[0]
    if x.v.shape != (n,) or x.theta.shape != (n,):
        raise ValueError(f"dimension mismatch: state must have length {n}")
    if d.p_dem.shape != (n,) or d.q_dem.shape != (n,):
        raise ValueError(f"dimension mismatch: disturbance must have length {n}")
    ng = len(gen_bus)
    if u.p_gen.shape != (ng,) or u.q_gen.shape != (ng,):
        raise ValueError(f"dimension mismatch: control input must have length {ng}")
    return n, ng


def _gen_bus(u, gen_bus):
    if gen_bus is None:
        if len(u.p_gen):
            raise ValueError("gen_bus is required when generators are present")
        return np.zeros(0, dtype=int)
    return np.asarray(gen_bus, dtype=int)


def bus_injection(v: np.ndarray, theta: np.ndarray, y: AdmittanceMatrix):
    """Power leaving each bus into the network, ``(p, q)``."""
    volt = v * np.exp(1j * theta)
    s = volt * np.conj(y.complex @ volt)
    return s.real, s.imag


def ac_residual(x: SystemState, u: ControlInput, d: Disturbance, y: AdmittanceMatrix,
                gen_bus=None) -> np.ndarray:
    """AC power-flow residual of length ``2N`` (active rows, then reactive)."""
    gen_bus = _gen_bus(u, gen_bus)
    n, _ = _check_dims(x, u, d, y, gen_bus)
    p, q = bus_injection(x.v, x.theta, y)
    p_net = -d.p_dem.astype(float)
    q_net = -d.q_dem.astype(float)
    np.add.at(p_net, gen_bus, u.p_gen)
    np.add.at(q_net, gen_bus, u.q_gen)
    return np.concatenate([p_net - p, q_net - q])


def injection_derivatives(v: np.ndarray, theta: np.ndarray, y: AdmittanceMatrix):
    """``(dS/dv, dS/dtheta)`` of ``S = diag(V) conj(Y V)`` as complex N x N arrays."""
    volt = v * np.exp(1j * theta)
    ybus = y.complex
    current = ybus @ volt
    unit = volt / v
    ds_dtheta = 1j * np.diag(volt) @ np.conj(np.diag(current) - ybus * volt[None, :])
    ds_dv = np.diag(volt) @ np.conj(ybus * unit[None, :]) + np.diag(np.conj(current) * unit)
    return ds_dv, ds_dtheta


def ac_jacobian(x: SystemState, u: ControlInput, d: Disturbance, y: AdmittanceMatrix,
                gen_bus=None) -> np.ndarray:
    """Jacobian of :func:`ac_residual` with columns ordered ``(v, theta, p_gen, q_gen)``."""
    gen_bus = _gen_bus(u, gen_bus)
    n, ng = _check_dims(x, u, d, y, gen_bus)
    ds_dv, ds_dtheta = injection_derivatives(x.v, x.theta, y)
    jac = np.zeros((2 * n, 2 * n + 2 * ng))
    jac[:n, :n] = -ds_dv.real
    jac[n:, :n] = -ds_dv.imag
    jac[:n, n:2 * n] = -ds_dtheta.real
    jac[n:, n:2 * n] = -ds_dtheta.imag
    cols = np.arange(ng)
    jac[gen_bus, 2 * n + cols] = 1.0
    jac[n + gen_bus, 2 * n + ng + cols] = 1.0
    return jac


def solve_ac_pf(net: Network, u: ControlInput, d: Disturbance, x0: SystemState | None = None,
                opts: PfOptions = PfOptions(), full_output: bool = False):
    """Newton power flow with MATPOWER bus types.

    The slack bus keeps ``v`` and ``theta`` from ``x0`` and its generator
    absorbs the active and reactive mismatch.  Other generator buses keep
    ``v`` from ``x0`` and ``p_gen`` from ``u`` while their ``q_gen`` is free.
    All remaining buses have free ``v`` and ``theta``.

    Returns the solved :class:`SystemState`, or a :class:`PfResult` that also
    carries the adjusted control input when ``full_output`` is set.
    """
    n, ng = net.n_bus, net.n_gen
    x0 = SystemState.flat(n) if x0 is None else x0
    if x0.theta[net.slack] != 0.0:
        raise ValueError("x0 must have zero slack phase")
    y = build_admittance(net)
    gen_bus = net.gen_bus
    slack_gen = np.flatnonzero(gen_bus == net.slack)
    if slack_gen.size == 0:
        raise PowerFlowError("the slack bus has no generator to absorb the power balance")
    pv = np.zeros(n, dtype=bool)
    pv[gen_bus] = True
    pv[net.slack] = False
    pq = ~pv
    pq[net.slack] = False

    z = np.concatenate([x0.v, x0.theta, u.p_gen, u.q_gen]).astype(float)
    free = np.concatenate([
        np.flatnonzero(pq),
        n + np.delete(np.arange(n), net.slack),
        2 * n + slack_gen,
        2 * n + ng + np.arange(ng),
    ])

    def residual(zz):
        return ac_residual(SystemState(zz[:n], zz[n:2 * n]),
                           ControlInput(zz[2 * n:2 * n + ng], zz[2 * n + ng:]), d, y, gen_bus)

    f = residual(z)
    it = 0
    while np.max(np.abs(f), initial=0.0) > opts.tol:
        if it >= opts.max_iter:
            raise PowerFlowError(f"Newton power flow did not converge in {opts.max_iter} iterations "
                                 f"(residual {np.max(np.abs(f)):.3e})")
        jac = ac_jacobian(SystemState(z[:n], z[n:2 * n]),
                          ControlInput(z[2 * n:2 * n + ng], z[2 * n + ng:]), d, y, gen_bus)[:, free]
        try:
            lu = linalg.lu_factor(jac, check_finite=True)
            if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * max(1.0, np.max(np.abs(jac))):
                raise linalg.LinAlgError
            step = -linalg.lu_solve(lu, f)
        except (linalg.LinAlgError, ValueError) as exc:
            raise PowerFlowError("singular power-flow Jacobian") from exc
        merit = f @ f
        alpha = 1.0
        while True:
            trial = z.copy()
            trial[free] += alpha * step
            f_trial = residual(trial)
            if f_trial @ f_trial <= (1.0 - 2.0 * opts.armijo * alpha) * merit:
                break
            alpha *= 0.5
            if alpha < opts.min_step:
                raise PowerFlowError("power-flow line search failed")
        z, f = trial, f_trial
        it += 1
    theta = z[n:2 * n].copy()
    theta[net.slack] = 0.0
    x = SystemState(z[:n].copy(), theta)
    if not full_output:
        return x
    return PfResult(x, ControlInput(z[2 * n:2 * n + ng].copy(), z[2 * n + ng:].copy()),
                    it, float(np.max(np.abs(f), initial=0.0)))


def dc_bus_matrix(net: Network) -> np.ndarray:
    """The DC bus matrix ``B = Im Y``."""
    return build_admittance(net).b_matrix


def reduced_dc_matrix(net: Network) -> np.ndarray:
    keep = np.delete(np.arange(net.n_bus), net.slack)
    return dc_bus_matrix(net)[np.ix_(keep, keep)]


def solve_dc_pf(net: Network, p_net: np.ndarray) -> DcState:
    """Solve ``p_net = -B theta`` with the slack phase fixed at zero."""
    p_net = np.asarray(p_net, dtype=float)
    if p_net.shape != (net.n_bus,):
        raise ValueError(f"dimension mismatch: p_net must have length {net.n_bus}")
    if abs(p_net.sum()) > 1e-9:
        raise ValueError(f"net injections must sum to zero (sum = {p_net.sum():.3e})")
    keep = np.delete(np.arange(net.n_bus), net.slack)
    theta = np.zeros(net.n_bus)
    if keep.size:
        b_red = reduced_dc_matrix(net)
        try:
            theta[keep] = linalg.solve(b_red, -p_net[keep], assume_a="sym")
        except linalg.LinAlgError as exc:
            raise PowerFlowError("singular reduced DC matrix") from exc
    return DcState(theta)


def line_flows_ac(x: SystemState, net: Network, reverse: bool = False):
    """Per-line ``(p, q, |s|)`` measured at the from-bus (to-bus if ``reverse``)."""
    a = np.array([ln.from_bus for ln in net.lines], dtype=int)
    b = np.array([ln.to_bus for ln in net.lines], dtype=int)
    if reverse:
        a, b = b, a
    g = np.array([ln.g for ln in net.lines])
    bb = np.array([ln.b for ln in net.lines])
    va, vb = x.v[a], x.v[b]
    t = x.theta[a] - x.theta[b]
    cos, sin = np.cos(t), np.sin(t)
    p = va ** 2 * g - va * vb * (g * cos + bb * sin)
    q = -va ** 2 * bb + va * vb * (bb * cos - g * sin)
    return p, q, np.hypot(p, q)


def line_flows_dc(theta: DcState | np.ndarray, net: Network) -> np.ndarray:
    """DC line flows ``-B_br A theta``."""
    theta = theta.theta if isinstance(theta, DcState) else np.asarray(theta)
    a, b_br = incidence_and_branch_susceptance(net)
    return -b_br @ (a @ theta)

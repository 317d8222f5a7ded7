"""Command-line front end.

Every subcommand loads a case, runs one solver, re-checks the answer with
the independent feasibility certificate and writes its artifacts to
``--output-dir``:

* ``solution.json``: dispatch, state, objective and binding constraints;
* a CSV iteration log with a schema line first;
* ``summary.txt``: the text printed to stdout.

Exit codes: 0 converged and certified, 1 usage or input error, 2 infeasible
(or certificate failure), 3 iteration limit or other non-convergence,
4 a ``reproduce`` check failed.  Errors go to stderr prefixed ``error:``.
The log level comes from ``OPFKIT_LOG_LEVEL`` (default ``WARNING``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .network import CaseError, Network, load_case
from .nlp import STATUS_CONVERGED, STATUS_INFEASIBLE, NlpOptions, write_trace
from .opf import OpfError, certify_ac, certify_dc, grid_model, solve_ac_opf, solve_dc_opf
from .powerflow import (ControlInput, Disturbance, PowerFlowError, SystemState, line_flows_ac,
                        line_flows_dc, solve_ac_pf, solve_dc_pf)

log = logging.getLogger("opfkit")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_MAX_ITER = 3
EXIT_CHECK_FAILED = 4

PF_SCHEMA = "# opfkit-pf v1"


class UsageError(Exception):
    """Bad flags, missing files or unparsable inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """Resolved options of one CLI run."""

    subcommand: str
    case_path: str | None = None
    method: str = "ac"
    tol: float = 1e-8
    max_iter: int = 200
    partition_path: str | None = None
    profile_path: str | None = None
    disturbance_path: str | None = None
    output_dir: Path = Path("opfkit-out")
    seed: int = 0
    currency: str = "US$"
    extra: dict = field(default_factory=dict)

    def nlp_options(self) -> NlpOptions:
        return NlpOptions(tol=self.tol, max_iter=self.max_iter)


@dataclass
class Outcome:
    code: int
    summary: list[str]
    files: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def resolve_input(path: str, kind: str, suffixes: tuple[str, ...]) -> Path:
    """An existing path, or a bundled data file matched by bare name."""
    p = Path(path)
    if p.is_file():
        return p
    if not p.parent.parts:
        data = resources.files("opfkit.data")
        stem = p.stem if p.suffix in suffixes else p.name
        for suffix in suffixes:
            for name in (f"{stem}{suffix}", f"{stem}_{kind}{suffix}"):
                ref = data / name
                if ref.is_file():
                    return Path(str(ref))
    raise UsageError(f"{kind} file not found: {path}")


def _load_network(config: RunConfig) -> Network:
    if config.case_path is None:
        raise UsageError("--case is required")
    path = resolve_input(config.case_path, "case", (".m",))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return load_case(path)


def _status_code(status: str) -> int:
    if status == STATUS_CONVERGED:
        return EXIT_OK
    if status == STATUS_INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_MAX_ITER


def _money(value: float, currency: str) -> str:
    return f"{value:,.2f} {currency}"


def _parse_pairs(items, what: str) -> dict[int, float]:
    out = {}
    for item in items or ():
        try:
            key, value = item.split("=")
            out[int(key)] = float(value)
        except ValueError as exc:
            raise UsageError(f"{what} must look like BUS=VALUE, got {item!r}") from exc
    return out


def _gen_index(net: Network, bus_id: int) -> int:
    try:
        i = net.index_of(bus_id)
    except KeyError as exc:
        raise UsageError(f"unknown bus {bus_id}") from exc
    hits = np.flatnonzero(net.gen_bus == i)
    if hits.size == 0:
        raise UsageError(f"bus {bus_id} has no generator")
    return int(hits[0])


def _certificate_lines(cert) -> list[str]:
    verdict = "ok" if cert.ok else "FAILED"
    return [f"certificate: {verdict} (balance {cert.balance:.2e}, bounds {cert.bounds:.2e}, "
            f"lines {cert.line_limits:.2e})"]


def _write(out_dir: Path, name: str, text: str, files: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    files[name] = str(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def proportional_dispatch(net: Network) -> ControlInput:
    """Every generator at the same fraction of its range, covering the demand."""
    p_min = np.array([g.p_min for g in net.generators])
    p_max = np.array([g.p_max for g in net.generators])
    span = p_max - p_min
    beta = 0.0 if span.sum() <= 0 else float(np.clip(
        (net.p_demand.sum() - p_min.sum()) / span.sum(), 0.0, 1.0))
    return ControlInput(p_min + beta * span, np.zeros(net.n_gen))


def run_pf(config: RunConfig) -> Outcome:
    net = _load_network(config)
    u = proportional_dispatch(net)
    for bus, value in _parse_pairs(config.extra.get("dispatch"), "--dispatch").items():
        u.p_gen[_gen_index(net, bus)] = value
    ids = [b.id for b in net.buses]
    files: dict[str, str] = {}
    if config.method == "dc":
        p_net = -net.p_demand.copy()
        np.add.at(p_net, net.gen_bus, u.p_gen)
        mismatch = p_net.sum()
        slack_gen = np.flatnonzero(net.gen_bus == net.slack)
        if slack_gen.size:
            u.p_gen[slack_gen[0]] -= mismatch
            p_net[net.slack] -= mismatch
        state = solve_dc_pf(net, p_net)
        theta, v = state.theta, np.ones(net.n_bus)
        flows = line_flows_dc(state, net)
        cert = certify_dc(grid_model(net), theta, u.p_gen)
        residual = cert.balance
    else:
        try:
            res = solve_ac_pf(net, u, Disturbance(net.p_demand, net.q_demand), full_output=True)
        except PowerFlowError as exc:
            raise _Failure(EXIT_MAX_ITER, str(exc)) from exc
        u, v, theta = res.u, res.x.v, res.x.theta
        flows = np.abs(line_flows_ac(res.x, net))
        residual = res.residual_norm
        cert = certify_ac(grid_model(net), res.x, u)
    lines = [f"power flow ({config.method}) on {net.name or 'case'}: {net.n_bus} buses",
             f"max mismatch: {residual:.3e}"]
    # the certificate checks limits too; a power flow only needs to balance
    balanced = cert.balance <= cert.tol
    lines.append(f"balance check: {'ok' if balanced else 'FAILED'} ({cert.balance:.2e})")
    sol = {"schema": "opfkit.pf-solution/1", "method": config.method, "bus_ids": ids,
           "v": v.tolist(), "theta": theta.tolist(),
           "gen_bus": [ids[b] for b in net.gen_bus], "p_gen": u.p_gen.tolist(),
           "q_gen": u.q_gen.tolist(), "line_flow": np.asarray(flows, float).tolist(),
           "max_mismatch": residual}
    out = [PF_SCHEMA, "bus,v,theta"] + [f"{i},{a:.12e},{t:.12e}" for i, a, t in zip(ids, v, theta)]
    _write(config.output_dir, "solution.json", json.dumps(sol, indent=1) + "\n", files)
    _write(config.output_dir, "buses.csv", "\n".join(out) + "\n", files)
    return Outcome(EXIT_OK if balanced else EXIT_INFEASIBLE, lines, files)


def run_opf(config: RunConfig) -> Outcome:
    net = _load_network(config)
    opts = config.nlp_options()
    if config.method == "dc":
        sol = solve_dc_opf(net, opts=opts, raise_on_failure=False)
    else:
        sol = solve_ac_opf(net, opts=opts, raise_on_failure=False)
    files: dict[str, str] = {}
    config.output_dir.mkdir(parents=True, exist_ok=True)
    write_trace(sol.result.trace, config.output_dir / "ipm_log.csv")
    files["ipm_log.csv"] = str(config.output_dir / "ipm_log.csv")
    _write(config.output_dir, "solution.json", json.dumps(sol.to_dict(net), indent=1) + "\n", files)
    ids = [b.id for b in net.buses]
    lines = [f"{config.method.upper()} OPF on {net.name or 'case'}: {sol.status} "
             f"after {sol.result.iterations} iterations",
             f"objective: {_money(sol.objective, config.currency)}"]
    lines += [f"  gen {ids[b]}: p = {p:.6f} p.u." for b, p in zip(net.gen_bus, sol.u.p_gen)]
    lines.append("binding constraints: " + (", ".join(sol.binding_constraints) or "none"))
    lines += _certificate_lines(sol.certificate)
    code = _status_code(sol.status)
    if code == EXIT_OK and not sol.certificate.ok:
        code = EXIT_INFEASIBLE
    return Outcome(code, lines, files)


def _initial_dispatch(net: Network, profile, opts) -> ControlInput:
    stage0 = net.with_demand(profile.p_dem[0], profile.q_dem[0])
    return solve_ac_opf(stage0, opts=opts).u


def run_msopf(config: RunConfig) -> Outcome:
    from .multistage import (RampSpec, assemble_multistage, per_stage_rate, read_profile_csv,
                             receding_horizon_run, solve_multistage)

    net = _load_network(config)
    if config.profile_path is None:
        raise UsageError("--profile is required")
    try:
        profile = read_profile_csv(str(resolve_input(config.profile_path, "profile", (".csv",))), net)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad profile: {exc}") from exc
    minutes = config.extra.get("stage_minutes", 15.0)
    if not minutes > 0:
        raise UsageError("--stage-minutes must be positive")
    rates = {_gen_index(net, bus): per_stage_rate(rate, minutes)
             for bus, rate in _parse_pairs(config.extra.get("ramp"), "--ramp").items()}
    if any(r < 0 for r in rates.values()):
        raise UsageError("ramp rates must be nonnegative")
    ramps = RampSpec.symmetric(net.n_gen, rates)
    opts = config.nlp_options()
    u0 = _initial_dispatch(net, profile, opts)
    window = config.extra.get("window")
    files: dict[str, str] = {}
    if window:
        try:
            closed = receding_horizon_run(net, profile, None, ramps, None, u0, window, opts)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        sol, status, iterations = closed.solution, STATUS_CONVERGED, closed.solves
        mode = f"receding horizon (window {window}, {closed.solves} solves)"
    else:
        problem = assemble_multistage(net, profile, None, ramps, None, u0)
        sol = solve_multistage(problem, opts, raise_on_failure=False)
        status, iterations = sol.status, sol.result.iterations
        mode = f"one-shot ({iterations} iterations)"
        config.output_dir.mkdir(parents=True, exist_ok=True)
        write_trace(sol.result.trace, config.output_dir / "ipm_log.csv")
        files["ipm_log.csv"] = str(config.output_dir / "ipm_log.csv")
    _write(config.output_dir, "dispatch.csv", sol.to_csv(net), files)
    ids = [b.id for b in net.buses]
    doc = {"schema": "opfkit.msopf-solution/1", "status": status, "objective": sol.objective,
           "stage_costs": sol.stage_costs.tolist(), "gen_bus": [ids[b] for b in net.gen_bus],
           "p_gen": sol.p_gen.tolist(), "q_gen": sol.q_gen.tolist(), "delta_p": sol.delta_p.tolist(),
           "certificates_ok": [bool(c.ok) for c in sol.certificates]}
    _write(config.output_dir, "solution.json", json.dumps(doc, indent=1) + "\n", files)
    lines = [f"multi-stage AC OPF on {net.name or 'case'}: {profile.horizon} stages, {mode}: {status}",
             f"objective: {_money(sol.objective, config.currency)}"]
    if rates:
        lines.append("ramp limits (p.u./stage): " + ", ".join(
            f"gen {ids[net.gen_bus[j]]} {r:.4g}" for j, r in sorted(rates.items())))
    n_bad = sum(not c.ok for c in sol.certificates)
    lines.append(f"certificate: {'ok' if n_bad == 0 else f'FAILED at {n_bad} stages'}")
    code = _status_code(status)
    if code == EXIT_OK and n_bad:
        code = EXIT_INFEASIBLE
    return Outcome(code, lines, files)


def run_dist(config: RunConfig) -> Outcome:
    from .distributed import (AdmmConfig, AladinConfig, PartitionError, admm_solve, aladin_solve,
                              dc_config, fourteen_bus_config, merge_solution, split_network,
                              split_solution)

    net = _load_network(config)
    if config.partition_path is None:
        raise UsageError("--partition is required")
    from .distributed import PartitionSpec
    try:
        spec = PartitionSpec.from_json(resolve_input(config.partition_path, "partition", (".json",))
                                       .read_text())
        regions, consensus = split_network(net, spec, kind=config.method)
    except PartitionError as exc:
        raise UsageError(f"bad partition: {exc}") from exc
    opts = config.nlp_options()
    if config.method == "dc":
        central = solve_dc_opf(net, opts=opts)
        ref = split_solution(regions, net, theta=central.x.theta, p_gen=central.u.p_gen)
    else:
        central = solve_ac_opf(net, opts=opts)
        ref = split_solution(regions, net, central.x, central.u)
    algo = config.extra.get("algo", "aladin")
    max_iter = config.extra.get("dist_max_iter")
    if algo == "aladin":
        cfg = fourteen_bus_config() if config.extra.get("preset") == "fourteen_bus" else AladinConfig()
        if max_iter:
            cfg = replace(cfg, max_iter=max_iter)
        result = aladin_solve(regions, consensus, cfg, reference=ref)
    else:
        cfg = dc_config() if config.method == "dc" else AdmmConfig()
        overrides = {k: v for k, v in (("rho", config.extra.get("rho")), ("max_iter", max_iter)) if v}
        if overrides:
            cfg = replace(cfg, **overrides)
        result = admm_solve(regions, consensus, cfg, reference=ref)
    files: dict[str, str] = {}
    _write(config.output_dir, "convergence.csv", result.log.to_csv(), files)
    lines = [f"{algo.upper()} on {net.name or 'case'} ({config.method}, {len(regions)} regions): "
             f"{result.status} after {result.iterations} iterations"]
    merged = merge_solution(regions, net, result.zs)
    model = grid_model(net)
    if config.method == "dc":
        cert = certify_dc(model, merged.theta, merged.p_gen)
    else:
        cert = certify_ac(model, SystemState(merged.v, merged.theta),
                          ControlInput(merged.p_gen, merged.q_gen))
    rel = abs(result.objective - central.objective) / max(1.0, abs(central.objective))
    ids = [b.id for b in net.buses]
    doc = {"schema": "opfkit.dist-solution/1", "algorithm": algo, "status": result.status,
           "iterations": result.iterations, "objective": result.objective,
           "centralized_objective": central.objective, "bus_ids": ids,
           "theta": merged.theta.tolist(), "v": None if merged.v is None else merged.v.tolist(),
           "gen_bus": [ids[b] for b in net.gen_bus], "p_gen": merged.p_gen.tolist(),
           "q_gen": None if merged.q_gen is None else merged.q_gen.tolist(),
           "certificate_ok": bool(cert.ok)}
    _write(config.output_dir, "solution.json", json.dumps(doc, indent=1) + "\n", files)
    lines.append(f"objective: {_money(result.objective, config.currency)} "
                 f"(centralized {_money(central.objective, config.currency)}, "
                 f"relative gap {rel:.2e})")
    first = result.log.first_iteration(1e-4)
    lines.append(f"first iteration with consensus violation <= 1e-4: {first}")
    lines += _certificate_lines(cert)
    code = EXIT_OK if result.status == "converged" else EXIT_MAX_ITER
    if code == EXIT_OK and not cert.ok:
        code = EXIT_INFEASIBLE
    return Outcome(code, lines, files)


def run_stoch(config: RunConfig) -> Outcome:
    from .stochastic import (ChanceInfeasibleError, ChanceSpec, load_disturbance,
                             monte_carlo_validate, solve_cc_dcopf)

    net = _load_network(config)
    if config.disturbance_path is None:
        raise UsageError("--disturbance is required")
    try:
        model = load_disturbance(resolve_input(config.disturbance_path, "disturbance", (".json",)), net)
        chance = ChanceSpec(config.extra.get("eps_u", 0.05), config.extra.get("eps_x", 0.05),
                            config.extra.get("eps_c", 0.05))
    except (KeyError, ValueError, OSError) as exc:
        raise UsageError(f"bad disturbance model: {exc}") from exc
    samples = config.extra.get("samples", 10_000)
    if samples < 1000:
        raise UsageError("--samples must be at least 1000")
    try:
        sol = solve_cc_dcopf(net, model, chance=chance, opts=config.nlp_options())
    except ChanceInfeasibleError as exc:
        raise _Failure(EXIT_INFEASIBLE, str(exc)) from exc
    files: dict[str, str] = {}
    config.output_dir.mkdir(parents=True, exist_ok=True)
    write_trace(sol.result.trace, config.output_dir / "ipm_log.csv")
    files["ipm_log.csv"] = str(config.output_dir / "ipm_log.csv")
    ids = [b.id for b in net.buses]
    policy_csv = ["# opfkit-policy v1", "gen_bus,base,participation"]
    policy_csv += [f"{ids[b]},{p:.12e},{a:.12e}" for b, p, a in
                   zip(net.gen_bus, sol.policy.base, sol.policy.participation)]
    _write(config.output_dir, "policy.csv", "\n".join(policy_csv) + "\n", files)
    lines = [f"chance-constrained DC OPF on {net.name or 'case'}: {sol.status}",
             f"expected cost: {_money(sol.objective, config.currency)}"]
    if not sol.converged:
        return Outcome(_status_code(sol.status), lines, files)
    report = monte_carlo_validate(sol.policy, model, chance, net, samples, config.seed)
    _write(config.output_dir, "viability_report.json", report.to_json() + "\n", files)
    doc = {"schema": "opfkit.stoch-solution/1", "status": sol.status, "expected_cost": sol.objective,
           "gen_bus": [ids[b] for b in net.gen_bus], "base": sol.policy.base.tolist(),
           "participation": sol.policy.participation.tolist()}
    _write(config.output_dir, "solution.json", json.dumps(doc, indent=1) + "\n", files)
    worst = max(report.constraints, key=lambda c: c.frequency - c.epsilon, default=None)
    lines.append(f"Monte Carlo ({samples} samples, seed {config.seed}): max balance residual "
                 f"{report.max_residual:.2e}, joint violation {report.joint_violation:.4f}")
    if worst is not None:
        lines.append(f"worst constraint: {worst.name} violated in {worst.frequency:.4f} of samples "
                     f"(risk level {worst.epsilon})")
    lines.append(f"viability report: {'passed' if report.passed else 'FAILED'}")
    return Outcome(EXIT_OK if report.passed else EXIT_INFEASIBLE, lines, files)


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------

FIVE_BUS_RAMPED = 42930.0
FIVE_BUS_UNRAMPED = 42166.0
FIVE_BUS_RAMP_PER_HOUR = 3.2
FIVE_BUS_STAGE_MINUTES = 15.0


def reproduce_five_bus(config: RunConfig) -> tuple[list[str], list[tuple[str, bool]]]:
    from .multistage import (RampSpec, assemble_multistage, per_stage_rate, read_profile_csv,
                             solve_multistage)

    net = load_case("case5")
    profile = read_profile_csv(str(resources.files("opfkit.data") / "case5_profile.csv"), net)
    opts = config.nlp_options()
    u0 = _initial_dispatch(net, profile, opts)
    rate = per_stage_rate(FIVE_BUS_RAMP_PER_HOUR, FIVE_BUS_STAGE_MINUTES)
    free = solve_multistage(assemble_multistage(net, profile, u0=u0), opts)
    ramped = solve_multistage(assemble_multistage(
        net, profile, ramps=RampSpec.symmetric(net.n_gen, {0: rate}), u0=u0), opts)
    g3 = _gen_index(net, 3)
    cur = config.currency
    lines = [f"unramped objective: {_money(free.objective, cur)} "
             f"(reference {_money(FIVE_BUS_UNRAMPED, cur)})",
             f"ramped objective:   {_money(ramped.objective, cur)} "
             f"(reference {_money(FIVE_BUS_RAMPED, cur)})",
             f"max output of generator 3: unramped {free.p_gen[:, g3].max():.4f} p.u., "
             f"ramped {ramped.p_gen[:, g3].max():.4f} p.u."]
    checks = [
        ("ramped objective exceeds unramped", ramped.objective > free.objective),
        ("generator 3 dispatched only with ramp limits",
         ramped.p_gen[:, g3].max() > 1e-3 and free.p_gen[:, g3].max() <= 1e-3),
        ("unramped within 5% of reference", abs(free.objective / FIVE_BUS_UNRAMPED - 1) <= 0.05),
        ("ramped within 5% of reference", abs(ramped.objective / FIVE_BUS_RAMPED - 1) <= 0.05),
        ("all stages certified", free.feasible and ramped.feasible),
    ]
    return lines, checks


def reproduce_fourteen_bus(config: RunConfig) -> tuple[list[str], list[tuple[str, bool]]]:
    from .distributed import (AdmmConfig, admm_solve, aladin_solve, fourteen_bus_config,
                              load_partition, merge_solution, split_network, split_solution)

    net = load_case("case14")
    regions, consensus = split_network(net, load_partition("case14_regions"))
    central = solve_ac_opf(net, opts=config.nlp_options())
    ref = split_solution(regions, net, central.x, central.u)
    al = aladin_solve(regions, consensus, fourteen_bus_config(), reference=ref)
    ad = admm_solve(regions, consensus, AdmmConfig(), reference=ref)
    merged = merge_solution(regions, net, al.zs)
    cert = certify_ac(grid_model(net), SystemState(merged.v, merged.theta),
                      ControlInput(merged.p_gen, merged.q_gen))
    k_al = al.log.first_iteration(1e-4, 1e-4)
    k_al3 = al.log.first_iteration(1e-3)
    k_ad3 = ad.log.first_iteration(1e-3)
    rel = abs(al.objective - central.objective) / abs(central.objective)
    lines = [f"ALADIN: {al.status} after {al.iterations} iterations; "
             f"consensus and distance <= 1e-4 at iteration {k_al}",
             f"ADMM: {ad.status} after {ad.iterations} iterations; "
             f"consensus <= 1e-3 at iteration {k_ad3} (ALADIN: {k_al3})",
             f"objective: ALADIN {_money(al.objective, config.currency)}, centralized "
             f"{_money(central.objective, config.currency)} (relative gap {rel:.2e})"]
    checks = [
        ("ALADIN reaches 1e-4 within 25 iterations", k_al is not None and k_al <= 25),
        ("ALADIN objective within 1e-4 of centralized", rel <= 1e-4),
        ("ADMM needs at least 3x ALADIN's iterations to 1e-3",
         k_al3 is not None and (k_ad3 is None or k_ad3 >= 3 * k_al3)),
        ("merged ALADIN solution certified", cert.ok),
    ]
    return lines, checks


STUDIES = {"five_bus": reproduce_five_bus, "fourteen_bus": reproduce_fourteen_bus}


def run_reproduce(config: RunConfig) -> Outcome:
    study = config.extra["study"]
    if study not in STUDIES:
        raise UsageError(f"unknown study {study!r} (choose from {', '.join(STUDIES)})")
    t0 = time.perf_counter()
    lines, checks = STUDIES[study](config)
    lines.append(f"{study} study ({time.perf_counter() - t0:.1f} s):")
    width = max(len(name) for name, _ in checks)
    lines += [f"  {name:<{width}}  {'PASS' if ok else 'FAIL'}" for name, ok in checks]
    return Outcome(EXIT_OK if all(ok for _, ok in checks) else EXIT_CHECK_FAILED, lines)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opfkit", description="Optimal power flow toolkit")
    parser.add_argument("--version", action="version", version=f"opfkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    def common(p, method=True):
        p.add_argument("--case", required=True, help="case file, or a bundled case name")
        if method:
            p.add_argument("--method", choices=("ac", "dc"), default="ac")
        p.add_argument("--tol", type=float, default=1e-8, help="interior-point tolerance")
        p.add_argument("--max-iter", type=int, default=200, help="interior-point iteration limit")
        p.add_argument("--output-dir", default="opfkit-out")
        p.add_argument("--currency", default="US$")

    p = sub.add_parser("pf", help="AC or DC power flow with a given dispatch")
    common(p)
    p.add_argument("--dispatch", action="append", metavar="BUS=P",
                   help="active output of the generator at BUS (p.u.); repeatable")
    p = sub.add_parser("opf", help="single-stage AC or DC OPF")
    common(p)
    p = sub.add_parser("msopf", help="multi-stage AC OPF over a load profile")
    common(p, method=False)
    p.add_argument("--profile", required=True, help="load profile CSV")
    p.add_argument("--ramp", action="append", metavar="BUS=RATE",
                   help="symmetric ramp limit of the generator at BUS in p.u./h; repeatable")
    p.add_argument("--stage-minutes", type=float, default=15.0, help="stage length for --ramp")
    p.add_argument("--window", type=int, default=None,
                   help="run closed loop with this look-ahead instead of one shot")
    p = sub.add_parser("dist", help="distributed OPF with ALADIN or ADMM")
    common(p)
    p.add_argument("--partition", required=True, help="partition JSON {bus id: region id}")
    p.add_argument("--algo", choices=("aladin", "admm"), default="aladin")
    p.add_argument("--preset", choices=("default", "fourteen_bus"), default="default",
                   help="ALADIN parameter set")
    p.add_argument("--rho", type=float, default=None, help="ADMM penalty")
    p.add_argument("--dist-max-iter", type=int, default=None, help="outer iteration limit")
    p = sub.add_parser("stoch", help="chance-constrained DC OPF with Monte-Carlo validation")
    common(p, method=False)
    p.add_argument("--disturbance", required=True, help="disturbance model JSON")
    p.add_argument("--eps-u", type=float, default=0.05)
    p.add_argument("--eps-x", type=float, default=0.05)
    p.add_argument("--eps-c", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("reproduce", help="rerun a bundled case study with pass/fail checks")
    p.add_argument("study", help="five_bus or fourteen_bus")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--currency", default="US$")
    return parser


RUNNERS = {"pf": run_pf, "opf": run_opf, "msopf": run_msopf, "dist": run_dist,
           "stoch": run_stoch, "reproduce": run_reproduce}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if not args.tol > 0:
        raise UsageError("--tol must be positive")
    if args.max_iter < 1:
        raise UsageError("--max-iter must be at least 1")
    extra = {k: getattr(args, k) for k in
             ("dispatch", "ramp", "stage_minutes", "window", "algo", "preset", "rho",
              "dist_max_iter", "eps_u", "eps_x", "eps_c", "samples", "study")
             if hasattr(args, k)}
    if extra.get("window") is not None and extra["window"] < 1:
        raise UsageError("--window must be at least 1")
    return RunConfig(
        subcommand=args.subcommand, case_path=getattr(args, "case", None),
        method=getattr(args, "method", "ac"), tol=args.tol, max_iter=args.max_iter,
        partition_path=getattr(args, "partition", None), profile_path=getattr(args, "profile", None),
        disturbance_path=getattr(args, "disturbance", None),
        output_dir=Path(getattr(args, "output_dir", "opfkit-out")), seed=getattr(args, "seed", 0),
        currency=args.currency, extra=extra,
    )


def run(config: RunConfig) -> Outcome:
    return RUNNERS[config.subcommand](config)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("OPFKIT_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.subcommand is None:
            raise UsageError("a subcommand is required (pf, opf, msopf, dist, stoch, reproduce)")
        config = config_from_args(args)
        outcome = run(config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CaseError, FileNotFoundError) as exc:
        msg = str(exc)
        if isinstance(exc, FileNotFoundError) and "not found" not in msg:
            msg = f"file not found: {exc.filename}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except _Failure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OpfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _status_code(exc.status)
    text = "\n".join(outcome.summary)
    print(text)
    if outcome.files:
        _write(config.output_dir, "summary.txt", text + "\n", outcome.files)
    if outcome.code != EXIT_OK:
        print(f"error: run finished with exit code {outcome.code}", file=sys.stderr)
    return outcome.code


if __name__ == "__main__":
    sys.exit(main())

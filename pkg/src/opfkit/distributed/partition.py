"""Network partitioning with auxiliary node pairs.

Every tie line between two regions is cut in the middle.  Each half keeps
the line's series admittance doubled (half the impedance), so the two halves
in series reproduce the original line.  The midpoint is duplicated into one
auxiliary node per side.  An auxiliary node carries no demand and a free,
cost-free injection ``(p, q)`` that stands for the power exchanged with the
other side.  Consensus rows match the pair::

    theta_a = theta_b,  v_a = v_b,  p_a = -p_b,  q_a = -q_b

(DC variant: the phase and active-power rows only).

Regional decision vectors follow the OPF layouts: ``(v, theta, p, q)`` for
AC and ``(theta, p)`` for DC, with the real buses first (in network order)
and the auxiliary nodes after them.  Auxiliary injections are stored as the
last generators of the region.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..network import Network
from ..nlp import (Constraints, NlpOptions, NlpProblem, Objective, SolveResult, linear_constraints,
                   solve_nlp, stack_constraints)
from ..opf import (CostFunction, GridModel, ac_balance_constraint, ac_bounds, ac_flow_constraint,
                   grid_model)
from ..powerflow import Disturbance


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    """Assignment ``{bus id: region id}`` with region ids ``1..R``."""

    assignment: dict[int, int]

    def __post_init__(self):
        object.__setattr__(self, "assignment", {int(k): int(v) for k, v in self.assignment.items()})

    @property
    def region_ids(self) -> list[int]:
        return sorted(set(self.assignment.values()))

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)

    def validate(self, net: Network) -> None:
        ids = {b.id for b in net.buses}
        unknown = sorted(set(self.assignment) - ids)
        if unknown:
            raise PartitionError(f"unknown bus {unknown[0]} in partition")
        missing = sorted(ids - set(self.assignment))
        if missing:
            raise PartitionError(f"bus {missing[0]} is not assigned to a region")
        regions = self.region_ids
        expected = list(range(1, len(regions) + 1))
        if regions != expected:
            empty = sorted(set(range(1, max(regions) + 1)) - set(regions))
            if min(regions) < 1:
                raise PartitionError("region ids must be positive integers")
            raise PartitionError(f"region {empty[0]} is empty")

    @classmethod
    def single(cls, net: Network) -> "PartitionSpec":
        return cls({b.id: 1 for b in net.buses})

    @classmethod
    def from_dict(cls, data: dict) -> "PartitionSpec":
        try:
            return cls({int(k): int(v) for k, v in data.items()})
        except (TypeError, ValueError, AttributeError) as exc:
            raise PartitionError("partition must map bus ids to integer region ids") from exc

    def to_dict(self) -> dict:
        return {str(k): v for k, v in sorted(self.assignment.items())}

    @classmethod
    def from_json(cls, text: str) -> "PartitionSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PartitionError(f"invalid partition JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise PartitionError("partition JSON must be an object")
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def load_partition(path) -> PartitionSpec:
    """Read a partition JSON file, or a bundled one by name.

    Bundled partitions resolve from ``"case14_regions"``, ``"regions14"`` or the
    same names with a ``.json`` suffix.
    """
    p = Path(path)
    if not p.exists() and not p.parent.parts:
        from importlib.resources import files
        data = files("opfkit.data")
        stem = p.stem if p.suffix == ".json" else p.name
        for name in (f"{stem}.json", f"{stem}_partition.json"):
            if (data / name).is_file():
                return PartitionSpec.from_json((data / name).read_text())
        raise FileNotFoundError(f"partition file not found: {path}")
    if not p.is_file():
        raise FileNotFoundError(f"partition file not found: {path}")
    return PartitionSpec.from_json(p.read_text())


@dataclass(frozen=True)
class AuxiliaryPair:
    """The two auxiliary nodes of one cut tie line (local bus indices)."""

    region_a: int
    region_b: int
    node_a: int
    node_b: int
    parent_line: int


@dataclass(frozen=True)
class Region:
    """One partition: real buses plus auxiliary nodes as a :class:`GridModel`.

    ``index`` is the 0-based position, ``region_id`` the label from the
    partition.  ``buses``/``generators`` map local real buses/generators to
    network indices; ``aux_nodes`` and ``aux_gens`` list the local indices of
    the auxiliary nodes and their injections.
    """

    index: int
    region_id: int
    kind: str
    model: GridModel
    buses: np.ndarray
    generators: np.ndarray
    aux_nodes: np.ndarray
    aux_gens: np.ndarray
    aux_lines: np.ndarray

    @property
    def n(self) -> int:
        m = self.model
        return m.n_ac if self.kind == "ac" else m.n_bus + m.n_gen

    @property
    def n_real(self) -> int:
        return self.buses.size

    # index helpers into the regional decision vector
    def v_index(self, bus: int) -> int:
        if self.kind != "ac":
            raise ValueError("DC regions have no voltage magnitudes")
        return bus

    def theta_index(self, bus: int) -> int:
        return bus + (self.model.n_bus if self.kind == "ac" else 0)

    def p_index(self, gen: int) -> int:
        m = self.model
        return (2 * m.n_bus if self.kind == "ac" else m.n_bus) + gen

    def q_index(self, gen: int) -> int:
        if self.kind != "ac":
            raise ValueError("DC regions have no reactive injections")
        return 2 * self.model.n_bus + self.model.n_gen + gen

    def variable_types(self) -> np.ndarray:
        """Type label (``v``, ``theta``, ``p``, ``q``) of every entry of ``z_i``."""
        m = self.model
        if self.kind == "ac":
            parts = [["v"] * m.n_bus, ["theta"] * m.n_bus, ["p"] * m.n_gen, ["q"] * m.n_gen]
        else:
            parts = [["theta"] * m.n_bus, ["p"] * m.n_gen]
        return np.array(sum(parts, []))

    def scaling(self, weights: dict[str, float]) -> np.ndarray:
        """Diagonal of a per-type scaling matrix."""
        return np.array([weights[t] for t in self.variable_types()], float)

    # constraint data
    def bounds(self):
        m = self.model
        if self.kind == "ac":
            return ac_bounds(m)
        lb = np.concatenate([np.full(m.n_bus, -np.inf), m.p_min])
        ub = np.concatenate([np.full(m.n_bus, np.inf), m.p_max])
        if m.slack is not None:
            lb[m.slack] = ub[m.slack] = 0.0
        return lb, ub

    def constraints(self):
        """``(equalities, inequalities)`` of the regional OPF."""
        m = self.model
        if self.kind == "ac":
            return ac_balance_constraint(m), ac_flow_constraint(m)
        n, ng = m.n_bus, m.n_gen
        eq = linear_constraints(np.hstack([m.susceptance(), m.gen_matrix()]), m.p_dem)
        lim = m.limited
        if lim.size == 0:
            return eq, None
        flow = -(m.line_b[:, None] * m.incidence())[lim]
        back = np.isin(lim, m.limited_to_end)
        rows = np.vstack([np.hstack([flow, np.zeros((lim.size, ng))]),
                          np.hstack([-flow[back], np.zeros((int(back.sum()), ng))])])
        rhs = np.concatenate([m.line_smax[lim], m.line_smax[lim][back]])
        return eq, linear_constraints(rows, rhs)

    def cost(self) -> CostFunction:
        m = self.model
        return m.cost if self.kind == "ac" else m.cost.active(m.n_gen)

    def cost_offset(self) -> int:
        return 2 * self.model.n_bus if self.kind == "ac" else self.model.n_bus

    def objective_value(self, z: np.ndarray) -> float:
        c = self.cost()
        off = self.cost_offset()
        return c.evaluate(z[off:off + c.quad.size])

    def objective_gradient(self, z: np.ndarray) -> np.ndarray:
        c = self.cost()
        off = self.cost_offset()
        g = np.zeros(self.n)
        k = c.quad.size
        g[off:off + k] = 2 * c.quad * z[off:off + k] + c.lin
        return g

    def objective_hessian(self) -> np.ndarray:
        c = self.cost()
        off = self.cost_offset()
        h = np.zeros(self.n)
        h[off:off + c.quad.size] = 2 * c.quad
        return np.diag(h)

    def local_problem(self, linear: np.ndarray | None = None, z_bar: np.ndarray | None = None,
                      rho: float = 0.0, sigma: np.ndarray | None = None,
                      lb: np.ndarray | None = None, ub: np.ndarray | None = None) -> NlpProblem:
        """Regional OPF with objective

            J_i(z) + linear^T z + rho/2 (z - z_bar)^T diag(sigma) (z - z_bar).
        """
        n = self.n
        linear = np.zeros(n) if linear is None else np.asarray(linear, float)
        z_bar = np.zeros(n) if z_bar is None else np.asarray(z_bar, float)
        sigma = np.ones(n) if sigma is None else np.asarray(sigma, float)
        w = rho * sigma
        hmat = self.objective_hessian() + np.diag(w)

        def value(z):
            d = z - z_bar
            return self.objective_value(z) + float(linear @ z) + 0.5 * float(d @ (w * d))

        def gradient(z):
            return self.objective_gradient(z) + linear + w * (z - z_bar)

        eq, ineq = self.constraints()
        blo, bhi = self.bounds()
        return NlpProblem(n=n, objective=Objective(value, gradient, lambda z: hmat),
                          eq_constraints=eq, ineq_constraints=ineq,
                          lb=blo if lb is None else lb, ub=bhi if ub is None else ub)

    def initial_guess(self) -> np.ndarray:
        """Flat voltages, mid-range real dispatch and zero exchange."""
        m = self.model
        real = np.arange(self.generators.size)
        p = np.zeros(m.n_gen)
        p[real] = 0.5 * (m.p_min[real] + m.p_max[real])
        if self.kind == "dc":
            return np.concatenate([np.zeros(m.n_bus), p])
        v = np.clip(np.ones(m.n_bus), m.v_min, m.v_max)
        q = np.clip(np.zeros(m.n_gen), m.q_min, m.q_max)
        return np.concatenate([v, np.zeros(m.n_bus), p, q])


@dataclass(frozen=True)
class ConsensusSystem:
    """Coupling ``sum_i A_i z_i = b`` (here ``b = 0``)."""

    blocks: tuple
    b: np.ndarray
    pairs: tuple = ()

    @property
    def m(self) -> int:
        return self.b.size

    def residual(self, zs) -> np.ndarray:
        r = -self.b.copy()
        for a, z in zip(self.blocks, zs):
            r = r + a @ z
        return r

    def matrix(self) -> np.ndarray:
        return np.hstack(self.blocks) if self.blocks else np.zeros((0, 0))

    def multiplier_term(self, i: int, lam: np.ndarray) -> np.ndarray:
        return self.blocks[i].T @ lam


def _tie_lines(net: Network, region_of: np.ndarray) -> list[int]:
    return [k for k, ln in enumerate(net.lines) if region_of[ln.from_bus] != region_of[ln.to_bus]]


def split_network(net: Network, spec: PartitionSpec, d: Disturbance | None = None,
                  cost: CostFunction | None = None, kind: str = "ac"):
    """Split ``net`` into regions coupled through auxiliary node pairs.

    Returns ``(regions, consensus)``.  With a single region the consensus
    system is empty and the region problem is the centralized OPF.
    """
    if kind not in ("ac", "dc"):
        raise ValueError("kind must be 'ac' or 'dc'")
    spec.validate(net)
    base = grid_model(net, d, cost)
    region_of = np.array([spec.assignment[b.id] - 1 for b in net.buses])
    n_regions = spec.n_regions
    ties = _tie_lines(net, region_of)

    # collect per-region auxiliary nodes in tie-line order
    aux: list[list[tuple[int, int]]] = [[] for _ in range(n_regions)]  # (tie line, real bus)
    for k in ties:
        ln = net.lines[k]
        aux[region_of[ln.from_bus]].append((k, ln.from_bus))
        aux[region_of[ln.to_bus]].append((k, ln.to_bus))

    regions = []
    local_of = {}
    aux_local = {}
    for r in range(n_regions):
        buses = np.flatnonzero(region_of == r)
        nr = buses.size
        for i, b in enumerate(buses):
            local_of[b] = i
        n_aux = len(aux[r])
        n_loc = nr + n_aux
        for j, (k, _) in enumerate(aux[r]):
            aux_local[(r, k)] = nr + j
        gens = np.flatnonzero(np.isin(base.gen_bus, buses))
        ng_real = gens.size
        ng = ng_real + n_aux
        inner = [k for k, ln in enumerate(net.lines)
                 if region_of[ln.from_bus] == r and region_of[ln.to_bus] == r]
        lf = [local_of[net.lines[k].from_bus] for k in inner]
        lt = [local_of[net.lines[k].to_bus] for k in inner]
        lg = [base.line_g[k] for k in inner]
        lb_ = [base.line_b[k] for k in inner]
        ls = [base.line_smax[k] for k in inner]
        half = [False] * len(inner)
        for j, (k, bus) in enumerate(aux[r]):
            lf.append(local_of[bus])
            lt.append(nr + j)
            lg.append(2 * base.line_g[k])
            lb_.append(2 * base.line_b[k])
            ls.append(base.line_smax[k])
            half.append(True)
        inf = np.full(n_aux, np.inf)
        zeros = np.zeros(n_aux)
        ng_all = base.n_gen
        quad = np.concatenate([base.cost.quad[gens], zeros, base.cost.quad[ng_all + gens], zeros])
        lin = np.concatenate([base.cost.lin[gens], zeros, base.cost.lin[ng_all + gens], zeros])
        # the constant cost is attributed to the region holding the slack bus
        has_slack = region_of[net.slack] == r
        model = GridModel(
            p_dem=np.concatenate([base.p_dem[buses], zeros]),
            q_dem=np.concatenate([base.q_dem[buses], zeros]),
            v_min=np.concatenate([base.v_min[buses], -inf]),
            v_max=np.concatenate([base.v_max[buses], inf]),
            gen_bus=np.concatenate([[local_of[b] for b in base.gen_bus[gens]],
                                    nr + np.arange(n_aux)]).astype(int),
            p_min=np.concatenate([base.p_min[gens], -inf]),
            p_max=np.concatenate([base.p_max[gens], inf]),
            q_min=np.concatenate([base.q_min[gens], -inf]),
            q_max=np.concatenate([base.q_max[gens], inf]),
            line_from=np.array(lf, int), line_to=np.array(lt, int),
            line_g=np.array(lg, float), line_b=np.array(lb_, float),
            line_smax=np.array(ls, float),
            cost=CostFunction(quad, lin, base.cost.constant if has_slack else 0.0),
            slack=local_of[net.slack] if has_slack else None,
            half_line=np.array(half, bool),
        )
        regions.append(Region(
            index=r, region_id=r + 1, kind=kind, model=model, buses=buses, generators=gens,
            aux_nodes=nr + np.arange(n_aux), aux_gens=ng_real + np.arange(n_aux),
            aux_lines=np.array([k for k, _ in aux[r]], int),
        ))

    pairs = []
    for k in ties:
        ln = net.lines[k]
        ra, rb = region_of[ln.from_bus], region_of[ln.to_bus]
        pairs.append(AuxiliaryPair(int(ra), int(rb), aux_local[(ra, k)], aux_local[(rb, k)], k))

    per_pair = 4 if kind == "ac" else 2
    m = per_pair * len(pairs)
    blocks = [np.zeros((m, reg.n)) for reg in regions]
    row = 0
    for pr in pairs:
        ra, rb = regions[pr.region_a], regions[pr.region_b]
        ga = pr.node_a - ra.n_real + ra.generators.size
        gb = pr.node_b - rb.n_real + rb.generators.size
        blocks[pr.region_a][row, ra.theta_index(pr.node_a)] = 1.0
        blocks[pr.region_b][row, rb.theta_index(pr.node_b)] = -1.0
        blocks[pr.region_a][row + 1, ra.p_index(ga)] = 1.0
        blocks[pr.region_b][row + 1, rb.p_index(gb)] = 1.0
        if kind == "ac":
            blocks[pr.region_a][row + 2, ra.v_index(pr.node_a)] = 1.0
            blocks[pr.region_b][row + 2, rb.v_index(pr.node_b)] = -1.0
            blocks[pr.region_a][row + 3, ra.q_index(ga)] = 1.0
            blocks[pr.region_b][row + 3, rb.q_index(gb)] = 1.0
        row += per_pair
    return regions, ConsensusSystem(tuple(blocks), np.zeros(m), tuple(pairs))


# ---------------------------------------------------------------------------
# mapping between centralized and split solutions
# ---------------------------------------------------------------------------

def split_solution(regions, net: Network, x=None, u=None, theta=None, p_gen=None) -> list[np.ndarray]:
    """Map a centralized AC ``(x, u)`` or DC ``(theta, p_gen)`` solution onto the
    regional decision vectors, including the auxiliary midpoint values."""
    out = []
    ac = regions[0].kind == "ac"
    if ac:
        volt = x.v * np.exp(1j * x.theta)
    for reg in regions:
        m = reg.model
        nr = reg.n_real
        z = np.zeros(reg.n)
        for j, k in enumerate(reg.aux_lines):
            ln = net.lines[k]
            mid_line = m.n_line - len(reg.aux_lines) + j
            bus = reg.buses[m.line_from[mid_line]]
            if ac:
                vm = 0.5 * (volt[ln.from_bus] + volt[ln.to_bus])
                y = complex(m.line_g[mid_line], m.line_b[mid_line])
                s = vm * np.conj(y * (vm - volt[bus]))
                z[reg.v_index(nr + j)] = abs(vm)
                z[reg.theta_index(nr + j)] = np.angle(vm)
                z[reg.p_index(reg.aux_gens[j])] = s.real
                z[reg.q_index(reg.aux_gens[j])] = s.imag
            else:
                tm = 0.5 * (theta[ln.from_bus] + theta[ln.to_bus])
                z[reg.theta_index(nr + j)] = tm
                z[reg.p_index(reg.aux_gens[j])] = -m.line_b[mid_line] * (tm - theta[bus])
        for i, b in enumerate(reg.buses):
            if ac:
                z[reg.v_index(i)] = x.v[b]
                z[reg.theta_index(i)] = x.theta[b]
            else:
                z[reg.theta_index(i)] = theta[b]
        for j, g in enumerate(reg.generators):
            if ac:
                z[reg.p_index(j)] = u.p_gen[g]
                z[reg.q_index(j)] = u.q_gen[g]
            else:
                z[reg.p_index(j)] = p_gen[g]
        out.append(z)
    return out


@dataclass
class MergedSolution:
    """Regional solutions mapped back onto the original network."""

    v: np.ndarray | None
    theta: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray | None
    objective: float


def merge_solution(regions, net: Network, zs) -> MergedSolution:
    ac = regions[0].kind == "ac"
    n, ng = net.n_bus, net.n_gen
    v = np.zeros(n) if ac else None
    theta = np.zeros(n)
    p = np.zeros(ng)
    q = np.zeros(ng) if ac else None
    obj = 0.0
    for reg, z in zip(regions, zs):
        for i, b in enumerate(reg.buses):
            theta[b] = z[reg.theta_index(i)]
            if ac:
                v[b] = z[reg.v_index(i)]
        for j, g in enumerate(reg.generators):
            p[g] = z[reg.p_index(j)]
            if ac:
                q[g] = z[reg.q_index(j)]
        obj += reg.objective_value(z)
    return MergedSolution(v, theta, p, q, obj)


@dataclass
class SplitCentralResult:
    """Solution of all regions and the consensus rows as one NLP."""

    zs: list
    lam: np.ndarray
    result: SolveResult
    objective: float


def solve_split_centralized(regions, consensus: ConsensusSystem, opts: NlpOptions | None = None,
                            z0=None) -> SplitCentralResult:
    """Solve the partitioned problem centrally; also yields the consensus multipliers."""
    sizes = [r.n for r in regions]
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    nz = int(offs[-1])
    eq_parts, ineq_parts = [], []
    lb = np.empty(nz)
    ub = np.empty(nz)
    hdiag = []
    for reg, o in zip(regions, offs[:-1]):
        eq, ineq = reg.constraints()
        eq_parts.append(_shift(eq, o, reg.n, nz))
        ineq_parts.append(_shift(ineq, o, reg.n, nz))
        blo, bhi = reg.bounds()
        lb[o:o + reg.n], ub[o:o + reg.n] = blo, bhi
        hdiag.append(np.diag(reg.objective_hessian()))
    amat = consensus.matrix()
    if consensus.m:
        eq_parts.append(linear_constraints(amat, consensus.b))
    hmat = np.diag(np.concatenate(hdiag))

    def value(z):
        return sum(reg.objective_value(z[o:o + reg.n]) for reg, o in zip(regions, offs))

    def gradient(z):
        return np.concatenate([reg.objective_gradient(z[o:o + reg.n]) for reg, o in zip(regions, offs)])

    problem = NlpProblem(nz, Objective(value, gradient, lambda z: hmat),
                         stack_constraints(eq_parts, nz), stack_constraints(ineq_parts, nz), lb, ub)
    if z0 is None:
        z0 = np.concatenate([r.initial_guess() for r in regions])
    else:
        z0 = np.concatenate(z0)
    res = solve_nlp(problem, z0, opts)
    zs = [res.z_star[o:o + r.n].copy() for r, o in zip(regions, offs)]
    lam = res.lambda_eq[res.lambda_eq.size - consensus.m:] if consensus.m else np.zeros(0)
    return SplitCentralResult(zs, lam.copy(), res, float(value(res.z_star)))


def _shift(con: Constraints | None, offset: int, n_local: int, n_total: int) -> Constraints | None:
    """Embed a regional constraint into a larger decision vector."""
    if con is None:
        return None
    sl = slice(offset, offset + n_local)

    def jacobian(z):
        jac = np.zeros((con.m, n_total))
        jac[:, sl] = con.jacobian(z[sl])
        return jac

    def hessian(z, w):
        out = np.zeros((n_total, n_total))
        if con.hessian is not None:
            out[sl, sl] = con.hessian(z[sl], w)
        return out

    return Constraints(con.m, lambda z: con.value(z[sl]), jacobian,
                       hessian if con.hessian is not None else None)


__all__ = [
    "PartitionError", "PartitionSpec", "load_partition", "AuxiliaryPair", "Region",
    "ConsensusSystem", "split_network", "split_solution", "merge_solution", "MergedSolution",
    "SplitCentralResult", "solve_split_centralized",
]

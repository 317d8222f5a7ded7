"""Grid data model, MATPOWER-subset case files and nodal matrices.

All quantities are stored in per unit on ``Network.base_mva``.  Buses keep
their external (case file) id; generators and lines refer to buses by their
0-based position in ``Network.buses``.
"""
from __future__ import annotations

import decimal
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

DEFAULT_V_MIN = 0.94
DEFAULT_V_MAX = 1.06

JSON_SCHEMA = "opfkit.network/1"


class CaseError(ValueError):
    """Base class for case-file problems."""


class CaseSyntaxError(CaseError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class CaseSemanticError(CaseError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    p_demand: float = 0.0
    q_demand: float = 0.0
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX
    is_slack: bool = False


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = -math.inf
    q_max: float = math.inf
    cost_quad: float = 0.0
    cost_lin: float = 0.0
    cost_const: float = 0.0
    ramp_down: float | None = None
    ramp_up: float | None = None


@dataclass(frozen=True)
class Line:
    """Series branch ``from_bus -> to_bus`` with impedance ``r + jx``.

    The admittance parameters ``g`` and ``b`` are the real and imaginary
    parts of ``1 / (r + jx)``.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    s_max: float | None = None

    @classmethod
    def from_admittance(cls, from_bus, to_bus, g, b, s_max=None) -> "Line":
        z = 1.0 / complex(g, b)
        return cls(from_bus, to_bus, z.real, z.imag, s_max)

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    @property
    def g(self) -> float:
        return self.admittance.real

    @property
    def b(self) -> float:
        return self.admittance.imag


@dataclass(frozen=True)
class AdmittanceMatrix:
    g_matrix: np.ndarray
    b_matrix: np.ndarray

    @property
    def complex(self) -> np.ndarray:
        return self.g_matrix + 1j * self.b_matrix


@dataclass(frozen=True, eq=False)
class Network:
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...] = ()
    lines: tuple[Line, ...] = ()
    base_mva: float = 100.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "lines", tuple(self.lines))
        _validate(self)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.buses == other.buses and self.generators == other.generators
                and self.lines == other.lines and self.base_mva == other.base_mva)

    __hash__ = None

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @cached_property
    def slack(self) -> int:
        return next(i for i, bus in enumerate(self.buses) if bus.is_slack)

    @cached_property
    def gen_bus(self) -> np.ndarray:
        return np.array([g.bus for g in self.generators], dtype=int)

    @cached_property
    def gen_matrix(self) -> np.ndarray:
        """N x G map from generator injections to bus injections."""
        mat = np.zeros((self.n_bus, self.n_gen))
        mat[self.gen_bus, np.arange(self.n_gen)] = 1.0
        return mat

    @property
    def p_demand(self) -> np.ndarray:
        return np.array([b.p_demand for b in self.buses])

    @property
    def q_demand(self) -> np.ndarray:
        return np.array([b.q_demand for b in self.buses])

    @property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses])

    @property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses])

    def index_of(self, bus_id: int) -> int:
        return self._id_index[bus_id]

    @cached_property
    def _id_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def replace(self, **changes) -> "Network":
        fields = dict(buses=self.buses, generators=self.generators,
                      lines=self.lines, base_mva=self.base_mva, name=self.name)
        fields.update(changes)
        return Network(**fields)

    def with_demand(self, p_demand, q_demand=None) -> "Network":
        q_demand = self.q_demand if q_demand is None else q_demand
        buses = tuple(
            Bus(b.id, float(p), float(q), b.v_min, b.v_max, b.is_slack)
            for b, p, q in zip(self.buses, p_demand, q_demand)
        )
        return self.replace(buses=buses)


def _validate(net: Network) -> None:
    n = len(net.buses)
    if n < 1:
        raise CaseSemanticError("network has no buses")
    if not net.base_mva > 0:
        raise CaseSemanticError("base_mva must be positive")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != n:
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise CaseSemanticError(f"duplicate bus id {dup[0]}")
    slack = [b.id for b in net.buses if b.is_slack]
    if not slack:
        raise CaseSemanticError("no slack bus")
    if len(slack) > 1:
        raise CaseSemanticError(f"more than one slack bus: {slack}")
    for b in net.buses:
        if not (b.v_min > 0 and b.v_min <= b.v_max):
            raise CaseSemanticError(f"bus {b.id}: invalid voltage bounds [{b.v_min}, {b.v_max}]")
    seen = set()
    for g in net.generators:
        if not 0 <= g.bus < n:
            raise CaseSemanticError(f"generator at unknown bus position {g.bus}")
        if g.bus in seen:
            raise CaseSemanticError(f"two generators on bus {net.buses[g.bus].id}")
        seen.add(g.bus)
        if g.p_min > g.p_max or g.q_min > g.q_max:
            raise CaseSemanticError(f"generator at bus {net.buses[g.bus].id}: inverted limits")
        if g.ramp_down is not None and g.ramp_down > 0:
            raise CaseSemanticError("ramp_down must be <= 0")
        if g.ramp_up is not None and g.ramp_up < 0:
            raise CaseSemanticError("ramp_up must be >= 0")
    pairs = set()
    for ln in net.lines:
        if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
            raise CaseSemanticError(f"line {ln.from_bus}->{ln.to_bus}: dangling endpoint")
        if ln.from_bus == ln.to_bus:
            raise CaseSemanticError(f"line at bus {net.buses[ln.from_bus].id} is a self loop")
        if ln.r == 0 and ln.x == 0:
            raise CaseSemanticError("line with zero impedance")
        key = frozenset((ln.from_bus, ln.to_bus))
        if key in pairs:
            a, b = (net.buses[i].id for i in (ln.from_bus, ln.to_bus))
            raise CaseSemanticError(f"parallel line between buses {a} and {b}")
        pairs.add(key)
    if not _connected(n, net.lines):
        raise CaseSemanticError("network is not connected")


def _connected(n, lines) -> bool:
    adj = [[] for _ in range(n)]
    for ln in lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = {0}
    stack = [0]
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


# ---------------------------------------------------------------------------
# nodal matrices
# ---------------------------------------------------------------------------

def build_admittance(net: Network) -> AdmittanceMatrix:
    n = net.n_bus
    y = np.zeros((n, n), dtype=complex)
    for ln in net.lines:
        a, b, ys = ln.from_bus, ln.to_bus, ln.admittance
        y[a, a] += ys
        y[b, b] += ys
        y[a, b] -= ys
        y[b, a] -= ys
    return AdmittanceMatrix(y.real.copy(), y.imag.copy())


def incidence_and_branch_susceptance(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Graph incidence matrix ``A`` (M x N) and ``B_br = diag(b_lm)``."""
    m, n = net.n_line, net.n_bus
    a = np.zeros((m, n))
    rows = np.arange(m)
    a[rows, [ln.from_bus for ln in net.lines]] = 1.0
    a[rows, [ln.to_bus for ln in net.lines]] = -1.0
    return a, np.diag([ln.b for ln in net.lines])


# ---------------------------------------------------------------------------
# MATPOWER subset: tokenizer
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>%[^\n]*)
  | (?P<newline>\n)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?[Ii]nf\b|NaN\b)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<string>'[^'\n]*')
  | (?P<punct>[=\[\];,])
  | (?P<continuation>\.\.\.[^\n]*\n)
""", re.VERBOSE)


def _tokenize(text: str):
    pos, line, col_start = 0, 1, 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise CaseSyntaxError(f"unexpected character {text[pos]!r}", line, pos - col_start + 1)
        kind = m.lastgroup
        value = m.group()
        col = pos - col_start + 1
        if kind in ("newline", "continuation"):
            if kind == "newline":
                out.append(("newline", value, line, col))
            line += 1
            col_start = m.end()
        elif kind not in ("ws", "comment"):
            out.append((kind, value, line, col))
        pos = m.end()
    out.append(("eof", "", line, pos - col_start + 1))
    return out


class _Num(float):
    """A parsed number that remembers its decimal text for exact scaling."""

    def __new__(cls, text: str):
        obj = super().__new__(cls, text)
        obj.text = text
        return obj


def _to_float(tok) -> float:
    text = tok[1].lower()
    if text.endswith("inf"):
        return -math.inf if text.startswith("-") else math.inf
    return _Num(text)


def _scaled(value: float, base: float, power: int) -> float:
    """``value * base**power`` rounded once from the exact decimal value.

    Converting the decimal text exactly, rather than dividing two rounded
    floats, makes every per-unit double reachable from some file value,
    which the writer relies on for a bit-exact round trip.
    """
    if not math.isfinite(value):
        return value * base ** power
    exact = Fraction(value.text) if isinstance(value, _Num) else Fraction(value)
    return float(exact * Fraction(base) ** power)


def _parse_statements(text: str) -> dict:
    """Return ``{field: value}`` for every ``mpc.field = value;`` statement."""
    toks = _tokenize(text)
    i = 0
    fields = {}

    def err(msg, tok):
        raise CaseSyntaxError(msg, tok[2], tok[3])

    while toks[i][0] != "eof":
        tok = toks[i]
        if tok[0] in ("newline",) or tok[1] == ";":
            i += 1
            continue
        if tok[0] == "ident" and tok[1] == "function":
            while toks[i][0] not in ("newline", "eof"):
                i += 1
            continue
        if tok[0] != "ident":
            err(f"expected assignment, found {tok[1]!r}", tok)
        name = tok[1]
        if toks[i + 1][1] != "=":
            err("expected '='", toks[i + 1])
        i += 2
        tok = toks[i]
        if tok[0] == "number":
            value = _to_float(tok)
            i += 1
        elif tok[0] == "string":
            value = tok[1][1:-1]
            i += 1
        elif tok[1] == "[":
            i += 1
            rows, row = [], []
            while True:
                tok = toks[i]
                if tok[0] == "eof":
                    err("unterminated matrix", tok)
                if tok[1] == "]":
                    i += 1
                    break
                if tok[1] == ";" or tok[0] == "newline":
                    if row:
                        rows.append(row)
                        row = []
                elif tok[0] == "number":
                    row.append((_to_float(tok), tok))
                elif tok[1] != ",":
                    err(f"unexpected token {tok[1]!r} in matrix", tok)
                i += 1
            if row:
                rows.append(row)
            value = rows
        else:
            err(f"unsupported value {tok[1]!r}", tok)
        if toks[i][1] == ";":
            i += 1
        elif toks[i][0] not in ("newline", "eof"):
            err("expected ';' or end of line", toks[i])
        if name.startswith("mpc."):
            name = name[4:]
        fields[name] = value
    return fields


# ---------------------------------------------------------------------------
# MATPOWER subset: semantics
# ---------------------------------------------------------------------------

_DOCUMENTED_COLUMNS = {"bus": 13, "gen": 10, "branch": 11, "gencost": None}
_REQUIRED_COLUMNS = {"bus": 4, "gen": 10, "branch": 4, "gencost": 4}


def _table(fields, name, required=True):
    if name not in fields:
        if required:
            raise CaseSemanticError(f"missing table mpc.{name}")
        return []
    rows = fields[name]
    if not isinstance(rows, list):
        raise CaseSemanticError(f"mpc.{name} must be a matrix")
    need = _REQUIRED_COLUMNS[name]
    for row in rows:
        if len(row) < need:
            tok = row[0][1]
            raise CaseSyntaxError(f"mpc.{name} row needs at least {need} columns", tok[2], tok[3])
    limit = _DOCUMENTED_COLUMNS[name]
    if limit is not None and any(len(r) > limit for r in rows):
        warnings.warn(f"mpc.{name}: columns beyond {limit} ignored", stacklevel=3)
    return [[v for v, _ in row] for row in rows]


def _col(row, j, default):
    return row[j] if len(row) > j else default


def parse_case(text: str) -> Network:
    """Parse a case in the MATPOWER-subset text format.

    Demands, limits and costs are converted to per unit on ``mpc.baseMVA``.
    Bus shunts, line charging, off-nominal taps and phase shifters are
    rejected.  Out-of-service generators and branches are dropped.
    """
    fields = _parse_statements(text)
    known = {"baseMVA", "bus", "gen", "branch", "gencost", "version"}
    for name in fields:
        if name not in known:
            warnings.warn(f"mpc.{name} ignored", stacklevel=2)
    if "baseMVA" not in fields:
        raise CaseSemanticError("missing mpc.baseMVA")
    base = float(fields["baseMVA"])
    if not isinstance(fields["baseMVA"], float) or not base > 0:
        raise CaseSemanticError("mpc.baseMVA must be a positive number")

    bus_rows = _table(fields, "bus")
    index = {}
    slack_seen = False
    raw_buses = []
    for row in bus_rows:
        bid = int(row[0])
        if bid != row[0]:
            raise CaseSemanticError(f"bus id {row[0]} is not an integer")
        if bid in index:
            raise CaseSemanticError(f"duplicate bus id {bid}")
        btype = int(row[1])
        if btype not in (1, 2, 3):
            raise CaseSemanticError(f"bus {bid}: unsupported bus type {btype}")
        if _col(row, 4, 0.0) != 0 or _col(row, 5, 0.0) != 0:
            raise CaseSemanticError(f"bus {bid}: shunt elements are not supported")
        vmax = _col(row, 11, 0.0)
        vmin = _col(row, 12, 0.0)
        if vmax <= 0 or vmin <= 0:
            vmax, vmin = DEFAULT_V_MAX, DEFAULT_V_MIN
        is_slack = btype == 3 and not slack_seen
        slack_seen = slack_seen or is_slack
        index[bid] = len(raw_buses)
        raw_buses.append(Bus(bid, _scaled(row[2], base, -1), _scaled(row[3], base, -1),
                             float(vmin), float(vmax), is_slack))
    if not slack_seen:
        raise CaseSemanticError("no slack bus")

    gen_rows = _table(fields, "gen", required=False)
    cost_rows = _table(fields, "gencost", required=False)
    if cost_rows and len(cost_rows) not in (len(gen_rows), 2 * len(gen_rows)):
        raise CaseSemanticError("mpc.gencost must have one (or two) rows per generator")
    if cost_rows and len(cost_rows) == 2 * len(gen_rows):
        warnings.warn("reactive power costs in mpc.gencost ignored", stacklevel=2)
    if gen_rows and not cost_rows:
        warnings.warn("no mpc.gencost: generator costs set to zero", stacklevel=2)
    generators = []
    for k, row in enumerate(gen_rows):
        if _col(row, 7, 1.0) <= 0:
            continue
        bid = int(row[0])
        if bid not in index:
            raise CaseSemanticError(f"generator at unknown bus {bid}")
        quad = lin = const = 0.0
        if cost_rows:
            quad, lin, const = _cost_from_row(cost_rows[k], base)
        generators.append(Generator(
            bus=index[bid], p_min=_scaled(row[9], base, -1), p_max=_scaled(row[8], base, -1),
            q_min=_scaled(row[4], base, -1), q_max=_scaled(row[3], base, -1),
            cost_quad=quad, cost_lin=lin, cost_const=const,
        ))
    seen = set()
    for g in generators:
        if g.bus in seen:
            raise CaseSemanticError(f"two generators on bus {raw_buses[g.bus].id}")
        seen.add(g.bus)

    lines = []
    for row in _table(fields, "branch"):
        if _col(row, 10, 1.0) <= 0:
            continue
        f, t = int(row[0]), int(row[1])
        for bid in (f, t):
            if bid not in index:
                raise CaseSemanticError(f"branch {f}-{t}: dangling endpoint {bid}")
        if _col(row, 4, 0.0) != 0:
            raise CaseSemanticError(f"branch {f}-{t}: line charging (shunt) is not supported")
        if _col(row, 8, 0.0) not in (0.0, 1.0):
            raise CaseSemanticError(f"branch {f}-{t}: off-nominal tap ratio is not supported")
        if _col(row, 9, 0.0) != 0:
            raise CaseSemanticError(f"branch {f}-{t}: phase shifters are not supported")
        rate = _col(row, 5, 0.0)
        lines.append(Line(index[f], index[t], float(row[2]), float(row[3]),
                          _scaled(rate, base, -1) if rate > 0 else None))

    return Network(tuple(raw_buses), tuple(generators), tuple(lines), base)


def _cost_from_row(row, base):
    model, ncost = int(row[0]), int(row[3])
    if model != 2:
        raise CaseSemanticError("only polynomial generator costs (model 2) are supported")
    if ncost > 3:
        raise CaseSemanticError("generator cost polynomials above degree 2 are not supported")
    coef = list(row[4:4 + ncost])
    if len(coef) != ncost:
        raise CaseSemanticError("gencost row shorter than NCOST")
    coef = [0.0] * (3 - ncost) + coef
    c2, c1, c0 = coef
    return _scaled(c2, base, 2), _scaled(c1, base, 1), float(c0)


def load_case(path_or_name) -> Network:
    """Load a case from a path, or a bundled case by name (``case5``, ``case14``).

    A bare file name such as ``case14.m`` that does not exist in the working
    directory also resolves to the bundled case.
    """
    path = Path(path_or_name)
    bare = not path.exists() and not path.parent.parts
    if bare and (path.suffix == "" or path.suffix == ".m"):
        ref = resources.files("opfkit.data") / f"{path.stem}.m"
        if not ref.is_file():
            raise FileNotFoundError(f"case file not found: {path_or_name}")
        text = ref.read_text()
        name = path.stem
    else:
        if not path.is_file():
            raise FileNotFoundError(f"case file not found: {path}")
        text = path.read_text()
        name = path.stem
    return parse_case(text).replace(name=name)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def _file_value(target: float, base: float, power: int) -> str:
    """Decimal text ``s`` whose exact scaling by ``base**power`` rounds to ``target``."""
    if not math.isfinite(target):
        return _fmt(target / base ** power)
    short = _fmt(target / base ** power)
    if _scaled(_Num(short), base, power) == target:
        return short
    exact = Fraction(target) / Fraction(base) ** power
    for prec in (20, 40, 80):
        with decimal.localcontext() as ctx:
            ctx.prec = prec
            text = str(decimal.Decimal(exact.numerator) / decimal.Decimal(exact.denominator))
        if _scaled(_Num(text), base, power) == target:
            return text
    return text


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "Inf" if x > 0 else "-Inf"
    return repr(float(x))


def format_case(net: Network) -> str:
    """Serialize to the MATPOWER-subset text format read by :func:`parse_case`.

    Values are written so that parsing them back reproduces the per-unit
    numbers bit for bit.  Ramp limits have no column in this format.
    """
    base = net.base_mva

    def mw(x):
        return _file_value(x, base, -1)

    gen_at = {g.bus for g in net.generators}
    out = [f"function mpc = {net.name or 'case'}", "mpc.version = '2';",
           f"mpc.baseMVA = {_fmt(base)};", "",
           "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in net.buses:
        btype = 3 if b.is_slack else (2 if net.index_of(b.id) in gen_at else 1)
        out.append(f"\t{b.id}\t{btype}\t{mw(b.p_demand)}\t{mw(b.q_demand)}"
                   f"\t0\t0\t1\t1\t0\t0\t1\t{_fmt(b.v_max)}\t{_fmt(b.v_min)};")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for g in net.generators:
        out.append(f"\t{net.buses[g.bus].id}\t0\t0\t{mw(g.q_max)}\t{mw(g.q_min)}"
                   f"\t1\t{_fmt(base)}\t1\t{mw(g.p_max)}\t{mw(g.p_min)};")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status",
            "mpc.branch = ["]
    for ln in net.lines:
        rate = "0" if ln.s_max is None else mw(ln.s_max)
        out.append(f"\t{net.buses[ln.from_bus].id}\t{net.buses[ln.to_bus].id}"
                   f"\t{_fmt(ln.r)}\t{_fmt(ln.x)}\t0\t{rate}\t0\t0\t0\t0\t1;")
    out += ["];", "", "%% 2 startup shutdown n c2 c1 c0", "mpc.gencost = ["]
    for g in net.generators:
        c2 = _file_value(g.cost_quad, base, 2)
        c1 = _file_value(g.cost_lin, base, 1)
        out.append(f"\t2\t0\t0\t3\t{c2}\t{c1}\t{_fmt(g.cost_const)};")
    out += ["];", ""]
    return "\n".join(out)


def _num(x):
    return None if x is None or math.isinf(x) else x


def _unnum(x, default):
    return default if x is None else float(x)


def network_to_dict(net: Network) -> dict:
    ids = [b.id for b in net.buses]
    return {
        "schema": JSON_SCHEMA,
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [
            {"id": b.id, "p_demand": b.p_demand, "q_demand": b.q_demand,
             "v_min": b.v_min, "v_max": b.v_max, "is_slack": b.is_slack}
            for b in net.buses
        ],
        "generators": [
            {"bus": ids[g.bus], "p_min": g.p_min, "p_max": g.p_max,
             "q_min": _num(g.q_min), "q_max": _num(g.q_max),
             "cost_quad": g.cost_quad, "cost_lin": g.cost_lin, "cost_const": g.cost_const,
             "ramp_down": g.ramp_down, "ramp_up": g.ramp_up}
            for g in net.generators
        ],
        "lines": [
            {"from": ids[ln.from_bus], "to": ids[ln.to_bus], "r": ln.r, "x": ln.x,
             "s_max": ln.s_max}
            for ln in net.lines
        ],
    }


def network_from_dict(data: dict) -> Network:
    if data.get("schema") != JSON_SCHEMA:
        raise CaseSemanticError(f"unsupported network schema {data.get('schema')!r}")
    buses = tuple(Bus(int(b["id"]), float(b["p_demand"]), float(b["q_demand"]),
                      float(b["v_min"]), float(b["v_max"]), bool(b["is_slack"]))
                  for b in data["buses"])
    index = {b.id: i for i, b in enumerate(buses)}

    def pos(bid):
        if bid not in index:
            raise CaseSemanticError(f"dangling endpoint {bid}")
        return index[bid]

    gens = tuple(Generator(
        bus=pos(g["bus"]), p_min=float(g["p_min"]), p_max=float(g["p_max"]),
        q_min=_unnum(g.get("q_min"), -math.inf), q_max=_unnum(g.get("q_max"), math.inf),
        cost_quad=float(g.get("cost_quad", 0.0)), cost_lin=float(g.get("cost_lin", 0.0)),
        cost_const=float(g.get("cost_const", 0.0)),
        ramp_down=g.get("ramp_down"), ramp_up=g.get("ramp_up"),
    ) for g in data["generators"])
    lines = tuple(Line(pos(l["from"]), pos(l["to"]), float(l["r"]), float(l["x"]),
                       None if l.get("s_max") is None else float(l["s_max"]))
                  for l in data["lines"])
    return Network(buses, gens, lines, float(data["base_mva"]), name=data.get("name", ""))


def network_to_json(net: Network, indent=2) -> str:
    return json.dumps(network_to_dict(net), indent=indent)


def network_from_json(text: str) -> Network:
    return network_from_dict(json.loads(text))

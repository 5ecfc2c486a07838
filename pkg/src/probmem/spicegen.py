"""LTspice netlists that realize the master equation with circuit elements.

Each probability is the voltage on a 1 F capacitor (node ``p<k>``) charged by
a behavioral current source equal to the right-hand side of its equation.
One resistor copy of the network per state supplies the device voltages that
enter the rates, and a further behavioral source drives the mean current
into a 1k load on node ``VI``.  For dc drives with an absorbing state, a
capacitor on node ``Vt`` integrates ``t * influx`` so that its voltage
saturates at the mean switching time.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
import sympy

from .netdsl import TopologyNode, Waveform, format_value, parse_value
from .statespace import UP, StateSpace, transition_rates

__all__ = [
    "EmissionError",
    "NetlistDoc",
    "MAX_SPICE_STATES",
    "emit_ltspice",
    "emit_switch_time_integrator",
    "spice_number",
    "lint_netlist",
    "conservation_residual",
    "netlist_differences",
]

MAX_SPICE_STATES = 64
GM_FUNC = ".func gm(x,y,z){1/(x*exp(-z/y))}"


class EmissionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NetlistDoc:
    lines: list
    node_of_state: dict                            # state index -> "p<k>"
    copy_components: dict = field(default_factory=dict)  # state index -> resistor names

    @property
    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def spice_number(x: float) -> str:
    """Compact number in the listing style: ``3E5``, ``.05``, ``1.5``, ``1E-6``."""
    x = float(x)
    if x == 0:
        return "0"
    if x < 0:
        return "-" + spice_number(-x)
    mant, exp = np.format_float_scientific(x, unique=True, trim="-").split("e")
    exp = int(exp)
    if exp >= 4 or exp <= -4:
        return f"{mant}E{exp}"
    s = repr(x)
    if s.endswith(".0"):
        s = s[:-2]
    if s.startswith("0."):
        s = s[1:]
    return s


def _edge_names(space: StateSpace):
    """Parameter suffix for each (model index, direction, edge index)."""
    multi = len({m.name for m in space.models}) > 1
    names = {}
    for model in dict.fromkeys(space.models):
        sep = "_" if model.n_states > 10 else ""
        tag = f"_{model.name}" if multi else ""
        for i in range(model.n_states - 1):
            names[(model.name, UP, i)] = f"{i}{sep}{i + 1}{tag}"
            names[(model.name, -UP, i)] = f"{i + 1}{sep}{i}{tag}"
    return names


def _place(node: TopologyNode, top: str, bottom: str, new_node, out: list):
    """Assign terminal nodes to every leaf; ``out`` gets (element, top, bottom)."""
    if node.kind == "leaf":
        out.append((node.element, top, bottom))
    elif node.kind == "parallel":
        for c in node.children:
            _place(c, top, bottom, new_node, out)
    else:
        nodes = [top] + [new_node() for _ in node.children[:-1]] + [bottom]
        for c, a, b in zip(node.children, nodes[:-1], nodes[1:]):
            _place(c, a, b, new_node, out)


def _voltage(a: str, b: str) -> str:
    return f"V({a})" if b == "0" else f"(V({a})-V({b}))"


def _sum_terms(terms) -> str:
    out = ""
    for sign, body in terms:
        if sign < 0:
            out += "-" + body
        else:
            out += ("+" if out else "") + body
    return out


def _gated(up_terms, down_terms) -> str:
    parts = []
    if up_terms:
        parts.append(f"({_sum_terms(up_terms)})*u(V(Va))")
    if down_terms:
        parts.append(f"({_sum_terms(down_terms)})*u(-V(Va))")
    return "+".join(parts) if parts else "0"


class _Builder:
    def __init__(self, space: StateSpace):
        self.space = space
        self.node = {s: f"p{s}" for s in range(space.size)}
        self.edge_names = _edge_names(space)
        self.used_edges: dict = {}
        self._copies()
        self._rate_groups()

    def _copies(self):
        space = self.space
        self.resistors = []          # (name, top, bottom, value)
        self.copy_components = {}
        self.device_voltage = {}     # (state, memristor) -> expression
        self.current_terms = []      # (state, resistor names touching Va)
        mem_index = {name: i for i, name in enumerate(space.instances)}
        for s in range(space.size):
            counter = iter(range(1, 10 ** 9))
            placed = []
            _place(space.spec.topology, "Va", "0", lambda: f"n{s}_{next(counter)}", placed)
            names, top_names = [], []
            for element, a, b in placed:
                rname = f"R{len(self.resistors) + 1}"
                if element in mem_index:
                    m = mem_index[element]
                    value = space.models[m].resistances[space.digits[s, m]]
                    self.device_voltage[(s, m)] = _voltage(a, b)
                else:
                    value = space.spec.fixed_resistors[element]
                self.resistors.append((rname, a, b, value))
                names.append(rname)
                if a == "Va":
                    top_names.append(rname)
            self.copy_components[s] = names
            self.current_terms.append((s, top_names))

    def _rate_groups(self):
        """Transitions grouped by (source, target, edge), counted."""
        space = self.space
        groups: dict = {}
        for k in range(space.n_transitions):
            s, t, m, d = (int(space.src[k]), int(space.dst[k]),
                          int(space.mem[k]), int(space.direction[k]))
            model = space.models[m]
            edge = int(space.digits[s, m]) if d == UP else int(space.digits[s, m]) - 1
            key = (s, t, d, model.name, edge, round(float(space.src_ratio[k]), 12))
            if key in groups:
                groups[key][1] += 1
            else:
                groups[key] = [m, 1]
        self.groups = []
        for (s, t, d, mname, edge, _), (m, count) in groups.items():
            if s == t:
                continue
            suffix = self.edge_names[(mname, d, edge)]
            self.used_edges[(mname, d, edge)] = self.space.models[m]
            v = self.device_voltage[(s, m)]
            arg = v if d == UP else f"-{v}"
            body = f"gm(tau{suffix},V{suffix},{arg})*V({self.node[s]})"
            if count > 1:
                body = f"{count}*{body}"
            self.groups.append((s, t, d, body))

    def rhs(self, state: int) -> str:
        up, down = [], []
        for s, t, d, body in self.groups:
            if t == state:
                (up if d == UP else down).append((1, body))
        for s, t, d, body in self.groups:
            if s == state:
                (up if d == UP else down).append((-1, body))
        return _gated(up, down)

    def influx(self, target: int) -> str:
        up = [(1, b) for s, t, d, b in self.groups if t == target and d == UP]
        down = [(1, b) for s, t, d, b in self.groups if t == target and d != UP]
        return _gated(up, down)

    def params(self) -> list[str]:
        lines = []
        for model in dict.fromkeys(self.space.models):
            for d in (UP, -UP):
                edges = model.up_edges if d == UP else model.down_edges
                for i, e in enumerate(edges):
                    if (model.name, d, i) in self.used_edges:
                        n = self.edge_names[(model.name, d, i)]
                        lines.append(f".param tau{n}={spice_number(e.tau)} "
                                     f"V{n}={spice_number(e.v_scale)}")
        return lines


def _source_line(wave: Waveform) -> str:
    if wave.kind == "dc":
        return f"V1 Va 0 {spice_number(wave.amplitude)}"
    args = [spice_number(wave.amplitude), spice_number(wave.frequency)]
    if wave.phase:
        args += ["0", "0", spice_number(math.degrees(wave.phase))]
    return f"V1 Va 0 SINE(0 {' '.join(args)})"


def _has_absorbing_state(space: StateSpace, wave: Waveform) -> bool:
    if wave.kind != "dc" or space.absorbing_hint is None:
        return False
    sl = space.transitions_from(space.absorbing_hint)
    return not np.any(transition_rates(space, wave.amplitude)[sl] > 0)


def emit_switch_time_integrator(space: StateSpace, influx: str,
                                b_index: int | None = None,
                                c_index: int | None = None) -> list[str]:
    """Behavioral source and 1 F capacitor accumulating ``time * influx`` on ``Vt``."""
    b_index = space.size + 2 if b_index is None else b_index
    c_index = space.size + 1 if c_index is None else c_index
    return [f"B{b_index} 0 Vt I=time*({influx})", f"C{c_index} Vt 0 1 IC=0"]


def emit_ltspice(space: StateSpace, wave: Waveform,
                 sim: tuple[float, float, float]) -> NetlistDoc:
    """Netlist for ``space`` under ``wave``; ``sim`` is (t_stop, t_start, max_step)."""
    if space.size > MAX_SPICE_STATES:
        raise EmissionError(
            f"{space.size} probability nodes exceed the netlist cap of {MAX_SPICE_STATES}")
    t_stop, t_start, max_step = sim
    if not (t_stop > 0 and 0 <= t_start < t_stop and max_step > 0):
        raise EmissionError(f"bad transient settings {sim!r}")
    b = _Builder(space)
    m = space.size
    lines = [f"B{s + 1} 0 {b.node[s]} I={b.rhs(s)}" for s in range(m)]
    lines += [f"{name} {a} {c} {format_value(value)}" for name, a, c, value in b.resistors]
    lines.append(f"R{len(b.resistors) + 1} VI 0 1k")
    p0 = np.zeros(m)
    p0[space.index_of(space.spec.initial_digits())] = 1.0
    lines += [f"C{s + 1} {b.node[s]} 0 1 IC={spice_number(p0[s])}" for s in range(m)]
    current = "+".join(f"I({r})*V({b.node[s]})" for s, names in b.current_terms for r in names)
    lines.append(f"B{m + 1} 0 VI I={current}")
    if _has_absorbing_state(space, wave):
        lines += emit_switch_time_integrator(space, b.influx(space.absorbing_hint))
    lines.append(_source_line(wave))
    lines.append(GM_FUNC)
    lines += b.params()
    lines.append(f".tran 0 {spice_number(t_stop)} {spice_number(t_start)} {spice_number(max_step)}")
    lines += [".backanno", ".end"]
    return NetlistDoc(lines, dict(b.node), b.copy_components)


# ---------------------------------------------------------------------------
# checks on netlist text

_FUNCS = {name: sympy.Function(name) for name in ("gm", "u", "V", "exp")}


def _expr(text: str):
    local = dict(_FUNCS)
    local["I"] = sympy.Function("Icur")
    for name in set(re.findall(r"[A-Za-z_]\w*", text)) - set(local) - {"time"}:
        local[name] = sympy.Symbol(name)
    local["time"] = sympy.Symbol("time")
    return sympy.sympify(text, locals=local)


def _statements(text: str) -> list[list[str]]:
    out = []
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("*"):
            out.append(line.split())
    return out


def _number(tok: str) -> float:
    return float(parse_value(tok))


def lint_netlist(text: str) -> list[str]:
    """Structural problems in an emitted netlist (empty list when clean)."""
    problems = []
    stmts = _statements(text)
    names = [s[0].upper() for s in stmts if not s[0].startswith(".")]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        problems.append(f"duplicate element names: {', '.join(dupes)}")
    caps, sources, ics = {}, {}, {}
    for s in stmts:
        head = s[0].upper()
        if head.startswith("C") and len(s) >= 4 and s[2] == "0":
            caps[s[1]] = caps.get(s[1], 0) + 1
            ic = [t for t in s[4:] if t.upper().startswith("IC=")]
            if s[1].startswith("p") and ic:
                ics[s[1]] = _number(ic[0][3:])
        elif head.startswith("B") and len(s) >= 4 and s[1] == "0":
            sources[s[2]] = sources.get(s[2], 0) + 1
    pnodes = sorted({n for n in list(caps) + list(sources) if re.fullmatch(r"p\d+", n)})
    if not pnodes:
        problems.append("no probability nodes")
    for n in pnodes:
        if caps.get(n) != 1 or sources.get(n) != 1:
            problems.append(f"node {n}: {caps.get(n, 0)} capacitors, "
                            f"{sources.get(n, 0)} behavioral sources")
    if pnodes and not math.isclose(sum(ics.get(n, 0.0) for n in pnodes), 1.0, abs_tol=1e-12):
        problems.append(f"initial conditions sum to {sum(ics.values())}")
    params = set()
    for s in stmts:
        if s[0].lower() == ".param":
            params |= {t.split("=")[0] for t in s[1:]}
    referenced = set()
    for s in stmts:
        if s[0].upper().startswith("B"):
            for a, b in re.findall(r"gm\((\w+),(\w+),", " ".join(s[3:])):
                referenced |= {a, b}
    if params != referenced:
        missing, extra = referenced - params, params - referenced
        if missing:
            problems.append(f"undefined parameters: {', '.join(sorted(missing))}")
        if extra:
            problems.append(f"unused parameters: {', '.join(sorted(extra))}")
    for cmd in (".tran", ".func", ".backanno", ".end"):
        n = sum(1 for s in stmts if s[0].lower() == cmd)
        if n != 1:
            problems.append(f"expected one {cmd}, found {n}")
    if stmts and stmts[-1][0].lower() != ".end":
        problems.append(".end is not the last statement")
    return problems


def conservation_residual(text: str):
    """Symbolic sum of the probability-node source expressions (zero when conserving)."""
    total = sympy.Integer(0)
    for s in _statements(text):
        if s[0].upper().startswith("B") and re.fullmatch(r"p\d+", s[2]):
            total += _expr(" ".join(s[3:])[2:])
    return sympy.expand(total)


def _canonical(text: str) -> dict:
    out = {"params": {}, "commands": []}
    for s in _statements(text):
        head = s[0]
        low = head.lower()
        if low == ".param":
            for t in s[1:]:
                k, v = t.split("=")
                out["params"][k] = _number(v)
        elif low == ".func":
            out["commands"].append(("func", "".join(s[1:]).lower()))
        elif low == ".tran":
            out["commands"].append(("tran", tuple(_number(t) for t in s[1:])))
        elif head.startswith("."):
            out["commands"].append((low, tuple(s[1:])))
        else:
            kind = head[0].upper()
            nodes = tuple(s[1:3])
            rest = s[3:]
            if kind == "B":
                value = _expr(" ".join(rest)[2:])
            elif kind == "C":
                value = (_number(rest[0]),) + tuple(
                    _number(t[3:]) for t in rest[1:] if t.upper().startswith("IC="))
            elif kind == "V" and rest and rest[0].upper().startswith("SINE("):
                args = [_number(t) for t in " ".join(rest)[5:].rstrip(")").split()]
                while len(args) > 3 and args[-1] == 0:
                    args.pop()
                value = ("sine",) + tuple(args)
            else:
                value = tuple(_number(t) for t in rest)
            out[head.upper()] = (nodes, value)
    out["commands"].sort(key=repr)
    return out


def netlist_differences(a: str, b: str) -> list[str]:
    """Differences between two netlists after normalizing whitespace, case of
    dot-commands, statement order, number spelling and algebraic form of the
    behavioral expressions.  Empty when they are token-equivalent."""
    ca, cb = _canonical(a), _canonical(b)
    diffs = []
    for key in sorted(set(ca) | set(cb)):
        if key not in ca or key not in cb:
            diffs.append(f"{key}: only in {'first' if key in ca else 'second'}")
            continue
        va, vb = ca[key], cb[key]
        if key.startswith("B"):
            same = va[0] == vb[0] and sympy.expand(va[1] - vb[1]) == 0
        elif key == "params":
            same = va.keys() == vb.keys() and all(math.isclose(va[k], vb[k]) for k in va)
        elif key == "commands":
            same = _commands_match(va, vb)
        else:
            same = va[0] == vb[0] and len(va[1]) == len(vb[1]) and all(
                x == y if isinstance(x, str) else math.isclose(x, y)
                for x, y in zip(va[1], vb[1]))
        if not same:
            diffs.append(f"{key}: {va!r} != {vb!r}")
    return diffs


def _commands_match(a, b) -> bool:
    if len(a) != len(b):
        return False
    for (ka, va), (kb, vb) in zip(a, b):
        if ka != kb:
            return False
        if ka == "tran":
            if len(va) != len(vb) or not all(math.isclose(x, y) for x, y in zip(va, vb)):
                return False
        elif va != vb:
            return False
    return True


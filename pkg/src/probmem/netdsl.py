"""Reader and canonical writer for ``.mn`` circuit files.

A file is a sequence of line statements::

    # binary device under a sine drive
    model B states=2 R=[10k,1k] tau_up=[3e5] V_up=[0.05] tau_down=[3e5] V_down=[0.05]
    res Rs 2k
    source sine amp=1 freq=200          # or: source dc V=5
    net m1:B + (m2:B | Rs)
    init m1=1

``net`` takes a series/parallel expression.  ``+`` joins elements in series
and ``|`` in parallel, ``|`` binding tighter.  A leaf is either ``name:Model``
(declares a memristor instance), the name of a ``res`` resistor, or a bare
name, which is taken as an instance of the model when exactly one model is
declared.  Instances start in state 0 unless ``init`` says otherwise.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

import numpy as np

from .device import MemristorModel, RateEdgeParams, validate_model

__all__ = [
    "ParseError",
    "TopologyNode",
    "Leaf",
    "Series",
    "Parallel",
    "Waveform",
    "CircuitSpec",
    "parse_value",
    "format_value",
    "parse_circuit",
    "format_circuit",
    "load_circuit",
]


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, col {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True)
class TopologyNode:
    kind: str  # "series" | "parallel" | "leaf"
    children: tuple["TopologyNode", ...] = ()
    element: str | None = None

    def __post_init__(self):
        if self.kind == "leaf":
            if not self.element or self.children:
                raise ValueError("leaf nodes carry an element name and no children")
        elif self.kind in ("series", "parallel"):
            if len(self.children) < 2:
                raise ValueError(f"{self.kind} node needs at least two children")
        else:
            raise ValueError(f"unknown topology node kind {self.kind!r}")

    def leaves(self) -> list[str]:
        if self.kind == "leaf":
            return [self.element]
        return [name for c in self.children for name in c.leaves()]


def Leaf(name: str) -> TopologyNode:
    return TopologyNode("leaf", element=name)


def Series(*children: TopologyNode) -> TopologyNode:
    return TopologyNode("series", tuple(children))


def Parallel(*children: TopologyNode) -> TopologyNode:
    return TopologyNode("parallel", tuple(children))


@dataclass(frozen=True)
class Waveform:
    kind: str  # "dc" | "sine"
    amplitude: float
    frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dc", "sine"):
            raise ValueError(f"unknown waveform kind {self.kind!r}")
        if self.kind == "sine" and not self.frequency > 0:
            raise ValueError("sine frequency must be > 0")

    @classmethod
    def dc(cls, value: float) -> "Waveform":
        return cls("dc", float(value))

    @classmethod
    def sine(cls, amplitude: float, frequency: float, phase: float = 0.0) -> "Waveform":
        return cls("sine", float(amplitude), float(frequency), float(phase))

    def __call__(self, t):
        if self.kind == "dc":
            return self.amplitude + 0.0 * t
        return self.amplitude * np.sin(2.0 * math.pi * self.frequency * t + self.phase)

    @property
    def peak(self) -> float:
        return abs(self.amplitude)


@dataclass
class CircuitSpec:
    models: dict[str, MemristorModel]
    instances: dict[str, tuple[str, int]]  # name -> (model name, initial state)
    fixed_resistors: dict[str, float]
    topology: TopologyNode
    source: Waveform

    @property
    def memristors(self) -> list[str]:
        """Instance names in declaration order (digit order of network states)."""
        return list(self.instances)

    def model_of(self, instance: str) -> MemristorModel:
        return self.models[self.instances[instance][0]]

    def initial_digits(self) -> tuple[int, ...]:
        return tuple(init for _, init in self.instances.values())


# ---------------------------------------------------------------------------
# numeric literals

_SUFFIX = {"meg": 6, "k": 3, "m": -3, "u": -6, "n": -9, "p": -12}
_VALUE_RE = re.compile(
    r"([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[kmunp])?", re.IGNORECASE)


def parse_value(token: str) -> float:
    """Parse a numeric literal with an optional SPICE magnitude suffix."""
    m = _VALUE_RE.fullmatch(token.strip()) if token else None
    if m is None:
        raise ValueError(f"malformed numeric literal {token!r}")
    mantissa, suffix = m.groups()
    shift = _SUFFIX[suffix.lower()] if suffix else 0
    try:
        # decimal arithmetic keeps "70m" and "0.07" bit-identical
        value = float(Decimal(mantissa).scaleb(shift))
    except InvalidOperation as exc:  # pragma: no cover - regex guards this
        raise ValueError(f"malformed numeric literal {token!r}") from exc
    if not math.isfinite(value):
        raise ValueError(f"numeric literal out of range: {token!r}")
    return value


def format_value(x: float) -> str:
    """Canonical literal for ``x``: engineering suffix when the mantissa
    lands in [1, 1000), plain shortest decimal otherwise."""
    if x == 0:
        return "0"
    mag = abs(Decimal(repr(float(x))))
    if 1 <= mag < 1000:
        text = _plain(mag)
    else:
        for suffix, shift in _SUFFIX.items():
            scaled = mag.scaleb(-shift)
            if 1 <= scaled < 1000:
                text = _plain(scaled) + suffix
                break
        else:
            text = repr(abs(float(x)))
    return ("-" if x < 0 else "") + text


def _plain(d: Decimal) -> str:
    return format(d.normalize(), "f")


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<value>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?[A-Za-z]*)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[=\[\],+|():])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _lex(text: str, lineno: int) -> list[_Tok]:
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", lineno, pos + 1)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return toks


class _Line:
    """Cursor over the tokens of one statement."""

    def __init__(self, toks: list[_Tok], lineno: int, length: int):
        self.toks = toks
        self.i = 0
        self.lineno = lineno
        self.end_col = length + 1

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def error(self, message: str, tok: _Tok | None = None) -> ParseError:
        tok = tok if tok is not None else self.peek()
        return ParseError(message, self.lineno, tok.col if tok else self.end_col)

    def next(self, kind: str | None = None, text: str | None = None) -> _Tok:
        tok = self.peek()
        want = text or kind
        if tok is None:
            raise self.error(f"expected {want}, got end of line")
        if (kind and tok.kind != kind) or (text and tok.text != text):
            raise self.error(f"expected {want}, got {tok.text!r}")
        self.i += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    def done(self):
        if self.peek() is not None:
            raise self.error(f"unexpected {self.peek().text!r}")

    def number(self) -> float:
        tok = self.next("value")
        try:
            return parse_value(tok.text)
        except ValueError as exc:
            raise self.error(str(exc), tok) from None

    def number_list(self) -> list[float]:
        if not self.at("["):
            return [self.number()]
        self.next(text="[")
        out = [self.number()]
        while self.at(","):
            self.next(text=",")
            out.append(self.number())
        self.next(text="]")
        return out

    def keywords(self) -> dict[str, tuple[object, _Tok]]:
        out = {}
        while self.peek() is not None:
            key = self.next("name")
            if key.text in out:
                raise self.error(f"duplicate key {key.text!r}", key)
            self.next(text="=")
            out[key.text] = (self.number_list(), key)
        return out


# ---------------------------------------------------------------------------
# parser

_MODEL_KEYS = ("states", "R", "tau_up", "V_up", "tau_down", "V_down")


@dataclass
class _Builder:
    models: dict = field(default_factory=dict)
    resistors: dict = field(default_factory=dict)
    instances: dict = field(default_factory=dict)  # name -> [model, init, (line, col)]
    used: set = field(default_factory=set)
    source: Waveform | None = None
    net: "_Line | None" = None  # parsed once all statements are read
    inits: list = field(default_factory=list)


def parse_circuit(text: str) -> CircuitSpec:
    """Parse ``.mn`` text into a validated :class:`CircuitSpec`.

    Raises :class:`ParseError` carrying the line and column of the first
    problem found.
    """
    b = _Builder()
    nets, sources = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        toks = _lex(body, lineno)
        if not toks:
            continue
        line = _Line(toks, lineno, len(body.rstrip()))
        head = line.next("name")
        if head.text == "model":
            _parse_model(line, b)
        elif head.text == "res":
            _parse_res(line, b)
        elif head.text == "source":
            sources.append(head)
            if len(sources) > 1:
                raise line.error("only one source statement is allowed", head)
            b.source = _parse_source(line)
        elif head.text == "net":
            nets.append(head)
            if len(nets) > 1:
                raise line.error("only one net statement is allowed", head)
            b.net = line
        elif head.text == "init":
            b.inits.append(line)
        else:
            raise line.error(f"unknown statement {head.text!r}", head)

    last = len(text.splitlines()) or 1
    if b.source is None:
        raise ParseError("missing source statement", last)
    if b.net is None:
        raise ParseError("missing net statement", last)

    topology = _parse_expr(b.net, b)
    b.net.done()

    for line in b.inits:
        while line.peek() is not None:
            name = line.next("name")
            line.next(text="=")
            vtok = line.next("value")
            if name.text not in b.instances:
                raise line.error(f"init of unknown instance {name.text!r}", name)
            if not re.fullmatch(r"\d+", vtok.text):
                raise line.error("initial state must be a non-negative integer", vtok)
            state = int(vtok.text)
            model = b.models[b.instances[name.text][0]]
            if state >= model.n_states:
                raise line.error(
                    f"initial state {state} out of range for model {model.name!r} "
                    f"({model.n_states} states)", vtok)
            b.instances[name.text][1] = state

    return CircuitSpec(
        models=b.models,
        instances={k: (v[0], v[1]) for k, v in b.instances.items()},
        fixed_resistors=b.resistors,
        topology=topology,
        source=b.source,
    )


def load_circuit(path) -> CircuitSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_circuit(fh.read())


def _parse_model(line: _Line, b: _Builder):
    name = line.next("name")
    if name.text in b.models:
        raise line.error(f"duplicate model {name.text!r}", name)
    kw = line.keywords()
    for key, (_, tok) in kw.items():
        if key not in _MODEL_KEYS:
            raise line.error(f"unknown model key {key!r}", tok)
    missing = [k for k in _MODEL_KEYS if k not in kw]
    if missing:
        raise line.error(f"model {name.text!r} missing {', '.join(missing)}", name)
    (states,), states_tok = kw["states"]
    if states != int(states) or states < 2:
        raise line.error("states must be an integer >= 2", states_tok)
    k = int(states)
    for key in _MODEL_KEYS[1:]:
        values, tok = kw[key]
        want = k if key == "R" else k - 1
        if len(values) != want:
            raise line.error(f"{key} needs {want} values for {k} states, got {len(values)}", tok)
    up = [RateEdgeParams(t, v) for t, v in zip(kw["tau_up"][0], kw["V_up"][0])]
    down = [RateEdgeParams(t, v) for t, v in zip(kw["tau_down"][0], kw["V_down"][0])]
    model = MemristorModel(name.text, kw["R"][0], up, down)
    problems = validate_model(model)
    if problems:
        raise line.error(f"invalid model {name.text!r}: {problems[0]}", name)
    b.models[name.text] = model
    line.done()


def _parse_res(line: _Line, b: _Builder):
    name = line.next("name")
    if name.text in b.resistors:
        raise line.error(f"duplicate resistor {name.text!r}", name)
    vtok = line.peek()
    value = line.number()
    if not value > 0:
        raise line.error("resistance must be > 0", vtok)
    b.resistors[name.text] = value
    line.done()


def _parse_source(line: _Line) -> Waveform:
    kind = line.next("name")
    kw = line.keywords()

    def scalar(key, default=None):
        if key not in kw:
            if default is None:
                raise line.error(f"source {kind.text} needs {key}=", kind)
            return default
        values, tok = kw.pop(key)
        if len(values) != 1:
            raise line.error(f"{key} takes a single value", tok)
        return values[0]

    if kind.text == "dc":
        wave = Waveform.dc(scalar("V"))
    elif kind.text == "sine":
        amp, freq, phase = scalar("amp"), scalar("freq"), scalar("phase", 0.0)
        if not freq > 0:
            raise line.error("sine frequency must be > 0", kind)
        wave = Waveform.sine(amp, freq, phase)
    else:
        raise line.error(f"unknown source kind {kind.text!r} (dc or sine)", kind)
    if kw:
        key, (_, tok) = next(iter(kw.items()))
        raise line.error(f"unknown source key {key!r}", tok)
    return wave


def _parse_expr(line: _Line, b: _Builder) -> TopologyNode:
    terms = [_parse_term(line, b)]
    while line.at("+"):
        line.next(text="+")
        terms.append(_parse_term(line, b))
    return terms[0] if len(terms) == 1 else TopologyNode("series", tuple(terms))


def _parse_term(line: _Line, b: _Builder) -> TopologyNode:
    factors = [_parse_factor(line, b)]
    while line.at("|"):
        line.next(text="|")
        factors.append(_parse_factor(line, b))
    return factors[0] if len(factors) == 1 else TopologyNode("parallel", tuple(factors))


def _parse_factor(line: _Line, b: _Builder) -> TopologyNode:
    if line.at("("):
        line.next(text="(")
        node = _parse_expr(line, b)
        line.next(text=")")
        return node
    tok = line.next("name")
    name = tok.text
    if name in b.used:
        raise line.error(f"duplicate element {name!r} in net", tok)
    if line.at(":"):
        line.next(text=":")
        mtok = line.next("name")
        if mtok.text not in b.models:
            raise line.error(f"unknown model {mtok.text}", mtok)
        if name in b.resistors:
            raise line.error(f"duplicate name {name!r} (already a resistor)", tok)
        b.instances[name] = [mtok.text, 0]
    elif name in b.resistors:
        pass
    elif len(b.models) == 1:
        b.instances[name] = [next(iter(b.models)), 0]
    else:
        raise line.error(f"unknown element {name!r}", tok)
    b.used.add(name)
    return Leaf(name)


# ---------------------------------------------------------------------------
# writer

def _fmt_list(values) -> str:
    return "[" + ",".join(format_value(v) for v in values) + "]"


def _fmt_topology(node: TopologyNode, spec: CircuitSpec, parent: str | None) -> str:
    if node.kind == "leaf":
        name = node.element
        if name in spec.instances:
            return f"{name}:{spec.instances[name][0]}"
        return name
    sep = " + " if node.kind == "series" else " | "
    text = sep.join(_fmt_topology(c, spec, node.kind) for c in node.children)
    # parallel binds tighter, so only same-kind nesting or series-in-parallel needs parens
    if parent is not None and (parent == node.kind or node.kind == "series"):
        text = f"({text})"
    return text


def format_circuit(spec: CircuitSpec) -> str:
    """Canonical ``.mn`` text; ``parse_circuit`` of the result equals ``spec``."""
    out = []
    for name, model in spec.models.items():
        out.append(
            f"model {name} states={model.n_states} R={_fmt_list(model.resistances)}"
            f" tau_up={_fmt_list(e.tau for e in model.up_edges)}"
            f" V_up={_fmt_list(e.v_scale for e in model.up_edges)}"
            f" tau_down={_fmt_list(e.tau for e in model.down_edges)}"
            f" V_down={_fmt_list(e.v_scale for e in model.down_edges)}")
    for name, value in spec.fixed_resistors.items():
        out.append(f"res {name} {format_value(value)}")
    src = spec.source
    if src.kind == "dc":
        out.append(f"source dc V={format_value(src.amplitude)}")
    else:
        line = f"source sine amp={format_value(src.amplitude)} freq={format_value(src.frequency)}"
        if src.phase:
            line += f" phase={format_value(src.phase)}"
        out.append(line)
    out.append("net " + _fmt_topology(spec.topology, spec, None))
    inits = [f"{n}={s}" for n, (_, s) in spec.instances.items() if s]
    if inits:
        out.append("init " + " ".join(inits))
    return "\n".join(out) + "\n"

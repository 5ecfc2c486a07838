import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import circuit_path
from probmem.device import MemristorModel, RateEdgeParams
from probmem.netdsl import (
    CircuitSpec,
    Leaf,
    ParseError,
    Parallel,
    Series,
    TopologyNode,
    Waveform,
    format_circuit,
    format_value,
    load_circuit,
    parse_circuit,
    parse_value,
)

BINARY_TEXT = """\
# single binary device on a sine source
model B states=2 R=[10k,1k] tau_up=[3e5] V_up=[0.05] tau_down=[3e5] V_down=[0.05]
source sine amp=1 freq=200
net m1:B
"""


@pytest.mark.parametrize("token, value", [
    ("10k", 1e4), ("3E5", 3e5), ("2meg", 2e6), ("2MEG", 2e6), ("1K", 1e3),
    (".05", 0.05), ("50m", 0.05), ("70m", 0.07), ("4u", 4e-6), ("3n", 3e-9),
    ("7p", 7e-12), ("-1.5", -1.5), ("1e-3", 1e-3), ("10E-7", 1e-6),
])
def test_parse_value(token, value):
    assert parse_value(token) == value


@pytest.mark.parametrize("token", ["", "k", "1x", "1.2.3", "e5", "1 k", "--1", "1kk"])
def test_parse_value_rejects(token):
    with pytest.raises(ValueError):
        parse_value(token)


@pytest.mark.parametrize("x, text", [(10000, "10k"), (1000, "1k"), (0.05, "50m"),
                                     (3e5, "300k"), (1.5, "1.5"), (2e6, "2meg"), (0, "0")])
def test_format_value(x, text):
    assert format_value(x) == text


@given(st.floats(-1e15, 1e15, allow_nan=False, allow_infinity=False))
def test_value_round_trip(x):
    assert parse_value(format_value(x)) == x


def test_single_binary_circuit():
    spec = parse_circuit(BINARY_TEXT)
    assert spec.memristors == ["m1"]
    model = spec.model_of("m1")
    assert model.resistances == (10e3, 1e3)
    assert model.up_edges == (RateEdgeParams(3e5, 0.05),)
    assert spec.source == Waveform.sine(1.0, 200.0)
    assert spec.topology == Leaf("m1")
    assert spec.initial_digits() == (0,)


def test_five_series_circuit():
    spec = load_circuit(circuit_path("five_series_dc"))
    assert spec.source == Waveform.dc(5.0)
    assert spec.topology.kind == "series"
    assert spec.topology.leaves() == ["m1", "m2", "m3", "m4", "m5"]
    assert spec.initial_digits() == (0,) * 5


def test_precedence_and_parentheses():
    text = BINARY_TEXT.replace("net m1:B", "net a:B + b:B | c:B + (d:B + e:B)")
    topo = parse_circuit(text).topology
    assert topo == Series(Leaf("a"), Parallel(Leaf("b"), Leaf("c")),
                          Series(Leaf("d"), Leaf("e")))


def test_bare_names_use_sole_model_and_resistors():
    text = BINARY_TEXT.replace("net m1:B", "res r1 2.2k\nnet m1 + r1 | m2\ninit m2=1")
    spec = parse_circuit(text)
    assert spec.fixed_resistors == {"r1": 2200.0}
    assert spec.instances == {"m1": ("B", 0), "m2": ("B", 1)}


def test_unknown_model_reported_with_location():
    with pytest.raises(ParseError) as err:
        parse_circuit(BINARY_TEXT.replace("m1:B", "m1:X"))
    assert "unknown model X" in str(err.value)
    assert err.value.line == 4
    assert err.value.column == 8


@pytest.mark.parametrize("text, fragment", [
    (BINARY_TEXT.replace("net m1:B", "net m1:B + m1:B"), "duplicate"),
    (BINARY_TEXT + "init m1=2\n", "out of range"),
    (BINARY_TEXT + "init zz=1\n", "unknown instance"),
    (BINARY_TEXT + "source dc V=1\n", "one source"),
    (BINARY_TEXT + "net m2:B\n", "one net"),
    (BINARY_TEXT.replace("net m1:B\n", ""), "missing net"),
    (BINARY_TEXT.replace("source sine amp=1 freq=200\n", ""), "missing source"),
    (BINARY_TEXT.replace("net m1:B", "net (m1:B"), ""),
    (BINARY_TEXT.replace("R=[10k,1k]", "R=[1k,10k]"), "decreasing"),
    (BINARY_TEXT.replace("freq=200", "freq=0"), "freq"),
    (BINARY_TEXT + "wire a b\n", "unknown statement"),
    (BINARY_TEXT.replace("R=[10k,1k]", "R=[10k,1q]"), ""),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ParseError) as err:
        parse_circuit(text)
    assert err.value.line >= 1
    assert fragment in str(err.value)


@pytest.mark.parametrize("name", ["binary_ac", "five_series_dc",
                                  "tristate_ac", "two_tristate_dc"])
def test_round_trip_example_circuits(name):
    spec = load_circuit(circuit_path(name))
    assert parse_circuit(format_circuit(spec)) == spec


def test_format_normalizes_literals():
    text = BINARY_TEXT.replace("R=[10k,1k]", "R=[10000,1000]")
    assert "R=[10k,1k]" in format_circuit(parse_circuit(text))


# -- random circuits ---------------------------------------------------------

literals = st.floats(1e-6, 1e9, allow_nan=False).map(lambda x: float(f"{x:.6g}"))


@st.composite
def models(draw, name):
    k = draw(st.integers(2, 4))
    rs = sorted(draw(st.lists(literals, min_size=k, max_size=k, unique=True)), reverse=True)
    edges = lambda: [RateEdgeParams(draw(literals), draw(literals))  # noqa: E731
                     for _ in range(k - 1)]
    return MemristorModel(name, rs, edges(), edges())


def trees(names):
    leaves = st.sampled_from(names).map(Leaf)
    return st.recursive(
        leaves,
        lambda sub: st.builds(lambda kind, cs: TopologyNode(kind, tuple(cs)),
                              st.sampled_from(["series", "parallel"]),
                              st.lists(sub, min_size=2, max_size=3)),
        max_leaves=6)


@st.composite
def circuits(draw):
    mods = {n: draw(models(n)) for n in draw(st.sets(st.sampled_from(["A", "B", "C"]),
                                                     min_size=1))}
    topo = draw(trees([f"e{i}" for i in range(8)]))
    # give each leaf a unique name in traversal order
    counter = iter(range(100))

    def rename(node):
        if node.kind == "leaf":
            return Leaf(f"x{next(counter)}")
        return TopologyNode(node.kind, tuple(rename(c) for c in node.children))

    topo = rename(topo)
    instances, fixed = {}, {}
    for leaf in topo.leaves():
        if draw(st.booleans()):
            fixed[leaf] = draw(literals)
        else:
            m = draw(st.sampled_from(sorted(mods)))
            instances[leaf] = (m, draw(st.integers(0, mods[m].n_states - 1)))
    if draw(st.booleans()):
        src = Waveform.dc(draw(literals))
    else:
        src = Waveform.sine(draw(literals), draw(literals), draw(st.sampled_from([0.0, 0.5])))
    return CircuitSpec(mods, instances, fixed, topo, src)


@settings(max_examples=150, deadline=None)
@given(circuits())
def test_round_trip_random(spec):
    assert parse_circuit(format_circuit(spec)) == spec

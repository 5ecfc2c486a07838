import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gamma
from probmem.master import generator_matrix
from probmem.netdsl import parse_circuit
from probmem.statespace import (
    DOWN,
    UP,
    CapacityError,
    Transition,
    aggregate,
    enumerate_states,
    initial_distribution,
    lump_states,
    neighbors,
    transition_rate,
)

BIN = "model B states=2 R=[10k,1k] tau_up=[3e5] V_up=[0.05] tau_down=[3e5] V_down=[0.05]\n"
TRI = ("model T states=3 R=[10k,3k,1k] tau_up=[3e5,3e5] V_up=[0.05,0.07] "
       "tau_down=[3e5,3e5] V_down=[0.05,0.07]\n")


def circuit(models, net, source="source dc V=1", extra=""):
    return parse_circuit(models + extra + source + "\nnet " + net + "\n")


def test_two_binary_states():
    space = enumerate_states(circuit(BIN, "a + b"))
    assert space.size == 4
    assert space.labels() == ["00", "01", "10", "11"]


def test_five_binary_states(five_full):
    assert five_full.size == 32
    assert five_full.absorbing_hint == 31


def test_tristate_pair_neighbors():
    space = enumerate_states(circuit(TRI, "a + b"))
    assert space.size == 9
    s = space.index_of((1, 1))
    got = {tuple(space.digits[t.target]) for t in neighbors(space, s)}
    assert got == {(0, 1), (2, 1), (1, 0), (1, 2)}


def test_binary_pair_neighbors_and_single():
    space = enumerate_states(circuit(BIN, "a + b"))
    assert sorted(space.label(t.target) for t in neighbors(space, 0)) == ["01", "10"]
    single = enumerate_states(circuit(BIN, "a"))
    assert neighbors(single, 1) == [Transition(0, 0, DOWN)]


@pytest.mark.parametrize("n, k", [(1, 2), (2, 2), (3, 2), (1, 3), (2, 3), (3, 3)])
def test_transition_counts_brute_force(n, k):
    models = BIN if k == 2 else TRI
    space = enumerate_states(circuit(models, " + ".join(f"x{i}" for i in range(n))))
    per_dir = n * (k - 1) * k ** (n - 1)
    assert np.sum(space.direction == UP) == per_dir
    assert np.sum(space.direction == DOWN) == per_dir
    # brute-force neighbor sets by digit perturbation
    for s in range(space.size):
        d = space.digits[s]
        expect = set()
        for m in range(n):
            for step in (-1, 1):
                if 0 <= d[m] + step < k:
                    e = d.copy()
                    e[m] += step
                    expect.add(space.index_of(e))
        assert {t.target for t in neighbors(space, s)} == expect


def test_rate_two_series_from_00():
    space = enumerate_states(circuit(BIN, "a + b"))
    tr = [t for t in neighbors(space, 0) if t.direction == UP][0]
    rate = transition_rate(space, 0, tr, 1.0)
    assert rate == pytest.approx(float(gamma("0.5")), rel=1e-13)
    assert rate == pytest.approx(7.342155e-2, rel=1e-6)
    assert transition_rate(space, 0, tr, -1.0) == 0.0


def test_rate_five_series_all_off(five_full):
    tr = neighbors(five_full, 0)[0]
    assert transition_rate(five_full, 0, tr, 5.0) == pytest.approx(float(gamma(1)), rel=1e-13)


def test_rate_uses_source_configuration():
    space = enumerate_states(circuit(BIN, "a + b"))
    s = space.index_of((1, 0))  # a on, b off
    up = [t for t in neighbors(space, s) if t.direction == UP][0]
    assert transition_rate(space, s, up, 1.0) == pytest.approx(float(gamma(1 * 10 / 11)), rel=1e-13)
    with pytest.raises(ValueError):
        transition_rate(space, 0, Transition(3, 0, UP), 1.0)


def test_lumped_multiplicities(five_lumped):
    assert five_lumped.size == 6
    assert five_lumped.multiplicity.tolist() == [1, 5, 10, 10, 5, 1]
    assert five_lumped.labels() == ["00000", "00001", "00011", "00111", "01111", "11111"]
    assert int(five_lumped.multiplicity.sum()) == 32


def test_lumped_binary_pair():
    lumped = lump_states(enumerate_states(circuit(BIN, "a + b")))
    assert lumped.size == 3
    assert lumped.multiplicity.tolist() == [1, 2, 1]


def test_lumped_tristate_pair_orbits():
    full = enumerate_states(circuit(TRI, "a + b"))
    lumped = lump_states(full)
    assert lumped.size == 6
    # brute-force orbit partition under swapping the two devices
    orbits = {}
    for s in range(full.size):
        key = tuple(sorted(full.digits[s]))
        orbits.setdefault(key, set()).add(s)
    assert sorted(len(o) for o in orbits.values()) == sorted(lumped.multiplicity.tolist())
    for members in orbits.values():
        assert len({int(lumped.class_of[s]) for s in members}) == 1


def test_no_symmetry_is_noop():
    space = enumerate_states(circuit(BIN, "a + b", extra="init a=1\n"))
    assert lump_states(space) is space


def test_capacity_error():
    with pytest.raises(CapacityError, match="lump"):
        enumerate_states(circuit(BIN, " + ".join(f"x{i}" for i in range(12))), cap=1000)


def test_initial_distribution_uses_init():
    space = enumerate_states(circuit(TRI, "a + b", extra="", source="source dc V=1\ninit b=2"))
    p = initial_distribution(space)
    assert p[space.index_of((0, 2))] == 1.0 and p.sum() == 1.0


# -- lumping is exact for random symmetric networks -------------------------

NETS = [
    ("a + b + c", BIN), ("(a:B | b:B) + c:X", BIN + "model X states=2 R=[5k,500] tau_up=[1e5] "
                                          "V_up=[0.04] tau_down=[2e5] V_down=[0.06]\n"),
    ("a + b", TRI), ("a | b | c", BIN), ("r1 + (a + b) | c", BIN),
]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(NETS), st.floats(-3.0, 3.0))
def test_lumped_generator_commutes_with_aggregation(net, v):
    text, models = net
    spec = circuit(models, text, extra="res r1 2k\n" if "r1" in text else "")
    full = enumerate_states(spec)
    lumped = lump_states(full)
    agg = np.zeros((lumped.size, full.size))
    agg[lumped.class_of, np.arange(full.size)] = 1.0
    qf = generator_matrix(full, v)
    ql = generator_matrix(lumped, v)
    # strong lumpability: class totals evolve by the lumped generator from any p
    scale = max(np.abs(qf).max(), 1e-300)
    assert np.allclose(agg @ qf, ql @ agg, rtol=1e-12, atol=1e-12 * scale)
    assert int(lumped.multiplicity.sum()) == full.size
    p = np.random.default_rng(0).dirichlet(np.ones(full.size))
    assert np.allclose(aggregate(lumped, p), agg @ p)

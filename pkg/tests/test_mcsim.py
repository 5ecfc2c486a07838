import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chain_switching_time, gamma
from probmem.device import MemristorModel
from probmem.mcsim import (
    default_dt,
    gillespie_dc,
    mc_ensemble,
    mc_trial,
    trial_seed,
    uniforms,
)
from probmem.netdsl import CircuitSpec, Leaf, Series, Waveform
from probmem.statespace import enumerate_states, lump_states

G1 = float(gamma(1))


def single(source=Waveform.dc(1.0), init=0):
    model = MemristorModel.binary("B", 10e3, 1e3, 3e5, 0.05)
    return CircuitSpec({"B": model}, {"m": ("B", init)}, {}, Leaf("m"), source)


def chain(n, v, tau=3e5, v_scale=0.05):
    model = MemristorModel.binary("B", 10e3, 1e3, tau, v_scale)
    names = [f"m{i}" for i in range(n)]
    topo = Leaf(names[0]) if n == 1 else Series(*[Leaf(k) for k in names])
    return CircuitSpec({"B": model}, {k: ("B", 0) for k in names}, {}, topo, Waveform.dc(v))


def replay(space, path):
    digits = list(space.digits[int(np.argmax(space.digits.sum(axis=1) == 0))])
    for _, mem, direction in path.events:
        digits[mem] += direction
        assert 0 <= digits[mem] < space.models[mem].n_states
    return tuple(digits)


def test_uniforms_range_and_determinism():
    keys = trial_seed(7, np.arange(50))
    u = uniforms(keys[:, None], np.arange(200)[None, :])
    assert u.min() >= 0.0 and u.max() < 1.0
    assert np.array_equal(u, uniforms(keys[:, None], np.arange(200)[None, :]))
    assert abs(u.mean() - 0.5) < 0.01
    assert len(np.unique(keys)) == 50
    assert not np.array_equal(trial_seed(7, 3), trial_seed(8, 3))


def test_trial_same_seed_same_path(binary_ac):
    a = mc_trial(binary_ac, binary_ac.source, seed=11, t_stop=0.01)
    b = mc_trial(binary_ac, binary_ac.source, seed=11, t_stop=0.01)
    assert a.events == b.events and a.final_state == b.final_state
    c = mc_trial(binary_ac, binary_ac.source, seed=12, t_stop=0.01)
    assert c.events != a.events


def test_trial_path_structure(binary_ac, two_tristate):
    paths = [(binary_ac, mc_trial(binary_ac, binary_ac.source, seed=3, t_stop=0.02)),
             (two_tristate, gillespie_dc(two_tristate, 1.5, seed=3))]
    for spec, path in paths:
        space = enumerate_states(spec)
        times = [e[0] for e in path.events]
        assert all(b > a for a, b in zip(times, times[1:]))
        assert all(e[2] in (-1, 1) for e in path.events)
        assert replay(space, path) == path.final_state


def test_zero_drive_never_switches():
    spec = single(Waveform.dc(0.0))
    path = mc_trial(spec, spec.source, seed=1, t_stop=1.0)
    assert path.events == [] and path.final_state == (0,)
    assert default_dt(enumerate_states(spec), spec.source) == math.inf
    path = mc_trial(spec, Waveform.sine(0.0, 200.0), seed=1, t_stop=0.01)
    assert path.events == []


@pytest.mark.parametrize("v", [0.0, -1.0, -5.0])
def test_non_positive_dc_keeps_chain_off(v):
    spec = chain(3, v)
    path = gillespie_dc(spec, v, seed=5)
    assert path.events == [] and path.final_state == (0, 0, 0)
    assert math.isnan(path.switching_time)
    stats = mc_ensemble(spec, spec.source, 100, 2, [1e-3, 1.0])
    assert np.all(stats.empirical_p[:, 0] == 1.0)


def test_gillespie_path_structure(five_series):
    space = enumerate_states(five_series)
    for seed in range(20):
        path = gillespie_dc(five_series, 5.0, seed)
        times = [e[0] for e in path.events]
        assert len(path.events) == 5
        assert all(b > a for a, b in zip(times, times[1:]))
        assert all(e[2] == 1 for e in path.events)
        assert path.final_state == (1,) * 5
        assert path.switching_time == times[-1]
        assert replay(space, path) == path.final_state


def test_single_trial_frequencies_are_indicators(binary_ac):
    stats = mc_ensemble(binary_ac, binary_ac.source, 1, 4, np.linspace(0, 0.01, 11))
    assert set(np.unique(stats.empirical_p)) <= {0.0, 1.0}
    assert np.all(stats.empirical_p.sum(axis=1) == 1.0)
    assert np.all(stats.current_stderr == 0)


def test_ensemble_rows_are_distributions(two_tristate):
    stats = mc_ensemble(two_tristate, two_tristate.source, 300, 9, np.geomspace(1e-6, 1.0, 21))
    assert np.allclose(stats.empirical_p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert stats.empirical_p.min() >= 0


@pytest.mark.parametrize("name,method", [("binary_ac", "auto"), ("five_series", "auto"),
                                         ("binary_ac", "fixed")])
def test_ensemble_prefix_property(request, name, method):
    # trial i depends only on (seed, i), not on how many trials run
    spec = request.getfixturevalue(name)
    times = [2e-5, 1e-4, 1e-3]
    a = mc_ensemble(spec, spec.source, 40, 21, times, method=method)
    b = mc_ensemble(spec, spec.source, 80, 21, times, method=method)
    assert np.array_equal(a.switching_times, b.switching_times[:40], equal_nan=True)


def test_ensemble_matches_single_trial(binary_ac, five_series):
    space = enumerate_states(binary_ac)
    for seed in range(5):
        key = int(trial_seed(seed, 0)[0])
        path = mc_trial(binary_ac, binary_ac.source, seed=key, t_stop=0.01)
        stats = mc_ensemble(binary_ac, binary_ac.source, 1, seed, [0.01])
        idx = space.index_of(path.final_state)
        assert stats.empirical_p[0, idx] == 1.0
    keys = trial_seed(3, np.arange(6))
    stats = mc_ensemble(five_series, five_series.source, 6, 3, [1e-3])
    for i, key in enumerate(keys):
        assert gillespie_dc(five_series, 5.0, int(key)).switching_time == stats.switching_times[i]


def test_gillespie_single_exponential():
    spec = single()
    stats = mc_ensemble(spec, spec.source, 4000, 1, [1e-3])
    st_ = stats.switching_times
    assert np.all(np.isfinite(st_))
    ks = scipy.stats.kstest(st_, "expon", args=(0, 1 / G1))
    assert ks.pvalue > 0.01


@pytest.mark.parametrize("refine", [1, 2])
def test_fixed_step_single_exponential(refine):
    spec = single()
    space = enumerate_states(spec)
    dt = default_dt(space, spec.source) / refine
    stats = mc_ensemble(spec, spec.source, 3000, 2, [0.02], dt=dt, method="fixed")
    st_ = stats.switching_times
    assert np.all(np.isfinite(st_))
    ks = scipy.stats.kstest(st_, "expon", args=(0, 1 / G1))
    assert ks.pvalue > 0.01


def test_fixed_step_agrees_with_gillespie_on_chain():
    # mild stage rates (about 2.7e3 and 6.2e3 per second) keep the step count small
    spec = chain(2, 1.0, tau=1e-3, v_scale=0.5)
    a = mc_ensemble(spec, spec.source, 3000, 3, [0.01], method="fixed").switching_times
    b = mc_ensemble(spec, spec.source, 3000, 4, [0.01]).switching_times
    assert scipy.stats.ks_2samp(a, b).pvalue > 0.01


def test_chain_mean_switching_time(five_series):
    stats = mc_ensemble(five_series, five_series.source, 5000, 8, [1e-3])
    mean, err, n = stats.switching_summary()
    assert n == 5000
    exact = float(chain_switching_time(5, 5.0))
    assert abs(mean - exact) < 4 * err


def test_stderr_shrinks_with_trials(binary_ac):
    times = np.linspace(0.001, 0.005, 5)
    small = mc_ensemble(binary_ac, binary_ac.source, 200, 6, times)
    large = mc_ensemble(binary_ac, binary_ac.source, 3200, 6, times)
    ratio = small.current_stderr / large.current_stderr
    assert np.all((ratio > 2.5) & (ratio < 6.5))


def test_lumped_space_rejected(five_series):
    with pytest.raises(ValueError):
        mc_ensemble(five_series, five_series.source, 10, 0, [1e-4],
                    space=lump_states(enumerate_states(five_series)))


@pytest.mark.parametrize("bad", [[], [1e-3, 1e-3], [-1.0, 1.0]])
def test_bad_report_times(binary_ac, bad):
    with pytest.raises((ValueError, IndexError)):
        mc_ensemble(binary_ac, binary_ac.source, 10, 0, bad)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**63), st.integers(1, 4), st.floats(0.5, 6.0))
def test_gillespie_paths_monotone(seed, n, v):
    spec = chain(n, v)
    space = enumerate_states(spec)
    path = gillespie_dc(spec, v, seed)
    assert [e[2] for e in path.events] == [1] * n
    assert replay(space, path) == (1,) * n
    times = [e[0] for e in path.events]
    assert all(b > a for a, b in zip(times, times[1:]))

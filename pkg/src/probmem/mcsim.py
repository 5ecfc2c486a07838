"""Monte Carlo switching realizations, used to cross-check the master equation.

Randomness comes from a counter-based SplitMix64 stream: trial ``i`` of an
ensemble gets the key ``trial_seed(master_seed, i)`` and every draw is a pure
function of (key, counter).  Paths therefore do not depend on how many
trials run together or in which order, and a single path run through
:func:`mc_trial` or :func:`gillespie_dc` is bit-identical to the same trial
inside :func:`mc_ensemble`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .netdsl import CircuitSpec, Waveform
from .statespace import StateSpace, enumerate_states, initial_distribution, transition_rates

__all__ = [
    "TrialPath",
    "EnsembleStats",
    "trial_seed",
    "uniforms",
    "mc_trial",
    "gillespie_dc",
    "mc_ensemble",
    "default_dt",
]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MASK = (1 << 64) - 1
MAX_STEP_HAZARD = 0.1   # hard cap on total rate * dt within one fixed step
DEFAULT_HAZARD = 0.01   # default total rate * dt at peak drive


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def trial_seed(master_seed: int, trial) -> np.ndarray:
    """Per-trial stream keys derived from a master seed (vectorized over ``trial``)."""
    base = np.asarray([master_seed & _MASK], dtype=np.uint64)
    trial = np.asarray(trial, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(_mix64(base) + (trial + np.uint64(1)) * _GAMMA)


def uniforms(keys, counters) -> np.ndarray:
    """Uniform draws in [0, 1) for each (key, counter) pair (broadcasting)."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix64(keys + (counters + np.uint64(1)) * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


@dataclass(frozen=True, eq=False)
class TrialPath:
    events: list            # (time, memristor index, direction)
    final_state: tuple      # digits
    seed: int
    switching_time: float = math.nan   # first arrival at the all-on state


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    trials: int
    report_times: np.ndarray
    empirical_p: np.ndarray       # (R, M) over the full state space
    mean_current: np.ndarray      # (R,)
    current_stderr: np.ndarray    # (R,)
    switching_times: np.ndarray   # (trials,), nan where never reached
    source_values: np.ndarray     # (R,)

    def switching_summary(self) -> tuple[float, float, int]:
        """Mean, standard error, and count of finite switching times."""
        st = self.switching_times[np.isfinite(self.switching_times)]
        if st.size == 0:
            return math.nan, math.nan, 0
        err = st.std(ddof=1) / math.sqrt(st.size) if st.size > 1 else math.nan
        return float(st.mean()), float(err), int(st.size)


class _Table:
    """Per-state transition table padded to the maximum out-degree."""

    def __init__(self, space: StateSpace):
        m = space.size
        counts = np.bincount(space.src, minlength=m)
        d = max(int(counts.max()) if counts.size else 0, 1)
        self.space = space
        self.width = d
        self.target = np.zeros((m, d), dtype=np.int64)
        self.mem = np.zeros((m, d), dtype=np.int64)
        self.direction = np.zeros((m, d), dtype=np.int64)
        self.row = np.full((m, d), -1, dtype=np.int64)
        slot = np.arange(len(space.src)) - np.searchsorted(space.src, space.src)
        self.target[space.src, slot] = space.dst
        self.mem[space.src, slot] = space.mem
        self.direction[space.src, slot] = space.direction
        self.row[space.src, slot] = np.arange(len(space.src))
        self.absorbing = space.absorbing_hint

    def rates(self, v: float) -> np.ndarray:
        r = transition_rates(self.space, v)
        out = np.where(self.row >= 0, r[np.maximum(self.row, 0)], 0.0)
        return out


def _start_index(space: StateSpace) -> int:
    return int(np.argmax(initial_distribution(space)))


def _full_space(spec: CircuitSpec, space: StateSpace | None) -> StateSpace:
    if space is None:
        return enumerate_states(spec)
    if space.lumped:
        raise ValueError("Monte Carlo runs on the full state space")
    return space


def default_dt(space: StateSpace, wave: Waveform) -> float:
    """Step giving total hazard <= DEFAULT_HAZARD per step at peak drive."""
    table = _Table(space)
    peak = max(table.rates(wave.peak).sum(axis=1).max(), table.rates(-wave.peak).sum(axis=1).max())
    dt = DEFAULT_HAZARD / peak if peak > 0 else math.inf
    if wave.kind == "sine":
        dt = min(dt, 1.0 / (1000.0 * wave.frequency))
    return dt  # inf when the drive can never switch anything


# ---------------------------------------------------------------------------
# fixed-step Bernoulli scheme

def _run_fixed_step(space, wave, keys, dt, report_times, record_events=True):
    table = _Table(space)
    n = len(keys)
    d = table.width
    state = np.full(n, _start_index(space), dtype=np.int64)
    first_hit = np.where(state == table.absorbing, 0.0, np.nan)
    events = [[] for _ in range(n)] if record_events else None
    snapshots = np.empty((len(report_times), n), dtype=np.int64)
    counter = 0
    t = 0.0
    for r, t_report in enumerate(report_times):
        span = t_report - t
        n_steps = math.ceil(span / dt * (1 - 1e-12)) if span > 0 else 0
        h0 = span / n_steps if n_steps else 0.0
        for k in range(n_steps):
            t_a = t + k * h0
            # refinement depends on the drive only, never on trial states
            r_max = table.rates(float(wave(t_a + 0.5 * h0))).sum(axis=1).max()
            sub = 1
            while r_max * h0 / sub > MAX_STEP_HAZARD:
                sub *= 2
            h = h0 / sub
            for j in range(sub):
                t_mid = t_a + (j + 0.5) * h
                rates = table.rates(float(wave(t_mid)))[state]
                u = uniforms(keys[:, None], counter * (d + 1) + np.arange(d + 1)[None, :])
                counter += 1
                fired = u[:, :d] < rates * h
                movers = np.nonzero(fired.any(axis=1))[0]
                if movers.size == 0:
                    continue
                w = np.where(fired[movers], rates[movers], 0.0)
                cum = np.cumsum(w, axis=1)
                pick = np.argmax(cum > u[movers, d:d + 1] * cum[:, -1:], axis=1)
                old = state[movers]
                state[movers] = table.target[old, pick]
                t_event = t_a + (j + 1) * h
                newly = movers[(state[movers] == table.absorbing) & np.isnan(first_hit[movers])]
                first_hit[newly] = t_event
                if record_events:
                    for i, s, c in zip(movers, old, pick):
                        events[i].append((t_event, int(table.mem[s, c]), int(table.direction[s, c])))
        t = t_report
        snapshots[r] = state
    return state, snapshots, first_hit, events


def mc_trial(spec: CircuitSpec, wave: Waveform, seed: int, dt: float | None = None,
             t_stop: float = 0.0, space: StateSpace | None = None) -> TrialPath:
    """One fixed-step realization up to ``t_stop``.

    Each step of length ``dt`` lets every admissible move fire with
    probability ``rate * dt`` (rates at the step midpoint); if several fire,
    one is kept with probability proportional to its rate.  Steps whose peak
    total hazard would exceed ``MAX_STEP_HAZARD`` are halved until it does not.
    """
    space = _full_space(spec, space)
    if not t_stop > 0:
        raise ValueError("t_stop must be > 0")
    dt = default_dt(space, wave) if dt is None else dt
    keys = np.asarray([seed & _MASK], dtype=np.uint64)
    state, _, hit, events = _run_fixed_step(space, wave, keys, dt, [t_stop])
    return TrialPath(events[0], tuple(int(x) for x in space.digits[state[0]]), seed, float(hit[0]))


# ---------------------------------------------------------------------------
# exact sampler for constant drive

def _run_gillespie(space, v_dc, keys, t_max=math.inf, max_events=1_000_000):
    table = _Table(space)
    rates = table.rates(v_dc)
    total = rates.sum(axis=1)
    n = len(keys)
    state = np.full(n, _start_index(space), dtype=np.int64)
    t = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    first_hit = np.where(state == table.absorbing, 0.0, np.nan)
    batches = []  # (trial indices, event times, new states, memristor, direction)
    k = 0
    while True:
        active = np.nonzero(~done & (total[state] > 0))[0]
        if active.size == 0:
            break
        if k >= max_events:
            raise RuntimeError(f"more than {max_events} events per trial")
        u = uniforms(keys[active, None], 2 * k + np.arange(2)[None, :])
        k += 1
        s = state[active]
        t_new = t[active] - np.log1p(-u[:, 0]) / total[s]
        # waits below one ulp of t still count as a later event
        t_new = np.maximum(t_new, np.nextafter(t[active], np.inf))
        cum = np.cumsum(rates[s], axis=1)
        pick = np.argmax(cum > u[:, 1:2] * total[s][:, None], axis=1)
        late = t_new >= t_max
        done[active[late]] = True
        keep = ~late
        active, s, pick, t_new = active[keep], s[keep], pick[keep], t_new[keep]
        t[active] = t_new
        state[active] = table.target[s, pick]
        hit = (state[active] == table.absorbing) & np.isnan(first_hit[active])
        first_hit[active[hit]] = t_new[hit]
        batches.append((active, t_new, state[active].copy(),
                        table.mem[s, pick], table.direction[s, pick]))
    return state, first_hit, batches


def gillespie_dc(spec: CircuitSpec, v_dc: float, seed: int,
                 space: StateSpace | None = None, t_max: float = math.inf) -> TrialPath:
    """Exact continuous-time realization under a constant source.

    The path ends when the network reaches a state with no outflow, or at
    ``t_max``.
    """
    space = _full_space(spec, space)
    keys = np.asarray([seed & _MASK], dtype=np.uint64)
    state, hit, batches = _run_gillespie(space, float(v_dc), keys, t_max)
    events = [(float(tt[0]), int(m[0]), int(dd[0]))
              for idx, tt, _, m, dd in batches if idx.size]
    return TrialPath(events, tuple(int(x) for x in space.digits[state[0]]), seed, float(hit[0]))


# ---------------------------------------------------------------------------
# ensembles

def mc_ensemble(spec: CircuitSpec, wave: Waveform, trials: int, seed: int, report_times,
                dt: float | None = None, space: StateSpace | None = None,
                method: str = "auto") -> EnsembleStats:
    """Run ``trials`` independent paths and aggregate them at ``report_times``.

    ``method="auto"`` uses the exact sampler for dc drives and the fixed-step
    scheme for sine drives; ``"fixed"`` forces the fixed-step scheme.
    """
    if method not in ("auto", "fixed", "gillespie"):
        raise ValueError(f"unknown method {method!r}")
    if method == "gillespie" and wave.kind != "dc":
        raise ValueError("the exact sampler needs a dc drive")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    space = _full_space(spec, space)
    report_times = np.asarray(report_times, dtype=float)
    if report_times.ndim != 1 or np.any(np.diff(report_times) <= 0) or report_times[0] < 0:
        raise ValueError("report_times must be non-negative and strictly increasing")
    keys = trial_seed(seed, np.arange(trials))
    if wave.kind == "dc" and method != "fixed":
        snapshots, hit = _gillespie_snapshots(space, wave.amplitude, keys, report_times)
    else:
        dt = default_dt(space, wave) if dt is None else dt
        _, snapshots, hit, _ = _run_fixed_step(space, wave, keys, dt, report_times,
                                               record_events=False)
    m = space.size
    emp = np.stack([np.bincount(row, minlength=m) for row in snapshots]) / trials
    v = np.asarray(wave(report_times), dtype=float)
    currents = space.conductance[snapshots] * v[:, None]
    mean = currents.mean(axis=1)
    stderr = currents.std(axis=1, ddof=1) / math.sqrt(trials) if trials > 1 \
        else np.zeros(len(report_times))
    return EnsembleStats(trials, report_times, emp, mean, stderr, hit, v)


def _gillespie_snapshots(space, v_dc, keys, report_times):
    # a constant drive gates every move to one direction, so paths terminate
    state, hit, batches = _run_gillespie(space, float(v_dc), keys)
    snapshots = np.full((len(report_times), len(keys)), _start_index(space), dtype=np.int64)
    # batches are chronological per trial, so later writes win
    for idx, t_ev, new_state, _, _ in batches:
        rows, cols = np.nonzero(report_times[:, None] >= t_ev[None, :])
        snapshots[rows, idx[cols]] = new_state[cols]
    return snapshots, hit

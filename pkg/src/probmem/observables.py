"""Mean current, switching times and I-V loops from occupation probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import MemristorModel, rate_up
from .master import ProbabilityTrajectory
from .statespace import StateSpace, transition_rates

__all__ = [
    "ObservableSeries",
    "TruncationError",
    "SwitchTimeIntegral",
    "mean_current",
    "current_variance",
    "switching_time_terms",
    "mean_switching_time_analytic",
    "absorbing_influx",
    "switch_time_accumulator",
    "mean_switching_time_numeric",
    "iv_curve",
    "loop_area",
    "find_plateaus",
    "observables",
]

ABSORBED_THRESHOLD = 1e-6


class TruncationError(RuntimeError):
    def __init__(self, message, absorbed_mass):
        super().__init__(message)
        self.absorbed_mass = absorbed_mass


def mean_current(space: StateSpace, p, v_source):
    """Expected network current.

    ``p`` holds one probability per state of ``space`` (class totals for a
    lumped space, so the binomial weights of identical devices are already
    inside ``p``).  Broadcasts over a leading time axis with matching
    ``v_source``.
    """
    p = np.asarray(p, dtype=float)
    return (p @ space.conductance) * np.asarray(v_source, dtype=float)


def current_variance(space: StateSpace, p, v_source):
    """Variance of the network current across configurations."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v_source, dtype=float)
    second = (p @ space.conductance ** 2) * v ** 2
    return np.maximum(second - mean_current(space, p, v) ** 2, 0.0)


# ---------------------------------------------------------------------------
# switching time

def switching_time_terms(n: int, model: MemristorModel, v_dc: float) -> list[float]:
    """Stage times ``1/((N-j) g_j)`` for N identical binary devices in series.

    ``g_j`` is the off-to-on rate of an off device when ``j`` devices are on.
    """
    if model.n_states != 2:
        raise NotImplementedError(
            f"closed-form switching time needs a binary model; {model.name!r} "
            f"has {model.n_states} states")
    if n < 1:
        raise ValueError("need at least one device")
    r_off, r_on = model.resistances
    terms = []
    for j in range(n):
        v_off = v_dc * r_off / (j * r_on + (n - j) * r_off)
        g = rate_up(model.up_edges[0], v_off)
        terms.append(math.inf if g == 0 else 1.0 / ((n - j) * g))
    return terms


def mean_switching_time_analytic(n: int, model: MemristorModel, v_dc: float) -> float:
    return math.fsum(switching_time_terms(n, model, v_dc))


def _influx_matrix(space: StateSpace, target: int, v_source) -> tuple[np.ndarray, np.ndarray]:
    into = (space.dst == target) & (space.src != target)
    return space.src[into], transition_rates(space, v_source)[into]


def absorbing_influx(space: StateSpace, p, v_source, target: int | None = None):
    """Probability flux into ``target`` (default: the all-on state).

    Vectorized over rows of ``p`` paired with entries of ``v_source``.
    """
    target = space.absorbing_hint if target is None else target
    p = np.asarray(p, dtype=float)
    v = np.asarray(v_source, dtype=float)
    if p.ndim == 1:
        src, rates = _influx_matrix(space, target, float(v))
        return float(np.dot(rates, p[src]))
    out = np.empty(len(p))
    for i, (row, vi) in enumerate(zip(p, np.broadcast_to(v, (len(p),)))):
        src, rates = _influx_matrix(space, target, float(vi))
        out[i] = np.dot(rates, row[src])
    return out


def switch_time_accumulator(traj: ProbabilityTrajectory, space: StateSpace) -> np.ndarray:
    """Running trapezoidal value of the integral of ``t * influx(t)``."""
    f = traj.times * absorbing_influx(space, traj.probabilities, traj.source_values)
    acc = np.zeros(len(f))
    acc[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(traj.times))
    return acc


@dataclass(frozen=True)
class SwitchTimeIntegral:
    value: float             # integral up to t_end plus tail_correction
    tail_correction: float   # (1 - absorbed) * t_end
    absorbed: float          # absorbing-state probability at t_end
    t_end: float

    def __float__(self):
        return self.value


def mean_switching_time_numeric(traj: ProbabilityTrajectory, space: StateSpace,
                                threshold: float = ABSORBED_THRESHOLD) -> SwitchTimeIntegral:
    """Mean first-passage time into the all-on state from a dc trajectory.

    Integrates ``t * influx`` until the absorbed mass first exceeds
    ``1 - threshold`` and adds the lower tail bound ``(1 - absorbed) * t_end``.
    """
    target = space.absorbing_hint
    absorbed = traj.probabilities[:, target]
    hit = np.nonzero(absorbed > 1.0 - threshold)[0]
    if hit.size == 0:
        raise TruncationError(
            f"trajectory ends with absorbed mass {absorbed[-1]:.9g} "
            f"(< 1 - {threshold:g}); extend t_stop", float(absorbed[-1]))
    end = int(hit[0])
    acc = switch_time_accumulator(traj, space)
    t_end = float(traj.times[end])
    tail = (1.0 - float(absorbed[end])) * t_end
    return SwitchTimeIntegral(float(acc[end]) + tail, tail, float(absorbed[end]), t_end)


# ---------------------------------------------------------------------------
# loops and plateaus

def iv_curve(traj: ProbabilityTrajectory, space: StateSpace) -> np.ndarray:
    """``(n, 2)`` array of (source voltage, mean current) samples."""
    i = mean_current(space, traj.probabilities, traj.source_values)
    return np.column_stack([traj.source_values, i])


def _shoelace(x, y) -> float:
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def loop_area(v, i) -> float:
    """Total enclosed area of a pinched loop.

    The curve is cut at sign changes of ``v`` and each lobe's shoelace area
    is taken in absolute value, so figure-eight lobes do not cancel.
    """
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    sign = np.sign(v)
    cuts = np.nonzero(sign[1:] * sign[:-1] < 0)[0] + 1
    total = 0.0
    for seg_v, seg_i in zip(np.split(v, cuts), np.split(i, cuts)):
        if len(seg_v) >= 3:
            # close each lobe through the origin
            total += abs(_shoelace(np.append(seg_v, 0.0), np.append(seg_i, 0.0)))
    return total


@dataclass(frozen=True)
class Plateau:
    t_start: float
    t_end: float
    level: float


def find_plateaus(t, y, flatness: float = 0.01, min_decades: float = 0.5) -> list[Plateau]:
    """Maximal runs of samples whose spread stays within ``flatness`` of
    their mean and which last at least ``min_decades`` in log time.

    Samples at ``t <= 0`` are ignored.  Returned plateaus do not overlap.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = t > 0
    t, y = t[keep], y[keep]
    found, start = [], 0
    while start < len(t):
        end = start + 1
        lo = hi = y[start]
        while end < len(t):
            lo2, hi2 = min(lo, y[end]), max(hi, y[end])
            if hi2 - lo2 > flatness * abs(0.5 * (hi2 + lo2)):
                break
            lo, hi = lo2, hi2
            end += 1
        if math.log10(t[end - 1] / t[start]) >= min_decades:
            found.append(Plateau(float(t[start]), float(t[end - 1]), float(np.mean(y[start:end]))))
            start = end
        else:
            start += 1
    return found


@dataclass(frozen=True, eq=False)
class ObservableSeries:
    times: np.ndarray
    mean_current: np.ndarray
    source_voltage: np.ndarray
    switch_time_accumulator: np.ndarray


def observables(traj: ProbabilityTrajectory, space: StateSpace) -> ObservableSeries:
    return ObservableSeries(
        traj.times,
        mean_current(space, traj.probabilities, traj.source_values),
        traj.source_values,
        switch_time_accumulator(traj, space),
    )

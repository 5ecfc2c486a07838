"""Master equation for network-state occupation probabilities.

``dp/dt = Q(V_a(t)) p`` where ``Q[a, b]`` (a != b) is the rate of the move
b -> a evaluated in configuration b, and each diagonal entry is minus the
column's total outflow.

Two integrators are provided:

* :func:`solve_dc` evaluates ``exp(Q t) p0`` exactly for a constant drive.
  The propagator is built by uniformization over a short sub-interval
  (every term non-negative) followed by repeated squaring, which stays
  accurate when rates span twenty-plus orders of magnitude.
* :func:`solve_transient` handles time-dependent drives, either with an
  adaptive Dormand-Prince 5(4) scheme or, when the rates make explicit
  stepping impractical, with midpoint exponential steps built on the same
  propagator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .device import gated_rate
from .netdsl import Waveform
from .statespace import StateSpace, initial_distribution, transition_rates

__all__ = [
    "IntegrationError",
    "ProbabilityTrajectory",
    "generator_matrix",
    "propagator",
    "solve_dc",
    "solve_transient",
    "check_distribution",
]

DENSE_LIMIT = 1024
DEFAULT_TOL = 1e-8
DEFAULT_POINTS = 2000
# explicit stepping is abandoned for the exponential scheme above this estimate
RK_STEP_BUDGET = 200_000
_UNIF_THETA = 0.5     # uniformization sub-interval: lambda*h <= theta
_SPARSE_CHUNK = 50.0  # lambda*h per sparse uniformization chunk (avoids exp underflow)
_SPARSE_MAX_TERMS = 10_000_000


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ProbabilityTrajectory:
    times: np.ndarray          # (n,)
    probabilities: np.ndarray  # (n, M)
    source_values: np.ndarray  # (n,)
    method: str = ""

    def __len__(self):
        return len(self.times)

    @property
    def norm_error(self) -> float:
        """Largest deviation of ``sum(p)`` from 1 over all samples."""
        return float(np.max(np.abs(self.probabilities.sum(axis=1) - 1.0)))

    @property
    def min_entry(self) -> float:
        return float(self.probabilities.min())


def check_distribution(p, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("probability vector must be one-dimensional")
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise ValueError("probabilities must lie in [0, 1]")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


# ---------------------------------------------------------------------------
# generator

def generator_matrix(space: StateSpace, v_source: float, sparse: bool | None = None):
    """Generator ``Q`` at the instantaneous source voltage.

    Dense ``ndarray`` up to ``DENSE_LIMIT`` states, ``scipy.sparse`` CSC
    above (or when ``sparse`` is forced).
    """
    m = space.size
    outflow = np.bincount(space.src, transition_rates(space, v_source), minlength=m)
    rates = _snap_to_column_grid(transition_rates(space, v_source), outflow[space.src])
    # every partial sum below is now exact, so each column sums to exactly 0
    outflow = np.bincount(space.src, rates, minlength=m)
    if sparse is None:
        sparse = m > DENSE_LIMIT
    if sparse:
        rows = np.concatenate([space.dst, np.arange(m)])
        cols = np.concatenate([space.src, np.arange(m)])
        vals = np.concatenate([rates, -outflow])
        return sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
    q = np.zeros((m, m))
    np.add.at(q, (space.dst, space.src), rates)
    q[np.diag_indices(m)] = -outflow
    return q


def _snap_to_column_grid(rates: np.ndarray, column_total: np.ndarray) -> np.ndarray:
    """Round each rate to a multiple of ``ulp(2 * total)`` of its source column.

    Multiples of that grid below ``2 * total`` carry at most 53 significant
    bits, so any sum of a column's rates is exact.  The change per entry is
    at most half an ulp of the column total.
    """
    grid = np.spacing(2.0 * column_total)
    return np.round(rates / grid) * grid


def _rhs_and_outflow(space: StateSpace, v: float, p: np.ndarray):
    rates = transition_rates(space, v)
    flow = rates * p[space.src]
    m = space.size
    dp = np.bincount(space.dst, flow, minlength=m) - np.bincount(space.src, flow, minlength=m)
    return dp, rates


def _max_outflow(space: StateSpace, v: float) -> float:
    rates = transition_rates(space, v)
    if rates.size == 0:
        return 0.0
    return float(np.bincount(space.src, rates, minlength=space.size).max())


# ---------------------------------------------------------------------------
# exact constant-rate propagation

def _fix_diagonal(e: np.ndarray):
    # columns dominated by "stay put": rebuild the diagonal from the off-diagonal
    # mass so outflows far below machine epsilon relative to 1 are not lost
    d = np.diagonal(e).copy()
    big = d >= 0.5
    if np.any(big):
        off = e.sum(axis=0) - d
        idx = np.nonzero(big)[0]
        e[idx, idx] = 1.0 - off[idx]


def _propagator_batch(qs: np.ndarray, t: float) -> np.ndarray:
    """``exp(q t)`` for a stack of small dense generators ``qs`` (B, M, M)."""
    b, m, _ = qs.shape
    lam = np.max(-np.diagonal(qs, axis1=1, axis2=2), axis=1)
    top = float(lam.max()) if b else 0.0
    eye = np.broadcast_to(np.eye(m), qs.shape)
    if top == 0.0 or t == 0.0:
        return eye.copy()
    squarings = max(0, math.ceil(math.log2(top * t / _UNIF_THETA)))
    x = lam * (t / 2.0 ** squarings)
    safe = np.where(lam > 0, lam, 1.0)
    jump = eye + qs / safe[:, None, None]
    idx = np.arange(m)
    jump[:, idx, idx] = np.maximum(jump[:, idx, idx], 0.0)
    weight = np.exp(-x)
    term = eye.copy()
    e = weight[:, None, None] * term
    k = 0
    x_max = float(x.max())
    while weight.max() > 1e-20 or k < x_max:
        k += 1
        term = jump @ term
        weight = weight * x / k
        e += weight[:, None, None] * term
    _fix_diagonal_batch(e)
    for _ in range(squarings):
        e = e @ e
        _fix_diagonal_batch(e)
    return e


def _fix_diagonal_batch(e: np.ndarray):
    m = e.shape[-1]
    idx = np.arange(m)
    d = e[:, idx, idx]
    off = e.sum(axis=1) - d
    e[:, idx, idx] = np.where(d >= 0.5, 1.0 - off, d)


def propagator(q: np.ndarray, t: float) -> np.ndarray:
    """Column-stochastic ``exp(q t)`` for a dense generator ``q``."""
    m = q.shape[0]
    lam = float(np.max(-np.diagonal(q))) if m else 0.0
    if lam == 0.0 or t == 0.0:
        return np.eye(m)
    squarings = max(0, math.ceil(math.log2(lam * t / _UNIF_THETA)))
    x = lam * (t / 2.0 ** squarings)
    jump = np.eye(m) + q / lam
    np.fill_diagonal(jump, np.maximum(np.diagonal(jump), 0.0))
    weight = math.exp(-x)
    term = np.eye(m)
    e = weight * term
    k = 0
    while weight > 1e-20 or k < x:
        k += 1
        term = jump @ term
        weight *= x / k
        e += weight * term
    _fix_diagonal(e)
    for _ in range(squarings):
        e = e @ e
        _fix_diagonal(e)
    return e


def _uniformized_apply(q, p: np.ndarray, t: float) -> np.ndarray:
    """``exp(q t) p`` by Poisson-weighted powers for sparse generators."""
    m = q.shape[0]
    lam = float(np.max(-q.diagonal())) if m else 0.0
    if lam == 0.0 or t == 0.0:
        return p.copy()
    if lam * t > _SPARSE_MAX_TERMS:
        raise IntegrationError(
            f"uniformization needs ~{lam * t:.3g} terms (rate {lam:.3g}/s over {t:.3g} s); "
            "lump the state space to use the dense propagator")
    jump = sp.identity(m, format="csc") + q / lam
    chunks = max(1, math.ceil(lam * t / _SPARSE_CHUNK))
    x = lam * t / chunks
    for _ in range(chunks):
        weight = math.exp(-x)
        term = p
        acc = weight * p
        k = 0
        while weight > 1e-20 or k < x:
            k += 1
            term = jump @ term
            weight *= x / k
            acc = acc + weight * term
        p = acc
    return p


def _renormalize(p: np.ndarray, tol: float) -> np.ndarray:
    p = np.where((p < 0) & (p >= -tol), 0.0, p)
    return p / p.sum()


class _Stepper:
    """Advance ``p`` by ``h`` at a frozen voltage, caching dc propagators."""

    def __init__(self, space: StateSpace):
        self.space = space
        self.sparse = space.size > DENSE_LIMIT
        self._cache: dict = {}

    def __call__(self, p, v, h, cache=False):
        q = generator_matrix(self.space, v, sparse=self.sparse)
        if self.sparse:
            return _uniformized_apply(q, p, h)
        if not cache:
            return propagator(q, h) @ p
        key = (v, float(f"{h:.14e}"))
        if key not in self._cache:
            self._cache[key] = propagator(q, h)
        return self._cache[key] @ p


def solve_dc(space: StateSpace, v_dc: float, p0=None, times=None) -> ProbabilityTrajectory:
    """Occupation probabilities under a constant source ``v_dc`` at ``times``."""
    p = check_distribution(initial_distribution(space) if p0 is None else p0).copy()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d sequence")
    if times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be non-negative and strictly increasing")
    step = _Stepper(space)
    out = np.empty((times.size, space.size))
    t_prev = 0.0
    for i, t in enumerate(times):
        if t > t_prev:
            p = _renormalize(step(p, v_dc, t - t_prev, cache=True), 0.0)
        out[i] = p
        t_prev = t
    return ProbabilityTrajectory(times, out, np.full(times.size, float(v_dc)), "uniformization")


# ---------------------------------------------------------------------------
# time-dependent drive

# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def rk_step_estimate(space: StateSpace, wave: Waveform, t_stop: float) -> float:
    """Steps the capped explicit scheme needs at least, from the rate cap
    ``1/(20 * max outflow)`` and the sine cap ``1/(1000 f)`` over one period."""
    if wave.kind == "dc":
        return 20.0 * _max_outflow(space, wave.amplitude) * t_stop
    ts = np.linspace(0.0, 1.0 / wave.frequency, 512, endpoint=False)
    per_second = [max(20.0 * _max_outflow(space, float(wave(t))), 1000.0 * wave.frequency)
                  for t in ts]
    return float(np.mean(per_second)) * t_stop


def choose_method(space: StateSpace, wave: Waveform, t_stop: float) -> str:
    """``"rk"`` when explicit stepping fits the step budget, else ``"exponential"``."""
    return "rk" if rk_step_estimate(space, wave, t_stop) <= RK_STEP_BUDGET else "exponential"


def solve_transient(space: StateSpace, wave: Waveform, p0=None, t_stop: float = 0.0,
                    tol: float = DEFAULT_TOL, n_points: int = DEFAULT_POINTS,
                    method: str = "auto", max_steps: int = 10_000_000) -> ProbabilityTrajectory:
    """Integrate the master equation under ``wave`` from 0 to ``t_stop``.

    Parameters
    ----------
    method : {"auto", "rk", "exponential"}
        ``"rk"`` is adaptive Dormand-Prince with local error <= ``tol`` per
        step, step size capped at ``1/(20 * max outflow)`` and, for sine
        drives, at ``1/(1000 f)``.  ``"exponential"`` takes midpoint steps
        ``p <- exp(Q(V(t + h/2)) h) p`` with the same sine cap; it is exact
        for dc drives.  ``"auto"`` picks ``"rk"`` unless its estimated step
        count exceeds ``RK_STEP_BUDGET``.
    n_points : int
        Number of equally spaced output samples including ``t = 0``.

    Raises
    ------
    IntegrationError
        If the rate-derived step size falls below ``1e-12 * t_stop`` or the
        step budget is exhausted (checked up front from ``rk_step_estimate``).
    """
    if not t_stop > 0:
        raise ValueError("t_stop must be > 0")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    p = check_distribution(initial_distribution(space) if p0 is None else p0).copy()
    times = np.linspace(0.0, t_stop, n_points)
    if method == "auto":
        method = choose_method(space, wave, t_stop)
    if method == "rk":
        need = rk_step_estimate(space, wave, t_stop)
        if need > max_steps:
            raise IntegrationError(
                f"rate-limited explicit stepping needs about {need:.3g} steps "
                f"(budget {max_steps}); "
                "use method='exponential'")
        probs = _integrate_rk(space, wave, p, times, tol, max_steps)
    elif method == "exponential":
        probs = _integrate_exponential(space, wave, p, times, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ProbabilityTrajectory(times, probs, np.asarray(wave(times), dtype=float), method)


class _BatchGenerators:
    """Dense generators for many voltages at once (small spaces only)."""

    def __init__(self, space: StateSpace):
        m = space.size
        self.space = space
        self.m = m
        t = space.n_transitions
        incidence = np.zeros((t, m * m))
        rows = np.arange(t)
        incidence[rows, space.dst * m + space.src] += 1.0
        incidence[rows, space.src * m + space.src] -= 1.0
        self.incidence = incidence
        self.outflow = np.zeros((t, m))
        self.outflow[rows, space.src] = 1.0

    def __call__(self, volts: np.ndarray) -> np.ndarray:
        sp_ = self.space
        x = sp_.direction * sp_.src_ratio * volts[:, None]
        rates = gated_rate(sp_.tau, sp_.v_scale, x)
        totals = (rates @ self.outflow)[:, sp_.src]
        rates = _snap_to_column_grid(rates, totals)
        return (rates @ self.incidence).reshape(len(volts), self.m, self.m)


_BATCH_LIMIT = 64     # state count up to which sine drives use batched propagators
_BATCH_SIZE = 4096


def _integrate_exponential(space, wave, p, times, tol):
    if wave.kind == "sine" and space.size <= _BATCH_LIMIT:
        return _integrate_exponential_batched(space, wave, p, times, tol)
    step = _Stepper(space)
    out = np.empty((times.size, space.size))
    out[0] = p
    for i in range(1, times.size):
        t0, t1 = times[i - 1], times[i]
        if wave.kind == "dc":
            p = step(p, wave.amplitude, t1 - t0, cache=True)
        else:
            n_sub = max(1, math.ceil((t1 - t0) * 1000.0 * wave.frequency * (1 - 1e-12)))
            h = (t1 - t0) / n_sub
            for k in range(n_sub):
                p = step(p, float(wave(t0 + (k + 0.5) * h)), h)
        p = _renormalize(p, tol)
        out[i] = p
    return out


def _integrate_exponential_batched(space, wave, p, times, tol):
    gens = _BatchGenerators(space)
    out = np.empty((times.size, space.size))
    out[0] = p
    for i in range(1, times.size):
        t0, t1 = times[i - 1], times[i]
        n_sub = max(1, math.ceil((t1 - t0) * 1000.0 * wave.frequency * (1 - 1e-12)))
        h = (t1 - t0) / n_sub
        for start in range(0, n_sub, _BATCH_SIZE):
            k = np.arange(start, min(n_sub, start + _BATCH_SIZE))
            props = _propagator_batch(gens(np.asarray(wave(t0 + (k + 0.5) * h))), h)
            for e in props:
                p = e @ p
        p = _renormalize(p, tol)
        out[i] = p
    return out


def _integrate_rk(space, wave, p, times, tol, max_steps):
    t_stop = times[-1]
    h_floor = 1e-12 * t_stop
    h_sine = 1.0 / (1000.0 * wave.frequency) if wave.kind == "sine" else math.inf
    out = np.empty((times.size, space.size))
    out[0] = p
    t = 0.0
    v = float(wave(t))
    k1, rates = _rhs_and_outflow(space, v, p)
    h = None
    steps = 0
    for i in range(1, times.size):
        t_next = times[i]
        while t < t_next:
            r_max = _max_outflow(space, v)
            h_rate = 1.0 / (20.0 * r_max) if r_max > 0 else math.inf
            h_cap = min(h_rate, h_sine)
            if h_cap < h_floor:
                raise IntegrationError(
                    f"step size underflow at t={t:.6g} s: dominant rate {r_max:.6g}/s "
                    f"needs steps below {h_cap:.3g} s")
            if h is None:
                h = min(h_cap, t_next - t)
            h = min(h, h_cap)
            last = t + h >= t_next * (1 - 1e-15)
            if last:
                h = t_next - t
            ks = [k1]
            for j in range(1, 7):
                y = p + h * sum(a * kk for a, kk in zip(_A[j], ks))
                kj, _ = _rhs_and_outflow(space, float(wave(t + _C[j] * h)), y)
                ks.append(kj)
            y5 = p + h * sum(b * kk for b, kk in zip(_B5, ks) if b)
            err = float(np.max(np.abs(h * sum((b5 - b4) * kk for b5, b4, kk in zip(_B5, _B4, ks)))))
            steps += 1
            if steps > max_steps:
                raise IntegrationError(f"step budget of {max_steps} exhausted at t={t:.6g} s")
            v_end = float(wave(t + h))
            ok = err <= tol and y5.min() >= -tol
            if ok and 20.0 * h * _max_outflow(space, v_end) > 1.0 + 1e-9:
                ok = False  # rate at the step end outgrew the cap
                h_new = 1.0 / (20.0 * _max_outflow(space, v_end))
            elif ok or y5.min() >= -tol:
                fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * (tol / err) ** 0.2))
                h_new = h * fac
            else:
                h_new = h / 2  # negative probability: retry smaller
            if ok:
                t = t_next if last else t + h
                p = _renormalize(y5, tol)
                v = v_end
                k1, _ = _rhs_and_outflow(space, v, p)
            elif h_new < h_floor:
                raise IntegrationError(
                    f"step size underflow at t={t:.6g} s: dominant rate "
                    f"{_max_outflow(space, v):.6g}/s, local error {err:.3g}")
            h = h_new
        out[i] = p
    return out

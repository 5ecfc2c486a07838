"""Discrete-state memristor models and their switching-rate laws.

A K-state device has resistance states 0..K-1, ordered from off (highest
resistance) to on (lowest).  Transitions only move between adjacent states;
the rate of each move depends exponentially on the voltage across the device
and is gated by its sign: upward moves happen only for v > 0, downward moves
only for v < 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RATE_CLAMP",
    "RateEdgeParams",
    "MemristorModel",
    "gated_rate",
    "rate_up",
    "rate_down",
    "resistance",
    "validate_model",
]

#: Upper bound applied to every evaluated rate (1/s).
RATE_CLAMP = 1e300
_LOG_CLAMP = math.log(RATE_CLAMP)


@dataclass(frozen=True)
class RateEdgeParams:
    """Parameters of one directed transition: mean time ``tau`` (s) at zero
    bias and voltage scale ``v_scale`` (V)."""

    tau: float
    v_scale: float


@dataclass(frozen=True)
class MemristorModel:
    name: str
    resistances: tuple[float, ...]
    up_edges: tuple[RateEdgeParams, ...]
    down_edges: tuple[RateEdgeParams, ...]

    def __post_init__(self):
        # accept lists from callers but store tuples so models stay hashable
        object.__setattr__(self, "resistances", tuple(float(r) for r in self.resistances))
        object.__setattr__(self, "up_edges", tuple(self.up_edges))
        object.__setattr__(self, "down_edges", tuple(self.down_edges))

    @property
    def n_states(self) -> int:
        return len(self.resistances)

    @classmethod
    def binary(cls, name, r_off, r_on, tau01, v01, tau10=None, v10=None):
        """Two-state model; down-edge parameters default to the up-edge ones."""
        tau10 = tau01 if tau10 is None else tau10
        v10 = v01 if v10 is None else v10
        return cls(name, (r_off, r_on), (RateEdgeParams(tau01, v01),),
                   (RateEdgeParams(tau10, v10),))


def _check_voltage(v):
    if not np.all(np.isfinite(v)):
        raise ValueError(f"voltage must be finite, got {v!r}")


def gated_rate(tau, v_scale, x):
    """``1/(tau*exp(-x/v_scale))`` where ``x > 0``, else 0.

    ``x`` is the device voltage signed along the direction of the move
    (``v`` for upward moves, ``-v`` for downward ones).  All arguments
    broadcast; the result is clamped at :data:`RATE_CLAMP`.
    """
    x = np.asarray(x, dtype=float)
    xpos = np.where(x > 0, x, 0.0)
    log_rate = np.minimum(xpos / v_scale - np.log(tau), _LOG_CLAMP)
    rate = np.where(log_rate >= _LOG_CLAMP, RATE_CLAMP, np.minimum(np.exp(log_rate), RATE_CLAMP))
    return np.where(x > 0, rate, 0.0)


def rate_up(edge: RateEdgeParams, v):
    """Rate of the upward move i -> i+1 at device voltage ``v``.

    Returns ``1/(tau*exp(-v/V))`` for ``v > 0`` and exactly 0 otherwise.
    Works on scalars and numpy arrays alike.
    """
    _check_voltage(v)
    out = gated_rate(edge.tau, edge.v_scale, v)
    return float(out) if out.ndim == 0 else out


def rate_down(edge: RateEdgeParams, v):
    """Rate of the downward move i+1 -> i; nonzero only for ``v < 0``."""
    _check_voltage(v)
    out = gated_rate(edge.tau, edge.v_scale, -np.asarray(v, dtype=float))
    return float(out) if out.ndim == 0 else out


def resistance(model: MemristorModel, state: int) -> float:
    if not 0 <= state < model.n_states:
        raise IndexError(f"state {state} out of range for {model.name!r} "
                         f"with {model.n_states} states")
    return model.resistances[state]


def _positive_finite(x) -> bool:
    try:
        return math.isfinite(x) and x > 0
    except TypeError:
        return False


def validate_model(model: MemristorModel) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    k = len(model.resistances)
    if k < 2:
        problems.append(f"resistances: need at least 2 states, got {k}")
    for i, r in enumerate(model.resistances):
        if not _positive_finite(r):
            problems.append(f"resistances[{i}]: must be finite and > 0, got {r}")
    for i in range(k - 1):
        a, b = model.resistances[i], model.resistances[i + 1]
        if _positive_finite(a) and _positive_finite(b) and not a > b:
            problems.append(
                f"resistances[{i + 1}]: must be strictly decreasing "
                f"(off state highest), got {a} then {b}")
    for label, edges in (("up_edges", model.up_edges), ("down_edges", model.down_edges)):
        if len(edges) != max(k - 1, 0):
            problems.append(f"{label}: expected {k - 1} edges for {k} states, got {len(edges)}")
        for i, e in enumerate(edges):
            if not _positive_finite(e.tau):
                problems.append(f"{label}[{i}].tau: must be finite and > 0, got {e.tau}")
            if not _positive_finite(e.v_scale):
                problems.append(f"{label}[{i}].v_scale: must be finite and > 0, got {e.v_scale}")
    return problems

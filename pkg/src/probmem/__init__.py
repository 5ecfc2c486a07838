"""Master-equation modeling of networks of probabilistic memristors."""

from .device import MemristorModel, RateEdgeParams, rate_down, rate_up
from .master import ProbabilityTrajectory, generator_matrix, solve_dc, solve_transient
from .mcsim import gillespie_dc, mc_ensemble, mc_trial
from .netdsl import CircuitSpec, Waveform, load_circuit, parse_circuit
from .observables import mean_current, mean_switching_time_analytic, mean_switching_time_numeric
from .spicegen import emit_ltspice
from .statespace import StateSpace, enumerate_states, lump_states

__version__ = "0.1.0"

__all__ = [
    "MemristorModel",
    "RateEdgeParams",
    "rate_up",
    "rate_down",
    "CircuitSpec",
    "Waveform",
    "parse_circuit",
    "load_circuit",
    "StateSpace",
    "enumerate_states",
    "lump_states",
    "ProbabilityTrajectory",
    "generator_matrix",
    "solve_dc",
    "solve_transient",
    "mean_current",
    "mean_switching_time_analytic",
    "mean_switching_time_numeric",
    "mc_trial",
    "gillespie_dc",
    "mc_ensemble",
    "emit_ltspice",
]

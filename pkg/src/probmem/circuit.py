"""Series/parallel reduction of a resistive network driven by one source.

Every function here accepts element resistances either as floats or as
equal-shaped numpy arrays; the array form solves many configurations at once
(one entry per network state) and is what the state-space builder uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .netdsl import TopologyNode

__all__ = [
    "ConfigSolution",
    "equivalent_resistance",
    "solve_configuration",
    "total_current",
]


@dataclass(frozen=True)
class ConfigSolution:
    """Per-volt response of one network configuration.

    ``element_voltage_ratio[e]`` is the voltage across element ``e`` for 1 V
    of source; ``total_conductance`` is the source current per volt.
    """

    element_voltage_ratio: Mapping[str, float]
    total_conductance: float


def equivalent_resistance(topology: TopologyNode, r: Mapping[str, float]):
    if topology.kind == "leaf":
        return r[topology.element]
    parts = [equivalent_resistance(c, r) for c in topology.children]
    if topology.kind == "series":
        return sum(parts[1:], parts[0])
    return 1.0 / sum((1.0 / p for p in parts[1:]), 1.0 / parts[0])


def _divide(node: TopologyNode, r, ratio, r_node, out: dict):
    if node.kind == "leaf":
        out[node.element] = ratio
        return
    for child in node.children:
        r_child = equivalent_resistance(child, r)
        # series: divider by resistance share; parallel: same voltage as parent
        child_ratio = ratio * r_child / r_node if node.kind == "series" else ratio
        _divide(child, r, child_ratio, r_child, out)


def element_ratios(topology: TopologyNode, r: Mapping[str, float]):
    """Return ``(ratios, r_eq)`` where ``ratios`` maps element -> voltage per
    source volt.  Vectorized over array-valued resistances."""
    r_eq = equivalent_resistance(topology, r)
    ratios: dict = {}
    one = np.ones_like(r_eq) if isinstance(r_eq, np.ndarray) else 1.0
    _divide(topology, r, one, r_eq, ratios)
    return ratios, r_eq


def solve_configuration(topology: TopologyNode, r: Mapping[str, float]) -> ConfigSolution:
    ratios, r_eq = element_ratios(topology, r)
    return ConfigSolution(ratios, 1.0 / r_eq)


def total_current(sol: ConfigSolution, v_source: float) -> float:
    return sol.total_conductance * v_source

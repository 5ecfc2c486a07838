"""Network configurations, their single-device transitions, and symmetry lumping.

A network state is one digit per memristor instance (declaration order).
States are indexed in mixed radix with the first instance as the least
significant digit; labels print the digits most-significant first, so for
five devices ``"01111"`` is the state where only the last one is off.

A lumped space merges states that differ only by a permutation of
interchangeable devices.  Its probability entries are *class totals*: the
probability of being anywhere in the class, so the lumped generator keeps
zero column sums and the probability vector keeps unit sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .circuit import ConfigSolution, element_ratios
from .device import MemristorModel, gated_rate
from .netdsl import CircuitSpec, TopologyNode

__all__ = [
    "CapacityError",
    "Transition",
    "StateSpace",
    "enumerate_states",
    "neighbors",
    "transition_rate",
    "transition_rates",
    "lump_states",
    "aggregate",
    "initial_distribution",
]

DEFAULT_STATE_CAP = 2 ** 20

UP, DOWN = 1, -1


class CapacityError(RuntimeError):
    pass


class Transition(NamedTuple):
    target: int
    memristor: int
    direction: int  # UP or DOWN


@dataclass(frozen=True, eq=False)
class StateSpace:
    spec: CircuitSpec
    instances: tuple[str, ...]
    models: tuple[MemristorModel, ...]
    digits: np.ndarray          # (M, N) representative digits
    multiplicity: np.ndarray    # (M,)
    ratios: dict                # element -> (M,) voltage per source volt
    conductance: np.ndarray     # (M,) network current per source volt
    # one row per directed transition, sorted by source state
    src: np.ndarray
    dst: np.ndarray
    mem: np.ndarray
    direction: np.ndarray
    tau: np.ndarray
    v_scale: np.ndarray
    src_ratio: np.ndarray       # voltage ratio of the moving device in the source state
    absorbing_hint: int | None
    class_of: np.ndarray | None = None   # full index -> lumped index (lumped spaces only)
    parent: "StateSpace | None" = None
    _offsets: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        offsets = np.searchsorted(self.src, np.arange(self.size + 1))
        object.__setattr__(self, "_offsets", offsets)

    @property
    def size(self) -> int:
        return len(self.digits)

    @property
    def n_transitions(self) -> int:
        return len(self.src)

    @property
    def lumped(self) -> bool:
        return self.parent is not None

    def label(self, s: int) -> str:
        d = self.digits[s][::-1]
        sep = "" if max(m.n_states for m in self.models) <= 10 else "."
        return sep.join(str(x) for x in d)

    def labels(self) -> list[str]:
        return [self.label(s) for s in range(self.size)]

    def config_solution(self, s: int) -> ConfigSolution:
        return ConfigSolution({e: float(r[s]) for e, r in self.ratios.items()},
                              float(self.conductance[s]))

    def index_of(self, digits) -> int:
        """Index of the state (or lumped class) containing ``digits``."""
        idx = int(np.dot(np.asarray(digits), _weights(self.models)))
        if self.class_of is not None:
            return int(self.class_of[idx])
        return idx

    def transitions_from(self, s: int) -> slice:
        return slice(self._offsets[s], self._offsets[s + 1])


def _weights(models) -> np.ndarray:
    w = np.ones(len(models), dtype=np.int64)
    for m in range(1, len(models)):
        w[m] = w[m - 1] * models[m - 1].n_states
    return w


def _element_resistances(spec: CircuitSpec, names, models, digits) -> dict:
    r = {}
    for m, (name, model) in enumerate(zip(names, models)):
        r[name] = np.asarray(model.resistances)[digits[:, m]]
    n = len(digits)
    for name, value in spec.fixed_resistors.items():
        r[name] = np.full(n, value)
    return r


def enumerate_states(spec: CircuitSpec, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    """Build the full product state space of ``spec`` with its transition scheme."""
    names = tuple(spec.memristors)
    models = tuple(spec.model_of(n) for n in names)
    ks = [m.n_states for m in models]
    size = int(np.prod(ks, dtype=object)) if ks else 1
    if size > cap:
        raise CapacityError(
            f"{size} network states exceed the cap of {cap}; "
            "use identical sibling devices so the space can be lumped, or raise the cap")
    w = _weights(models)
    idx = np.arange(size, dtype=np.int64)
    digits = np.stack([(idx // w[m]) % ks[m] for m in range(len(models))], axis=1) \
        if models else np.zeros((1, 0), dtype=np.int64)

    r = _element_resistances(spec, names, models, digits)
    ratios, r_eq = element_ratios(spec.topology, r)
    ratios = {e: np.broadcast_to(np.asarray(v, dtype=float), (size,)).copy()
              for e, v in ratios.items()}
    conductance = 1.0 / np.broadcast_to(np.asarray(r_eq, dtype=float), (size,))

    rows = []
    for m, (name, model) in enumerate(zip(names, models)):
        d = digits[:, m]
        taus_up = np.array([e.tau for e in model.up_edges])
        vs_up = np.array([e.v_scale for e in model.up_edges])
        taus_dn = np.array([e.tau for e in model.down_edges])
        vs_dn = np.array([e.v_scale for e in model.down_edges])
        can_dn = np.nonzero(d > 0)[0]
        rows.append((can_dn, can_dn - w[m], m, DOWN,
                     taus_dn[d[can_dn] - 1], vs_dn[d[can_dn] - 1], ratios[name][can_dn]))
        can_up = np.nonzero(d < model.n_states - 1)[0]
        rows.append((can_up, can_up + w[m], m, UP,
                     taus_up[d[can_up]], vs_up[d[can_up]], ratios[name][can_up]))
    return _assemble(spec, names, models, digits, np.ones(size, dtype=np.int64),
                     ratios, conductance, rows, absorbing=size - 1)


def _assemble(spec, names, models, digits, multiplicity, ratios, conductance, rows,
              absorbing, class_of=None, parent=None) -> StateSpace:
    if rows:
        src = np.concatenate([r[0] for r in rows]).astype(np.int64)
        dst = np.concatenate([r[1] for r in rows]).astype(np.int64)
        mem = np.concatenate([np.broadcast_to(r[2], len(r[0])) for r in rows]).astype(np.int64)
        direction = np.concatenate(
            [np.broadcast_to(r[3], len(r[0])) for r in rows]).astype(np.int64)
        tau = np.concatenate([r[4] for r in rows]).astype(float)
        v_scale = np.concatenate([r[5] for r in rows]).astype(float)
        src_ratio = np.concatenate([r[6] for r in rows]).astype(float)
    else:
        src = dst = mem = direction = np.zeros(0, dtype=np.int64)
        tau = v_scale = src_ratio = np.zeros(0)
    # stable sort keeps (memristor, down-before-up) order within each source
    order = np.lexsort((direction, mem, src))
    return StateSpace(
        spec=spec, instances=names, models=models, digits=digits,
        multiplicity=multiplicity, ratios=ratios, conductance=conductance,
        src=src[order], dst=dst[order], mem=mem[order], direction=direction[order],
        tau=tau[order], v_scale=v_scale[order], src_ratio=src_ratio[order],
        absorbing_hint=absorbing, class_of=class_of, parent=parent)


def neighbors(space: StateSpace, s: int) -> list[Transition]:
    sl = space.transitions_from(s)
    return [Transition(int(t), int(m), int(d))
            for t, m, d in zip(space.dst[sl], space.mem[sl], space.direction[sl])]


def transition_rates(space: StateSpace, v_source):
    """Rates of every transition row at source voltage ``v_source``.

    Each rate uses the moving device's voltage in the *source* configuration.
    """
    return gated_rate(space.tau, space.v_scale,
                      space.direction * space.src_ratio * v_source)


def transition_rate(space: StateSpace, s: int, tr: Transition, v_source: float) -> float:
    sl = space.transitions_from(s)
    for k in range(sl.start, sl.stop):
        if (space.dst[k], space.mem[k], space.direction[k]) == tuple(tr):
            x = space.direction[k] * space.src_ratio[k] * v_source
            return float(gated_rate(space.tau[k], space.v_scale[k], x))
    raise ValueError(f"{tr} is not a transition out of state {s}")


# ---------------------------------------------------------------------------
# lumping

def symmetry_groups(spec: CircuitSpec) -> list[list[int]]:
    """Sets of interchangeable instance indices.

    Two instances are interchangeable when they are leaf children of the same
    series/parallel node and share both model and initial state.
    """
    index = {name: i for i, name in enumerate(spec.memristors)}
    groups = []

    def visit(node: TopologyNode):
        if node.kind == "leaf":
            return
        buckets: dict = {}
        for c in node.children:
            if c.kind == "leaf" and c.element in index:
                buckets.setdefault(spec.instances[c.element], []).append(index[c.element])
            else:
                visit(c)
        groups.extend(sorted(g) for g in buckets.values() if len(g) > 1)

    visit(spec.topology)
    return groups


def lump_states(space: StateSpace) -> StateSpace:
    """Merge permutation-equivalent states of interchangeable devices.

    The representative of each class is its lowest-index member, and the
    class inherits that member's configuration and outgoing transitions
    (targets mapped to classes).  The aggregated dynamics are exact.
    """
    if space.lumped:
        raise ValueError("space is already lumped")
    groups = symmetry_groups(space.spec)
    if not groups:
        return space
    w = _weights(space.models)
    canon = space.digits.copy()
    for g in groups:
        # larger digits on earlier (less significant) instances -> lowest index
        canon[:, g] = -np.sort(-space.digits[:, g], axis=1)
    canon_idx = canon @ w
    reps, class_of, counts = np.unique(canon_idx, return_inverse=True, return_counts=True)
    class_of = class_of.reshape(-1)

    keep = np.isin(space.src, reps)
    rows = [(class_of[space.src[keep]], class_of[space.dst[keep]], space.mem[keep],
             space.direction[keep], space.tau[keep], space.v_scale[keep],
             space.src_ratio[keep])]
    lumped = _assemble(
        space.spec, space.instances, space.models, space.digits[reps], counts,
        {e: r[reps] for e, r in space.ratios.items()}, space.conductance[reps],
        rows, absorbing=int(class_of[space.absorbing_hint]),
        class_of=class_of, parent=space)
    return lumped


def aggregate(space: StateSpace, p_full):
    """Sum full-space probabilities (last axis) onto the classes of ``space``."""
    p_full = np.asarray(p_full, dtype=float)
    if not space.lumped:
        return p_full
    out = np.zeros(p_full.shape[:-1] + (space.size,))
    np.add.at(out, (..., space.class_of), p_full)
    return out


def initial_distribution(space: StateSpace) -> np.ndarray:
    """Point mass on the declared initial configuration."""
    p = np.zeros(space.size)
    p[space.index_of(space.spec.initial_digits())] = 1.0
    return p

"""Command-line entry point: ``probmem {simulate,mc,emit-spice,analytic} FILE``."""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, replace

import numpy as np

from .master import IntegrationError, solve_dc, solve_transient
from .mcsim import mc_ensemble
from .netdsl import CircuitSpec, ParseError, Waveform, load_circuit
from .observables import (
    TruncationError,
    mean_current,
    switch_time_accumulator,
    switching_time_terms,
)
from .spicegen import EmissionError, emit_ltspice
from .statespace import CapacityError, StateSpace, aggregate, enumerate_states, lump_states

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
DEFAULT_AC_TSTOP = 0.1
ABSORBED_TARGET = 1.0 - 1e-9


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    circuit: str
    command: str
    t_stop: float | None = None
    tol: float = 1e-8
    out: str | None = None
    trials: int = 1000
    seed: int = 0
    freq: float | None = None
    full_space: bool = False
    points: int | None = None
    method: str = "auto"
    t_start: float = 0.0
    max_step: float | None = None

    def __post_init__(self):
        if self.t_stop is not None and not self.t_stop > 0:
            raise InputError("--tstop must be > 0")
        if self.trials < 1:
            raise InputError("--trials must be >= 1")
        if self.points is not None and self.points < 2:
            raise InputError("--points must be >= 2")


def _fmt(x) -> str:
    return repr(float(x))


def _load(cfg: RunConfig) -> tuple[CircuitSpec, Waveform]:
    spec = load_circuit(cfg.circuit)
    wave = spec.source
    if cfg.freq is not None:
        if wave.kind != "sine":
            raise InputError("--freq applies to sine sources only")
        if not cfg.freq > 0:
            raise InputError("--freq must be > 0")
        wave = Waveform.sine(wave.amplitude, cfg.freq, wave.phase)
        spec = replace(spec, source=wave)
    return spec, wave


def _space(spec: CircuitSpec, full: bool) -> StateSpace:
    space = enumerate_states(spec)
    return space if full else lump_states(space)


def _column_labels(space: StateSpace) -> list[str]:
    out = []
    for s, lab in enumerate(space.labels()):
        k = int(space.multiplicity[s])
        out.append(f"p{lab}x{k}" if k > 1 else f"p{lab}")
    return out


def _auto_tstop(space: StateSpace, wave: Waveform) -> float:
    """Sine: a fixed window.  Dc: doubled until the all-on state is (nearly) full."""
    if wave.kind != "dc":
        return DEFAULT_AC_TSTOP
    target = space.absorbing_hint
    t = 1e-9
    while t < 1e12:
        p = solve_dc(space, wave.amplitude, times=[t]).probabilities[0]
        if p[target] >= ABSORBED_TARGET:
            return t
        t *= 2
    raise IntegrationError("the all-on state is not reached under this drive; give --tstop")


def _write(cfg: RunConfig, text: str):
    if cfg.out:
        with open(cfg.out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg: RunConfig) -> int:
    spec, wave = _load(cfg)
    space = _space(spec, cfg.full_space)
    t_stop = cfg.t_stop if cfg.t_stop is not None else _auto_tstop(space, wave)
    points = cfg.points or 2001
    if wave.kind == "dc":
        traj = solve_dc(space, wave.amplitude, times=np.linspace(0.0, t_stop, points))
    else:
        traj = solve_transient(space, wave, t_stop=t_stop, tol=cfg.tol,
                               n_points=points, method=cfg.method)
    current = mean_current(space, traj.probabilities, traj.source_values)
    accum = switch_time_accumulator(traj, space)
    header = ["t"] + _column_labels(space) + ["V_source", "I_mean", "T_accum"]
    rows = np.column_stack([traj.times, traj.probabilities, traj.source_values, current, accum])
    _write(cfg, _csv(header, rows))
    return EXIT_OK


def cmd_mc(cfg: RunConfig) -> int:
    spec, wave = _load(cfg)
    full = enumerate_states(spec)
    shown = full if cfg.full_space else lump_states(full)
    t_stop = cfg.t_stop if cfg.t_stop is not None else _auto_tstop(shown, wave)
    times = np.linspace(0.0, t_stop, cfg.points or 201)
    stats = mc_ensemble(spec, wave, cfg.trials, cfg.seed, times, space=full)
    header = ["t"] + _column_labels(shown) + ["V_source", "I_mean", "I_stderr"]
    rows = np.column_stack([times, aggregate(shown, stats.empirical_p), stats.source_values,
                            stats.mean_current, stats.current_stderr])
    _write(cfg, _csv(header, rows))
    if wave.kind == "dc":
        mean, err, n = stats.switching_summary()
        summary = (f"switching time: mean={_fmt(mean)} stderr={_fmt(err)} "
                   f"reached={n}/{cfg.trials}\n")
        (sys.stdout if cfg.out else sys.stderr).write(summary)
    return EXIT_OK


def cmd_emit_spice(cfg: RunConfig) -> int:
    spec, wave = _load(cfg)
    space = _space(spec, cfg.full_space)
    t_stop = cfg.t_stop if cfg.t_stop is not None else _auto_tstop(space, wave)
    max_step = cfg.max_step if cfg.max_step is not None else t_stop * 1e-5
    if not 0 <= cfg.t_start < t_stop:
        raise InputError("--tstart must lie in [0, tstop)")
    doc = emit_ltspice(space, wave, (t_stop, cfg.t_start, max_step))
    _write(cfg, doc.text)
    return EXIT_OK


def _series_binary_chain(spec: CircuitSpec):
    topo = spec.topology
    leaves = [topo] if topo.kind == "leaf" else list(topo.children)
    if topo.kind == "parallel" or any(c.kind != "leaf" for c in leaves):
        raise InputError("analytic switching time needs a plain series chain of memristors")
    if spec.fixed_resistors:
        raise InputError("analytic switching time does not cover fixed resistors")
    models = {spec.model_of(c.element) for c in leaves}
    if len(models) != 1:
        raise InputError("analytic switching time needs identical devices")
    model = models.pop()
    if model.n_states != 2:
        raise InputError(f"analytic switching time needs a binary model; "
                         f"{model.name} has {model.n_states} states")
    if any(spec.initial_digits()):
        raise InputError("analytic switching time starts from the all-off state")
    return len(leaves), model


def cmd_analytic(cfg: RunConfig) -> int:
    spec, wave = _load(cfg)
    if wave.kind != "dc":
        raise InputError("analytic switching time needs a dc source")
    n, model = _series_binary_chain(spec)
    terms = switching_time_terms(n, model, wave.amplitude)
    lines = [f"N={n} V={_fmt(wave.amplitude)}"]
    for j, term in enumerate(terms):
        lines.append(f"stage {j}: 1/((N-{j})*gamma_{j}) = {_fmt(term)}")
    total = math.fsum(terms)
    if math.isinf(total):
        lines.append("mean switching time: inf (no finite switching at this drive)")
    else:
        lines.append(f"mean switching time: {_fmt(total)}")
    _write(cfg, "\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "mc": cmd_mc,
    "emit-spice": cmd_emit_spice,
    "analytic": cmd_analytic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probmem",
        description="Master-equation simulation of probabilistic memristor networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "solve the master equation and write a CSV trajectory"),
        ("mc", "run a Monte Carlo ensemble and write a CSV of frequencies"),
        ("emit-spice", "write an LTspice netlist"),
        ("analytic", "closed-form mean switching time of a series binary chain"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("circuit", help=".mn circuit file")
        p.add_argument("--tstop", type=float, help="end time in seconds")
        p.add_argument("--tol", type=float, default=1e-8, help="integrator tolerance")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--trials", type=int, default=1000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--freq", type=float, help="override the sine frequency")
        p.add_argument("--full-space", action="store_true",
                       help="do not lump interchangeable devices")
        p.add_argument("--points", type=int, help="number of output samples")
        p.add_argument("--method", choices=["auto", "rk", "exponential"], default="auto")
        p.add_argument("--tstart", type=float, default=0.0,
                       help="emit-spice: start of recorded window")
        p.add_argument("--max-step", type=float, help="emit-spice: transient max step")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(
            circuit=args.circuit, command=args.command, t_stop=args.tstop, tol=args.tol,
            out=args.out, trials=args.trials, seed=args.seed, freq=args.freq,
            full_space=args.full_space, points=args.points, method=args.method,
            t_start=args.tstart, max_step=args.max_step)
        return COMMANDS[cfg.command](cfg)
    except (IntegrationError, CapacityError, EmissionError, TruncationError) as exc:
        print(f"probmem: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ParseError as exc:
        print(f"probmem: {args.circuit}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, OSError, ValueError, NotImplementedError) as exc:
        print(f"probmem: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Analyses over an elaborated circuit: operating point, DC sweep, transient,
Fourier/THD and average-power reporting.

Signal naming convention (uppercase, used for traces, CSV headers and the
``.four`` directive): ``V(node)`` node voltage, ``I(name)`` branch current of
a two-terminal component (positive from the + node through the component),
``IC(q)/IB(q)/IE(q)`` BJT terminal currents, ``X(m)`` memristor state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .devices import eval_bjt, eval_memristor, memristance
from .netlist import (
    GROUND,
    Bjt,
    Circuit,
    DcSweepDirective,
    FourDirective,
    ISource,
    Memristor,
    Resistor,
    TranDirective,
    VSource,
)
from .solver import (
    ConvergenceError,
    EvalContext,
    Solution,
    SystemLayout,
    Tolerances,
    frozen_states,
    newton_solve,
    solve_op,
    source_value,
)

logger = logging.getLogger("mirrorsim")

RESAMPLE_POINTS = 1024

# Extra /4 subdivisions allowed when a transient Newton step fails.
MAX_STEP_RETRIES = 8


class AnalysisError(Exception):
    pass


@dataclass(frozen=True)
class Trace:
    """Sweep- or time-indexed series of named signals."""

    axis_name: str            # "time" or the swept source name
    axis: np.ndarray
    signals: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if len(self.axis) > 1 and not np.all(np.diff(self.axis) > 0):
            raise AnalysisError("trace axis must be strictly increasing")
        for name, series in self.signals.items():
            if len(series) != len(self.axis):
                raise AnalysisError(f"signal {name} length mismatch")
            if not np.all(np.isfinite(series)):
                raise AnalysisError(f"signal {name} contains non-finite values")

    def signal(self, name: str) -> np.ndarray:
        key = name.upper()
        if key not in self.signals:
            raise AnalysisError(f"missing signal {name}")
        return self.signals[key]


@dataclass(frozen=True)
class FourierReport:
    signal: str
    fundamental: float
    dc: float
    magnitudes: tuple[float, ...]   # c_1 .. c_N
    phases: tuple[float, ...]       # degrees
    thd_requested: float            # percent, harmonics 2..N
    thd_full: float                 # percent, all resampled bins


@dataclass(frozen=True)
class PowerReport:
    """Average power per component: sources as delivered, the rest as
    dissipated (both positive in normal operation)."""

    per_component: dict[str, float]
    delivered: float
    dissipated: float
    imbalance: float


def signal_names(circuit: Circuit) -> list[str]:
    names = [f"V({n})" for n in circuit.node_names() if n != GROUND]
    for comp in circuit.components:
        if isinstance(comp, Bjt):
            names += [f"IC({comp.name})", f"IB({comp.name})",
                      f"IE({comp.name})"]
        else:
            names.append(f"I({comp.name})")
            if isinstance(comp, Memristor):
                names.append(f"X({comp.name})")
    return names


def signal_values(circuit: Circuit, layout: SystemLayout, x: np.ndarray,
                  ctx: EvalContext) -> dict[str, float]:
    """All recorded signals at one solved point."""
    vals: dict[str, float] = {}
    for name, idx in circuit.node_map.items():
        if idx > 0:
            vals[f"V({name})"] = float(x[idx - 1])

    def vdiff(pos: str, neg: str) -> float:
        return layout.voltage(x, pos) - layout.voltage(x, neg)

    for comp in circuit.components:
        if isinstance(comp, Resistor):
            vals[f"I({comp.name})"] = vdiff(comp.pos, comp.neg) / comp.resistance
        elif isinstance(comp, VSource):
            vals[f"I({comp.name})"] = float(x[layout.branch_unknown(comp.name)])
        elif isinstance(comp, ISource):
            vals[f"I({comp.name})"] = source_value(comp, ctx)
        elif isinstance(comp, Bjt):
            vc, vb, ve = (layout.voltage(x, nd) for nd in comp.nodes)
            ev = eval_bjt(vb - ve, vb - vc, comp.params)
            vals[f"IC({comp.name})"] = ev.currents[0]
            vals[f"IB({comp.name})"] = ev.currents[1]
            vals[f"IE({comp.name})"] = ev.currents[2]
        elif isinstance(comp, Memristor):
            if layout.include_states:
                xs = float(x[layout.state_unknown(comp.name)])
            else:
                states = ctx.frozen_states or {}
                xs = states.get(comp.name, comp.params.x_init)
            vals[f"I({comp.name})"] = vdiff(comp.pos, comp.neg) / memristance(
                xs, comp.params)
            vals[f"X({comp.name})"] = xs
    return vals


# --------------------------------------------------------------------------
# Operating point and DC sweep
# --------------------------------------------------------------------------

def run_op(circuit: Circuit, tol: Tolerances | None = None) -> Solution:
    """DC operating point via Newton plus the continuation chain."""
    return solve_op(circuit, tol)


def sweep_values(d: DcSweepDirective) -> np.ndarray:
    """Inclusive sweep grid; 0..10 step 0.1 yields 101 points."""
    span = d.stop - d.start
    k = int(round(span / d.step))
    if k >= 0 and math.isclose(d.start + k * d.step, d.stop,
                               rel_tol=1e-9, abs_tol=d.step * 1e-9):
        return np.linspace(d.start, d.stop, k + 1)
    n = int(math.floor(span / d.step + 1e-12)) + 1
    return d.start + d.step * np.arange(n)


def run_dc_sweep(circuit: Circuit, d: DcSweepDirective,
                 tol: Tolerances | None = None) -> Trace:
    """Solve the operating point at each sweep value, warm-starting from the
    previous point; records every node voltage and device current."""
    tol = tol or Tolerances()
    try:
        swept = circuit.component(d.source)
    except KeyError:
        raise AnalysisError(f"swept source {d.source} not in circuit") from None
    if not isinstance(swept, (VSource, ISource)):
        raise AnalysisError(f"{d.source} is not a source")

    layout = SystemLayout(circuit, include_states=False)
    states = frozen_states(circuit)
    axis = sweep_values(d)
    rows: list[dict[str, float]] = []
    x_prev: np.ndarray | None = None
    for value in axis:
        overrides = {swept.name: float(value)}
        try:
            sol = solve_op(circuit, tol, overrides=overrides, x0=x_prev)
        except ConvergenceError:
            raise AnalysisError(
                f"DC sweep failed to converge at {d.source}={value:g}"
            ) from None
        ctx = EvalContext(overrides=overrides, frozen_states=states)
        rows.append(signal_values(circuit, layout, sol.vector, ctx))
        x_prev = sol.vector
    signals = {name: np.array([r[name] for r in rows])
               for name in signal_names(circuit)}
    return Trace(axis_name=swept.name, axis=axis, signals=signals)


# --------------------------------------------------------------------------
# Transient
# --------------------------------------------------------------------------

def _tran_grid(d: TranDirective) -> np.ndarray:
    n = int(math.floor(d.tstop / d.tstep + 1e-9))
    times = d.tstep * np.arange(1, n + 1)
    if not times.size or times[-1] < d.tstop * (1 - 1e-12):
        times = np.append(times, d.tstop)
    return times


def _mem_rates(circuit: Circuit, layout: SystemLayout, x: np.ndarray,
               states: dict[str, float]) -> dict[str, float]:
    rates = {}
    for m in circuit.of_type(Memristor):
        v = layout.voltage(x, m.pos) - layout.voltage(x, m.neg)
        rates[m.name] = eval_memristor(v, states[m.name], m.params).dx_dt
    return rates


def run_transient(circuit: Circuit, d: TranDirective,
                  tol: Tolerances | None = None) -> Trace:
    """Fixed-step trapezoidal transient with implicit memristor state.

    The initial condition is the DC operating point at t=0 with memristor
    states at XINIT.  A Newton failure at a step retries the interval in
    four quarter steps (recursively, bounded), then resumes on the nominal
    grid; persistent failure aborts naming the time.
    """
    tol = tol or Tolerances()
    op = solve_op(circuit, tol)
    layout = SystemLayout(circuit, include_states=True)
    mems = circuit.of_type(Memristor)

    x = np.zeros(layout.size)
    x[:len(op.vector)] = op.vector
    states = {m.name: m.params.x_init for m in mems}
    for m in mems:
        x[layout.state_unknown(m.name)] = states[m.name]
    rates = _mem_rates(circuit, layout, x, states)

    def clamp_states(vec: np.ndarray) -> None:
        for m in mems:
            k = layout.state_unknown(m.name)
            clipped = min(1.0, max(0.0, vec[k]))
            if abs(clipped - vec[k]) > 1e-12:
                logger.warning("memristor %s state clamped by %.3e at t=%g",
                               m.name, abs(clipped - vec[k]), t_now)
            vec[k] = clipped

    t_now = 0.0

    def advance(t_target: float, depth: int) -> None:
        nonlocal t_now, x, rates
        h = t_target - t_now
        ctx = EvalContext(time=t_target, dt=h, prev=x, prev_dxdt=rates)
        try:
            result = newton_solve(circuit, x, layout, tol, ctx)
        except ConvergenceError:
            if depth >= MAX_STEP_RETRIES:
                raise AnalysisError(
                    f"transient failed to converge at t={t_target:g}"
                ) from None
            for frac in (0.25, 0.5, 0.75, 1.0):
                advance(t_now + frac * h, depth + 1)
            return
        x = result.x
        clamp_states(x)
        new_states = {m.name: float(x[layout.state_unknown(m.name)])
                      for m in mems}
        rates = _mem_rates(circuit, layout, x, new_states)
        t_now = t_target

    recorded_t: list[float] = []
    rows: list[dict[str, float]] = []

    def record() -> None:
        if t_now >= d.tstart * (1 - 1e-12):
            ctx = EvalContext(time=t_now)
            recorded_t.append(t_now)
            rows.append(signal_values(circuit, layout, x, ctx))

    record()
    for t_target in _tran_grid(d):
        advance(float(t_target), depth=0)
        record()

    signals = {name: np.array([r[name] for r in rows])
               for name in signal_names(circuit)}
    return Trace(axis_name="time", axis=np.array(recorded_t), signals=signals)


# --------------------------------------------------------------------------
# Fourier / THD
# --------------------------------------------------------------------------

def resample_last_period(trace: Trace, signal: str, fundamental: float,
                         n: int = RESAMPLE_POINTS) -> np.ndarray:
    """Linearly interpolate the final fundamental period onto n equidistant
    points (endpoint excluded: the window tiles periodically)."""
    period = 1.0 / fundamental
    t = trace.axis
    if t[-1] - t[0] < period * (1 - 1e-9):
        raise AnalysisError("trace is shorter than one fundamental period")
    ts = t[-1] - period + np.arange(n) * (period / n)
    return np.interp(ts, t, trace.signal(signal))


def fourier_analysis(trace: Trace, d: FourDirective) -> dict[str, FourierReport]:
    """DFT the resampled final period of each requested signal.

    ``thd_requested`` covers harmonics 2..N; ``thd_full`` covers every bin up
    to the resampling Nyquist.  Both are percentages of the fundamental.
    """
    if d.nharmonics > RESAMPLE_POINTS // 2 - 1:
        raise AnalysisError("nharmonics exceeds resampling Nyquist")
    reports = {}
    for name in d.signals:
        samples = resample_last_period(trace, name, d.fundamental)
        spectrum = np.fft.rfft(samples) / len(samples)
        dc = float(spectrum[0].real)
        mags = 2.0 * np.abs(spectrum[1:])
        mags[-1] /= 2.0   # Nyquist bin is unique
        c1 = float(mags[0])
        if c1 == 0.0:
            raise AnalysisError(f"THD undefined for {name}: no fundamental")
        requested = mags[1:d.nharmonics]          # harmonics 2..N
        thd_requested = 100.0 * math.sqrt(float(np.sum(requested ** 2))) / c1
        thd_full = 100.0 * math.sqrt(float(np.sum(mags[1:] ** 2))) / c1
        phases = tuple(float(np.degrees(np.angle(spectrum[k])))
                       for k in range(1, d.nharmonics + 1))
        reports[name] = FourierReport(
            signal=name, fundamental=d.fundamental, dc=dc,
            magnitudes=tuple(float(m) for m in mags[:d.nharmonics]),
            phases=phases, thd_requested=thd_requested, thd_full=thd_full)
    return reports


# --------------------------------------------------------------------------
# Power
# --------------------------------------------------------------------------

_trapz = getattr(np, "trapezoid", None) or np.trapz


def _window_mean(t: np.ndarray, y: np.ndarray, t_lo: float,
                 t_hi: float) -> float:
    inner = (t > t_lo) & (t < t_hi)
    ts = np.concatenate(([t_lo], t[inner], [t_hi]))
    ys = np.concatenate(([np.interp(t_lo, t, y)], y[inner],
                         [np.interp(t_hi, t, y)]))
    return float(_trapz(ys, ts) / (t_hi - t_lo))


def _component_power(circuit: Circuit, comp, get):
    """Instantaneous power, dissipation-positive; sources return delivered.

    ``get`` maps a signal name to a scalar or a sample array, so the same
    expressions serve DC solutions and transient traces.
    """

    def v_at(node: str):
        return 0.0 if node == GROUND else get(f"V({node})")

    if isinstance(comp, Bjt):
        return (v_at(comp.collector) * get(f"IC({comp.name})")
                + v_at(comp.base) * get(f"IB({comp.name})")
                + v_at(comp.emitter) * get(f"IE({comp.name})"))
    absorbed = (v_at(comp.pos) - v_at(comp.neg)) * get(f"I({comp.name})")
    if isinstance(comp, (VSource, ISource)):
        return -absorbed
    return absorbed


def average_power(circuit: Circuit, trace: Trace, component: str,
                  fundamental: float | None = None) -> float:
    """Trapezoidal mean of v(t)*i(t); the window snaps to an integer number
    of fundamental periods when a fundamental frequency is declared."""
    comp = circuit.component(component)
    p = _component_power(circuit, comp, trace.signal)
    t = trace.axis
    t_lo, t_hi = float(t[0]), float(t[-1])
    if fundamental is not None:
        period = 1.0 / fundamental
        cycles = int(math.floor((t_hi - t_lo) / period + 1e-9))
        if cycles < 1:
            raise AnalysisError("trace shorter than one fundamental period")
        t_lo = t_hi - cycles * period
    return _window_mean(t, np.asarray(p, dtype=float), t_lo, t_hi)


def _build_report(entries: dict[str, tuple[bool, float]]) -> PowerReport:
    delivered = sum(p for is_src, p in entries.values() if is_src)
    dissipated = sum(p for is_src, p in entries.values() if not is_src)
    return PowerReport(
        per_component={name: p for name, (_, p) in entries.items()},
        delivered=delivered, dissipated=dissipated,
        imbalance=abs(delivered - dissipated))


def power_report_op(circuit: Circuit, solution: Solution) -> PowerReport:
    """DC power report: P = v*i per component at the operating point."""
    layout = SystemLayout(circuit, include_states=False)
    ctx = EvalContext(frozen_states=dict(solution.mem_states))
    vals = signal_values(circuit, layout, solution.vector, ctx)
    entries = {}
    for comp in circuit.components:
        p = float(_component_power(circuit, comp, vals.__getitem__))
        entries[comp.name] = (isinstance(comp, (VSource, ISource)), p)
    return _build_report(entries)


def power_report_tran(circuit: Circuit, trace: Trace,
                      fundamental: float | None = None) -> PowerReport:
    """Average-power report over a transient trace."""
    entries = {}
    for comp in circuit.components:
        p = average_power(circuit, trace, comp.name, fundamental)
        entries[comp.name] = (isinstance(comp, (VSource, ISource)), p)
    return _build_report(entries)


def power_report(circuit: Circuit, result: Solution | Trace,
                 fundamental: float | None = None) -> PowerReport:
    if isinstance(result, Trace):
        return power_report_tran(circuit, result, fundamental)
    return power_report_op(circuit, result)


def pinched_loop_area(voltage: np.ndarray, current: np.ndarray) -> float:
    """Total unsigned lobe area of a pinched (origin-crossing) i-v loop.

    The figure-eight's lobes carry opposite signed areas, so the path is
    split at voltage zero crossings -- where a pinched loop also has i = 0,
    making each segment effectively closed -- and the shoelace areas are
    accumulated in magnitude.  Not meaningful for loops that do not pass
    through the origin.
    """
    v = np.asarray(voltage, dtype=float)
    i = np.asarray(current, dtype=float)
    crossings = np.where(v[:-1] * v[1:] < 0)[0] + 1
    bounds = [0, *crossings.tolist(), len(v)]
    total = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi - lo < 3:
            continue
        vs, cs = v[lo:hi], i[lo:hi]
        total += 0.5 * abs(float(np.sum(vs * np.roll(cs, -1)
                                        - cs * np.roll(vs, -1))))
    return total

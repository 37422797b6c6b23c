"""Modified nodal analysis assembly and Newton solution.

Unknown ordering is node voltages (ground excluded), then voltage-source
branch currents, then memristor states (transient only).  Nonlinear devices
enter the matrix as Norton companions linearized by :mod:`mirrorsim.devices`;
BJT junction voltages are damped between iterations with the standard
logarithmic limiter.  Failed operating points fall back to gmin stepping and
then source stepping.

A solver call owns its workspace and is single threaded; concurrent analyses
should run one call per immutable Circuit each.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .devices import (
    critical_voltage,
    eval_bjt,
    eval_memristor,
    limit_junction_voltage,
    memristance,
)
from .netlist import GROUND, Bjt, Circuit, ISource, Memristor, Resistor, VSource


class ConvergenceError(Exception):
    """Newton iteration failed to converge within max_iter."""


class NoOperatingPointError(ConvergenceError):
    """All continuation strategies exhausted."""


class SingularMatrixError(Exception):
    def __init__(self, unknown: str):
        self.unknown = unknown
        super().__init__(f"singular system: no independent equation for {unknown}")


# Absolute convergence floor for memristor state rows (states are O(1)).
STATE_ABSTOL = 1e-9

_PIVOT_MIN = 1e-13


@dataclass(frozen=True)
class Tolerances:
    reltol: float = 1e-3
    abstol: float = 1e-12   # A
    vntol: float = 1e-6     # V
    max_iter: int = 100
    gmin: float = 1e-12     # S

    def __post_init__(self) -> None:
        if min(self.reltol, self.abstol, self.vntol, self.gmin) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


class SystemLayout:
    """Mapping between circuit quantities and unknown-vector slots."""

    def __init__(self, circuit: Circuit, include_states: bool = False):
        self.circuit = circuit
        self.include_states = include_states
        self.vsources = circuit.of_type(VSource)
        self.memristors = circuit.of_type(Memristor)
        n_nodes = circuit.num_nodes
        self._node = {name: idx - 1 for name, idx in circuit.node_map.items()}
        self._node[GROUND] = -1
        base = n_nodes - 1
        self._branch = {v.name: base + j for j, v in enumerate(self.vsources)}
        base += len(self.vsources)
        if include_states:
            self._state = {m.name: base + k
                           for k, m in enumerate(self.memristors)}
            base += len(self.memristors)
        else:
            self._state = {}
        self.size = base

    def node_unknown(self, node: str) -> int:
        return self._node[node]

    def branch_unknown(self, vsource: str) -> int:
        return self._branch[vsource]

    def state_unknown(self, memristor: str) -> int:
        return self._state[memristor]

    def voltage(self, x: np.ndarray, node: str) -> float:
        i = self._node[node]
        return 0.0 if i < 0 else float(x[i])

    def unknown_name(self, idx: int) -> str:
        for name, i in self._node.items():
            if i == idx:
                return f"V({name})"
        for name, i in self._branch.items():
            if i == idx:
                return f"I({name})"
        for name, i in self._state.items():
            if i == idx:
                return f"X({name})"
        return f"unknown #{idx}"

    def unknown_kind(self, idx: int) -> str:
        """'v' for node voltages, 'i' for branch currents, 'x' for states."""
        n_v = len(self._node) - 1
        if idx < n_v:
            return "v"
        if idx < n_v + len(self._branch):
            return "i"
        return "x"


@dataclass
class EvalContext:
    """Everything assemble() needs beyond the trial vector."""

    time: float | None = None                 # None = DC, sources at t=0
    source_scale: float = 1.0                 # source-stepping continuation
    gmin_extra: float = 0.0                   # gmin-stepping continuation
    overrides: dict[str, float] | None = None  # swept source values
    dt: float | None = None                   # trapezoidal step (transient)
    prev: np.ndarray | None = None            # previous accepted vector
    prev_dxdt: dict[str, float] | None = None
    frozen_states: dict[str, float] | None = None  # DC memristor states


def source_value(comp, ctx: EvalContext) -> float:
    if ctx.overrides is not None and comp.name in ctx.overrides:
        return ctx.overrides[comp.name] * ctx.source_scale
    return comp.value(ctx.time) * ctx.source_scale


def frozen_states(circuit: Circuit,
                  states: dict[str, float] | None = None) -> dict[str, float]:
    """Memristor states used by DC analyses (defaults to each card's XINIT)."""
    out = {m.name: m.params.x_init for m in circuit.of_type(Memristor)}
    if states:
        out.update(states)
    return out


class JunctionLimiter:
    """Per-BJT memory of the last accepted junction voltages."""

    def __init__(self, circuit: Circuit, layout: SystemLayout,
                 x0: np.ndarray):
        self._old: dict[str, tuple[float, float]] = {}
        self._vcrit: dict[str, float] = {}
        for q in circuit.of_type(Bjt):
            vc = layout.voltage(x0, q.collector)
            vb = layout.voltage(x0, q.base)
            ve = layout.voltage(x0, q.emitter)
            self._old[q.name] = (vb - ve, vb - vc)
            self._vcrit[q.name] = critical_voltage(q.params)
        self.limited = False

    def limit(self, q: Bjt, vbe: float, vbc: float) -> tuple[float, float]:
        vbe_old, vbc_old = self._old[q.name]
        vcrit = self._vcrit[q.name]
        vt = q.params.vt
        vbe_l = limit_junction_voltage(vbe, vbe_old, vt, vcrit)
        vbc_l = limit_junction_voltage(vbc, vbc_old, vt, vcrit)
        if vbe_l != vbe or vbc_l != vbc:
            self.limited = True
        self._old[q.name] = (vbe_l, vbc_l)
        return vbe_l, vbc_l


@dataclass
class SystemMatrix:
    a: np.ndarray
    rhs: np.ndarray
    layout: SystemLayout


def assemble(circuit: Circuit, x: np.ndarray, layout: SystemLayout,
             tol: Tolerances, ctx: EvalContext,
             limiter: JunctionLimiter | None = None) -> SystemMatrix:
    """Stamp all devices linearized at the trial vector ``x``.

    Linear elements stamp directly; BJTs and (during transients) memristors
    stamp Norton companions, each KCL row receiving the constant part
    ``sum_j J_ij * u_j - I_i(u)`` on the right-hand side.  tol.gmin ties every
    BJT terminal to ground; ctx.gmin_extra (continuation) loads every node.
    """
    n = layout.size
    a = np.zeros((n, n))
    rhs = np.zeros(n)

    def stamp(i: int, j: int, g: float) -> None:
        if i >= 0 and j >= 0:
            a[i, j] += g

    def add_rhs(i: int, v: float) -> None:
        if i >= 0:
            rhs[i] += v

    for comp in circuit.components:
        if isinstance(comp, Resistor):
            g = 1.0 / comp.resistance
            i, j = layout.node_unknown(comp.pos), layout.node_unknown(comp.neg)
            stamp(i, i, g)
            stamp(j, j, g)
            stamp(i, j, -g)
            stamp(j, i, -g)
        elif isinstance(comp, VSource):
            i, j = layout.node_unknown(comp.pos), layout.node_unknown(comp.neg)
            row = layout.branch_unknown(comp.name)
            stamp(i, row, 1.0)
            stamp(j, row, -1.0)
            stamp(row, i, 1.0)
            stamp(row, j, -1.0)
            rhs[row] += source_value(comp, ctx)
        elif isinstance(comp, ISource):
            cur = source_value(comp, ctx)
            add_rhs(layout.node_unknown(comp.pos), -cur)
            add_rhs(layout.node_unknown(comp.neg), cur)
        elif isinstance(comp, Bjt):
            rows = tuple(layout.node_unknown(nd) for nd in comp.nodes)
            vc, vb, ve = (layout.voltage(x, nd) for nd in comp.nodes)
            vbe, vbc = vb - ve, vb - vc
            if limiter is not None:
                vbe, vbc = limiter.limit(comp, vbe, vbc)
            ev = eval_bjt(vbe, vbc, comp.params)
            # Terminal voltages consistent with the (possibly limited)
            # junction voltages used for the evaluation.
            v_u = (vb - vbc, vb, vb - vbe)
            for ti, row in enumerate(rows):
                const = -ev.currents[ti]
                for tj, col in enumerate(rows):
                    stamp(row, col, ev.conductances[ti][tj])
                    const += ev.conductances[ti][tj] * v_u[tj]
                add_rhs(row, const)
            for row in rows:
                stamp(row, row, tol.gmin)
        elif isinstance(comp, Memristor):
            i, j = layout.node_unknown(comp.pos), layout.node_unknown(comp.neg)
            if not layout.include_states:
                states = ctx.frozen_states or {}
                xs = states.get(comp.name, comp.params.x_init)
                g = 1.0 / memristance(xs, comp.params)
                stamp(i, i, g)
                stamp(j, j, g)
                stamp(i, j, -g)
                stamp(j, i, -g)
                continue
            col = layout.state_unknown(comp.name)
            srow = col
            v = layout.voltage(x, comp.pos) - layout.voltage(x, comp.neg)
            xs = float(x[col])
            ev = eval_memristor(v, xs, comp.params)
            g = ev.conductances[0][0]
            stamp(i, i, g)
            stamp(j, j, g)
            stamp(i, j, -g)
            stamp(j, i, -g)
            stamp(i, col, ev.di_dx)
            stamp(j, col, -ev.di_dx)
            const = g * v + ev.di_dx * xs - ev.currents[0]
            add_rhs(i, const)
            add_rhs(j, -const)
            # Implicit trapezoidal state row:
            # x - x_prev - dt/2 * (dxdt(v, x) + dxdt_prev) = 0
            dt = ctx.dt
            x_prev = float(ctx.prev[col])
            dxdt_prev = ctx.prev_dxdt[comp.name]
            resid = xs - x_prev - 0.5 * dt * (ev.dx_dt + dxdt_prev)
            jx = 1.0 - 0.5 * dt * ev.ddxdt_dx
            jv = -0.5 * dt * ev.ddxdt_dv
            stamp(srow, col, jx)
            stamp(srow, i, jv)
            stamp(srow, j, -jv)
            rhs[srow] += jx * xs + jv * v - resid

    if ctx.gmin_extra > 0.0:
        for k in range(circuit.num_nodes - 1):
            a[k, k] += ctx.gmin_extra
    return SystemMatrix(a=a, rhs=rhs, layout=layout)


def solve_linear(m: SystemMatrix) -> np.ndarray:
    """LU solve with partial pivoting; tiny pivots name the floating unknown."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(m.a)
    pivots = np.abs(np.diag(lu))
    worst = int(np.argmin(pivots))
    if pivots[worst] < _PIVOT_MIN:
        raise SingularMatrixError(m.layout.unknown_name(worst))
    return lu_solve((lu, piv), m.rhs)


def _delta_converged(x_new: np.ndarray, x_old: np.ndarray,
                     layout: SystemLayout, tol: Tolerances) -> bool:
    floor = {"v": tol.vntol, "i": tol.abstol, "x": STATE_ABSTOL}
    for k in range(layout.size):
        lim = tol.reltol * max(abs(x_new[k]), abs(x_old[k])) + floor[layout.unknown_kind(k)]
        if abs(x_new[k] - x_old[k]) > lim:
            return False
    return True


def residual(circuit: Circuit, x: np.ndarray, layout: SystemLayout,
             tol: Tolerances, ctx: EvalContext) -> tuple[np.ndarray, np.ndarray]:
    """KCL/branch/state residuals at ``x`` plus per-row current scales.

    Row scale is the largest single branch-current magnitude entering the
    node, so convergence can be judged as |f| <= reltol*scale + abstol.
    """
    f = np.zeros(layout.size)
    scale = np.zeros(layout.size)

    def flow(i: int, j: int, cur: float) -> None:
        if i >= 0:
            f[i] += cur
            scale[i] = max(scale[i], abs(cur))
        if j >= 0:
            f[j] -= cur
            scale[j] = max(scale[j], abs(cur))

    for comp in circuit.components:
        if isinstance(comp, Resistor):
            i, j = layout.node_unknown(comp.pos), layout.node_unknown(comp.neg)
            v = layout.voltage(x, comp.pos) - layout.voltage(x, comp.neg)
            flow(i, j, v / comp.resistance)
        elif isinstance(comp, VSource):
            i, j = layout.node_unknown(comp.pos), layout.node_unknown(comp.neg)
            row = layout.branch_unknown(comp.name)
            flow(i, j, float(x[row]))
            v = layout.voltage(x, comp.pos) - layout.voltage(x, comp.neg)
            f[row] = v - source_value(comp, ctx)
            scale[row] = abs(source_value(comp, ctx))
        elif isinstance(comp, ISource):
            i, j = layout.node_unknown(comp.pos), layout.node_unknown(comp.neg)
            flow(i, j, source_value(comp, ctx))
        elif isinstance(comp, Bjt):
            vc, vb, ve = (layout.voltage(x, nd) for nd in comp.nodes)
            ev = eval_bjt(vb - ve, vb - vc, comp.params)
            rows = tuple(layout.node_unknown(nd) for nd in comp.nodes)
            for ti, row in enumerate(rows):
                if row >= 0:
                    f[row] += ev.currents[ti]
                    scale[row] = max(scale[row], abs(ev.currents[ti]))
            for nd, row in zip(comp.nodes, rows):
                if row >= 0:
                    f[row] += tol.gmin * layout.voltage(x, nd)
        elif isinstance(comp, Memristor):
            i, j = layout.node_unknown(comp.pos), layout.node_unknown(comp.neg)
            v = layout.voltage(x, comp.pos) - layout.voltage(x, comp.neg)
            if layout.include_states:
                col = layout.state_unknown(comp.name)
                xs = float(x[col])
                ev = eval_memristor(v, xs, comp.params)
                flow(i, j, ev.currents[0])
                x_prev = float(ctx.prev[col])
                dxdt_prev = ctx.prev_dxdt[comp.name]
                f[col] = xs - x_prev - 0.5 * ctx.dt * (ev.dx_dt + dxdt_prev)
                scale[col] = abs(xs)
            else:
                states = ctx.frozen_states or {}
                xs = states.get(comp.name, comp.params.x_init)
                flow(i, j, v / memristance(xs, comp.params))

    if ctx.gmin_extra > 0.0:
        for k in range(circuit.num_nodes - 1):
            f[k] += ctx.gmin_extra * x[k]
    return f, scale


def _residual_converged(circuit: Circuit, x: np.ndarray, layout: SystemLayout,
                        tol: Tolerances, ctx: EvalContext) -> bool:
    f, scale = residual(circuit, x, layout, tol, ctx)
    floors = np.array([{"v": tol.abstol, "i": tol.vntol, "x": STATE_ABSTOL}
                       [layout.unknown_kind(k)] for k in range(layout.size)])
    return bool(np.all(np.abs(f) <= tol.reltol * scale + floors))


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    step_norms: tuple[float, ...]


def newton_solve(circuit: Circuit, x0: np.ndarray, layout: SystemLayout,
                 tol: Tolerances, ctx: EvalContext) -> NewtonResult:
    """Iterate assemble/solve/limit until update and residual criteria hold.

    Raises ConvergenceError after tol.max_iter iterations so the caller can
    switch to a continuation strategy.
    """
    nonlinear = bool(circuit.of_type(Bjt)) or (
        layout.include_states and bool(layout.memristors))
    if not nonlinear:
        m = assemble(circuit, x0, layout, tol, ctx)
        x = solve_linear(m)
        return NewtonResult(x=x, iterations=1,
                            step_norms=(float(np.max(np.abs(x - x0)))
                                        if layout.size else 0.0,))

    limiter = JunctionLimiter(circuit, layout, x0)
    x = np.array(x0, dtype=float)
    norms: list[float] = []
    for iteration in range(1, tol.max_iter + 1):
        limiter.limited = False
        m = assemble(circuit, x, layout, tol, ctx, limiter)
        x_new = solve_linear(m)
        norms.append(float(np.max(np.abs(x_new - x))) if layout.size else 0.0)
        done = (not limiter.limited
                and _delta_converged(x_new, x, layout, tol))
        x = x_new
        if done and _residual_converged(circuit, x, layout, tol, ctx):
            # One polishing iteration: quadratic convergence drives the KCL
            # residual to near machine precision, which the energy-balance
            # guarantees rely on.
            m = assemble(circuit, x, layout, tol, ctx, limiter)
            x = solve_linear(m)
            norms.append(float(np.max(np.abs(x - x_new))) if layout.size
                         else 0.0)
            return NewtonResult(x=x, iterations=iteration + 1,
                                step_norms=tuple(norms))
    raise ConvergenceError(
        f"no convergence after {tol.max_iter} Newton iterations")


GMIN_LADDER = tuple(10.0 ** -k for k in range(3, 13))   # 1e-3 .. 1e-12
SOURCE_LADDER = tuple((k + 1) / 10.0 for k in range(10))  # 0.1 .. 1.0


def gmin_stepping(circuit: Circuit, layout: SystemLayout, tol: Tolerances,
                  ctx: EvalContext,
                  x0: np.ndarray | None = None) -> NewtonResult:
    """Operating-point solve with continuation fallbacks.

    Directly solvable circuits pass straight through.  Otherwise a gmin
    ladder from 1e-3 S down to 1e-12 S is walked with warm starts; if any
    rung fails, sources are ramped 0.1 .. 1.0 instead.  Raises
    NoOperatingPointError when both continuations fail.
    """
    x0 = np.zeros(layout.size) if x0 is None else x0
    try:
        return newton_solve(circuit, x0, layout, tol, ctx)
    except (ConvergenceError, SingularMatrixError):
        pass

    try:
        # The last rung equals the default tol.gmin, so the returned point is
        # the regular system up to a 1e-12 S load on each node; that load is
        # also what keeps structurally floating nodes solvable.
        x = x0
        total = 0
        step = None
        for g in GMIN_LADDER:
            step = newton_solve(circuit, x, layout, tol,
                                replace(ctx, gmin_extra=g))
            x, total = step.x, total + step.iterations
        return NewtonResult(x, total, step.step_norms)
    except (ConvergenceError, SingularMatrixError):
        pass

    try:
        x = np.zeros(layout.size)
        total = 0
        for s in SOURCE_LADDER:
            step = newton_solve(circuit, x, layout, tol,
                                replace(ctx, source_scale=ctx.source_scale * s))
            x, total = step.x, total + step.iterations
        return NewtonResult(x, total, step.step_norms)
    except (ConvergenceError, SingularMatrixError):
        raise NoOperatingPointError("no DC operating point") from None


@dataclass
class Solution:
    """Converged unknowns, unpacked by name for reporting."""

    node_voltages: dict[str, float]
    branch_currents: dict[str, float]
    mem_states: dict[str, float]
    converged: bool
    iterations: int
    vector: np.ndarray
    step_norms: tuple[float, ...] = ()

    def voltage(self, node: str) -> float:
        key = node.upper()
        return 0.0 if key == GROUND else self.node_voltages[key]

    def current(self, vsource: str) -> float:
        return self.branch_currents[vsource.upper()]

    def state(self, memristor: str) -> float:
        return self.mem_states[memristor.upper()]


def make_solution(circuit: Circuit, layout: SystemLayout, result: NewtonResult,
                  states: dict[str, float] | None = None) -> Solution:
    x = result.x
    volts = {name: float(x[idx - 1])
             for name, idx in circuit.node_map.items() if idx > 0}
    currents = {v.name: float(x[layout.branch_unknown(v.name)])
                for v in layout.vsources}
    if layout.include_states:
        mem = {m.name: float(x[layout.state_unknown(m.name)])
               for m in layout.memristors}
    else:
        mem = dict(frozen_states(circuit, states))
    return Solution(node_voltages=volts, branch_currents=currents,
                    mem_states=mem, converged=True,
                    iterations=result.iterations, vector=np.array(x),
                    step_norms=result.step_norms)


def solve_op(circuit: Circuit, tol: Tolerances | None = None, *,
             overrides: dict[str, float] | None = None,
             states: dict[str, float] | None = None,
             x0: np.ndarray | None = None) -> Solution:
    """DC operating point (sources at t=0, memristors at their XINIT states)."""
    tol = tol or Tolerances()
    layout = SystemLayout(circuit, include_states=False)
    ctx = EvalContext(overrides=overrides,
                      frozen_states=frozen_states(circuit, states))
    if x0 is not None:
        try:
            result = newton_solve(circuit, x0, layout, tol, ctx)
            return make_solution(circuit, layout, result, states)
        except ConvergenceError:
            pass
    result = gmin_stepping(circuit, layout, tol, ctx)
    return make_solution(circuit, layout, result, states)

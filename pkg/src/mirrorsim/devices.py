"""Nonlinear device evaluation.

Each evaluator returns a :class:`DeviceEval` holding the branch currents
flowing *into* every terminal together with the analytic partial derivatives
needed to build a Norton companion for Newton iteration.  The functions are
stateless: memristor state ``x`` is passed in and its rate of change is
returned, never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# kT/q at 27 C, the usual SPICE operating temperature.
THERMAL_VOLTAGE = 0.025852

# exp() arguments beyond this are continued linearly so early Newton
# iterations cannot overflow; the extension keeps the function C1.
EXP_CLAMP = 80.0


def safe_exp(u: float) -> float:
    """exp(u), linearly extrapolated above EXP_CLAMP."""
    if u > EXP_CLAMP:
        e = math.exp(EXP_CLAMP)
        return e * (1.0 + (u - EXP_CLAMP))
    return math.exp(u)


def safe_exp_deriv(u: float) -> float:
    """Derivative of :func:`safe_exp` (constant above the clamp)."""
    if u > EXP_CLAMP:
        return math.exp(EXP_CLAMP)
    return math.exp(u)


@dataclass(frozen=True)
class BjtParams:
    """NPN model card: transport-form Ebers-Moll with optional Early effect."""

    is_sat: float = 1e-14   # saturation current, A
    bf: float = 100.0       # forward current gain
    vaf: float = math.inf   # Early voltage, V (inf disables the effect)
    br: float = 1.0         # reverse current gain
    vt: float = THERMAL_VOLTAGE

    def __post_init__(self) -> None:
        if not self.is_sat > 0:
            raise ValueError("IS must be positive")
        if not self.bf > 0:
            raise ValueError("BF must be positive")
        if not self.br > 0:
            raise ValueError("BR must be positive")
        if not self.vaf > 0:
            raise ValueError("VAF must be positive or infinite")
        if not self.vt > 0:
            raise ValueError("VT must be positive")


@dataclass(frozen=True)
class MemristorParams:
    """Charge-controlled resistance-switch memristor card.

    Memristance interpolates linearly in the normalized state x:
    M(x) = r_on*x + r_off*(1-x), and the state moves as
    dx/dt = (mu_v*r_on/d^2) * i * f(x) with f the boundary window
    1 - (2x-1)^(2p).  ``window=False`` replaces f by 1 (charge-control
    closed form, used by verification runs).
    """

    r_on: float = 100.0     # minimum memristance, ohm
    r_off: float = 16e3     # maximum memristance, ohm
    d: float = 10e-9        # device thickness, m
    mu_v: float = 1e-14     # dopant mobility, m^2/(V*s)
    p: int = 1              # window exponent
    x_init: float = 0.5     # initial normalized state
    window: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.r_on < self.r_off:
            raise ValueError("require 0 < RON < ROFF")
        if not self.d > 0:
            raise ValueError("D must be positive")
        if not self.mu_v > 0:
            raise ValueError("UV must be positive")
        if not (isinstance(self.p, int) and self.p >= 1):
            raise ValueError("P must be an integer >= 1")
        if not 0.0 <= self.x_init <= 1.0:
            raise ValueError("XINIT must lie in [0, 1]")

    @property
    def rate_factor(self) -> float:
        """State-rate prefactor mu_v*r_on/d^2 (units 1/C)."""
        return self.mu_v * self.r_on / (self.d * self.d)


@dataclass(frozen=True)
class DeviceEval:
    """Linearization record for one device at one trial point.

    ``currents[i]`` is the current into terminal i;
    ``conductances[i][j]`` is d currents[i] / d v_terminal[j].
    The remaining fields are only populated for memristors.
    """

    currents: tuple[float, ...]
    conductances: tuple[tuple[float, ...], ...]
    dx_dt: float = 0.0
    di_dx: float = 0.0      # d(terminal-0 current)/dx
    ddxdt_dv: float = 0.0
    ddxdt_dx: float = 0.0
    ddxdt_di: float = 0.0


def eval_bjt(vbe: float, vbc: float, params: BjtParams) -> DeviceEval:
    """Evaluate an NPN at junction voltages (vbe, vbc); terminals (C, B, E).

    With f(v) = exp(v/vt) - 1:
        Icc = IS*f(vbe),  Iec = IS*f(vbc)
        Ic  = (Icc - Iec) * (1 - vbc/VAF)
        Ib  = Icc/BF + Iec/BR
        Ie  = -(Ic + Ib)
    The base-collector diode current is carried by the base terminal.
    """
    vt = params.vt
    f_be = safe_exp(vbe / vt) - 1.0
    f_bc = safe_exp(vbc / vt) - 1.0
    icc = params.is_sat * f_be
    iec = params.is_sat * f_bc
    early = 1.0 - vbc / params.vaf

    ic = (icc - iec) * early
    ib = icc / params.bf + iec / params.br
    ie = -(ic + ib)

    g_be = params.is_sat * safe_exp_deriv(vbe / vt) / vt   # dIcc/dvbe
    g_bc = params.is_sat * safe_exp_deriv(vbc / vt) / vt   # dIec/dvbc
    dic_dvbe = g_be * early
    dic_dvbc = -g_bc * early - (icc - iec) / params.vaf
    dib_dvbe = g_be / params.bf
    dib_dvbc = g_bc / params.br

    # Map junction-voltage partials to terminal voltages (vc, vb, ve):
    # vbe = vb - ve, vbc = vb - vc.
    row_c = (-dic_dvbc, dic_dvbe + dic_dvbc, -dic_dvbe)
    row_b = (-dib_dvbc, dib_dvbe + dib_dvbc, -dib_dvbe)
    row_e = tuple(-(c + b) for c, b in zip(row_c, row_b))
    return DeviceEval(currents=(ic, ib, ie), conductances=(row_c, row_b, row_e))


def memristance(x: float, params: MemristorParams) -> float:
    """M(x) = r_on*x + r_off*(1-x); bounded below by r_on."""
    return params.r_on * x + params.r_off * (1.0 - x)


def window_joglekar(x: float, p: int) -> float:
    """Boundary window 1 - (2x-1)^(2p); 1 at midpoint, 0 at x in {0, 1}."""
    return 1.0 - (2.0 * x - 1.0) ** (2 * p)


def window_joglekar_deriv(x: float, p: int) -> float:
    return -4.0 * p * (2.0 * x - 1.0) ** (2 * p - 1)


def eval_memristor(v: float, x: float, params: MemristorParams) -> DeviceEval:
    """Evaluate a memristor at branch voltage v (terminal 0 minus 1), state x."""
    m = memristance(x, params)
    i = v / m
    di_dv = 1.0 / m
    di_dx = -v * (params.r_on - params.r_off) / (m * m)
    if params.window:
        w = window_joglekar(x, params.p)
        dw = window_joglekar_deriv(x, params.p)
    else:
        w = 1.0
        dw = 0.0
    k = params.rate_factor
    return DeviceEval(
        currents=(i, -i),
        conductances=((di_dv, -di_dv), (-di_dv, di_dv)),
        dx_dt=k * i * w,
        di_dx=di_dx,
        ddxdt_dv=k * w * di_dv,
        ddxdt_dx=k * (di_dx * w + i * dw),
        ddxdt_di=k * w,
    )


def critical_voltage(params: BjtParams) -> float:
    """Junction voltage beyond which Newton updates are log-limited."""
    return params.vt * math.log(params.vt / (math.sqrt(2.0) * params.is_sat))


def limit_junction_voltage(v_new: float, v_old: float, vt: float,
                           vcrit: float) -> float:
    """SPICE-style pn-junction update damping.

    Updates that land above vcrit and move by more than 2*vt are replaced by
    the logarithmic step v_old + vt*ln(1 + (v_new - v_old)/vt); when the log
    argument is non-positive the update clamps to vcrit.  Everything else
    passes through unchanged.
    """
    if v_new > vcrit and abs(v_new - v_old) > 2.0 * vt:
        arg = 1.0 + (v_new - v_old) / vt
        if arg > 0.0:
            return v_old + vt * math.log(arg)
        return vcrit
    return v_new

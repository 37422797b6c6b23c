"""mirrorsim: a SPICE-subset simulator for BJT current-mirror and memristor
circuits -- netlist parsing, MNA/Newton DC and transient solving, Fourier/THD
and average-power reporting."""

from .analyses import (
    AnalysisError,
    FourierReport,
    PowerReport,
    Trace,
    average_power,
    fourier_analysis,
    pinched_loop_area,
    power_report,
    resample_last_period,
    run_dc_sweep,
    run_op,
    run_transient,
)
from .devices import (
    BjtParams,
    DeviceEval,
    MemristorParams,
    eval_bjt,
    eval_memristor,
    limit_junction_voltage,
    memristance,
    window_joglekar,
)
from .netlist import (
    Circuit,
    DcSweepDirective,
    FourDirective,
    NetlistError,
    OpDirective,
    TranDirective,
    elaborate,
    format_circuit,
    parse_file,
    parse_netlist,
    parse_string,
    parse_value,
)
from .solver import (
    ConvergenceError,
    NoOperatingPointError,
    SingularMatrixError,
    Solution,
    Tolerances,
    solve_op,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisError", "BjtParams", "Circuit", "ConvergenceError",
    "DcSweepDirective", "DeviceEval", "FourDirective", "FourierReport",
    "MemristorParams", "NetlistError", "NoOperatingPointError", "OpDirective",
    "PowerReport", "SingularMatrixError", "Solution", "Tolerances",
    "TranDirective", "Trace", "average_power", "elaborate", "eval_bjt",
    "eval_memristor", "format_circuit", "fourier_analysis", "pinched_loop_area",
    "limit_junction_voltage", "memristance", "parse_file", "parse_netlist",
    "parse_string", "parse_value", "power_report", "resample_last_period",
    "run_dc_sweep", "run_op", "run_transient", "solve_op", "window_joglekar",
]

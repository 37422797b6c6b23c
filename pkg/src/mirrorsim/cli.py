"""Command-line front end: run netlists and compare circuits.

``mirrorsim run FILE [-o DIR] [--tstep S] [--reltol R] [--format csv,svg,text]``
executes the file's directives in order and writes ``<name>.op.txt``,
``<name>.dc.csv``, ``<name>.tran.csv``, ``<name>.four.txt`` and
``<name>.power.txt`` as applicable, plus optional SVG line plots.

``mirrorsim compare A B --metric thd|power`` runs both netlists and prints a
side-by-side table with a verdict.

Exit codes: 0 success, 1 parse error, 2 convergence/prerequisite failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analyses import (
    AnalysisError,
    FourierReport,
    PowerReport,
    Trace,
    fourier_analysis,
    power_report_op,
    power_report_tran,
    run_dc_sweep,
    run_op,
    run_transient,
    signal_names,
)
from .netlist import (
    Bjt,
    Circuit,
    DcSweepDirective,
    FourDirective,
    Memristor,
    NetlistError,
    OpDirective,
    TranDirective,
    VSource,
    parse_file,
)
from .solver import ConvergenceError, Solution, Tolerances

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_CONVERGENCE = 2
EXIT_IO = 3


@dataclass
class RunConfig:
    input: Path
    outdir: Path = field(default_factory=lambda: Path("."))
    tstep: float | None = None
    reltol: float | None = None
    formats: tuple[str, ...] = ("csv", "text")


def _fmt(x: float) -> str:
    return repr(float(x))


def _write(path: Path, text: str) -> None:
    path.write_text(text, newline="\n")


def write_trace_csv(path: Path, trace: Trace) -> None:
    """CSV schema: first column ``axis``, one column per signal, values in
    full round-trip precision; identical runs give byte-identical files."""
    names = list(trace.signals)
    lines = [",".join(["axis"] + names)]
    for k in range(len(trace.axis)):
        row = [_fmt(trace.axis[k])] + [_fmt(trace.signals[n][k]) for n in names]
        lines.append(",".join(row))
    _write(path, "\n".join(lines) + "\n")


def format_op_text(circuit: Circuit, sol: Solution) -> str:
    lines = [f"* operating point: {circuit.title}",
             f"* converged in {sol.iterations} Newton iterations", ""]
    for node in circuit.node_names():
        if node != "0":
            lines.append(f"V({node}) = {_fmt(sol.voltage(node))} V")
    for name, cur in sol.branch_currents.items():
        lines.append(f"I({name}) = {_fmt(cur)} A")
    for name, x in sol.mem_states.items():
        lines.append(f"X({name}) = {_fmt(x)}")
    return "\n".join(lines) + "\n"


def format_fourier_text(reports: dict[str, FourierReport]) -> str:
    lines = []
    for name, rep in reports.items():
        lines += [f"Fourier analysis of {name} "
                  f"(fundamental {rep.fundamental:g} Hz)",
                  f"  dc component: {rep.dc:.6e}",
                  "  harmonic   frequency      magnitude      phase(deg)"]
        for k, (mag, ph) in enumerate(zip(rep.magnitudes, rep.phases), start=1):
            lines.append(f"  {k:8d}   {k * rep.fundamental:<12g} "
                         f"{mag:.6e}   {ph:10.3f}")
        lines += [f"  THD (harmonics 2..{len(rep.magnitudes)}): "
                  f"{rep.thd_requested:.6f} %",
                  f"  THD (full spectrum):      {rep.thd_full:.6f} %", ""]
    return "\n".join(lines) + "\n"


def format_power_text(circuit: Circuit, op_rep: PowerReport,
                      tran_rep: PowerReport | None) -> str:
    def section(title: str, rep: PowerReport) -> list[str]:
        rows = [title]
        for comp in circuit.components:
            rows.append(f"  {comp.name:<10s} "
                        f"{rep.per_component[comp.name]: .6e} W")
        rows += [f"  {'-' * 34}",
                 f"  source-delivered total {rep.delivered: .6e} W",
                 f"  dissipated total       {rep.dissipated: .6e} W",
                 f"  imbalance              {rep.imbalance: .6e} W", ""]
        return rows

    lines = [f"* power report: {circuit.title}", ""]
    lines += section("DC operating point (sources report delivered power):",
                     op_rep)
    if tran_rep is not None:
        lines += section("Transient average over the recorded window:",
                         tran_rep)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# SVG plotting (no external dependency; static polyline plots)
# --------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_svg(x: np.ndarray, series: dict[str, np.ndarray],
               xlabel: str, title: str) -> str:
    width, height, margin = 640, 400, 60
    xs = np.asarray(x, dtype=float)
    lo_x, hi_x = float(xs.min()), float(xs.max())
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    lo_y, hi_y = float(all_y.min()), float(all_y.max())
    if hi_x == lo_x:
        hi_x = lo_x + 1.0
    if hi_y == lo_y:
        hi_y = lo_y + 1.0
    pad = 0.05 * (hi_y - lo_y)
    lo_y, hi_y = lo_y - pad, hi_y + pad

    def px(v: float) -> float:
        return margin + (v - lo_x) / (hi_x - lo_x) * (width - 2 * margin)

    def py(v: float) -> float:
        return height - margin - (v - lo_y) / (hi_y - lo_y) * (height - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" '
             f'font-size="14">{title}</text>']
    # axes
    parts.append(f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
                 f'height="{height - 2 * margin}" fill="none" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        xv = lo_x + frac * (hi_x - lo_x)
        yv = lo_y + frac * (hi_y - lo_y)
        parts.append(f'<text x="{px(xv)}" y="{height - margin + 18}" '
                     f'text-anchor="middle" font-size="11">{xv:.4g}</text>')
        parts.append(f'<text x="{margin - 6}" y="{py(yv) + 4}" '
                     f'text-anchor="end" font-size="11">{yv:.4g}</text>')
    parts.append(f'<text x="{width / 2}" y="{height - 12}" '
                 f'text-anchor="middle" font-size="12">{xlabel}</text>')
    for idx, (name, ys) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(f"{px(float(a)):.2f},{py(float(b)):.2f}"
                       for a, b in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.2"/>')
        parts.append(f'<text x="{width - margin - 4}" '
                     f'y="{margin + 16 + 14 * idx}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _plot_signals(circuit: Circuit) -> list[str]:
    """Signals worth plotting: the .four targets when given, else currents."""
    for d in circuit.directives:
        if isinstance(d, FourDirective):
            return list(d.signals)
    names = [s for s in signal_names(circuit)
             if s.startswith(("IC(", "I("))]
    return names or signal_names(circuit)


# --------------------------------------------------------------------------
# run / compare
# --------------------------------------------------------------------------

def run(config: RunConfig) -> int:
    """Execute a netlist's directives; write reports; return an exit code."""
    try:
        circuit = parse_file(config.input)
    except OSError as exc:
        print(f"{config.input}: {exc}", file=sys.stderr)
        return EXIT_IO
    except NetlistError as exc:
        loc = f":{exc.line}" if exc.line else ""
        print(f"{config.input}{loc}: {exc.message}", file=sys.stderr)
        return EXIT_PARSE

    tol = Tolerances() if config.reltol is None else Tolerances(
        reltol=config.reltol)
    name = Path(config.input).stem
    try:
        config.outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"{config.outdir}: {exc}", file=sys.stderr)
        return EXIT_IO

    want = set(config.formats)
    out = config.outdir / name
    try:
        op = run_op(circuit, tol)
        tran_trace: Trace | None = None
        four_fundamental: float | None = None
        four_reports: dict[str, FourierReport] | None = None
        for d in circuit.directives:
            if isinstance(d, OpDirective) and "text" in want:
                _write(out.with_suffix(".op.txt"), format_op_text(circuit, op))
            elif isinstance(d, DcSweepDirective):
                trace = run_dc_sweep(circuit, d, tol)
                if "csv" in want:
                    write_trace_csv(out.with_suffix(".dc.csv"), trace)
                if "svg" in want:
                    sigs = {s: trace.signal(s) for s in _plot_signals(circuit)
                            if s in trace.signals}
                    _write(out.with_suffix(".dc.svg"),
                           render_svg(trace.axis, sigs, f"{d.source} (V)",
                                      circuit.title))
            elif isinstance(d, TranDirective):
                if config.tstep is not None:
                    d = replace(d, tstep=config.tstep)
                tran_trace = run_transient(circuit, d, tol)
                if "csv" in want:
                    write_trace_csv(out.with_suffix(".tran.csv"), tran_trace)
                if "svg" in want:
                    sigs = {s: tran_trace.signal(s)
                            for s in _plot_signals(circuit)
                            if s in tran_trace.signals}
                    _write(out.with_suffix(".tran.svg"),
                           render_svg(tran_trace.axis, sigs, "time (s)",
                                      circuit.title))
                    for m in circuit.of_type(Memristor):
                        v = (tran_trace.signal(f"V({m.pos})")
                             if m.pos != "0" else 0.0 * tran_trace.axis)
                        if m.neg != "0":
                            v = v - tran_trace.signal(f"V({m.neg})")
                        _write(config.outdir / f"{name}.{m.name}.hysteresis.svg",
                               render_svg(v, {f"I({m.name})":
                                              tran_trace.signal(f"I({m.name})")},
                                          f"V across {m.name} (V)",
                                          f"{m.name} i-v loop"))
            elif isinstance(d, FourDirective):
                if tran_trace is None:
                    print(f"{config.input}: .four requires a preceding .tran",
                          file=sys.stderr)
                    return EXIT_CONVERGENCE
                four_reports = fourier_analysis(tran_trace, d)
                four_fundamental = d.fundamental
                if "text" in want:
                    _write(out.with_suffix(".four.txt"),
                           format_fourier_text(four_reports))
        if "text" in want:
            op_rep = power_report_op(circuit, op)
            tran_rep = (power_report_tran(circuit, tran_trace,
                                          four_fundamental)
                        if tran_trace is not None else None)
            _write(out.with_suffix(".power.txt"),
                   format_power_text(circuit, op_rep, tran_rep))
    except (ConvergenceError, AnalysisError) as exc:
        print(f"{config.input}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _thd_of(path: Path, tol: Tolerances) -> tuple[str, float, float]:
    circuit = parse_file(path)
    tran = next((d for d in circuit.directives if isinstance(d, TranDirective)),
                None)
    four = next((d for d in circuit.directives if isinstance(d, FourDirective)),
                None)
    if tran is None or four is None:
        raise AnalysisError(f"{path}: thd metric needs .tran and .four "
                            f"directives")
    trace = run_transient(circuit, tran, tol)
    rep = fourier_analysis(trace, four)[four.signals[0]]
    return four.signals[0], rep.thd_requested, rep.thd_full


def _power_of(path: Path, tol: Tolerances) -> PowerReport:
    circuit = parse_file(path)
    tran = next((d for d in circuit.directives if isinstance(d, TranDirective)),
                None)
    if tran is not None:
        four = next((d for d in circuit.directives
                     if isinstance(d, FourDirective)), None)
        trace = run_transient(circuit, tran, tol)
        return power_report_tran(circuit, trace,
                                 four.fundamental if four else None)
    return power_report_op(circuit, run_op(circuit, tol))


def compare(file_a: Path, file_b: Path, metric: str,
            out=sys.stdout) -> int:
    """Run two netlists and print a side-by-side metric table + verdict."""
    tol = Tolerances()
    try:
        if metric == "thd":
            sig_a, req_a, full_a = _thd_of(file_a, tol)
            sig_b, req_b, full_b = _thd_of(file_b, tol)
            print(f"{'metric':<22s} {file_a.stem:>16s} {file_b.stem:>16s}",
                  file=out)
            print(f"{'signal':<22s} {sig_a:>16s} {sig_b:>16s}", file=out)
            print(f"{'thd_requested (%)':<22s} {req_a:>16.6f} {req_b:>16.6f}",
                  file=out)
            print(f"{'thd_full (%)':<22s} {full_a:>16.6f} {full_b:>16.6f}",
                  file=out)
            if req_a == req_b and full_a == full_b:
                verdict = "equal"
            elif req_a < req_b and full_a < full_b:
                verdict = f"{file_a.stem} has lower distortion"
            elif req_b < req_a and full_b < full_a:
                verdict = f"{file_b.stem} has lower distortion"
            else:
                verdict = "mixed (requested and full THD disagree)"
            print(f"verdict: {verdict}", file=out)
        elif metric == "power":
            rep_a, rep_b = _power_of(file_a, tol), _power_of(file_b, tol)
            names = sorted(set(rep_a.per_component) | set(rep_b.per_component))
            print(f"{'component (W)':<22s} {file_a.stem:>16s} "
                  f"{file_b.stem:>16s}", file=out)
            for n in names:
                a = rep_a.per_component.get(n, float("nan"))
                b = rep_b.per_component.get(n, float("nan"))
                print(f"{n:<22s} {a:>16.6e} {b:>16.6e}", file=out)
            print(f"{'dissipated total':<22s} {rep_a.dissipated:>16.6e} "
                  f"{rep_b.dissipated:>16.6e}", file=out)
            print(f"{'delivered total':<22s} {rep_a.delivered:>16.6e} "
                  f"{rep_b.delivered:>16.6e}", file=out)
            if rep_a.dissipated == rep_b.dissipated:
                verdict = "equal"
            else:
                low = file_a.stem if rep_a.dissipated < rep_b.dissipated \
                    else file_b.stem
                verdict = f"{low} dissipates less power"
            print(f"verdict: {verdict}", file=out)
        else:
            raise AnalysisError(f"unknown metric {metric}")
    except NetlistError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConvergenceError, AnalysisError) as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mirrorsim",
        description="SPICE-subset simulator for current-mirror and "
                    "memristor circuits")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a netlist's analysis directives")
    p_run.add_argument("netlist", type=Path)
    p_run.add_argument("-o", "--outdir", type=Path, default=Path("."))
    p_run.add_argument("--tstep", type=float, default=None,
                       help="override transient timestep (s)")
    p_run.add_argument("--reltol", type=float, default=None,
                       help="override solver relative tolerance")
    p_run.add_argument("--format", default="csv,text",
                       help="comma-separated outputs: csv,svg,text")

    p_cmp = sub.add_parser("compare", help="compare two netlists by a metric")
    p_cmp.add_argument("file_a", type=Path)
    p_cmp.add_argument("file_b", type=Path)
    p_cmp.add_argument("--metric", choices=("thd", "power"), required=True)

    args = parser.parse_args(argv)
    if args.command == "run":
        config = RunConfig(input=args.netlist, outdir=args.outdir,
                           tstep=args.tstep, reltol=args.reltol,
                           formats=tuple(f.strip()
                                         for f in args.format.split(",")))
        return run(config)
    return compare(args.file_a, args.file_b, args.metric)


if __name__ == "__main__":
    sys.exit(main())

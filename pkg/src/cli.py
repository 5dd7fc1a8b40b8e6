"""
Command-line front end: simulate, solve-cal, apply-cal, fit, fit-tls, report.

Exit codes: 0 success, 2 usage/parameter error, 3 parse error,
4 fit/conditioning/numeric/range error.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from src.calibration.onecal import apply_cal, error_term_report, resample_terms, solve_sol
from src.config import RunConfig, apply_config_values, load_environment, read_config_file
from src.data import ioformats
from src.data.sample_data import PRESETS, preset
from src.errors import FitError, NumericError, ParameterError, ParseError, RangeError, ResokitError
from src.fitting.resfit import PhotonNumberParams, dbm_to_watts, fit_power_sweep, fit_trace, photon_number
from src.fitting.tlsloss import LossSweep, fit_tls, tls_report
from src.network.circsim import CircuitSpec, centered_grid, simulate
from src.visualization.report_visualizer import ReportVisualizer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_FIT = 4


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value file overriding flags")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("-o", "--output", help="output file")


def _photon_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--z0", type=float, default=50.0, help="environment impedance (Ohm)")
    parser.add_argument("--zr", type=float, default=50.0, help="resonator impedance (Ohm)")
    parser.add_argument("--attenuation-db", type=float, default=70.0,
                        help="line attenuation between source and device (dB)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resokit", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a hanger or reflection circuit")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="named circuit")
    p.add_argument("--mode", choices=["hanger", "reflection"], default=None)
    p.add_argument("--isolation-db", "--isolation", dest="isolation_db", type=float, default=None)
    p.add_argument("--l3-deg", "--l3", dest="l3_deg", type=float, default=None)
    p.add_argument("--l4-deg", "--l4", dest="l4_deg", type=float, default=None)
    for name in ("z1", "z2", "r-res", "l-res", "c-res", "c-couple", "wirebond-l1", "wirebond-l2"):
        p.add_argument(f"--{name}", type=float, default=None)
    p.add_argument("--points", type=int, default=2001)
    p.add_argument("--linewidths", type=float, default=20.0, help="half-span in linewidths")

    p = sub.add_parser("solve-cal", help="solve the SOL error adapter")
    _common(p)
    p.add_argument("--open", dest="open_path", required=True, help="measured open (.s1p)")
    p.add_argument("--short", dest="short_path", required=True, help="measured short (.s1p)")
    p.add_argument("--load", dest="load_path", required=True, help="measured load (.s1p)")
    p.add_argument("--kit", default=None, help="calibration kit file (default $RESOKIT_CALKIT)")
    p.add_argument("--kit-open", default=None, help="loose kit file for the open definition")
    p.add_argument("--kit-short", default=None)
    p.add_argument("--kit-load", default=None)
    p.add_argument("--conditioning-floor", type=float, default=None)
    p.add_argument("--report", default=None, help="error-term dB report (.csv)")

    p = sub.add_parser("apply-cal", help="de-embed a measured trace")
    _common(p)
    p.add_argument("inputs", help="measured trace (.s1p)")
    p.add_argument("--terms", required=True, help="error-terms file")

    p = sub.add_parser("fit", help="fit one or more traces, or a power sweep")
    _common(p)
    p.add_argument("inputs", nargs="*", help="trace files (.s1p/.s2p)")
    p.add_argument("--sweep", default=None, help="power-sweep manifest (.csv)")
    p.add_argument("--mode", choices=["hanger", "reflection"], default="reflection")
    p.add_argument("--correction", choices=["dcm", "naive", "none"], default=None)
    p.add_argument("--power-dbm", type=float, default=None, help="source power for single traces")
    _photon_flags(p)

    p = sub.add_parser("fit-tls", help="fit the TLS loss model to power-sweep results")
    _common(p)
    p.add_argument("inputs", nargs="+", help="fit result tables (.csv), one per resonance")
    p.add_argument("--f0", type=float, default=None, help="resonance frequency (Hz)")
    p.add_argument("--temperature", type=float, default=0.015, help="sample temperature (K)")
    p.add_argument("--beta", type=float, default=1.0, help="fixed saturation exponent")
    p.add_argument("--free-beta", action="store_true", help="fit beta instead of fixing it")

    p = sub.add_parser("report", help="write plot-data CSV and optional HTML figure")
    _common(p)
    p.add_argument("--terms", default=None, help="error-terms file")
    p.add_argument("--trace", default=None, help="trace file for a resonance-circle plot")
    p.add_argument("--mode", choices=["hanger", "reflection"], default="reflection")
    p.add_argument("--sweep-results", default=None, help="power-sweep fit table for a TLS curve")
    p.add_argument("--f0", type=float, default=None, help="resonance frequency (Hz) if the table has none")
    p.add_argument("--temperature", type=float, default=0.015)
    p.add_argument("--html", default=None, help="also write a plotly figure here")
    return parser


def _require_output(config: RunConfig) -> Path:
    if not config.output:
        raise ParameterError(f"'{config.command}' needs --output")
    return Path(config.output)


def cmd_simulate(config: RunConfig) -> int:
    circuit = dict(config.circuit)
    if config.preset:
        spec = preset(config.preset, **circuit)
    else:
        shaping = {k: circuit.pop(k) for k in ("isolation_db", "l3_deg", "l4_deg") if k in circuit}
        spec = CircuitSpec(mode=config.mode, **circuit)
        if "isolation_db" in shaping:
            spec = replace(spec, circulator_isolation_db=shaping["isolation_db"])
        if "l3_deg" in shaping:
            spec = spec.with_line("tl3", length_deg=shaping["l3_deg"])
        if "l4_deg" in shaping:
            spec = spec.with_line("tl4", length_deg=shaping["l4_deg"])
    grid = centered_grid(spec, config.linewidths, config.points)
    trace = simulate(spec, grid)
    comments = [f" simulated {spec.mode} circuit" + (f" preset {config.preset}" if config.preset else "")]
    comments += [f" {k} = {v}" for k, v in sorted(config.circuit.items())]
    ioformats.write_trace(trace, _require_output(config), comments)
    return EXIT_OK


def cmd_solve_cal(config: RunConfig, ns: argparse.Namespace) -> int:
    measured = {
        "open": ioformats.read_trace(ns.open_path),
        "short": ioformats.read_trace(ns.short_path),
        "load": ioformats.read_trace(ns.load_path),
    }
    loose = {k: getattr(ns, f"kit_{k}") for k in ("open", "short", "load") if getattr(ns, f"kit_{k}")}
    if loose:
        if len(loose) != 3:
            raise ParameterError("loose kit files need --kit-open, --kit-short and --kit-load")
        kit = ioformats.load_calkit_files(loose, conditioning_floor=config.conditioning_floor)
    elif config.kit:
        kit = ioformats.load_calkit(config.kit, config.conditioning_floor)
    else:
        raise ParameterError("no calibration kit: pass --kit or set RESOKIT_CALKIT")
    grid = measured["open"].grid
    if not kit.grid.same_as(grid):
        kit = kit.resample(grid)
    terms = solve_sol(measured, kit)
    ioformats.write_error_terms(terms, _require_output(config))
    if config.report:
        ioformats.write_table(error_term_report(terms), config.report)
    return EXIT_OK


def cmd_apply_cal(config: RunConfig) -> int:
    if not config.terms:
        raise ParameterError("apply-cal needs --terms")
    measured = ioformats.read_trace(config.inputs[0])
    terms = resample_terms(ioformats.read_error_terms(config.terms), measured.grid)
    corrected = apply_cal(terms, measured)
    ioformats.write_trace(corrected, _require_output(config), [f" calibrated with {Path(config.terms).name}"])
    return EXIT_OK


def cmd_fit(config: RunConfig, ns: argparse.Namespace) -> int:
    correction = config.correction
    if correction == "none" and config.mode == "hanger":
        raise ParameterError("hanger fits take --correction dcm or naive")
    if correction == "naive" and config.mode == "reflection":
        raise ParameterError("reflection fits take --correction none or dcm")
    if ns.sweep:
        sweep = ioformats.load_power_sweep(ns.sweep)
        frame = fit_power_sweep(sweep, config.mode, correction, config.attenuation_db,
                                config.z0, config.zr)
    elif config.inputs:
        rows = []
        for path in config.inputs:
            result = fit_trace(ioformats.read_trace(path), config.mode, correction)
            row = {"source": Path(path).name}
            if ns.power_dbm is not None:
                p_app = float(dbm_to_watts(ns.power_dbm - config.attenuation_db))
                row["power_dbm"] = ns.power_dbm
                row["p_app_w"] = p_app
                row["photon_number"] = photon_number(PhotonNumberParams(
                    z0=config.z0, zr=config.zr, q_total=result.q_total,
                    q_coupling=result.q_coupling, f0=result.f0, p_app=p_app))
            row.update(result.as_row())
            rows.append(row)
            logger.info(f"{path}: f0 {result.f0:.9e} Hz, Qi {result.q_internal:.4e}"
                        + (" (pathological)" if result.pathology else ""))
        frame = pd.DataFrame(rows)
    else:
        raise ParameterError("fit needs trace files or --sweep")
    ioformats.write_table(frame, _require_output(config))
    return EXIT_OK


def _table_f0(frame: pd.DataFrame, f0: Optional[float]) -> float:
    """Resonance frequency from --f0, else the median of the table's f0_hz column."""
    if f0 is not None:
        return float(f0)
    if "f0_hz" not in frame.columns or frame["f0_hz"].isna().all():
        raise ParameterError("table has no f0_hz column; pass --f0")
    return float(np.median(frame["f0_hz"].dropna()))


def cmd_fit_tls(config: RunConfig) -> int:
    results = []
    for path in config.inputs:
        frame = ioformats.read_table(path)
        sweep = LossSweep.from_frame(frame)
        results.append(fit_tls(sweep, _table_f0(frame, config.f0), config.temperature, config.beta))
    ioformats.write_table(tls_report(results), _require_output(config))
    return EXIT_OK


def cmd_report(config: RunConfig, ns: argparse.Namespace) -> int:
    visualizer = ReportVisualizer()
    if ns.terms:
        data = visualizer.error_terms(ioformats.read_error_terms(ns.terms))
        fig_args = ("Error adapter terms", "Frequency (GHz)", "Magnitude (dB)")
        fig_opts = {}
    elif ns.trace:
        trace = ioformats.read_trace(ns.trace)
        fit = None
        try:
            fit = fit_trace(trace, ns.mode)
        except FitError as e:
            logger.warning(f"Plotting {ns.trace} without a model: {e}")
        data = visualizer.resonance_circle(trace, fit)
        fig_args = ("Resonance circle", "Re", "Im")
        fig_opts = {"equal_axes": True}
    elif ns.sweep_results:
        frame = ioformats.read_table(ns.sweep_results)
        sweep = LossSweep.from_frame(frame)
        fit = fit_tls(sweep, _table_f0(frame, config.f0), config.temperature)
        data = visualizer.tls_curve(sweep, fit)
        fig_args = ("Internal loss", "Photon number", "1/Qi")
        fig_opts = {"log_x": True, "log_y": True}
    else:
        raise ParameterError("report needs --terms, --trace or --sweep-results")
    ioformats.write_table(data, _require_output(config))
    if ns.html:
        visualizer.write_html(visualizer.figure(data, *fig_args, **fig_opts), ns.html)
    return EXIT_OK


def _dispatch(config: RunConfig, ns: argparse.Namespace) -> int:
    if config.command == "simulate":
        return cmd_simulate(config)
    if config.command == "solve-cal":
        return cmd_solve_cal(config, ns)
    if config.command == "apply-cal":
        return cmd_apply_cal(config)
    if config.command == "fit":
        return cmd_fit(config, ns)
    if config.command == "fit-tls":
        return cmd_fit_tls(config)
    return cmd_report(config, ns)


def main(argv: Optional[List[str]] = None) -> int:
    env = load_environment()
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, (ns.log_level or env.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        if ns.config:
            apply_config_values(ns, read_config_file(ns.config))
        config = RunConfig.from_namespace(ns, env)
        return _dispatch(config, ns)
    except ParseError as e:
        logger.error(f"Parse error: {e}")
        return EXIT_PARSE
    except (FitError, NumericError, RangeError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FIT
    except ParameterError as e:
        logger.error(f"Invalid parameters: {e}")
        return EXIT_USAGE
    except ResokitError as e:
        logger.error(f"Error: {e}")
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())

"""
Text formats: Touchstone v1 traces, calibration-kit files, error-term files,
power-sweep manifests and result tables.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.calibration.onecal import CalKit, CalStandard, OnePortErrorTerms
from src.errors import ParameterError, ParseError
from src.network.rfnet import ComplexTrace, FrequencyGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

UNIT_SCALE = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
UNIT_LABEL = {"hz": "Hz", "khz": "kHz", "mhz": "MHz", "ghz": "GHz"}
FORMATS = ("ri", "ma", "db")
ROW_ARITY = {3: 1, 9: 2}
NUMBER_FORMAT = "{:.14e}"
SOL_KINDS = ("open", "short", "load")
ERROR_TERM_BLOCKS = ("e00", "e11", "e01e10")


@dataclass
class TouchstoneDocument:
    """
    Parsed Touchstone v1 file. Frequencies are in Hz and data is complex with
    shape (points, ports, ports) whatever the file's unit and format were.
    """
    frequencies: np.ndarray
    data: np.ndarray
    frequency_unit: str = "Hz"
    data_format: str = "RI"
    reference: float = 50.0
    comments: List[str] = field(default_factory=list)

    @property
    def n_ports(self) -> int:
        return self.data.shape[1]

    def trace(self, out_port: Optional[int] = None, in_port: Optional[int] = None) -> ComplexTrace:
        """S11 of a one-port file, S21 of a two-port file unless ports are given."""
        if out_port is None:
            out_port, in_port = (1, 1) if self.n_ports == 1 else (2, 1)
        if not (1 <= out_port <= self.n_ports and 1 <= in_port <= self.n_ports):
            raise ParameterError(f"S{out_port}{in_port} does not exist in a {self.n_ports}-port file")
        if self.frequencies.size == 0:
            raise ParameterError("document has no data points")
        return ComplexTrace(FrequencyGrid(self.frequencies), self.data[:, out_port - 1, in_port - 1])

    @classmethod
    def from_trace(cls, trace: ComplexTrace, comments=(), reference: float = 50.0) -> "TouchstoneDocument":
        return cls(trace.frequencies.copy(), trace.values.reshape(-1, 1, 1).copy(),
                   reference=reference, comments=list(comments))


def _parse_option_line(tokens: List[str], line_no: int) -> Tuple[str, str, float]:
    unit, fmt, reference = "ghz", "ma", 50.0
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok in UNIT_SCALE:
            unit = tok
        elif tok in FORMATS:
            fmt = tok
        elif tok == "s":
            pass
        elif tok == "r":
            if i + 1 >= len(tokens):
                raise ParseError("reference resistance missing after 'R'", line_no)
            try:
                reference = float(tokens[i + 1])
            except ValueError:
                raise ParseError(f"bad reference resistance '{tokens[i + 1]}'", line_no)
            if reference <= 0:
                raise ParseError("reference resistance must be > 0", line_no)
            i += 1
        elif tok in ("y", "z", "g", "h"):
            raise ParseError(f"unsupported parameter type '{tok.upper()}'", line_no)
        else:
            raise ParseError(f"unknown option token '{tok}'", line_no)
        i += 1
    return unit, fmt, reference


def _to_complex(a: np.ndarray, b: np.ndarray, fmt: str) -> np.ndarray:
    if fmt == "ri":
        return a + 1j * b
    magnitude = a if fmt == "ma" else 10 ** (a / 20)
    return magnitude * np.exp(1j * np.deg2rad(b))


def parse_touchstone(text: str, n_ports: Optional[int] = None, line_offset: int = 0) -> TouchstoneDocument:
    """
    Parse Touchstone v1 text (one or two ports, RI/MA/DB, Hz..GHz).

    Args:
        text: file contents
        n_ports: expected port count, or None to infer from the first row
        line_offset: added to reported line numbers when text is embedded

    Returns:
        TouchstoneDocument with values normalized to complex and Hz
    """
    option = None
    comments: List[str] = []
    freqs: List[float] = []
    rows: List[List[float]] = []
    arity = None if n_ports is None else {1: 3, 2: 9}.get(n_ports)
    if n_ports is not None and arity is None:
        raise ParameterError(f"only 1- and 2-port files are supported, got {n_ports}")

    for index, raw in enumerate(text.splitlines(), start=1):
        line_no = index + line_offset
        body, sep, comment = raw.partition("!")
        if sep:
            comments.append(comment.rstrip("\r\n"))
        body = body.strip().lower()
        if not body:
            continue
        if body.startswith("#"):
            if option is not None:
                raise ParseError("duplicate option line", line_no)
            option = _parse_option_line(body[1:].split(), line_no)
            continue
        if option is None:
            option = ("ghz", "ma", 50.0)
        try:
            values = [float(tok) for tok in body.split()]
        except ValueError:
            raise ParseError(f"non-numeric value in '{raw.strip()}'", line_no)
        if not np.all(np.isfinite(values)):
            raise ParseError(f"non-finite value in '{raw.strip()}'", line_no)
        if arity is None:
            if len(values) not in ROW_ARITY:
                raise ParseError(f"row has {len(values)} columns; expected 3 (1-port) or 9 (2-port)",
                                 line_no)
            arity = len(values)
        elif len(values) != arity:
            raise ParseError(f"row has {len(values)} columns, expected {arity}", line_no)
        freq = values[0] * UNIT_SCALE[option[0]]
        if freqs and not freq > freqs[-1]:
            raise ParseError("frequencies must be strictly increasing", line_no)
        if not freq > 0:
            raise ParseError("frequency must be > 0", line_no)
        freqs.append(freq)
        rows.append(values[1:])

    unit, fmt, reference = option or ("ghz", "ma", 50.0)
    ports = ROW_ARITY[arity] if arity else (n_ports or 1)
    data = np.zeros((len(rows), ports, ports), dtype=complex)
    if rows:
        pairs = np.asarray(rows, dtype=float)
        values = _to_complex(pairs[:, 0::2], pairs[:, 1::2], fmt)
        if ports == 1:
            data[:, 0, 0] = values[:, 0]
        else:
            # v1 two-port column order: S11 S21 S12 S22
            data[:, 0, 0], data[:, 1, 0], data[:, 0, 1], data[:, 1, 1] = values.T
    return TouchstoneDocument(np.asarray(freqs, dtype=float), data, UNIT_LABEL[unit],
                              fmt.upper(), reference, comments)


def _fmt(x: float) -> str:
    return NUMBER_FORMAT.format(x)


def write_touchstone(doc: TouchstoneDocument) -> str:
    """Serialize as RI in Hz; parse(write(doc)) restores every value."""
    if doc.frequencies.size == 0:
        raise ParameterError("document has no data points")
    if doc.n_ports not in (1, 2):
        raise ParameterError(f"only 1- and 2-port documents can be written, got {doc.n_ports}")
    lines = [f"!{c}" for c in doc.comments]
    lines.append(f"# Hz S RI R {doc.reference:g}")
    for f, s in zip(doc.frequencies, doc.data):
        entries = [s[0, 0]] if doc.n_ports == 1 else [s[0, 0], s[1, 0], s[0, 1], s[1, 1]]
        cells = [_fmt(f)]
        for v in entries:
            cells += [_fmt(v.real), _fmt(v.imag)]
        lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"


def read_touchstone(path: PathLike) -> TouchstoneDocument:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"missing file {path}")
    suffix = path.suffix.lower()
    n_ports = {".s1p": 1, ".s2p": 2}.get(suffix)
    return parse_touchstone(path.read_text(), n_ports)


def read_trace(path: PathLike) -> ComplexTrace:
    return read_touchstone(path).trace()


def write_trace(trace: ComplexTrace, path: PathLike, comments=()) -> None:
    Path(path).write_text(write_touchstone(TouchstoneDocument.from_trace(trace, comments)))
    logger.info(f"Wrote {len(trace)} points to {path}")


def _split_blocks(text: str) -> Tuple[Dict[str, str], Dict[str, Tuple[str, int]]]:
    """Header key/value pairs and BEGIN <name> ... END blocks with their first line number."""
    header: Dict[str, str] = {}
    blocks: Dict[str, Tuple[str, int]] = {}
    current, start, body = None, 0, []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        word = stripped.split(maxsplit=1)
        key = word[0].upper() if word else ""
        if current is None:
            if not stripped or stripped.startswith("!"):
                continue
            if key == "BEGIN":
                if len(word) != 2:
                    raise ParseError("BEGIN needs a block name", line_no)
                current, start, body = word[1].strip().lower(), line_no, []
                if current in blocks:
                    raise ParseError(f"duplicate block '{current}'", line_no)
            elif key == "END":
                raise ParseError("END without BEGIN", line_no)
            elif len(word) == 2:
                header[word[0].lower()] = word[1].strip()
            else:
                raise ParseError(f"unexpected line '{stripped}'", line_no)
        elif key == "END":
            blocks[current] = ("\n".join(body), start)
            current = None
        else:
            body.append(raw)
    if current is not None:
        raise ParseError(f"block '{current}' is not closed", start)
    return header, blocks


def _format_blocks(header: Mapping[str, str], blocks: Mapping[str, ComplexTrace]) -> str:
    lines = [f"{key.upper()} {value}" for key, value in header.items() if value != ""]
    for name, trace in blocks.items():
        lines.append(f"BEGIN {name}")
        lines.append(write_touchstone(TouchstoneDocument.from_trace(trace)).rstrip("\n"))
        lines.append("END")
    return "\n".join(lines) + "\n"


def _block_traces(blocks: Mapping[str, Tuple[str, int]]) -> Dict[str, ComplexTrace]:
    traces = {}
    for name, (body, start) in blocks.items():
        doc = parse_touchstone(body, n_ports=1, line_offset=start)
        if doc.frequencies.size == 0:
            raise ParseError(f"block '{name}' has no data", start)
        traces[name] = doc.trace()
    return traces


def parse_calkit(text: str, conditioning_floor: Optional[float] = None) -> CalKit:
    """
    Calkit text: NAME/TEMPERATURE/DATE header lines, then one
    BEGIN <kind> ... END block of Touchstone rows per standard.
    """
    header, blocks = _split_blocks(text)
    for kind in SOL_KINDS:
        if kind not in blocks and len(blocks) < 3:
            raise ParseError(f"{kind} standard absent")
    if len(blocks) != 3:
        raise ParseError(f"calibration kit needs three standards, found {len(blocks)}")
    traces = _block_traces(blocks)
    metadata = {
        "name": header.get("name", "kit"),
        "temperature": header.get("temperature", "ambient"),
        "date": header.get("date", ""),
    }
    if conditioning_floor is not None:
        metadata["conditioning_floor"] = conditioning_floor
    return CalKit([CalStandard(kind, trace) for kind, trace in traces.items()], **metadata)


def load_calkit(path: PathLike, conditioning_floor: Optional[float] = None) -> CalKit:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"missing calibration kit {path}")
    kit = parse_calkit(path.read_text(), conditioning_floor)
    logger.info(f"Loaded calibration kit '{kit.name}' ({kit.temperature}) "
                f"with {len(kit.grid)} points from {path}")
    return kit


def load_calkit_files(paths: Mapping[str, PathLike], name: str = "kit",
                      temperature: str = "ambient",
                      conditioning_floor: Optional[float] = None) -> CalKit:
    """Kit from three loose one-port files keyed by standard kind."""
    extra = {} if conditioning_floor is None else {"conditioning_floor": conditioning_floor}
    standards = [CalStandard(kind, read_trace(p)) for kind, p in paths.items()]
    return CalKit(standards, name=name, temperature=temperature, **extra)


def format_calkit(kit: CalKit, include_date: bool = True) -> str:
    header = {"name": kit.name, "temperature": kit.temperature,
              "date": kit.date if include_date else ""}
    return _format_blocks(header, {s.kind: s.known_gamma for s in kit.standards})


def save_calkit(kit: CalKit, path: PathLike, include_date: bool = True) -> None:
    Path(path).write_text(format_calkit(kit, include_date))
    logger.info(f"Wrote calibration kit '{kit.name}' to {path}")


def format_error_terms(terms: OnePortErrorTerms) -> str:
    grid = terms.grid
    return _format_blocks({}, {
        "e00": ComplexTrace(grid, terms.e00),
        "e11": ComplexTrace(grid, terms.e11),
        "e01e10": ComplexTrace(grid, terms.e01e10),
    })


def parse_error_terms(text: str) -> OnePortErrorTerms:
    _, blocks = _split_blocks(text)
    for name in ERROR_TERM_BLOCKS:
        if name not in blocks:
            raise ParseError(f"error-terms block '{name}' absent")
    traces = _block_traces({name: blocks[name] for name in ERROR_TERM_BLOCKS})
    grid = traces["e00"].grid
    for name in ("e11", "e01e10"):
        if not traces[name].grid.same_as(grid):
            raise ParseError(f"error-terms block '{name}' is on a different grid")
    return OnePortErrorTerms(grid, traces["e00"].values, traces["e11"].values, traces["e01e10"].values)


def write_error_terms(terms: OnePortErrorTerms, path: PathLike) -> None:
    Path(path).write_text(format_error_terms(terms))
    logger.info(f"Wrote error terms over {len(terms.grid)} points to {path}")


def read_error_terms(path: PathLike) -> OnePortErrorTerms:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"missing error-terms file {path}")
    return parse_error_terms(path.read_text())


def load_power_sweep(path: PathLike) -> List[Tuple[float, ComplexTrace]]:
    """
    Read a power-sweep manifest CSV, highest power first.

    Either columns (power_dbm, file) referencing Touchstone files relative to
    the manifest, or long-form rows (power_dbm, frequency_hz, re, im).
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"missing power sweep {path}")
    try:
        frame = pd.read_csv(path, comment="#", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f"power sweep {path} is empty")
    if frame.empty:
        raise ParseError(f"power sweep {path} has no rows")
    frame.columns = [str(c).strip().lower() for c in frame.columns]
    if "power_dbm" not in frame.columns:
        raise ParseError("power sweep needs a 'power_dbm' column", 1)

    sweep: List[Tuple[float, ComplexTrace]] = []
    if "file" in frame.columns:
        duplicated = frame["power_dbm"].duplicated()
        if duplicated.any():
            row = int(np.flatnonzero(duplicated.to_numpy())[0])
            # header is line 1
            raise ParseError(f"duplicate power {frame['power_dbm'].iloc[row]} dBm", row + 2)
        for power, name in zip(frame["power_dbm"], frame["file"]):
            trace_path = path.parent / str(name).strip()
            if not trace_path.exists():
                raise ParseError(f"missing trace file {trace_path}")
            sweep.append((float(power), read_trace(trace_path)))
    elif {"frequency_hz", "re", "im"} <= set(frame.columns):
        if frame.duplicated(subset=["power_dbm", "frequency_hz"]).any():
            raise ParseError("duplicate (power, frequency) rows in power sweep")
        for power, group in frame.groupby("power_dbm", sort=False):
            group = group.sort_values("frequency_hz")
            grid = FrequencyGrid(group["frequency_hz"].to_numpy(dtype=float))
            values = group["re"].to_numpy(dtype=float) + 1j * group["im"].to_numpy(dtype=float)
            sweep.append((float(power), ComplexTrace(grid, values)))
    else:
        raise ParseError("power sweep needs either a 'file' column or frequency_hz/re/im columns", 1)
    sweep.sort(key=lambda item: -item[0])
    logger.info(f"Loaded power sweep of {len(sweep)} traces from {path}")
    return sweep


def write_table(frame: pd.DataFrame, path: PathLike) -> None:
    """Result or report table as CSV with fixed float formatting."""
    frame.to_csv(path, index=False, float_format="%.15g")
    logger.info(f"Wrote {len(frame)} rows to {path}")


def read_table(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"missing table {path}")
    try:
        return pd.read_csv(path, keep_default_na=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f"table {path} is empty")

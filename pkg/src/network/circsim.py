"""
Circuit synthesis for a capacitively coupled parallel LCR resonator measured
in hanger mode (shunt on a through feedline, optional wirebond inductors) or
in reflection mode (behind a three-port circulator with finite isolation).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from src.calibration.onecal import OnePortErrorTerms
from src.errors import NumericError, ParameterError
from src.network.rfnet import (
    ComplexTrace,
    FrequencyGrid,
    SMatrix,
    abcd_to_s,
    cascade,
    component_abcd,
    connect_s,
    reflection_of_impedance,
    renormalize_s,
    require_aligned,
    terminate_3port,
)

logger = logging.getLogger(__name__)

HANGER = "hanger"
REFLECTION = "reflection"


@dataclass(frozen=True)
class LineSpec:
    """Lossless TEM line: characteristic impedance and length at f_ref."""
    z0: float = 50.0
    length_deg: float = 0.0
    f_ref: float = 6e9

    def abcd(self, f: np.ndarray):
        return component_abcd("line", {"z0": self.z0, "length_deg": self.length_deg,
                                       "f_ref": self.f_ref}, f)


@dataclass(frozen=True)
class CircuitSpec:
    """
    Full parameterization of the simulated measurement circuits.

    Lines are keyed 'tl1'..'tl4'. Reflection mode uses tl1 (input), tl2
    (output) and tl3 (circulator to resonator); hanger mode uses tl3 and tl4
    on either side of the coupling point. Missing lines are 50 Ohm and zero length.
    """
    mode: str = REFLECTION
    z1: float = 50.0
    z2: float = 50.0
    lines: Dict[str, LineSpec] = field(default_factory=dict)
    l_res: float = 1.2e-9
    c_res: float = 580e-15
    r_res: float = 1e8
    c_couple: float = 1e-15
    circulator_isolation_db: float = 300.0
    wirebond_l1: float = 0.0
    wirebond_l2: float = 0.0
    port_z0: float = 50.0

    def __post_init__(self):
        if self.mode not in (HANGER, REFLECTION):
            raise ParameterError(f"mode must be '{HANGER}' or '{REFLECTION}', got '{self.mode}'")
        positive = {
            "z1": self.z1, "z2": self.z2, "l_res": self.l_res, "c_res": self.c_res,
            "r_res": self.r_res, "c_couple": self.c_couple, "port_z0": self.port_z0,
        }
        for name, value in positive.items():
            if not np.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} must be > 0, got {value}")
        if self.circulator_isolation_db < 0:
            raise ParameterError("circulator isolation must be >= 0 dB")
        if self.wirebond_l1 < 0 or self.wirebond_l2 < 0:
            raise ParameterError("wirebond inductance must be >= 0")
        for name, line in self.lines.items():
            if name not in ("tl1", "tl2", "tl3", "tl4"):
                raise ParameterError(f"unknown line '{name}'")
            if line.z0 <= 0 or line.f_ref <= 0:
                raise ParameterError(f"line {name} needs z0 > 0 and f_ref > 0")

    def line(self, name: str) -> LineSpec:
        return self.lines.get(name, LineSpec())

    def with_line(self, name: str, **changes) -> "CircuitSpec":
        lines = dict(self.lines)
        lines[name] = replace(self.line(name), **changes)
        return replace(self, lines=lines)


@dataclass(frozen=True)
class CirculatorModel:
    """Ideal-match circulator, circulation 1->2->3->1, real positive leakage."""
    isolation_db: float = 300.0

    @property
    def leakage(self) -> float:
        return 10 ** (-self.isolation_db / 20)

    def s_matrix(self, n_points: int, z0: float = 50.0) -> SMatrix:
        eps = self.leakage
        base = np.array([
            [0, eps, 1],
            [1, 0, eps],
            [eps, 1, 0],
        ], dtype=complex)
        return SMatrix(np.broadcast_to(base, (n_points, 3, 3)).copy(), (z0, z0, z0))


def _omega(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ParameterError("frequency must be > 0")
    return 2 * np.pi * f


def lcr_branch_impedance(spec: CircuitSpec, f) -> np.ndarray:
    """Coupling capacitor in series with the parallel LCR tank."""
    w = _omega(f)
    tank_admittance = 1 / spec.r_res + 1 / (1j * w * spec.l_res) + 1j * w * spec.c_res
    return 1 / (1j * w * spec.c_couple) + 1 / tank_admittance


def designed_qi(r: float, l: float, c: float) -> float:
    """Internal quality factor of a parallel LCR tank, R*sqrt(C/L)."""
    if min(r, l, c) <= 0:
        raise ParameterError("R, L and C must be positive")
    return float(r * np.sqrt(c / l))


def resonance_frequency(spec: CircuitSpec) -> float:
    """Loaded resonance, the coupling capacitor adding to the tank capacitance."""
    return float(1 / (2 * np.pi * np.sqrt(spec.l_res * (spec.c_res + spec.c_couple))))


def estimate_q(spec: CircuitSpec) -> Dict[str, float]:
    """Matched-environment estimates of Qi, Qc and Q used to size sweep windows."""
    w0 = 2 * np.pi * resonance_frequency(spec)
    c_total = spec.c_res + spec.c_couple
    z_env = spec.port_z0 / 2 if spec.mode == HANGER else spec.port_z0
    qc = c_total / (w0 * spec.c_couple ** 2 * z_env)
    qi = spec.r_res * w0 * c_total
    return {"qi": qi, "qc": qc, "q": 1 / (1 / qi + 1 / qc)}


def centered_grid(spec: CircuitSpec, n_linewidths: float = 20.0,
                  points: int = 2001) -> FrequencyGrid:
    """Uniform grid over +/- n_linewidths around the estimated resonance."""
    f0 = resonance_frequency(spec)
    linewidth = f0 / estimate_q(spec)["q"]
    return FrequencyGrid.linspace(f0 - n_linewidths * linewidth,
                                  f0 + n_linewidths * linewidth, points)


def simulate_hanger(spec: CircuitSpec, grid: FrequencyGrid) -> ComplexTrace:
    """
    Transmission past a side-coupled resonator:
    series(jwL1) . TL3 . shunt(1/Z_branch) . TL4 . series(jwL2).
    """
    if spec.mode != HANGER:
        raise ParameterError("simulate_hanger needs a hanger-mode CircuitSpec")
    f = grid.points
    w = _omega(f)
    branch = lcr_branch_impedance(spec, f)
    chain = cascade([
        component_abcd("series", {"z": 1j * w * spec.wirebond_l1}, f),
        spec.line("tl3").abcd(f),
        component_abcd("shunt", {"y": 1 / branch}, f),
        spec.line("tl4").abcd(f),
        component_abcd("series", {"z": 1j * w * spec.wirebond_l2}, f),
    ])
    s = abcd_to_s(chain, spec.z1, spec.z2)
    logger.debug(f"Simulated hanger trace over {len(grid)} points")
    return ComplexTrace(grid, s.entry(2, 1))


def resonator_reflection(spec: CircuitSpec, grid: FrequencyGrid) -> np.ndarray:
    """Reflection of the resonator seen at the circulator's device port through TL3."""
    f = grid.points
    tl3 = spec.line("tl3")
    gamma_load = reflection_of_impedance(lcr_branch_impedance(spec, f), tl3.z0)
    phase = np.deg2rad(tl3.length_deg) * f / tl3.f_ref
    gamma_in = gamma_load * np.exp(-2j * phase)
    if tl3.z0 == spec.port_z0:
        return gamma_in
    one_port = SMatrix(gamma_in[:, np.newaxis, np.newaxis], (tl3.z0,))
    return renormalize_s(one_port, (spec.port_z0,)).s[:, 0, 0]


def reflection_response(spec: CircuitSpec, grid: FrequencyGrid, gamma) -> ComplexTrace:
    """
    Input-to-output trace of the reflection fixture when the circulator's
    device port is loaded with `gamma` (scalar or one value per grid point).
    """
    n = len(grid)
    f = grid.points
    z = spec.port_z0
    circulator = CirculatorModel(spec.circulator_isolation_db).s_matrix(n, z)
    reduced = terminate_3port(circulator, 2, np.broadcast_to(np.asarray(gamma, dtype=complex), (n,)))
    tl1 = abcd_to_s(spec.line("tl1").abcd(f), z, z)
    tl2 = abcd_to_s(spec.line("tl2").abcd(f), z, z)
    assembled = connect_s(connect_s(tl1, reduced), tl2)
    measured = renormalize_s(assembled, (spec.z1, spec.z2))
    return ComplexTrace(grid, measured.entry(2, 1))


def simulate_reflection(spec: CircuitSpec, grid: FrequencyGrid) -> ComplexTrace:
    """Resonator measured in reflection through the leaky circulator."""
    if spec.mode != REFLECTION:
        raise ParameterError("simulate_reflection needs a reflection-mode CircuitSpec")
    trace = reflection_response(spec, grid, resonator_reflection(spec, grid))
    logger.debug(f"Simulated reflection trace over {len(grid)} points, "
                 f"isolation {spec.circulator_isolation_db} dB")
    return trace


def simulate(spec: CircuitSpec, grid: Optional[FrequencyGrid] = None) -> ComplexTrace:
    """Dispatch on mode; defaults to the centered 2,001-point grid."""
    grid = grid or centered_grid(spec)
    if spec.mode == HANGER:
        return simulate_hanger(spec, grid)
    return simulate_reflection(spec, grid)


def embed_error(terms: OnePortErrorTerms, actual: ComplexTrace) -> ComplexTrace:
    """Forward one-port error model: S11m = e00 + e01e10*S11a/(1 - e11*S11a)."""
    require_aligned(terms.grid, actual)
    den = 1 - terms.e11 * actual.values
    if np.any(den == 0):
        raise NumericError("1 - e11*S11a vanishes", int(np.flatnonzero(den == 0)[0]))
    return actual.with_values(terms.e00 + terms.e01e10 * actual.values / den)

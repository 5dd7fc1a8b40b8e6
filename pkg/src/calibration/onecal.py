"""
Data-based one-port short-open-load calibration.

The error adapter between the instrument and the reference plane is

    S11m = e00 + e01e10 * S11a / (1 - e11 * S11a)

and is solved per frequency from three standards whose actual reflections are
given as measured data tables.
"""

import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.errors import ConditioningError, NumericError, ParameterError, RangeError
from src.network.rfnet import ComplexTrace, FrequencyGrid, require_aligned

logger = logging.getLogger(__name__)

STANDARD_KINDS = ("open", "short", "load", "data")
DEFAULT_CONDITIONING_FLOOR = 0.1
REPORT_FLOOR_DB = -200.0
# Largest acceptable condition number of the per-frequency 3x3 system
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class OnePortErrorTerms:
    """Directivity e00, source match e11 and reflection tracking e01e10 per frequency."""
    grid: FrequencyGrid
    e00: np.ndarray
    e11: np.ndarray
    e01e10: np.ndarray
    residual: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.grid)
        for name in ("e00", "e11", "e01e10"):
            values = np.broadcast_to(np.asarray(getattr(self, name), dtype=complex), (n,)).copy()
            if not np.all(np.isfinite(values)):
                raise ParameterError(f"{name} must be finite")
            object.__setattr__(self, name, values)
        if np.any(self.e01e10 == 0):
            index = int(np.flatnonzero(self.e01e10 == 0)[0])
            raise NumericError("reflection tracking e01e10 vanishes", index)

    @classmethod
    def identity(cls, grid: FrequencyGrid) -> "OnePortErrorTerms":
        return cls(grid, 0.0, 0.0, 1.0)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual is not None else 0.0


@dataclass(frozen=True, eq=False)
class CalStandard:
    """A standard defined by its measured actual reflection."""
    kind: str
    known_gamma: ComplexTrace

    def __post_init__(self):
        if self.kind not in STANDARD_KINDS:
            raise ParameterError(f"unknown standard kind '{self.kind}'")
        if np.any(np.abs(self.known_gamma.values) > 1 + 1e-6):
            raise ParameterError(f"{self.kind} standard is not passive (|gamma| > 1)")

    @property
    def grid(self) -> FrequencyGrid:
        return self.known_gamma.grid


@dataclass(frozen=True, eq=False)
class CalKit:
    """Three standards with distinct kinds sampled on one grid, plus metadata."""
    standards: List[CalStandard]
    name: str = "kit"
    temperature: str = "ambient"
    date: str = ""
    conditioning_floor: float = DEFAULT_CONDITIONING_FLOOR

    def __post_init__(self):
        standards = list(self.standards)
        if len(standards) != 3:
            raise ParameterError(f"a calibration kit needs three standards, got {len(standards)}")
        kinds = [s.kind for s in standards]
        if len(set(kinds)) != 3:
            raise ParameterError(f"standard kinds must be distinct, got {kinds}")
        require_aligned(*[s.known_gamma for s in standards])
        object.__setattr__(self, "standards", standards)
        self._check_conditioning()

    def _check_conditioning(self) -> None:
        if self.conditioning_floor <= 0:
            return
        gammas = [s.known_gamma.values for s in self.standards]
        separation = np.min([np.abs(gammas[i] - gammas[j])
                             for i, j in ((0, 1), (0, 2), (1, 2))], axis=0)
        poor = separation < self.conditioning_floor
        if np.any(poor):
            index = int(np.flatnonzero(poor)[0])
            raise ConditioningError(
                f"standards separated by only {separation[index]:.3g} "
                f"(floor {self.conditioning_floor})",
                frequency=float(self.grid.points[index]))

    @classmethod
    def ideal(cls, grid: FrequencyGrid, **metadata) -> "CalKit":
        """Flat open (+1), short (-1) and load (0) definitions."""
        n = len(grid)
        return cls([
            CalStandard("open", ComplexTrace(grid, np.ones(n))),
            CalStandard("short", ComplexTrace(grid, -np.ones(n))),
            CalStandard("load", ComplexTrace(grid, np.zeros(n))),
        ], **metadata)

    @property
    def grid(self) -> FrequencyGrid:
        return self.standards[0].grid

    @property
    def kinds(self) -> List[str]:
        return [s.kind for s in self.standards]

    def standard(self, kind: str) -> CalStandard:
        for std in self.standards:
            if std.kind == kind:
                return std
        raise ParameterError(f"{kind} standard absent")

    def resample(self, grid: FrequencyGrid) -> "CalKit":
        return CalKit([resample_standard(s, grid) for s in self.standards], self.name,
                      self.temperature, self.date, self.conditioning_floor)


def _check_band(source: FrequencyGrid, target: FrequencyGrid) -> None:
    lo, hi = source.points[0], source.points[-1]
    # tolerate rounding at the band edges
    slack = 1e-12 * hi
    outside = (target.points < lo - slack) | (target.points > hi + slack)
    if np.any(outside):
        bad = target.points[np.flatnonzero(outside)[0]]
        raise RangeError(
            f"{bad / 1e9:.6g} GHz is outside the calibration band "
            f"{lo / 1e9:.6g}-{hi / 1e9:.6g} GHz")


def _interp_complex(source: FrequencyGrid, values: np.ndarray, target: FrequencyGrid) -> np.ndarray:
    if source.same_as(target):
        return values.copy()
    _check_band(source, target)
    x = np.clip(target.points, source.points[0], source.points[-1])
    if len(source) == 1:
        return np.full(len(target), values[0], dtype=complex)
    return np.interp(x, source.points, values.real) + 1j * np.interp(x, source.points, values.imag)


def resample_standard(std: CalStandard, grid: FrequencyGrid) -> CalStandard:
    """Linear interpolation of Re and Im onto `grid`; extrapolation is refused."""
    values = _interp_complex(std.grid, std.known_gamma.values, grid)
    return CalStandard(std.kind, ComplexTrace(grid, values))


def resample_terms(terms: OnePortErrorTerms, grid: FrequencyGrid) -> OnePortErrorTerms:
    """Interpolate error terms onto another grid inside their band."""
    if terms.grid.same_as(grid):
        return terms
    return OnePortErrorTerms(
        grid,
        _interp_complex(terms.grid, terms.e00, grid),
        _interp_complex(terms.grid, terms.e11, grid),
        _interp_complex(terms.grid, terms.e01e10, grid),
    )


def solve_sol(measured: Union[Sequence[ComplexTrace], Mapping[str, ComplexTrace]],
              kit: CalKit) -> OnePortErrorTerms:
    """
    Solve the error adapter from the raw measurements of the kit's standards.

    Args:
        measured: three raw traces, in kit order or keyed by standard kind
        kit: the actual reflections of the standards

    Returns:
        OnePortErrorTerms with the per-frequency solver residual attached
    """
    if isinstance(measured, Mapping):
        missing = [k for k in kit.kinds if k not in measured]
        if missing:
            raise ParameterError(f"no measurement for standard(s) {missing}")
        measured = [measured[k] for k in kit.kinds]
    if len(measured) != 3:
        raise ParameterError(f"three measured standards are required, got {len(measured)}")
    grid = require_aligned(kit.grid, *measured)

    gamma_m = np.stack([m.values for m in measured], axis=1)
    gamma_a = np.stack([s.known_gamma.values for s in kit.standards], axis=1)
    # rows: Gm = e00 + Ga*Gm*e11 - Ga*delta, unknowns (e00, e11, delta)
    system = np.stack([np.ones_like(gamma_m), gamma_a * gamma_m, -gamma_a], axis=2)

    cond = np.linalg.cond(system)
    poor = ~np.isfinite(cond) | (cond > MAX_CONDITION)
    if np.any(poor):
        index = int(np.flatnonzero(poor)[0])
        raise ConditioningError(f"SOL system is singular (condition {cond[index]:.3g})",
                                frequency=float(grid.points[index]))
    solution = np.linalg.solve(system, gamma_m[..., np.newaxis])[..., 0]
    residual = np.max(np.abs(np.einsum("nij,nj->ni", system, solution) - gamma_m), axis=1)

    e00, e11, delta = solution[:, 0], solution[:, 1], solution[:, 2]
    e01e10 = e00 * e11 - delta
    logger.info(f"Solved SOL error adapter over {len(grid)} points, "
                f"max residual {np.max(residual):.3e}")
    return OnePortErrorTerms(grid, e00, e11, e01e10, residual=residual)


def apply_cal(terms: OnePortErrorTerms, measured: ComplexTrace) -> ComplexTrace:
    """De-embed: S11a = (S11m - e00) / (e01e10 + e11*(S11m - e00))."""
    require_aligned(terms.grid, measured)
    shifted = measured.values - terms.e00
    den = terms.e01e10 + terms.e11 * shifted
    if np.any(den == 0):
        raise NumericError("calibration denominator vanishes", int(np.flatnonzero(den == 0)[0]))
    return measured.with_values(shifted / den)


def _to_db(values: np.ndarray, floor_db: float) -> np.ndarray:
    magnitude = np.abs(values)
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(magnitude)
    return np.where(magnitude > 0, np.maximum(db, floor_db), floor_db)


def error_term_report(terms: OnePortErrorTerms, floor_db: float = REPORT_FLOOR_DB) -> pd.DataFrame:
    """Magnitudes of the three error terms in dB, one row per frequency."""
    return pd.DataFrame({
        "frequency_hz": terms.grid.points,
        "e00_db": _to_db(terms.e00, floor_db),
        "e11_db": _to_db(terms.e11, floor_db),
        "e01e10_db": _to_db(terms.e01e10, floor_db),
    })

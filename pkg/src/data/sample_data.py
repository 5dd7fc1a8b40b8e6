"""Circuit presets and synthetic data for simulations, tests and demos."""

import logging
from dataclasses import fields, replace
from typing import Callable, Dict, Optional

import numpy as np

from src.calibration.onecal import OnePortErrorTerms
from src.errors import ParameterError
from src.fitting.resfit import resonance_model
from src.fitting.tlsloss import LossSweep, TlsParams, tls_loss
from src.network.circsim import HANGER, REFLECTION, CircuitSpec, LineSpec, reflection_response
from src.network.rfnet import ComplexTrace, FrequencyGrid

logger = logging.getLogger(__name__)

QUARTER_WAVE = 90.0
F_REF = 6e9


def _circulator_leak(isolation_db: float = 300.0, **_) -> CircuitSpec:
    """Matched reflection fixture: 90 degree input/output lines, resonator at the circulator."""
    return CircuitSpec(
        mode=REFLECTION,
        lines={"tl1": LineSpec(50.0, QUARTER_WAVE, F_REF), "tl2": LineSpec(50.0, QUARTER_WAVE, F_REF),
               "tl3": LineSpec(50.0, 0.0, F_REF)},
        r_res=1e8,
        circulator_isolation_db=isolation_db,
    )


def _mismatched_reflection(l3_deg: float = 0.0, **_) -> CircuitSpec:
    return replace(_circulator_leak(), z1=20.0, z2=120.0).with_line("tl3", length_deg=l3_deg)


def _wirebond_hanger(l3_deg: float = QUARTER_WAVE, l4_deg: float = QUARTER_WAVE, **_) -> CircuitSpec:
    return CircuitSpec(
        mode=HANGER,
        lines={"tl3": LineSpec(50.0, l3_deg, F_REF), "tl4": LineSpec(50.0, l4_deg, F_REF)},
        r_res=1e12,
        wirebond_l1=0.5e-9,
        wirebond_l2=1.5e-9,
    )


def _wirebond_hanger_offset(l3_deg: float = 107.0, l4_deg: float = 17.0, **_) -> CircuitSpec:
    return _wirebond_hanger(l3_deg, l4_deg)


PRESETS: Dict[str, Callable[..., CircuitSpec]] = {
    "circulator-leak": _circulator_leak,
    "mismatched-reflection": _mismatched_reflection,
    "wirebond-hanger": _wirebond_hanger,
    "wirebond-hanger-offset": _wirebond_hanger_offset,
    # short names for the reference reproduction runs
    "table1": _circulator_leak,
    "fig2": _mismatched_reflection,
    "fig8b": _wirebond_hanger,
}

_SPEC_FIELDS = {f.name for f in fields(CircuitSpec)}


def preset(name: str, **overrides) -> CircuitSpec:
    """
    Build a named circuit, then apply overrides.

    Args:
        name: one of PRESETS
        overrides: isolation_db, l3_deg, l4_deg, or any CircuitSpec field

    Returns:
        CircuitSpec ready for simulate()
    """
    if name not in PRESETS:
        raise ParameterError(f"unknown preset '{name}'; choose from {sorted(PRESETS)}")
    shaping = {k: overrides.pop(k) for k in ("isolation_db", "l3_deg", "l4_deg") if k in overrides}
    spec = PRESETS[name](**shaping)
    unknown = set(overrides) - _SPEC_FIELDS
    if unknown:
        raise ParameterError(f"unknown circuit parameter(s) {sorted(unknown)}")
    spec = replace(spec, **overrides)
    logger.debug(f"Preset {name}: {spec}")
    return spec


def fixture_standard_measurements(spec: CircuitSpec, grid: FrequencyGrid) -> Dict[str, ComplexTrace]:
    """Raw SOL standard traces seen through the same reflection fixture as the resonator."""
    return {
        "open": reflection_response(spec, grid, 1.0),
        "short": reflection_response(spec, grid, -1.0),
        "load": reflection_response(spec, grid, 0.0),
    }


class SyntheticDataGenerator:
    """Seeded generator of closed-form traces, loss sweeps and error adapters."""

    def __init__(self, seed: Optional[int] = 0):
        self.rng = np.random.default_rng(seed)

    def complex_noise(self, n: int, snr_db: float) -> np.ndarray:
        sigma = 10 ** (-snr_db / 20) / np.sqrt(2)
        return self.rng.normal(0, sigma, n) + 1j * self.rng.normal(0, sigma, n)

    def resonance_trace(self, f0: float = 6e9, q: float = 1e5, qc: float = 2e5, theta: float = 0.0,
                        mode: str = HANGER, points: int = 2001, n_linewidths: float = 20.0,
                        delay: float = 0.0, baseline: complex = 1.0,
                        snr_db: Optional[float] = None) -> ComplexTrace:
        """Closed-form hanger or reflection trace with optional environment and noise."""
        weight = {HANGER: 1.0, REFLECTION: 2.0}.get(mode)
        if weight is None:
            raise ParameterError(f"mode must be '{HANGER}' or '{REFLECTION}'")
        linewidth = f0 / q
        grid = FrequencyGrid.linspace(f0 - n_linewidths * linewidth, f0 + n_linewidths * linewidth, points)
        f = grid.points
        values = baseline * np.exp(-2j * np.pi * f * delay) * resonance_model(f, f0, q, qc, theta, weight)
        if snr_db is not None:
            values = values + self.complex_noise(points, snr_db)
        return ComplexTrace(grid, values)

    def loss_sweep(self, params: TlsParams, n_min: float = 1.0, n_max: float = 1e8,
                   points: int = 25, noise: float = 0.0) -> LossSweep:
        """1/Qi on a log-spaced photon-number axis with multiplicative noise."""
        n = np.logspace(np.log10(n_min), np.log10(n_max), points)
        loss = tls_loss(params, n)
        if noise > 0:
            loss = loss * (1 + noise * self.rng.standard_normal(points))
        return LossSweep(n, loss)

    def error_terms(self, grid: FrequencyGrid) -> OnePortErrorTerms:
        """Smooth random adapter with |e00| < 0.3, |e11| < 0.5 and |e01e10| in [0.3, 1]."""
        n = len(grid)
        phase = np.linspace(0, 1, n)

        def smooth(max_mag, min_mag=0.0):
            mag = self.rng.uniform(min_mag, max_mag)
            return mag * np.exp(1j * (self.rng.uniform(-np.pi, np.pi) + self.rng.uniform(-2, 2) * phase))

        return OnePortErrorTerms(grid, smooth(0.3), smooth(0.5), smooth(1.0, 0.3))

    def passive_trace(self, grid: FrequencyGrid) -> ComplexTrace:
        n = len(grid)
        magnitude = self.rng.uniform(0, 1, n)
        return ComplexTrace(grid, magnitude * np.exp(1j * self.rng.uniform(-np.pi, np.pi, n)))

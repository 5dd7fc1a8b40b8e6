"""
Resonator parameter extraction from complex transmission/reflection traces.

Pipeline: preprocess (delay and complex baseline removal so the off-resonance
point maps to 1+0j) -> algebraic circle fit -> arctangent phase fit ->
diameter-based Qc/Qi -> joint nonlinear refinement against the closed-form
resonance model. Hanger traces use a unit Lorentzian weight and optional
diameter correction; reflection traces use weight 2.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.constants import hbar
from scipy.optimize import least_squares

from src.errors import FitError, ParameterError, RangeError
from src.network.rfnet import ComplexTrace, FrequencyGrid

logger = logging.getLogger(__name__)

HANGER_DCM = "hanger_dcm"
HANGER_NAIVE = "hanger_naive"
REFLECTION = "reflection"

DEFAULT_EDGE_FRACTION = 0.2
MIN_SPAN_LINEWIDTHS = 6.0
MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
# rms wrapped-phase residual above which the arctangent model is rejected
MAX_PHASE_RMS = 0.3
THETA_BOUND_SLACK = 1e-3


@dataclass
class ResonatorFitResult:
    """Output of every resonator fit; q_internal may be negative (flagged)."""
    f0: float
    q_total: float
    q_coupling: float
    q_internal: float
    theta: float
    baseline_a: float
    mode: str
    correction: str = "none"
    diameter: float = float("nan")
    delay: float = 0.0
    baseline_phase: float = 0.0
    reference_frequency: float = 0.0
    errors: Dict[str, float] = field(default_factory=dict)
    residual_rms: float = 0.0
    pathology: bool = False
    pathology_reason: str = ""

    def __post_init__(self):
        if not self.q_total > 0 or not self.q_coupling > 0:
            raise FitError(f"fit produced non-positive Q ({self.q_total:.4g}) "
                           f"or Qc ({self.q_coupling:.4g})")
        self.theta = float(np.angle(np.exp(1j * self.theta)))

    def as_row(self) -> Dict[str, object]:
        row = {
            "mode": self.mode,
            "correction": self.correction,
            "f0_hz": self.f0,
            "q_total": self.q_total,
            "q_coupling": self.q_coupling,
            "q_internal": self.q_internal,
            "theta_rad": self.theta,
            "baseline_a": self.baseline_a,
            "delay_s": self.delay,
        }
        for name in ("f0", "q_total", "q_coupling", "q_internal", "theta"):
            row[f"{name}_err"] = self.errors.get(name, float("nan"))
        row["pathology"] = self.pathology
        row["pathology_reason"] = self.pathology_reason
        return row


@dataclass
class PreprocessResult:
    """Normalized trace plus the environment removed from it."""
    trace: ComplexTrace
    delay: float
    baseline_a: float
    off_resonance_point: complex
    f0: float
    q_total: float
    reference_frequency: float


class PhaseFitResult(NamedTuple):
    f0: float
    q_total: float
    theta0: float
    rms: float
    # +1 when the phase falls through resonance, -1 for a frequency-mirrored trace
    direction: int = 1


@dataclass
class PhotonNumberParams:
    """Inputs of the average intracavity photon number conversion."""
    z0: float
    zr: float
    q_total: float
    q_coupling: float
    f0: float
    p_app: float

    def __post_init__(self):
        for name in ("z0", "zr", "q_total", "q_coupling", "f0"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0")
        if self.p_app < 0:
            raise ParameterError("applied power must be >= 0 W")


def resonance_model(f: np.ndarray, f0: float, q: float, qc: float, theta: float,
                    weight: float = 1.0) -> np.ndarray:
    """1 - weight*(Q/Qc) e^{j theta} / (1 + 2jQ (f - f0)/f0)."""
    f = np.asarray(f, dtype=float)
    return 1 - weight * (q / qc) * np.exp(1j * theta) / (1 + 2j * q * (f - f0) / f0)


def eq1_model(f, f0, q, qc, theta=0.0) -> np.ndarray:
    """Hanger-mode resonance with rotation theta."""
    return resonance_model(f, f0, q, qc, theta, 1.0)


def eq4_model(f, f0, q, qc, theta=0.0) -> np.ndarray:
    """Reflection-mode resonance; twice the hanger Lorentzian weight."""
    return resonance_model(f, f0, q, qc, theta, 2.0)


def circle_fit(points: Sequence[complex]) -> Tuple[complex, float, float]:
    """
    Algebraic least-squares circle through complex points.

    Returns:
        (center, radius, rms geometric residual)
    """
    z = np.asarray(points, dtype=complex).ravel()
    if z.size < 3:
        raise FitError("circle fit needs at least three points")
    mx, my = z.real.mean(), z.imag.mean()
    scale = np.sqrt(np.mean((z.real - mx) ** 2 + (z.imag - my) ** 2))
    if not scale > 0:
        raise FitError("circle fit points are coincident")
    u = (z.real - mx) / scale
    v = (z.imag - my) / scale
    design = np.column_stack([u, v, np.ones_like(u)])
    coeffs, _, _, sv = np.linalg.lstsq(design, -(u ** 2 + v ** 2), rcond=None)
    if sv.size < 3 or sv[-1] < 1e-10 * sv[0]:
        raise FitError("circle fit points are collinear")
    cu, cv = -coeffs[0] / 2, -coeffs[1] / 2
    r2 = cu ** 2 + cv ** 2 - coeffs[2]
    if not r2 > 0:
        raise FitError("circle fit is degenerate")
    center = complex(mx + scale * cu, my + scale * cv)
    radius = float(scale * np.sqrt(r2))
    rms = float(np.sqrt(np.mean((np.abs(z - center) - radius) ** 2)))
    return center, radius, rms


def _wrap(angle: np.ndarray) -> np.ndarray:
    return np.angle(np.exp(1j * angle))


def _phase_model(f, theta0, q, f0, direction=1):
    return theta0 + direction * 2 * np.arctan(2 * q * (1 - f / f0))


def phase_fit(trace: ComplexTrace, center: complex, f0_guess: Optional[float] = None,
              q_guess: Optional[float] = None) -> PhaseFitResult:
    """
    Fit theta(f) = theta0 + 2 arctan(2Q(1 - f/f0)) to the angle of the trace
    about the circle center. The sign of the arctan term follows the sweep
    direction, so conjugated traces fit with the same Q.
    """
    f = trace.frequencies
    w = trace.values - center
    phase = np.unwrap(np.angle(w))
    direction = 1 if phase[-1] <= phase[0] else -1
    if f0_guess is None or q_guess is None:
        smooth = np.convolve(phase, np.ones(5) / 5, mode="same") if phase.size > 10 else phase
        slope = np.gradient(smooth, f)
        interior = slice(2, -2) if phase.size > 10 else slice(None)
        idx = int(np.argmax(np.abs(slope[interior]))) + (2 if phase.size > 10 else 0)
        if f0_guess is None:
            f0_guess = float(f[idx])
        if q_guess is None:
            q_guess = max(abs(slope[idx]) * f0_guess / 4, 1.0)
    idx0 = int(np.argmin(np.abs(f - f0_guess)))
    theta0_guess = float(np.angle(w[idx0]))
    linewidth = f0_guess / q_guess

    def unpack(p):
        return p[0], q_guess * np.exp(p[1]), f0_guess + p[2] * linewidth

    def residuals(p):
        theta0, q, f0 = unpack(p)
        return _wrap(np.angle(w) - _phase_model(f, theta0, q, f0, direction))

    result = least_squares(residuals, x0=[theta0_guess, 0.0, 0.0], method="lm",
                           xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=100 * MAX_ITERATIONS)
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    if not result.success or rms > MAX_PHASE_RMS:
        raise FitError("phase fit did not converge", residual=rms)
    theta0, q, f0 = unpack(result.x)
    if not (f[0] <= f0 <= f[-1]):
        raise FitError(f"phase fit placed f0 = {f0:.6e} Hz outside the trace", residual=rms)
    return PhaseFitResult(float(f0), float(q), float(_wrap(theta0)), rms, direction)


def _edge_masks(n: int, edge_fraction: float) -> Tuple[np.ndarray, np.ndarray]:
    n_edge = max(int(round(edge_fraction * n)), 3)
    left = np.zeros(n, dtype=bool)
    right = np.zeros(n, dtype=bool)
    left[:n_edge] = True
    right[-n_edge:] = True
    return left, right


def _edge_delay(f, z, left, right, f0, linewidth, fc) -> float:
    """Weighted linear fit of unwrapped edge phase with a Lorentzian-tail term."""
    phase = np.unwrap(np.angle(z))
    edges = left | right
    columns = [left[edges].astype(float), right[edges].astype(float),
               -2 * np.pi * (f[edges] - fc) * 1e-9]
    offset = f[edges] - f0
    if np.all(np.abs(offset) > 0.5 * linewidth):
        columns.append(linewidth / offset)
    weights = np.abs(z[edges])
    design = np.column_stack(columns) * weights[:, np.newaxis]
    coeffs, *_ = np.linalg.lstsq(design, phase[edges] * weights, rcond=None)
    return float(coeffs[2] * 1e-9)


def _circularity_delay(f, z, fc, tau0) -> float:
    """Delay that makes the trace most circular, refined from tau0."""

    def residuals(p):
        zc = z * np.exp(2j * np.pi * (f - fc) * p[0] * 1e-9)
        center, radius, _ = circle_fit(zc)
        return np.abs(zc - center) - radius

    result = least_squares(residuals, x0=[tau0 * 1e9], method="lm",
                           xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=100 * MAX_ITERATIONS)
    return float(result.x[0] * 1e-9)


def preprocess(trace: ComplexTrace, f0_guess: Optional[float] = None,
               edge_fraction: float = DEFAULT_EDGE_FRACTION) -> PreprocessResult:
    """
    Remove cable delay and the complex off-resonance baseline.

    Args:
        trace: raw trace around one resonance
        f0_guess: resonance frequency in Hz, or None to locate it
        edge_fraction: share of points on each side used as off-resonance edges

    Returns:
        PreprocessResult whose trace has its off-resonance point at 1+0j
    """
    f = trace.frequencies
    z = trace.values
    n = z.size
    if n < 20:
        raise RangeError(f"trace has only {n} points")
    if not 0 < edge_fraction < 0.5:
        raise ParameterError("edge fraction must lie in (0, 0.5)")
    left, right = _edge_masks(n, edge_fraction)
    fc = trace.grid.center

    # complex baseline interpolated between the two edge means
    fl, fr = f[left].mean(), f[right].mean()
    zl, zr = z[left].mean(), z[right].mean()
    baseline = zl + (zr - zl) * (f - fl) / (fr - fl)
    deviation = np.abs(z - baseline)
    peak_idx = int(np.argmax(deviation)) if f0_guess is None else int(np.argmin(np.abs(f - f0_guess)))
    peak = deviation[peak_idx]
    edge_level = np.median(deviation[left | right])
    if not peak > 0 or peak < 5 * edge_level:
        raise FitError("no resonance found above the off-resonance scatter")
    if f0_guess is None:
        f0_guess = float(f[peak_idx])

    above = deviation >= peak / np.sqrt(2)
    lo = peak_idx
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = peak_idx
    while hi < n - 1 and above[hi + 1]:
        hi += 1
    width = max(f[hi] - f[lo], f[1] - f[0])
    q_guess = f0_guess / width
    span_linewidths = trace.grid.span / width
    if span_linewidths < MIN_SPAN_LINEWIDTHS:
        raise RangeError(f"trace spans only {span_linewidths:.2f} linewidths "
                         f"(at least {MIN_SPAN_LINEWIDTHS:g} needed)")

    tau0 = _edge_delay(f, z, left, right, f0_guess, width, fc)
    delay = _circularity_delay(f, z, fc, tau0)
    corrected = z * np.exp(2j * np.pi * (f - fc) * delay)

    center, radius, _ = circle_fit(corrected)
    phase = phase_fit(trace.with_values(corrected), center, f0_guess, q_guess)
    off_point = center + radius * np.exp(1j * (phase.theta0 + np.pi))
    if abs(off_point) == 0:
        raise FitError("off-resonance point collapsed to the origin")
    logger.debug(f"Preprocess: delay {delay:.4e} s, A {abs(off_point):.6f}, "
                 f"f0 {phase.f0:.9e} Hz, Q {phase.q_total:.4e}")
    return PreprocessResult(
        trace=trace.with_values(corrected / off_point),
        delay=delay,
        baseline_a=float(abs(off_point)),
        off_resonance_point=complex(off_point),
        f0=phase.f0,
        q_total=phase.q_total,
        reference_frequency=fc,
    )


def theta_max(a: float) -> float:
    """Largest rotation compatible with an off-resonance transmission a."""
    if not 0 < a <= 1:
        raise ParameterError(f"baseline A must lie in (0, 1], got {a}")
    return float(np.arccos(a))


def _refine(pre: PreprocessResult, weight: float, f0: float, q: float, qc: float,
            theta: float):
    """Joint damped least squares of the full model against the normalized trace."""
    f = pre.trace.frequencies
    z = pre.trace.values
    fc = pre.reference_frequency
    span = max(pre.trace.grid.span, 1.0)
    linewidth = f0 / q

    def unpack(p):
        baseline = p[0] + 1j * p[1]
        delay = p[2] / (2 * np.pi * span)
        return (baseline, delay, p[3], q * np.exp(p[4]), qc * np.exp(p[5]),
                f0 + p[6] * linewidth)

    def residuals(p):
        baseline, delay, th, qq, qqc, ff0 = unpack(p)
        model = (baseline * np.exp(-2j * np.pi * (f - fc) * delay)
                 * resonance_model(f, ff0, qq, qqc, th, weight))
        diff = z - model
        return np.concatenate([diff.real, diff.imag])

    x0 = np.array([1.0, 0.0, 0.0, theta, 0.0, 0.0, 0.0])
    result = least_squares(residuals, x0=x0, method="lm", xtol=STEP_TOLERANCE,
                           ftol=1e-15, gtol=1e-15, max_nfev=MAX_ITERATIONS * (x0.size + 1))
    if result.status <= 0:
        raise FitError(f"joint refinement failed: {result.message}",
                       residual=float(np.sqrt(np.mean(result.fun ** 2))))
    dof = max(result.fun.size - x0.size, 1)
    s2 = float(np.sum(result.fun ** 2) / dof)
    jac = result.jac
    cov = np.linalg.pinv(jac.T @ jac) * s2
    return unpack(result.x), result.x, cov, linewidth, float(np.sqrt(np.mean(result.fun ** 2)))


def _fit(trace: ComplexTrace, weight: float, mode: str, correction: str,
         f0_guess: Optional[float] = None) -> ResonatorFitResult:
    pre = preprocess(trace, f0_guess)
    center, radius, _ = circle_fit(pre.trace.values)
    phase = phase_fit(pre.trace, center, pre.f0, pre.q_total)
    diameter = 2 * radius
    theta = float(np.angle(1 - center))
    q = phase.q_total
    qc = q * weight / diameter

    (baseline, delay, theta, q, qc_mag, f0), _, cov, linewidth, rms = _refine(
        pre, weight, phase.f0, q, qc, theta)
    theta = float(_wrap(theta))
    diameter = weight * q / qc_mag

    factor = np.cos(theta) if correction == "dcm" else 1.0
    if factor <= 0:
        raise FitError(f"rotation {theta:.3f} rad is beyond +/- pi/2 and cannot be corrected")
    q_coupling = qc_mag / factor
    inv_qi = 1 / q - 1 / q_coupling
    q_internal = float(1 / inv_qi) if inv_qi != 0 else float("inf")

    # standard errors from the scaled covariance (lnQ, lnQc, theta, f0 offset)
    var = np.clip(np.diag(cov), 0, None)
    sin_term = np.sin(theta) if correction == "dcm" else 0.0
    grad = np.zeros(cov.shape[0])
    grad[4] = q_internal ** 2 / q
    grad[5] = -q_internal ** 2 * factor / qc_mag
    grad[3] = -q_internal ** 2 * sin_term / qc_mag
    qi_err = float(np.sqrt(max(grad @ cov @ grad, 0.0))) if np.isfinite(q_internal) else float("nan")
    qc_grad = np.zeros(cov.shape[0])
    qc_grad[5] = q_coupling
    qc_grad[3] = q_coupling * np.tan(theta) if correction == "dcm" else 0.0
    errors = {
        "f0": float(np.sqrt(var[6]) * linewidth),
        "q_total": float(np.sqrt(var[4]) * q),
        "q_coupling": float(np.sqrt(max(qc_grad @ cov @ qc_grad, 0.0))),
        "q_internal": qi_err,
        "theta": float(np.sqrt(var[3])),
    }

    baseline_a = pre.baseline_a * abs(baseline)
    pathology, reasons = False, []
    if q_internal < 0:
        pathology = True
        reasons.append("negative Qi (apparent gain)")
    # a passive environment cannot show A > 1; clip so the bound still applies
    if mode != REFLECTION and abs(theta) > theta_max(min(baseline_a, 1.0)) + THETA_BOUND_SLACK:
        pathology = True
        reasons.append("rotation exceeds arccos(A)")
    result = ResonatorFitResult(
        f0=float(f0), q_total=float(q), q_coupling=float(q_coupling), q_internal=q_internal,
        theta=theta, baseline_a=float(baseline_a), mode=mode, correction=correction,
        diameter=float(diameter), delay=pre.delay + float(delay),
        baseline_phase=float(np.angle(pre.off_resonance_point * baseline)),
        reference_frequency=pre.reference_frequency,
        errors=errors, residual_rms=rms, pathology=pathology,
        pathology_reason="; ".join(reasons),
    )
    if pathology:
        logger.warning(f"Pathological {mode} fit at {f0:.6e} Hz: {result.pathology_reason}")
    logger.debug(f"{mode} fit: f0 {f0:.9e} Hz, Q {q:.4e}, Qc {q_coupling:.4e}, "
                 f"Qi {q_internal:.4e}, theta {theta:.4f}")
    return result


def fit_hanger(trace: ComplexTrace, correction: str = "dcm",
               f0_guess: Optional[float] = None) -> ResonatorFitResult:
    """Hanger-mode fit; 'dcm' applies the diameter correction, 'naive' does not."""
    if correction not in ("dcm", "naive"):
        raise ParameterError(f"hanger correction must be 'dcm' or 'naive', got '{correction}'")
    mode = HANGER_DCM if correction == "dcm" else HANGER_NAIVE
    return _fit(trace, 1.0, mode, correction, f0_guess)


def fit_reflection(trace: ComplexTrace, correction: str = "none",
                   f0_guess: Optional[float] = None) -> ResonatorFitResult:
    """
    Reflection-mode fit with the doubled Lorentzian weight. The 'dcm' option
    only exists to show that the correction does not transfer to reflection.
    """
    if correction not in ("none", "dcm"):
        raise ParameterError(f"reflection correction must be 'none' or 'dcm', got '{correction}'")
    return _fit(trace, 2.0, REFLECTION, correction, f0_guess)


def fit_trace(trace: ComplexTrace, mode: str, correction: Optional[str] = None) -> ResonatorFitResult:
    """Dispatch on measurement geometry ('hanger' or 'reflection')."""
    if mode == "hanger":
        return fit_hanger(trace, correction or "dcm")
    if mode == "reflection":
        return fit_reflection(trace, correction or "none")
    raise ParameterError(f"unknown fit mode '{mode}'")


def model_trace(result: ResonatorFitResult, grid: FrequencyGrid) -> ComplexTrace:
    """The fitted model, environment included, evaluated on `grid`."""
    weight = 2.0 if result.mode == REFLECTION else 1.0
    qc_mag = result.q_coupling * (np.cos(result.theta) if result.correction == "dcm" else 1.0)
    f = grid.points
    environment = (result.baseline_a * np.exp(1j * result.baseline_phase)
                   * np.exp(-2j * np.pi * (f - result.reference_frequency) * result.delay))
    return ComplexTrace(grid, environment * resonance_model(f, result.f0, result.q_total, qc_mag,
                                                            result.theta, weight))


def dbm_to_watts(p_dbm):
    return 1e-3 * 10 ** (np.asarray(p_dbm, dtype=float) / 10)


def photon_number(p: PhotonNumberParams) -> float:
    """<n> = 2/(hbar w0^2) * (Z0/Zr) * (Q^2/Qc) * P_app."""
    w0 = 2 * np.pi * p.f0
    return float(2 / (hbar * w0 ** 2) * (p.z0 / p.zr) * (p.q_total ** 2 / p.q_coupling) * p.p_app)


async def _fit_sweep_async(sweep, mode, correction):
    tasks = [asyncio.to_thread(fit_trace, trace, mode, correction) for _, trace in sweep]
    return await asyncio.gather(*tasks, return_exceptions=True)


def fit_power_sweep(sweep: Sequence[Tuple[float, ComplexTrace]], mode: str,
                    correction: Optional[str] = None, attenuation_db: float = 70.0,
                    z0: float = 50.0, zr: float = 50.0) -> pd.DataFrame:
    """
    Fit every trace of a power sweep concurrently and attach <n>.

    Args:
        sweep: (source power in dBm, trace) pairs
        mode: 'hanger' or 'reflection'
        attenuation_db: line loss between source and device

    Returns:
        One row per power; failed fits keep their error message in 'error'
    """
    results = asyncio.run(_fit_sweep_async(sweep, mode, correction))
    rows: List[Dict[str, object]] = []
    for (power_dbm, _), result in zip(sweep, results):
        row: Dict[str, object] = {"power_dbm": float(power_dbm)}
        p_app = float(dbm_to_watts(power_dbm - attenuation_db))
        row["p_app_w"] = p_app
        if isinstance(result, Exception):
            logger.error(f"Fit failed at {power_dbm} dBm: {result}")
            row["photon_number"] = float("nan")
            row["error"] = str(result)
        else:
            row["photon_number"] = photon_number(PhotonNumberParams(
                z0=z0, zr=zr, q_total=result.q_total, q_coupling=result.q_coupling,
                f0=result.f0, p_app=p_app))
            row.update(result.as_row())
            row["error"] = ""
        rows.append(row)
    logger.info(f"Fitted power sweep of {len(rows)} traces")
    return pd.DataFrame(rows)

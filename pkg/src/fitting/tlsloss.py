"""
Power-dependent two-level-system loss model and its fit to 1/Qi sweeps.

    1/Qi(n) = F/Qi0 * tanh(h f0 / 2 kB T) / sqrt(1 + (n/n_c)^beta) + 1/Q_other
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from scipy.constants import h, k
from scipy.optimize import least_squares

from src.errors import FitError, IdentifiabilityError, ParameterError, RangeError

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.015
DEFAULT_BETA = 1.0
MIN_POINTS = 6
MIN_DECADES = 2.0
# relative spread of 1/Qi below which the two plateaus cannot be told apart
MIN_LOSS_CONTRAST = 0.05


@dataclass(frozen=True)
class TlsParams:
    f_q0: float
    n_c: float
    q_other: float
    f0: float
    beta: float = DEFAULT_BETA
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.f_q0 < 0:
            raise ParameterError("F/Qi0 must be >= 0")
        for name in ("n_c", "q_other", "f0", "beta", "temperature"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class LossSweep:
    """Internal loss 1/Qi against average photon number, with fit weights."""
    photon_numbers: np.ndarray
    inv_qi: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        n = np.asarray(self.photon_numbers, dtype=float).ravel()
        y = np.asarray(self.inv_qi, dtype=float).ravel()
        w = np.ones_like(n) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if not (n.size == y.size == w.size):
            raise ParameterError("photon numbers, losses and weights differ in length")
        if np.any(~np.isfinite(n)) or np.any(n <= 0):
            raise ParameterError("photon numbers must be finite and > 0")
        if np.any(~np.isfinite(y)):
            raise ParameterError("losses must be finite")
        if np.any(w < 0) or not np.any(w > 0):
            raise ParameterError("weights must be >= 0 and not all zero")
        order = np.argsort(n)
        object.__setattr__(self, "photon_numbers", n[order])
        object.__setattr__(self, "inv_qi", y[order])
        object.__setattr__(self, "weights", w[order])

    def __len__(self) -> int:
        return self.photon_numbers.size

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "LossSweep":
        """Build from power-sweep fit rows (photon_number, q_internal), skipping failed fits."""
        missing = {"photon_number", "q_internal"} - set(frame.columns)
        if missing:
            raise ParameterError(f"sweep table lacks column(s) {sorted(missing)}")
        rows = frame.dropna(subset=["photon_number", "q_internal"])
        if "error" in rows.columns:
            rows = rows[rows["error"].fillna("") == ""]
        weights = rows["weight"].to_numpy() if "weight" in rows.columns else None
        return cls(rows["photon_number"].to_numpy(), 1 / rows["q_internal"].to_numpy(), weights)


@dataclass
class TlsFitResult:
    params: TlsParams
    errors: Dict[str, float] = field(default_factory=dict)
    residual_rms: float = 0.0
    beta_fixed: bool = True
    n_points: int = 0


def tls_temperature_factor(f0: float, temperature: float) -> float:
    """tanh(h f0 / 2 kB T); tends to 1 as T -> 0."""
    if temperature <= 0 or f0 <= 0:
        raise ParameterError("f0 and temperature must be > 0")
    return float(np.tanh(h * f0 / (2 * k * temperature)))


def tls_loss(p: TlsParams, n):
    """Internal loss 1/Qi at photon number(s) n."""
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise ParameterError("photon number must be >= 0")
    tls = p.f_q0 * tls_temperature_factor(p.f0, p.temperature) / np.sqrt(1 + (n_arr / p.n_c) ** p.beta)
    loss = tls + 1 / p.q_other
    return float(loss) if np.ndim(loss) == 0 else loss


def _initial_guess(sweep: LossSweep, factor: float):
    n, y = sweep.photon_numbers, sweep.inv_qi
    low, high = y[0], y[-1]
    if not low > high > 0:
        raise IdentifiabilityError("loss does not fall from a low-power to a high-power plateau")
    f_q0 = (low - high) / factor
    # TLS term drops to 1/sqrt(2) of its plateau at n = n_c
    target = high + (low - high) / np.sqrt(2)
    below = np.flatnonzero(y <= target)
    i = int(below[0]) if below.size else len(y) - 1
    if i == 0:
        n_c = n[0]
    else:
        x0, x1 = np.log(n[i - 1]), np.log(n[i])
        y0, y1 = y[i - 1], y[i]
        frac = (y0 - target) / (y0 - y1) if y0 != y1 else 0.5
        n_c = float(np.exp(x0 + frac * (x1 - x0)))
    return f_q0, n_c, 1 / high


def fit_tls(sweep: LossSweep, f0: float, temperature: float = DEFAULT_TEMPERATURE,
            fix_beta: Optional[float] = DEFAULT_BETA) -> TlsFitResult:
    """
    Weighted least squares of log(1/Qi) against the TLS model.

    Args:
        sweep: loss against photon number
        f0: resonance frequency in Hz
        temperature: sample temperature in K
        fix_beta: value to hold beta at, or None to fit it

    Returns:
        TlsFitResult with one standard error per fitted parameter
    """
    if len(sweep) < MIN_POINTS:
        raise ParameterError(f"TLS fit needs at least {MIN_POINTS} points, got {len(sweep)}")
    n, y, w = sweep.photon_numbers, sweep.inv_qi, sweep.weights
    decades = np.log10(n[-1] / n[0])
    if decades < MIN_DECADES:
        raise RangeError(f"photon numbers span {decades:.2f} decades (at least {MIN_DECADES:g} needed)")
    if np.any(y <= 0):
        raise FitError("1/Qi must be positive everywhere for a log-space fit")
    if (y.max() - y.min()) / y.max() < MIN_LOSS_CONTRAST:
        raise IdentifiabilityError("n_c is unidentifiable: loss is flat across the sweep")
    if fix_beta is not None and fix_beta <= 0:
        raise ParameterError("fixed beta must be > 0")

    factor = tls_temperature_factor(f0, temperature)
    f_q0_0, n_c_0, q_other_0 = _initial_guess(sweep, factor)
    sqrt_w = np.sqrt(w)
    log_y = np.log(y)

    def unpack(p):
        beta = fix_beta if fix_beta is not None else np.exp(p[3])
        return np.exp(p[0]), np.exp(p[1]), np.exp(p[2]), beta

    def residuals(p):
        f_q0, n_c, q_other, beta = unpack(p)
        model = f_q0 * factor / np.sqrt(1 + (n / n_c) ** beta) + 1 / q_other
        return sqrt_w * (np.log(model) - log_y)

    x0 = [np.log(f_q0_0), np.log(n_c_0), np.log(q_other_0)]
    if fix_beta is None:
        x0.append(np.log(DEFAULT_BETA))
    result = least_squares(residuals, x0=np.array(x0), method="lm",
                           xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=5000)
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    if result.status <= 0:
        raise FitError(f"TLS fit did not converge: {result.message}", residual=rms)

    f_q0, n_c, q_other, beta = unpack(result.x)
    dof = max(len(sweep) - result.x.size, 1)
    s2 = float(np.sum(result.fun ** 2) / dof)
    cov = np.linalg.pinv(result.jac.T @ result.jac) * s2
    sigma_log = np.sqrt(np.clip(np.diag(cov), 0, None))
    errors = {
        "f_q0": float(f_q0 * sigma_log[0]),
        "n_c": float(n_c * sigma_log[1]),
        "q_other": float(q_other * sigma_log[2]),
        "beta": float(beta * sigma_log[3]) if fix_beta is None else 0.0,
    }
    params = TlsParams(f_q0=float(f_q0), n_c=float(n_c), q_other=float(q_other), f0=f0,
                       beta=float(beta), temperature=temperature)
    logger.info(f"TLS fit at {f0 / 1e9:.4f} GHz: F/Qi0 {f_q0:.3e}, n_c {n_c:.3g}, "
                f"Q_other {q_other:.3e}, beta {beta:.3g}")
    return TlsFitResult(params, errors, rms, fix_beta is not None, len(sweep))


def tls_report(results: Iterable[TlsFitResult]) -> pd.DataFrame:
    """Tabulate fits as f0 (GHz), F/Qi0 x1e5, n_c, Q_other x1e-5 with their errors."""
    rows: List[Dict[str, float]] = []
    for r in results:
        p = r.params
        rows.append({
            "f0_ghz": p.f0 / 1e9,
            "f_q0_x1e5": p.f_q0 * 1e5,
            "f_q0_x1e5_err": r.errors.get("f_q0", float("nan")) * 1e5,
            "n_c": p.n_c,
            "n_c_err": r.errors.get("n_c", float("nan")),
            "q_other_x1e-5": p.q_other * 1e-5,
            "q_other_x1e-5_err": r.errors.get("q_other", float("nan")) * 1e-5,
            "beta": p.beta,
            "beta_fixed": r.beta_fixed,
            "temperature_k": p.temperature,
            "residual_rms": r.residual_rms,
        })
    return pd.DataFrame(rows)

"""Plot-data tables (x, y, series) and optional plotly HTML figures for reports."""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from src.calibration.onecal import OnePortErrorTerms, error_term_report
from src.fitting.resfit import ResonatorFitResult, model_trace
from src.fitting.tlsloss import LossSweep, TlsFitResult, tls_loss
from src.network.rfnet import ComplexTrace

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ["x", "y", "series"]


class ReportVisualizer:
    """Turns calibration and fit results into long-form plot tables and figures."""

    def error_terms(self, terms: OnePortErrorTerms) -> pd.DataFrame:
        """Error-adapter magnitudes in dB against frequency in GHz."""
        report = error_term_report(terms)
        frames = []
        for column, label in (("e00_db", "directivity"), ("e11_db", "source match"),
                              ("e01e10_db", "reflection tracking")):
            frames.append(pd.DataFrame({"x": report["frequency_hz"] / 1e9, "y": report[column],
                                        "series": label}))
        return pd.concat(frames, ignore_index=True)[PLOT_COLUMNS]

    def resonance_circle(self, trace: ComplexTrace,
                         fit: Optional[ResonatorFitResult] = None) -> pd.DataFrame:
        """Measured points in the complex plane, with the fitted model if given."""
        frames = [pd.DataFrame({"x": trace.values.real, "y": trace.values.imag, "series": "data"})]
        if fit is not None:
            model = model_trace(fit, trace.grid).values
            frames.append(pd.DataFrame({"x": model.real, "y": model.imag, "series": "model"}))
        return pd.concat(frames, ignore_index=True)[PLOT_COLUMNS]

    def tls_curve(self, sweep: LossSweep, fit: Optional[TlsFitResult] = None,
                  points: int = 200) -> pd.DataFrame:
        """1/Qi against photon number, with the fitted S-curve if given."""
        frames = [pd.DataFrame({"x": sweep.photon_numbers, "y": sweep.inv_qi, "series": "data"})]
        if fit is not None:
            n = np.logspace(np.log10(sweep.photon_numbers[0]), np.log10(sweep.photon_numbers[-1]), points)
            frames.append(pd.DataFrame({"x": n, "y": tls_loss(fit.params, n), "series": "model"}))
        return pd.concat(frames, ignore_index=True)[PLOT_COLUMNS]

    def figure(self, data: pd.DataFrame, title: str, x_title: str, y_title: str,
               log_x: bool = False, log_y: bool = False, equal_axes: bool = False) -> go.Figure:
        fig = go.Figure()
        for series, group in data.groupby("series", sort=False):
            mode = "lines" if series == "model" or len(group) > 500 else "markers"
            fig.add_trace(go.Scatter(x=group["x"], y=group["y"], mode=mode, name=str(series)))
        fig.update_layout(title=title, xaxis_title=x_title, yaxis_title=y_title, template="plotly_white")
        if log_x:
            fig.update_xaxes(type="log")
        if log_y:
            fig.update_yaxes(type="log")
        if equal_axes:
            fig.update_yaxes(scaleanchor="x", scaleratio=1)
        return fig

    def write_html(self, fig: go.Figure, path: str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fig.write_html(path, include_plotlyjs="cdn")
        logger.info(f"Wrote figure to {path}")

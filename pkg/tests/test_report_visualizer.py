import numpy as np
import pytest

from src.calibration.onecal import OnePortErrorTerms
from src.fitting.resfit import fit_hanger
from src.fitting.tlsloss import TlsParams, fit_tls
from src.visualization.report_visualizer import PLOT_COLUMNS, ReportVisualizer


@pytest.fixture
def visualizer():
    return ReportVisualizer()


def test_error_terms_in_ghz_and_db(visualizer, band):
    data = visualizer.error_terms(OnePortErrorTerms.identity(band))
    assert list(data.columns) == PLOT_COLUMNS
    assert len(data) == 3 * len(band)
    tracking = data[data["series"] == "reflection tracking"]
    assert tracking["x"].iloc[0] == pytest.approx(4.0)
    assert np.allclose(tracking["y"], 0.0)


def test_resonance_circle_with_model(visualizer, generator):
    trace = generator.resonance_trace(points=801)
    data = visualizer.resonance_circle(trace, fit_hanger(trace))
    measured = data[data["series"] == "data"]
    model = data[data["series"] == "model"]
    assert len(measured) == len(model) == 801
    assert np.allclose(model["x"].to_numpy(), measured["x"].to_numpy(), atol=1e-6)


def test_resonance_circle_without_model(visualizer, generator):
    data = visualizer.resonance_circle(generator.resonance_trace(points=101))
    assert set(data["series"]) == {"data"}


def test_tls_curve(visualizer, generator):
    params = TlsParams(f_q0=1.8e-5, n_c=1.74, q_other=7.7e5, f0=4.49e9)
    sweep = generator.loss_sweep(params)
    data = visualizer.tls_curve(sweep, fit_tls(sweep, params.f0), points=50)
    model = data[data["series"] == "model"]
    assert len(model) == 50
    assert model["x"].iloc[0] == pytest.approx(1.0)
    assert model["y"].iloc[0] > model["y"].iloc[-1]


def test_figure_and_html(visualizer, generator, tmp_path):
    params = TlsParams(f_q0=1.8e-5, n_c=1.74, q_other=7.7e5, f0=4.49e9)
    sweep = generator.loss_sweep(params)
    data = visualizer.tls_curve(sweep, fit_tls(sweep, params.f0))
    fig = visualizer.figure(data, "Internal loss", "Photon number", "1/Qi", log_x=True, log_y=True)
    assert [t.name for t in fig.data] == ["data", "model"]
    assert fig.data[0].mode == "markers"
    assert fig.layout.xaxis.type == "log"
    path = tmp_path / "figs" / "tls.html"
    visualizer.write_html(fig, str(path))
    assert path.exists()

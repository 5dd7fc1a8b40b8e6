import numpy as np
import pandas as pd
import pytest

from src.data.sample_data import preset
from src.errors import FitError, ParameterError, RangeError
from src.fitting.resfit import (
    HANGER_DCM,
    HANGER_NAIVE,
    REFLECTION,
    PhotonNumberParams,
    ResonatorFitResult,
    circle_fit,
    dbm_to_watts,
    eq1_model,
    eq4_model,
    fit_hanger,
    fit_power_sweep,
    fit_reflection,
    fit_trace,
    model_trace,
    phase_fit,
    photon_number,
    preprocess,
    theta_max,
)
from src.network.circsim import HANGER, estimate_q, simulate
from src.network.circsim import REFLECTION as REFLECTION_MODE
from src.network.rfnet import ComplexTrace, FrequencyGrid

F0, Q, QC = 6e9, 1e5, 2e5


class TestModels:
    def test_hanger_dip_at_resonance(self):
        assert eq1_model(F0, F0, Q, QC) == pytest.approx(0.5)

    def test_reflection_dip_at_resonance(self):
        assert eq4_model(F0, F0, Q, QC) == pytest.approx(0.0, abs=1e-15)

    def test_far_off_resonance_tends_to_one(self):
        assert eq1_model(2 * F0, F0, Q, QC, 0.4) == pytest.approx(1.0, abs=1e-5)


class TestCircleFit:
    def test_unit_circle(self):
        angles = np.linspace(0, 2 * np.pi, 50, endpoint=False)
        center, radius, rms = circle_fit(np.exp(1j * angles))
        assert center == pytest.approx(0, abs=1e-12)
        assert radius == pytest.approx(1.0, rel=1e-12)
        assert rms < 1e-12

    def test_hanger_resonance_circle(self, generator):
        trace = generator.resonance_trace(q=Q, qc=QC)
        center, radius, _ = circle_fit(trace.values)
        assert radius == pytest.approx(0.25, rel=1e-9)
        assert center == pytest.approx(0.75, abs=1e-9)

    def test_three_points_define_a_circle(self):
        center, radius, _ = circle_fit([1 + 0j, 1j, -1 + 0j])
        assert center == pytest.approx(0, abs=1e-12)
        assert radius == pytest.approx(1.0)

    def test_collinear_points(self):
        with pytest.raises(FitError):
            circle_fit([0j, 1 + 1j, 2 + 2j, 3 + 3j])

    def test_too_few_points(self):
        with pytest.raises(FitError):
            circle_fit([0j, 1 + 0j])


class TestPhaseFit:
    def test_recovers_f0_and_q(self, generator):
        trace = generator.resonance_trace(q=Q, qc=QC)
        center, _, _ = circle_fit(trace.values)
        result = phase_fit(trace, center)
        assert result.q_total == pytest.approx(Q, rel=1e-3)
        assert result.f0 == pytest.approx(F0, abs=1.0)

    def test_mirrored_trace_keeps_f0(self, generator):
        trace = generator.resonance_trace(q=Q, qc=QC)
        mirrored = trace.with_values(trace.values[::-1])
        center, _, _ = circle_fit(mirrored.values)
        result = phase_fit(mirrored, center)
        assert result.f0 == pytest.approx(F0, abs=1.0)
        assert result.direction == -1

    def test_noise_has_no_phase_response(self, generator):
        grid = FrequencyGrid.linspace(5.99e9, 6.01e9, 2001)
        noise = ComplexTrace(grid, generator.complex_noise(2001, 0.0))
        center, _, _ = circle_fit(noise.values)
        with pytest.raises(FitError):
            phase_fit(noise, center)


class TestPreprocess:
    def test_ideal_trace_needs_no_correction(self, generator):
        pre = preprocess(generator.resonance_trace(q=Q, qc=QC))
        assert abs(pre.delay) < 1e-12
        assert pre.baseline_a == pytest.approx(1.0, abs=1e-9)
        assert pre.off_resonance_point == pytest.approx(1.0, abs=1e-9)

    def test_cable_delay_is_removed(self, generator):
        pre = preprocess(generator.resonance_trace(q=Q, qc=QC, delay=1e-9))
        assert pre.delay == pytest.approx(1e-9, rel=1e-3)

    def test_baseline_is_divided_out(self, generator):
        pre = preprocess(generator.resonance_trace(q=Q, qc=QC, baseline=0.6 * np.exp(0.7j), delay=30e-9))
        assert pre.baseline_a == pytest.approx(0.6, rel=1e-6)
        center, radius, _ = circle_fit(pre.trace.values)
        assert center == pytest.approx(0.75, abs=1e-6)
        assert radius == pytest.approx(0.25, rel=1e-6)

    def test_narrow_span_is_rejected(self, generator):
        with pytest.raises(RangeError):
            preprocess(generator.resonance_trace(q=Q, qc=QC, n_linewidths=2))

    def test_too_few_points(self, generator):
        with pytest.raises(RangeError):
            preprocess(generator.resonance_trace(q=Q, qc=QC, points=15))

    def test_flat_trace_has_no_resonance(self, generator):
        grid = FrequencyGrid.linspace(5.99e9, 6.01e9, 2001)
        flat = ComplexTrace(grid, 1 + generator.complex_noise(2001, 40.0))
        with pytest.raises(FitError):
            preprocess(flat)


@pytest.mark.parametrize("a,expected", [(1.0, 0.0), (0.9, 0.4510), (0.5, 1.0472)])
def test_theta_max(a, expected):
    assert theta_max(a) == pytest.approx(expected, abs=1e-4)


@pytest.mark.parametrize("a", [0.0, -0.1, 1.5])
def test_theta_max_domain(a):
    with pytest.raises(ParameterError):
        theta_max(a)


class TestClosedFormFits:
    def test_hanger_dcm_recovers_parameters(self, generator):
        theta = 0.3
        trace = generator.resonance_trace(q=Q, qc=QC, theta=theta, delay=50e-9,
                                          baseline=0.5 * np.exp(1j))
        result = fit_hanger(trace, "dcm")
        assert result.mode == HANGER_DCM
        assert result.f0 == pytest.approx(F0, rel=1e-6)
        assert result.q_total == pytest.approx(Q, rel=1e-3)
        assert result.theta == pytest.approx(theta, abs=1e-3)
        assert result.q_coupling == pytest.approx(QC / np.cos(theta), rel=1e-3)
        assert result.q_internal == pytest.approx(1 / (1 / Q - np.cos(theta) / QC), rel=1e-3)
        assert result.baseline_a == pytest.approx(0.5, rel=1e-3)
        assert result.delay == pytest.approx(50e-9, rel=1e-3)

    def test_naive_uses_the_rotated_diameter(self, generator):
        trace = generator.resonance_trace(q=Q, qc=QC, theta=0.3)
        dcm = fit_hanger(trace, "dcm")
        naive = fit_hanger(trace, "naive")
        assert naive.mode == HANGER_NAIVE
        assert naive.q_coupling == pytest.approx(QC, rel=1e-3)
        assert naive.q_coupling / dcm.q_coupling == pytest.approx(np.cos(dcm.theta), rel=1e-9)
        assert naive.q_internal > dcm.q_internal

    def test_without_rotation_corrections_agree(self, generator):
        trace = generator.resonance_trace(q=Q, qc=QC)
        dcm = fit_hanger(trace, "dcm")
        naive = fit_hanger(trace, "naive")
        assert dcm.q_internal == pytest.approx(naive.q_internal, rel=1e-9)
        assert dcm.q_internal == pytest.approx(2e5, rel=1e-3)

    def test_reflection_recovers_parameters(self, generator):
        trace = generator.resonance_trace(q=Q, qc=1.5e5, mode=REFLECTION_MODE, delay=20e-9)
        result = fit_reflection(trace)
        assert result.mode == REFLECTION
        assert result.q_total == pytest.approx(Q, rel=1e-3)
        assert result.q_coupling == pytest.approx(1.5e5, rel=1e-3)
        assert result.q_internal == pytest.approx(3e5, rel=1e-3)
        assert result.diameter == pytest.approx(2 * Q / 1.5e5, rel=1e-3)

    def test_noisy_hanger_within_reported_errors(self, generator):
        theta = 0.3
        trace = generator.resonance_trace(q=Q, qc=QC, theta=theta, snr_db=40.0)
        result = fit_hanger(trace, "dcm")
        assert abs(result.f0 - F0) < 3 * result.errors["f0"]
        assert abs(result.q_total - Q) < 3 * result.errors["q_total"]
        assert abs(result.theta - theta) < 3 * result.errors["theta"]
        assert abs(result.q_coupling - QC / np.cos(theta)) < 3 * result.errors["q_coupling"]

    def test_model_trace_reproduces_input(self, generator):
        trace = generator.resonance_trace(q=Q, qc=QC, theta=-0.2, delay=10e-9, baseline=0.8j)
        result = fit_hanger(trace)
        assert np.allclose(model_trace(result, trace.grid).values, trace.values, atol=1e-6)

    def test_pure_noise_is_rejected(self, generator):
        grid = FrequencyGrid.linspace(5.99e9, 6.01e9, 2001)
        with pytest.raises(FitError):
            fit_hanger(ComplexTrace(grid, generator.complex_noise(2001, 0.0)))

    def test_unknown_options(self, generator):
        trace = generator.resonance_trace()
        with pytest.raises(ParameterError):
            fit_hanger(trace, "none")
        with pytest.raises(ParameterError):
            fit_reflection(trace, "naive")
        with pytest.raises(ParameterError):
            fit_trace(trace, "transmission")

    def test_result_row(self, generator):
        row = fit_trace(generator.resonance_trace(), "hanger").as_row()
        assert row["mode"] == HANGER_DCM
        assert {"f0_hz", "q_internal", "q_internal_err", "pathology"} <= set(row)

    def test_result_rejects_nonpositive_q(self):
        with pytest.raises(FitError):
            ResonatorFitResult(f0=F0, q_total=-1.0, q_coupling=1.0, q_internal=1.0, theta=0.0,
                               baseline_a=1.0, mode=REFLECTION)


class TestCirculatorIsolation:
    """Leakage past the circulator biases the reflection fit low."""

    @staticmethod
    def expected_qi(isolation_db):
        q = estimate_q(preset("circulator-leak"))
        eps = 10 ** (-isolation_db / 20)
        return 1 / (1 / q["qi"] + eps / (1 + eps) / q["qc"])

    @pytest.mark.parametrize("isolation_db", [300.0, 30.0, 23.0, 20.0])
    def test_extracted_qi(self, isolation_db):
        result = fit_reflection(simulate(preset("circulator-leak", isolation_db=isolation_db)))
        assert result.q_internal == pytest.approx(self.expected_qi(isolation_db), rel=0.02)

    def test_ideal_isolation_matches_design(self):
        result = fit_reflection(simulate(preset("circulator-leak", isolation_db=300.0)))
        assert result.q_internal == pytest.approx(2.2e6, rel=0.02)

    @pytest.mark.parametrize("isolation_db, published", [
        (300.0, 2.2e6),
        (30.0, 1.73e6),
        # a real-leakage circulator gives about 1.49e6 and 1.33e6 here
        pytest.param(23.0, 1.39e6, marks=pytest.mark.xfail(strict=True, reason="leakage model gives higher Qi")),
        pytest.param(20.0, 1.22e6, marks=pytest.mark.xfail(strict=True, reason="leakage model gives higher Qi")),
    ])
    def test_published_isolation_values(self, isolation_db, published):
        result = fit_reflection(simulate(preset("circulator-leak", isolation_db=isolation_db)))
        assert result.q_internal == pytest.approx(published, rel=0.05)

    def test_bias_grows_as_isolation_drops(self):
        qi = [fit_reflection(simulate(preset("circulator-leak", isolation_db=iso))).q_internal
              for iso in (300.0, 30.0, 23.0, 20.0)]
        assert all(a > b for a, b in zip(qi, qi[1:]))


class TestImpedanceMismatch:
    @pytest.mark.parametrize("l3_deg", [0.0, 45.0])
    def test_uncalibrated_mismatch_overestimates_qi(self, l3_deg):
        result = fit_reflection(simulate(preset("mismatched-reflection", l3_deg=l3_deg)))
        assert result.q_internal > 2.2e6 or (result.q_internal < 0 and result.pathology)

    def test_no_line_means_little_rotation(self):
        result = fit_reflection(simulate(preset("mismatched-reflection", l3_deg=0.0)))
        assert abs(result.theta) < 0.05


class TestWirebondHanger:
    @pytest.mark.parametrize("l3_deg", [90.0, 105.0, 120.0])
    def test_dcm_is_insensitive_to_line_length(self, l3_deg):
        result = fit_hanger(simulate(preset("wirebond-hanger", l3_deg=l3_deg, r_res=1e8)), "dcm")
        assert result.q_internal == pytest.approx(2.2e6, rel=0.01)

    def test_naive_is_not_below_dcm(self):
        trace = simulate(preset("wirebond-hanger", r_res=1e8))
        dcm = fit_hanger(trace, "dcm")
        naive = fit_hanger(trace, "naive")
        assert naive.q_internal >= dcm.q_internal
        assert naive.q_coupling / dcm.q_coupling == pytest.approx(np.cos(dcm.theta), rel=1e-9)

    def test_naive_bias_grows_with_rotation(self):
        rotations, biases = [], []
        for l3_deg in (90.0, 105.0, 120.0):
            trace = simulate(preset("wirebond-hanger", l3_deg=l3_deg, r_res=1e8))
            dcm = fit_hanger(trace, "dcm")
            naive = fit_hanger(trace, "naive")
            assert dcm.q_internal == pytest.approx(2.2e6, rel=0.01)
            assert naive.q_internal >= dcm.q_internal
            # 1/Qi_naive = 1/Qi - (1/Qc)(1/cos(theta) - 1)
            bias = (1 / dcm.q_internal - 1 / naive.q_internal) * dcm.q_coupling
            assert bias == pytest.approx(1 / np.cos(dcm.theta) - 1, rel=1e-6, abs=1e-12)
            rotations.append(abs(dcm.theta))
            biases.append(bias)
        order = np.argsort(rotations)
        assert np.all(np.diff(np.asarray(biases)[order]) >= 0)

    def test_offset_lines_rotation_within_bound(self):
        result = fit_hanger(simulate(preset("wirebond-hanger-offset")), "dcm")
        assert result.baseline_a == pytest.approx(0.9, abs=0.1)
        assert abs(result.theta) <= theta_max(result.baseline_a) + 1e-3

    def test_rotation_bound_flags_pathology(self, generator):
        # rotation larger than arccos(A) with A = 1
        result = fit_hanger(generator.resonance_trace(q=Q, qc=QC, theta=0.5))
        assert result.pathology
        assert "arccos" in result.pathology_reason


class TestPhotonNumber:
    def test_reference_value(self):
        params = PhotonNumberParams(z0=50, zr=50, q_total=3e5, q_coupling=3e5, f0=6.03e9,
                                    p_app=float(dbm_to_watts(-85.0)))
        assert photon_number(params) == pytest.approx(1.26e7, rel=0.01)

    def test_zero_power(self):
        params = PhotonNumberParams(z0=50, zr=50, q_total=1e5, q_coupling=2e5, f0=6e9, p_app=0.0)
        assert photon_number(params) == 0.0

    def test_scaling(self):
        base = dict(z0=50, zr=50, q_total=1e5, q_coupling=2e5, f0=6e9, p_app=1e-15)
        n = photon_number(PhotonNumberParams(**base))
        assert photon_number(PhotonNumberParams(**{**base, "q_total": 2e5})) == pytest.approx(4 * n, rel=1e-12)
        assert photon_number(PhotonNumberParams(**{**base, "p_app": 3e-15})) == pytest.approx(3 * n, rel=1e-12)

    def test_dbm_conversion(self):
        assert dbm_to_watts(0.0) == pytest.approx(1e-3)
        assert dbm_to_watts(-30.0) == pytest.approx(1e-6)

    @pytest.mark.parametrize("field,value", [("zr", 0.0), ("f0", -1.0), ("p_app", -1e-12)])
    def test_invalid_inputs(self, field, value):
        base = dict(z0=50, zr=50, q_total=1e5, q_coupling=2e5, f0=6e9, p_app=1e-15)
        base[field] = value
        with pytest.raises(ParameterError):
            PhotonNumberParams(**base)


def test_power_sweep_rows(generator):
    sweep = [(p, generator.resonance_trace(q=Q, qc=QC, theta=0.1)) for p in (-20.0, -40.0, -60.0)]
    grid = FrequencyGrid.linspace(5.99e9, 6.01e9, 100)
    sweep.append((-80.0, ComplexTrace(grid, np.ones(100))))
    frame = fit_power_sweep(sweep, HANGER)
    assert isinstance(frame, pd.DataFrame)
    assert list(frame["power_dbm"]) == [-20.0, -40.0, -60.0, -80.0]
    ok = frame[frame["error"] == ""]
    assert len(ok) == 3
    assert ok["photon_number"].is_monotonic_decreasing
    assert ok["q_internal"].to_numpy() == pytest.approx(1 / (1 / Q - np.cos(0.1) / QC), rel=1e-3)
    assert frame["error"].iloc[3] != ""

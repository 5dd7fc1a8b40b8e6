import numpy as np
import pytest

from src.errors import NumericError, ParameterError
from src.network.circsim import CirculatorModel
from src.network.rfnet import (
    AbcdMatrix,
    ComplexTrace,
    FrequencyGrid,
    SMatrix,
    Termination,
    abcd_to_s,
    cascade,
    component_abcd,
    connect_s,
    is_passive,
    reflection_of_impedance,
    renormalize_s,
    require_aligned,
    s_to_abcd,
    singular_values,
    terminate_3port,
)


def line(length_deg, f, z0=50.0, f_ref=6e9):
    return component_abcd("line", {"z0": z0, "length_deg": length_deg, "f_ref": f_ref}, f)


def random_s(rng, n_freq, ports, scale=0.3):
    return scale * (rng.standard_normal((n_freq, ports, ports))
                    + 1j * rng.standard_normal((n_freq, ports, ports)))


F = np.linspace(4e9, 8e9, 41)


class TestGridAndTrace:
    @pytest.mark.parametrize("points", [[], [1e9, 1e9], [2e9, 1e9], [-1e9, 1e9], [np.nan]])
    def test_bad_grids_rejected(self, points):
        with pytest.raises(ParameterError):
            FrequencyGrid(np.asarray(points, dtype=float))

    def test_span_and_center(self):
        grid = FrequencyGrid.linspace(4e9, 8e9, 5)
        assert grid.span == 4e9
        assert grid.center == 6e9
        assert len(grid) == 5

    def test_trace_length_must_match_grid(self):
        with pytest.raises(ParameterError):
            ComplexTrace(FrequencyGrid.linspace(1e9, 2e9, 3), np.zeros(4))

    def test_require_aligned(self):
        a = FrequencyGrid.linspace(1e9, 2e9, 3)
        b = FrequencyGrid.linspace(1e9, 2e9, 4)
        assert require_aligned(a, ComplexTrace(a, np.zeros(3))) is a
        with pytest.raises(ParameterError, match="grid mismatch"):
            require_aligned(a, ComplexTrace(b, np.zeros(4)))


class TestComponents:
    def test_zero_length_line_is_identity(self):
        m = line(0.0, 6e9)
        assert np.allclose(m.as_array(), np.eye(2), atol=1e-15)

    def test_quarter_wave_line(self):
        m = line(90.0, 6e9)
        expected = np.array([[0, 50j], [1j / 50, 0]])
        assert np.allclose(m.as_array(), expected, atol=1e-12)

    def test_series_coupling_capacitor(self):
        z = 1 / (1j * 2 * np.pi * 6e9 * 1e-15)
        m = component_abcd("series", {"z": z}, 6e9)
        assert m.b == pytest.approx(-2.6526e4j, rel=1e-4)
        assert m.a == 1 and m.c == 0 and m.d == 1

    def test_lossless_line_is_reciprocal(self):
        m = line(73.3, F, z0=37.0)
        assert np.allclose(m.determinant(), 1.0, atol=1e-12)

    @pytest.mark.parametrize("kind,params", [
        ("line", {"z0": 0.0, "length_deg": 10, "f_ref": 6e9}),
        ("line", {"z0": -50.0, "length_deg": 10, "f_ref": 6e9}),
        ("line", {"z0": 50.0, "length_deg": 10}),
        ("series", {"z": np.inf}),
        ("shunt", {"y": np.nan}),
        ("transformer", {}),
    ])
    def test_invalid_components(self, kind, params):
        with pytest.raises(ParameterError):
            component_abcd(kind, params, 6e9)

    def test_two_eighth_wave_lines_make_a_quarter_wave(self):
        assert np.allclose(cascade([line(45, F), line(45, F)]).as_array(), line(90, F).as_array(),
                           atol=1e-12)


class TestCascade:
    def test_associative(self):
        a = component_abcd("series", {"z": 10 + 25j}, F)
        b = line(40.0, F, z0=70.0)
        c = component_abcd("shunt", {"y": 0.003 - 0.02j}, F)
        left = (a @ b) @ c
        right = a @ (b @ c)
        assert np.allclose(left.as_array(), right.as_array(), rtol=1e-12, atol=0)
        assert np.allclose(cascade([a, b, c]).as_array(), left.as_array(), rtol=1e-12, atol=0)

    def test_inverse_gives_identity(self):
        m = cascade([line(33.0, F), component_abcd("shunt", {"y": 0.01j}, F)])
        assert np.allclose((m @ m.inverse()).as_array(), np.eye(2), atol=1e-12)

    def test_empty_cascade_rejected(self):
        with pytest.raises(ParameterError):
            cascade([])


class TestAbcdToS:
    def test_identity_is_a_through(self):
        s = abcd_to_s(AbcdMatrix.identity(), 50, 50)
        assert np.allclose(s.s[0], [[0, 1], [1, 0]])

    def test_series_resistor(self):
        s = abcd_to_s(component_abcd("series", {"z": 50.0}, 6e9), 50, 50)
        assert s.entry(1, 1)[0] == pytest.approx(1 / 3)
        assert s.entry(2, 1)[0] == pytest.approx(2 / 3)

    def test_quarter_wave_transmission(self):
        s = abcd_to_s(line(90.0, 6e9), 50, 50)
        assert s.entry(2, 1)[0] == pytest.approx(-1j, abs=1e-12)
        assert abs(s.entry(1, 1)[0]) < 1e-12

    def test_unequal_references_through(self):
        s = abcd_to_s(AbcdMatrix.identity(), 20, 120)
        assert s.entry(1, 1)[0] == pytest.approx(100 / 140)
        assert s.entry(2, 1)[0] == pytest.approx(2 * np.sqrt(2400) / 140)

    def test_degenerate_denominator(self):
        with pytest.raises(NumericError):
            abcd_to_s(AbcdMatrix(1.0, -100.0, 0.0, 1.0), 50, 50)

    def test_complex_reference_rejected(self):
        with pytest.raises(ParameterError):
            abcd_to_s(AbcdMatrix.identity(), 50 + 1j, 50)

    def test_s_to_abcd_recovers_chain(self):
        m = cascade([component_abcd("series", {"z": 10 + 5j}, F), line(40.0, F),
                     component_abcd("shunt", {"y": 0.01j}, F)])
        back = s_to_abcd(abcd_to_s(m, 20.0, 120.0))
        assert np.allclose(back.as_array(), m.as_array(), rtol=1e-10, atol=1e-12)

    def test_lossy_network_is_passive(self):
        m = cascade([component_abcd("series", {"z": 10 + 20j}, F), line(65.0, F),
                     component_abcd("shunt", {"y": 0.002 + 0.01j}, F)])
        s = abcd_to_s(m, 50, 50)
        assert is_passive(s)
        assert singular_values(s).shape == (F.size, 2)

    def test_connect_s_matches_chain_product(self):
        a = cascade([component_abcd("series", {"z": 5 + 30j}, F), line(20.0, F)])
        b = cascade([component_abcd("shunt", {"y": 0.004 - 0.01j}, F), line(70.0, F, z0=60.0)])
        joined = connect_s(abcd_to_s(a, 50, 50), abcd_to_s(b, 50, 50))
        direct = abcd_to_s(a @ b, 50, 50)
        assert np.allclose(joined.s, direct.s, atol=1e-12)

    def test_connect_s_requires_shared_reference(self):
        with pytest.raises(ParameterError):
            connect_s(abcd_to_s(AbcdMatrix.identity(), 50, 50), abcd_to_s(AbcdMatrix.identity(), 75, 50))


class TestRenormalize:
    def test_same_references_leave_s_unchanged(self, rng):
        s = SMatrix(random_s(rng, 5, 2), (50.0, 50.0))
        assert np.array_equal(renormalize_s(s, (50.0, 50.0)).s, s.s)

    def test_through_seen_from_mismatched_ports(self):
        s = abcd_to_s(AbcdMatrix.identity(), 50, 50)
        r = renormalize_s(s, (20.0, 120.0))
        direct = abcd_to_s(AbcdMatrix.identity(), 20, 120)
        assert r.s[0, 0, 0] == pytest.approx(5 / 7)
        assert np.allclose(r.s, direct.s, atol=1e-12)

    @pytest.mark.parametrize("ports,refs", [(2, (20.0, 120.0)), (3, (30.0, 75.0, 100.0))])
    def test_renormalize_and_back(self, rng, ports, refs):
        s = SMatrix(random_s(rng, 20, ports), (50.0,) * ports)
        back = renormalize_s(renormalize_s(s, refs), (50.0,) * ports)
        assert np.allclose(back.s, s.s, atol=1e-12)

    def test_preserves_reciprocity(self):
        m = cascade([component_abcd("series", {"z": 15j}, F), line(50.0, F)])
        r = renormalize_s(abcd_to_s(m, 50, 50), (25.0, 90.0))
        assert np.allclose(r.entry(1, 2), r.entry(2, 1), atol=1e-12)

    @pytest.mark.parametrize("refs", [(0.0, 50.0), (-10.0, 50.0), (50.0,)])
    def test_invalid_references(self, refs):
        s = abcd_to_s(AbcdMatrix.identity(), 50, 50)
        with pytest.raises(ParameterError):
            renormalize_s(s, refs)


class TestTermination:
    def test_matched_port_leaves_submatrix(self, rng):
        s = SMatrix(random_s(rng, 7, 3), (50.0, 50.0, 50.0))
        reduced = terminate_3port(s, 2, 0.0)
        assert np.array_equal(reduced.s, s.s[:, [0, 2]][:, :, [0, 2]])

    @pytest.mark.parametrize("gamma", [1.0, -1.0])
    def test_circulator_routes_reflection_to_output(self, gamma):
        circulator = CirculatorModel(300.0).s_matrix(1)
        reduced = terminate_3port(circulator, 2, gamma)
        assert reduced.entry(2, 1)[0] == pytest.approx(gamma, abs=1e-12)

    def test_leakage_adds_to_reflection(self):
        circulator = CirculatorModel(20.0).s_matrix(1)
        reduced = terminate_3port(circulator, 2, 0.0)
        assert reduced.entry(2, 1)[0] == pytest.approx(0.1)

    def test_resonant_termination(self):
        s = np.zeros((1, 3, 3), dtype=complex)
        s[0, 1, 1] = 1.0
        with pytest.raises(NumericError):
            terminate_3port(SMatrix(s, (50.0, 50.0, 50.0)), 2, 1.0)

    def test_needs_three_ports(self):
        with pytest.raises(ParameterError):
            terminate_3port(abcd_to_s(AbcdMatrix.identity(), 50, 50), 1, 0.0)


class TestReflectionOfImpedance:
    def test_known_values(self):
        assert reflection_of_impedance(50.0, 50.0) == pytest.approx(0.0)
        assert reflection_of_impedance(0.0, 50.0) == pytest.approx(-1.0)
        assert reflection_of_impedance(Termination.OPEN, 50.0) == 1.0
        assert reflection_of_impedance(Termination.SHORT, 50.0) == -1.0
        assert reflection_of_impedance(150.0, 50.0) == pytest.approx(0.5)

    def test_minus_reference_is_degenerate(self):
        with pytest.raises(NumericError):
            reflection_of_impedance(-50.0, 50.0)

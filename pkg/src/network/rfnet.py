"""
Frequency-domain network algebra for two- and three-port circuits.

All element matrices are evaluated per frequency point and vectorized with
numpy: every entry of an `AbcdMatrix` or `SMatrix` carries one value per grid
point. Reference impedances are positive reals.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np

from src.errors import NumericError, ParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, complex, np.ndarray]


class Termination(Enum):
    """Ideal terminations whose impedance is zero or infinite."""
    OPEN = "open"
    SHORT = "short"


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Strictly increasing, positive frequency points in Hz."""
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).ravel()
        if points.size == 0:
            raise ParameterError("frequency grid is empty")
        if not np.all(np.isfinite(points)) or np.any(points <= 0):
            raise ParameterError("frequency grid points must be finite and > 0")
        if points.size > 1 and np.any(np.diff(points) <= 0):
            raise ParameterError("frequency grid must be strictly increasing")
        object.__setattr__(self, "points", points)

    @classmethod
    def linspace(cls, start: float, stop: float, num: int) -> "FrequencyGrid":
        return cls(np.linspace(start, stop, num))

    def __len__(self) -> int:
        return self.points.size

    @property
    def span(self) -> float:
        return float(self.points[-1] - self.points[0])

    @property
    def center(self) -> float:
        return float(0.5 * (self.points[0] + self.points[-1]))

    def same_as(self, other: "FrequencyGrid") -> bool:
        return len(self) == len(other) and np.array_equal(self.points, other.points)


@dataclass(frozen=True, eq=False)
class ComplexTrace:
    """Complex dimensionless samples, one per grid point."""
    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex).ravel()
        if values.size != len(self.grid):
            raise ParameterError(
                f"trace has {values.size} values for {len(self.grid)} grid points")
        if not np.all(np.isfinite(values)):
            raise ParameterError("trace values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.points

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "ComplexTrace":
        return ComplexTrace(self.grid, values)


def require_aligned(*traces) -> FrequencyGrid:
    """Return the common grid of the given traces (or grids) or raise."""
    grids = [t if isinstance(t, FrequencyGrid) else t.grid for t in traces]
    first = grids[0]
    for other in grids[1:]:
        if not first.same_as(other):
            raise ParameterError("grid mismatch: traces are not sampled on the same frequencies")
    return first


@dataclass(frozen=True, eq=False)
class AbcdMatrix:
    """Chain matrix [[a, b], [c, d]]; b in Ohms, c in Siemens."""
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=complex))

    @classmethod
    def identity(cls) -> "AbcdMatrix":
        return cls(1.0, 0.0, 0.0, 1.0)

    def determinant(self) -> np.ndarray:
        return self.a * self.d - self.b * self.c

    def inverse(self) -> "AbcdMatrix":
        det = self.determinant()
        if np.any(det == 0):
            raise NumericError("singular ABCD matrix has no inverse")
        return AbcdMatrix(self.d / det, -self.b / det, -self.c / det, self.a / det)

    def __matmul__(self, other: "AbcdMatrix") -> "AbcdMatrix":
        return AbcdMatrix(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def as_array(self) -> np.ndarray:
        """Stack into shape (..., 2, 2)."""
        a, b, c, d = np.broadcast_arrays(self.a, self.b, self.c, self.d)
        return np.stack([np.stack([a, b], axis=-1), np.stack([c, d], axis=-1)], axis=-2)


@dataclass(frozen=True, eq=False)
class SMatrix:
    """Scattering matrix of shape (n_freq, P, P) with real port references."""
    s: np.ndarray
    z_ref: Tuple[float, ...]

    def __post_init__(self):
        s = np.asarray(self.s, dtype=complex)
        if s.ndim == 2:
            s = s[np.newaxis, :, :]
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise ParameterError(f"S-matrix must be square per frequency, got shape {s.shape}")
        _check_references(self.z_ref)
        z_ref = tuple(float(z) for z in self.z_ref)
        if len(z_ref) != s.shape[1]:
            raise ParameterError("one reference impedance per port is required")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "z_ref", z_ref)

    @property
    def n_ports(self) -> int:
        return self.s.shape[1]

    def entry(self, out_port: int, in_port: int) -> np.ndarray:
        """s_ij with 1-based port numbers."""
        return self.s[:, out_port - 1, in_port - 1]


def _check_references(refs: Iterable[float]) -> None:
    for z in refs:
        if isinstance(z, complex) or not np.isfinite(z) or z <= 0:
            raise ParameterError(f"reference impedance must be a positive real, got {z!r}")


def _check_finite(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=complex)
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} must be finite")
    return arr


def component_abcd(kind: str, params: Dict, f: ArrayLike) -> AbcdMatrix:
    """
    ABCD matrix of a single circuit element.

    Args:
        kind: 'line', 'series' or 'shunt'
        params: line -> z0 (Ohms), length_deg, f_ref (Hz);
                series -> z (Ohms); shunt -> y (Siemens)
        f: frequency or array of frequencies in Hz

    Returns:
        AbcdMatrix evaluated at f
    """
    f = np.asarray(f, dtype=float)
    if kind == "line":
        z0 = params.get("z0")
        length = params.get("length_deg", 0.0)
        f_ref = params.get("f_ref")
        if z0 is None or f_ref is None:
            raise ParameterError("line requires z0 and f_ref")
        if not np.isfinite(z0) or z0 <= 0:
            raise ParameterError(f"line characteristic impedance must be > 0, got {z0}")
        if not np.isfinite(length) or not np.isfinite(f_ref) or f_ref <= 0:
            raise ParameterError("line length and reference frequency must be finite")
        # TEM line: electrical length scales linearly with frequency
        phi = np.deg2rad(length) * f / f_ref
        cos_phi = np.cos(phi)
        sin_phi = np.sin(phi)
        return AbcdMatrix(cos_phi, 1j * z0 * sin_phi, 1j * sin_phi / z0, cos_phi)
    if kind == "series":
        z = _check_finite("series impedance", params.get("z"))
        one = np.ones(np.broadcast(z, f).shape)
        return AbcdMatrix(one, z * one, 0 * one, one)
    if kind == "shunt":
        y = _check_finite("shunt admittance", params.get("y"))
        one = np.ones(np.broadcast(y, f).shape)
        return AbcdMatrix(one, 0 * one, y * one, one)
    raise ParameterError(f"unknown component kind '{kind}'")


def cascade(elements: Sequence[AbcdMatrix]) -> AbcdMatrix:
    """Left-to-right product of chain matrices."""
    if not elements:
        raise ParameterError("cascade needs at least one element")
    total = elements[0]
    for element in elements[1:]:
        total = total @ element
    return total


def _first_bad_index(mask: np.ndarray) -> int:
    flat = np.atleast_1d(mask)
    return int(np.flatnonzero(flat)[0])


def abcd_to_s(m: AbcdMatrix, zref1: float, zref2: float) -> SMatrix:
    """
    Convert chain parameters to S-parameters with unequal real references.
    """
    _check_references((zref1, zref2))
    a, b, c, d = np.broadcast_arrays(*(np.atleast_1d(x) for x in (m.a, m.b, m.c, m.d)))
    den = a * zref2 + b + c * zref1 * zref2 + d * zref1
    bad = (den == 0) | ~np.isfinite(den)
    if np.any(bad):
        raise NumericError("degenerate network in ABCD to S conversion", _first_bad_index(bad))
    root = 2.0 * np.sqrt(zref1 * zref2)
    s = np.empty(den.shape + (2, 2), dtype=complex)
    s[..., 0, 0] = (a * zref2 + b - c * zref1 * zref2 - d * zref1) / den
    s[..., 0, 1] = root * (a * d - b * c) / den
    s[..., 1, 0] = root / den
    s[..., 1, 1] = (-a * zref2 + b - c * zref1 * zref2 + d * zref1) / den
    return SMatrix(s, (zref1, zref2))


def s_to_abcd(s: SMatrix) -> AbcdMatrix:
    """Inverse of abcd_to_s; undefined where s21 vanishes."""
    if s.n_ports != 2:
        raise ParameterError("s_to_abcd needs a two-port")
    z1, z2 = s.z_ref
    s11, s12, s21, s22 = s.s[:, 0, 0], s.s[:, 0, 1], s.s[:, 1, 0], s.s[:, 1, 1]
    if np.any(s21 == 0):
        raise NumericError("s21 vanishes, chain parameters undefined", _first_bad_index(s21 == 0))
    two_s21 = 2.0 * s21
    a = ((1 + s11) * (1 - s22) + s12 * s21) / two_s21 * np.sqrt(z1 / z2)
    b = ((1 + s11) * (1 + s22) - s12 * s21) / two_s21 * np.sqrt(z1 * z2)
    c = ((1 - s11) * (1 - s22) - s12 * s21) / two_s21 / np.sqrt(z1 * z2)
    d = ((1 - s11) * (1 + s22) + s12 * s21) / two_s21 * np.sqrt(z2 / z1)
    return AbcdMatrix(a, b, c, d)


def connect_s(first: SMatrix, second: SMatrix) -> SMatrix:
    """
    Cascade two two-ports in the S domain (port 2 of `first` to port 1 of `second`).
    Stays well defined when a transmission term is zero.
    """
    if first.n_ports != 2 or second.n_ports != 2:
        raise ParameterError("connect_s joins two-ports only")
    if not np.isclose(first.z_ref[1], second.z_ref[0]):
        raise ParameterError("connected ports must share a reference impedance")
    a, b = np.broadcast_arrays(first.s, second.s)
    den = 1 - a[:, 1, 1] * b[:, 0, 0]
    if np.any(den == 0):
        raise NumericError("resonant connection between two-ports", _first_bad_index(den == 0))
    s = np.empty_like(a)
    s[:, 0, 0] = a[:, 0, 0] + a[:, 0, 1] * b[:, 0, 0] * a[:, 1, 0] / den
    s[:, 0, 1] = a[:, 0, 1] * b[:, 0, 1] / den
    s[:, 1, 0] = b[:, 1, 0] * a[:, 1, 0] / den
    s[:, 1, 1] = b[:, 1, 1] + b[:, 1, 0] * a[:, 1, 1] * b[:, 0, 1] / den
    return SMatrix(s, (first.z_ref[0], second.z_ref[1]))


def renormalize_s(s: SMatrix, new_refs: Sequence[float]) -> SMatrix:
    """
    Power-wave renormalization to new real port references.

    With r_i = (Z'_i - Z_i)/(Z'_i + Z_i) and t_i = 2 sqrt(Z_i Z'_i)/(Z_i + Z'_i):
    S' = T^-1 (S - R)(I - R S)^-1 T.
    """
    _check_references(new_refs)
    new_refs = tuple(float(z) for z in new_refs)
    if len(new_refs) != s.n_ports:
        raise ParameterError("one new reference per port is required")
    if s.n_ports > 3:
        raise ParameterError("renormalization is limited to three ports")
    old = np.asarray(s.z_ref)
    new = np.asarray(new_refs)
    if np.array_equal(old, new):
        return SMatrix(s.s.copy(), new_refs)
    r = (new - old) / (new + old)
    t = 2.0 * np.sqrt(old * new) / (old + new)
    eye = np.eye(s.n_ports)
    lhs = eye - r[:, np.newaxis] * s.s
    numer = s.s - np.diag(r)
    # M = (S - R)(I - RS)^-1, solved as M (I - RS) = (S - R)
    m = np.swapaxes(np.linalg.solve(np.swapaxes(lhs, -1, -2), np.swapaxes(numer, -1, -2)), -1, -2)
    renorm = m * t[np.newaxis, :] / t[:, np.newaxis]
    return SMatrix(renorm, new_refs)


def terminate_3port(s: SMatrix, port: int, gamma: ArrayLike) -> SMatrix:
    """
    Load one port of a three-port with reflection `gamma`, leaving a two-port
    made of the remaining ports in ascending order.
    """
    if s.n_ports != 3:
        raise ParameterError("terminate_3port needs a three-port")
    if port not in (1, 2, 3):
        raise ParameterError(f"port must be 1, 2 or 3, got {port}")
    gamma = np.broadcast_to(_check_finite("termination reflection", gamma), (s.s.shape[0],))
    k = port - 1
    keep = [i for i in range(3) if i != k]
    den = 1 - s.s[:, k, k] * gamma
    if np.any(den == 0):
        raise NumericError("termination resonates with the port reflection", _first_bad_index(den == 0))
    reduced = np.empty((s.s.shape[0], 2, 2), dtype=complex)
    for out_i, i in enumerate(keep):
        for in_j, j in enumerate(keep):
            reduced[:, out_i, in_j] = s.s[:, i, j] + s.s[:, i, k] * gamma * s.s[:, k, j] / den
    return SMatrix(reduced, tuple(s.z_ref[i] for i in keep))


def reflection_of_impedance(z: Union[ArrayLike, Termination], zref: float) -> np.ndarray:
    """Gamma = (z - zref)/(z + zref); OPEN maps to +1 and SHORT to -1."""
    _check_references((zref,))
    if z is Termination.OPEN:
        return np.asarray(1.0 + 0j)
    if z is Termination.SHORT:
        return np.asarray(-1.0 + 0j)
    z = np.asarray(z, dtype=complex)
    den = z + zref
    if np.any(den == 0):
        raise NumericError("impedance equals -zref", _first_bad_index(den == 0))
    return (z - zref) / den


def singular_values(s: SMatrix) -> np.ndarray:
    """Per-frequency singular values, shape (n_freq, P)."""
    return np.linalg.svd(s.s, compute_uv=False)


def is_passive(s: SMatrix, tol: float = 1e-9) -> bool:
    return bool(np.all(singular_values(s) <= 1 + tol))

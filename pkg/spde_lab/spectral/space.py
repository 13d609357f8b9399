"""
Divergence-free Fourier eigenbasis of the Stokes operator on the 3-torus

Fields are stored as complex 3-vector coefficients on the retained
wavevectors of a GalerkinSpace. The zero mode is excluded, so -A is
strictly positive with eigenvalue |k|^2 on every retained mode.

Inner products use the normalized measure on the torus:
(x, y) = Re sum_k conj(x_k) . y_k, which is the spatial mean of x . y.
"""

from itertools import product
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import InvalidArgumentError, InvariantViolationError

WaveVector = Tuple[int, int, int]

SQRT2 = np.sqrt(2.0)


def _mode_key(k: WaveVector) -> Tuple[int, int, int, int]:
    return (k[0] ** 2 + k[1] ** 2 + k[2] ** 2, k[0], k[1], k[2])


def _is_representative(k: WaveVector) -> bool:
    """True for the member of {k, -k} whose first nonzero component is positive"""
    for component in k:
        if component != 0:
            return component > 0
    return False


def _polarizations(k: np.ndarray) -> np.ndarray:
    """Two real orthonormal vectors spanning the plane orthogonal to k"""
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(k)))] = 1.0
    e1 = np.cross(axis, k)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(k, e1)
    e2 /= np.linalg.norm(e2)
    return np.stack([e1, e2])


class GalerkinSpace:
    """
    Retained Stokes modes for a cutoff level and the eigenvalue table of -A

    The space is immutable after construction; every array attribute is
    read-only so instances can be shared between workers.
    """

    def __init__(self, cutoff: int):
        if cutoff < 1:
            raise InvalidArgumentError(f"cutoff must be >= 1, got {cutoff} (empty space)")
        self.cutoff = int(cutoff)

        modes = [
            k for k in product(range(-cutoff, cutoff + 1), repeat=3) if k != (0, 0, 0)
        ]
        modes.sort(key=_mode_key)
        self._modes: List[WaveVector] = modes
        self._index: Dict[WaveVector, int] = {k: i for i, k in enumerate(modes)}

        self.wavevectors = np.array(modes, dtype=np.int64)
        self.eigenvalues = np.sum(self.wavevectors.astype(float) ** 2, axis=1)
        self.negation = np.array([self._index[(-k[0], -k[1], -k[2])] for k in modes], dtype=np.int64)
        self.half = np.array([i for i, k in enumerate(modes) if _is_representative(k)], dtype=np.int64)

        kf = self.wavevectors.astype(float)
        self.leray = np.eye(3)[None, :, :] - kf[:, :, None] * kf[:, None, :] / self.eigenvalues[:, None, None]
        self.polarizations = np.stack([_polarizations(kf[i]) for i in self.half])

        # real basis ordering: representative mode, polarization, (cos, sin)
        self.real_eigenvalues = np.repeat(self.eigenvalues[self.half], 4)
        self.dim = 4 * len(self.half)

        for array in (
            self.wavevectors, self.eigenvalues, self.negation, self.half,
            self.leray, self.polarizations, self.real_eigenvalues,
        ):
            array.setflags(write=False)

    @property
    def mode_list(self) -> List[WaveVector]:
        return list(self._modes)

    @property
    def n_modes(self) -> int:
        return len(self._modes)

    def index_of(self, k: Sequence[int]) -> int:
        key = (int(k[0]), int(k[1]), int(k[2]))
        if key not in self._index:
            raise InvalidArgumentError(f"wavevector {key} is not retained at cutoff {self.cutoff}")
        return self._index[key]

    def contains(self, k: Sequence[int]) -> bool:
        return (int(k[0]), int(k[1]), int(k[2])) in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GalerkinSpace) and other.cutoff == self.cutoff

    def __hash__(self) -> int:
        return hash(("GalerkinSpace", self.cutoff))

    def __repr__(self) -> str:
        return f"GalerkinSpace(cutoff={self.cutoff}, modes={self.n_modes}, dim={self.dim})"

    def zeros(self, *batch: int) -> np.ndarray:
        return np.zeros((*batch, self.n_modes, 3), dtype=complex)

    # ------------------------------------------------------------------
    # real orthonormal eigenbasis coordinates
    # ------------------------------------------------------------------

    def to_real(self, coeffs: np.ndarray) -> np.ndarray:
        """
        Coordinates of real divergence-free fields in the orthonormal basis
        sqrt(2) cos(k.xi) e_p, sqrt(2) sin(k.xi) e_p

        Args:
            coeffs: Complex coefficients of shape (..., n_modes, 3)

        Returns:
            Real array of shape (..., dim)
        """
        projected = np.einsum("...hj,hpj->...hp", coeffs[..., self.half, :], self.polarizations)
        real = np.stack([SQRT2 * projected.real, -SQRT2 * projected.imag], axis=-1)
        return real.reshape(*coeffs.shape[:-2], self.dim)

    def from_real(self, real: np.ndarray) -> np.ndarray:
        """Inverse of to_real; the result is divergence-free and real by construction"""
        shaped = real.reshape(*real.shape[:-1], len(self.half), 2, 2)
        z = (shaped[..., 0] - 1j * shaped[..., 1]) / SQRT2
        half_coeffs = np.einsum("...hp,hpj->...hj", z, self.polarizations)
        coeffs = np.zeros((*real.shape[:-1], self.n_modes, 3), dtype=complex)
        coeffs[..., self.half, :] = half_coeffs
        coeffs[..., self.negation[self.half], :] = np.conj(half_coeffs)
        return coeffs

    # ------------------------------------------------------------------
    # array-level operators
    # ------------------------------------------------------------------

    def power_weights(self, gamma: float) -> np.ndarray:
        """Multipliers |k|^(2 gamma) of (-A)^gamma per retained mode"""
        return self.eigenvalues ** gamma

    def apply_power(self, coeffs: np.ndarray, gamma: float) -> np.ndarray:
        return coeffs * self.power_weights(gamma)[:, None]

    def norm_sq(self, coeffs: np.ndarray, gamma: float = 0.0) -> np.ndarray:
        """|(-A)^gamma x|^2 over the trailing (n_modes, 3) axes"""
        weights = self.eigenvalues ** (2.0 * gamma)
        return np.einsum("k,...kj->...", weights, np.abs(coeffs) ** 2)

    def inner(self, x: np.ndarray, y: np.ndarray, gamma: float = 0.0) -> np.ndarray:
        """((-A)^gamma x, (-A)^gamma y) over the trailing axes"""
        weights = self.eigenvalues ** (2.0 * gamma)
        return np.einsum("k,...kj,...kj->...", weights, np.conj(x), y).real

    def leray_project(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("kij,...kj->...ki", self.leray, coeffs)

    def divergence_defect(self, coeffs: np.ndarray) -> float:
        """max_k |k . c_k| relative to the largest coefficient"""
        defect = np.abs(np.einsum("kj,...kj->...k", self.wavevectors.astype(float), coeffs))
        scale = max(1.0, float(np.max(np.abs(coeffs), initial=0.0)))
        return float(np.max(defect, initial=0.0)) / scale

    def reality_defect(self, coeffs: np.ndarray) -> float:
        mirrored = np.conj(coeffs[..., self.negation, :])
        scale = max(1.0, float(np.max(np.abs(coeffs), initial=0.0)))
        return float(np.max(np.abs(coeffs - mirrored), initial=0.0)) / scale

    def assert_valid(self, coeffs: np.ndarray, tol: float = 1e-9, where: str = "") -> None:
        """Raise InvariantViolationError unless coeffs are divergence-free and real"""
        div = self.divergence_defect(coeffs)
        if div > tol:
            raise InvariantViolationError(f"divergence-free constraint violated{where}: defect {div:.3e}")
        real = self.reality_defect(coeffs)
        if real > tol:
            raise InvariantViolationError(f"reality constraint violated{where}: defect {real:.3e}")

    # ------------------------------------------------------------------
    # physical space
    # ------------------------------------------------------------------

    def grid_size(self, n_grid: Optional[int] = None) -> int:
        n = n_grid if n_grid is not None else 2 * self.cutoff + 2
        if n <= 2 * self.cutoff:
            raise InvalidArgumentError(f"grid of size {n} does not resolve cutoff {self.cutoff}")
        return n

    def to_grid(self, coeffs: np.ndarray, n_grid: Optional[int] = None) -> np.ndarray:
        """Velocity on an n^3 tensor grid, shape (..., 3, n, n, n)"""
        n = self.grid_size(n_grid)
        idx = tuple(np.mod(self.wavevectors[:, d], n) for d in range(3))
        spectrum = np.zeros((*coeffs.shape[:-2], 3, n, n, n), dtype=complex)
        spectrum[(..., slice(None)) + idx] = np.moveaxis(coeffs, -1, -2)
        return np.fft.ifftn(spectrum, axes=(-3, -2, -1)).real * n ** 3

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        """Retained Fourier coefficients of grid values of shape (..., 3, n, n, n)"""
        n = values.shape[-1]
        spectrum = np.fft.fftn(values, axes=(-3, -2, -1)) / n ** 3
        idx = tuple(np.mod(self.wavevectors[:, d], n) for d in range(3))
        return np.moveaxis(spectrum[(..., slice(None)) + idx], -2, -1)


class SpectralField:
    """A real divergence-free velocity field on a GalerkinSpace"""

    __slots__ = ("space", "coeffs")

    def __init__(self, space: GalerkinSpace, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (space.n_modes, 3):
            raise InvalidArgumentError(
                f"coefficient array of shape {coeffs.shape} does not match {space!r}"
            )
        self.space = space
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, space: GalerkinSpace) -> "SpectralField":
        return cls(space, space.zeros())

    @classmethod
    def from_modes(cls, space: GalerkinSpace, modes: Mapping[WaveVector, Sequence[complex]]) -> "SpectralField":
        """
        Build a field from coefficients on representative wavevectors

        The coefficient on -k is set to the conjugate so the field is real.
        Coefficients must already be orthogonal to their wavevector.
        """
        coeffs = space.zeros()
        for k, value in modes.items():
            vec = np.asarray(value, dtype=complex)
            kf = np.asarray(k, dtype=float)
            if abs(np.dot(kf, vec)) > 1e-12 * max(1.0, float(np.max(np.abs(vec)))):
                raise InvalidArgumentError(f"coefficient on {tuple(k)} is not orthogonal to the wavevector")
            i = space.index_of(k)
            coeffs[i] += vec
            coeffs[space.negation[i]] += np.conj(vec)
        return cls(space, coeffs)

    @classmethod
    def from_real(cls, space: GalerkinSpace, real: np.ndarray) -> "SpectralField":
        return cls(space, space.from_real(np.asarray(real, dtype=float)))

    def to_real(self) -> np.ndarray:
        return self.space.to_real(self.coeffs)

    def copy(self) -> "SpectralField":
        return SpectralField(self.space, self.coeffs.copy())

    def _check_same_space(self, other: "SpectralField") -> None:
        if other.space != self.space:
            raise InvalidArgumentError(f"space mismatch: {self.space!r} vs {other.space!r}")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_space(other)
        return SpectralField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_same_space(other)
        return SpectralField(self.space, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.space, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.space, -self.coeffs)

    def inner(self, other: "SpectralField", gamma: float = 0.0) -> float:
        self._check_same_space(other)
        return float(self.space.inner(self.coeffs, other.coeffs, gamma))

    def norm(self, gamma: float = 0.0) -> float:
        return float(np.sqrt(self.space.norm_sq(self.coeffs, gamma)))

    def is_valid(self, tol: float = 1e-12) -> bool:
        return self.space.divergence_defect(self.coeffs) <= tol and self.space.reality_defect(self.coeffs) <= tol

    def support(self) -> List[WaveVector]:
        nonzero = np.any(self.coeffs != 0, axis=1)
        return [k for k, keep in zip(self.space.mode_list, nonzero) if keep]

    def __repr__(self) -> str:
        return f"SpectralField(cutoff={self.space.cutoff}, |x|={self.norm():.6g}, |Ax|={self.norm(1.0):.6g})"


_SPACE_CACHE: Dict[int, GalerkinSpace] = {}


def build_space(cutoff: int) -> GalerkinSpace:
    """
    Build (or fetch) the Galerkin space retaining 0 < |k|_inf <= cutoff

    Args:
        cutoff: Positive truncation level

    Returns:
        The immutable GalerkinSpace
    """
    if cutoff < 1:
        raise InvalidArgumentError(f"cutoff must be >= 1, got {cutoff} (empty space)")
    if cutoff not in _SPACE_CACHE:
        _SPACE_CACHE[cutoff] = GalerkinSpace(cutoff)
    return _SPACE_CACHE[cutoff]


def fractional_power(field: SpectralField, gamma: float) -> SpectralField:
    """(-A)^gamma applied to field; any real gamma since 0 is not in the spectrum"""
    return SpectralField(field.space, field.space.apply_power(field.coeffs, gamma))


def sobolev_norm(field: SpectralField, gamma: float) -> float:
    """|(-A)^gamma field|; gamma=0 is the H norm, 1/2 the V norm, 1 the D(A) norm"""
    return field.norm(gamma)


def project(field: SpectralField, space: GalerkinSpace) -> SpectralField:
    """
    Galerkin projector P_m onto the modes of space

    Coefficients outside space are dropped; modes of space absent from the
    field's own space are zero.
    """
    if field.space == space:
        return field.copy()
    source = field.space
    coeffs = space.zeros()
    if source.cutoff > space.cutoff:
        keep = np.all(np.abs(source.wavevectors) <= space.cutoff, axis=1)
        targets = [space.index_of(k) for k in source.wavevectors[keep]]
        coeffs[targets] = field.coeffs[keep]
    else:
        targets = [space.index_of(k) for k in source.wavevectors]
        coeffs[targets] = field.coeffs
    return SpectralField(space, coeffs)


def shear_mode(
    space: GalerkinSpace,
    k: WaveVector,
    direction: Sequence[float],
    amplitude: float = 1.0,
) -> SpectralField:
    """The real field amplitude * cos(k . xi) * direction; direction must be orthogonal to k"""
    vec = 0.5 * amplitude * np.asarray(direction, dtype=float)
    return SpectralField.from_modes(space, {tuple(k): vec})


def random_field(
    space: GalerkinSpace,
    rng: np.random.Generator,
    decay: float = 0.0,
    scale: float = 1.0,
) -> SpectralField:
    """Gaussian field with real-basis coordinates scaled by mu^(-decay)"""
    real = rng.standard_normal(space.dim) * scale * space.real_eigenvalues ** (-decay)
    return SpectralField.from_real(space, real)


def basis_field(space: GalerkinSpace, index: int) -> SpectralField:
    """The index-th real orthonormal eigenvector e_n"""
    real = np.zeros(space.dim)
    real[index] = 1.0
    return SpectralField.from_real(space, real)


def field_records(field: SpectralField) -> List[List[float]]:
    """Flat record stream: wavevector triple followed by 6 reals (Re, Im per component)"""
    records = []
    for k, c in zip(field.space.mode_list, field.coeffs):
        records.append([k[0], k[1], k[2], c[0].real, c[0].imag, c[1].real, c[1].imag, c[2].real, c[2].imag])
    return records


def field_from_records(cutoff: int, records: Iterable[Sequence[float]]) -> SpectralField:
    space = build_space(cutoff)
    coeffs = space.zeros()
    for record in records:
        i = space.index_of(record[:3])
        coeffs[i] = [complex(record[3], record[4]), complex(record[5], record[6]), complex(record[7], record[8])]
    return SpectralField(space, coeffs)

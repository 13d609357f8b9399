"""
State-dependent covariance Phi(x) = (-A)^(-alpha) + c kappa(x)

Two kappa families are supported:

* multiplier: diagonal in the real Stokes eigenbasis,
  kappa(x) e_n = mu_n^(-3/2) lambda_n tanh((x, e_n)) e_n
* integral_kernel: (kappa(x) h)_k = g_k P_k FFT[psi(x_1) h]_k, a
  divergence-free convolution kernel modulated by a smooth bump of the
  first velocity component, evaluated by grid quadrature

All linear algebra happens in real basis coordinates, where the
cylindrical Wiener increments live.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from ..config import NoiseSection
from ..exceptions import DegenerateNoiseError, InvalidArgumentError
from ..spectral import GalerkinSpace, SpectralField

SINGULAR_CONDITION = 1e12


@dataclass(frozen=True)
class KappaSpec:
    """Which kappa and its parameters"""

    variant: str = "multiplier"
    lambda_decay: float = 1.0
    kernel_scale: float = 1.0
    kernel_decay: float = 4.0
    kernel_radius: float = 4.0

    def __post_init__(self):
        if self.variant not in ("multiplier", "integral_kernel", "zero"):
            raise InvalidArgumentError(f"unknown kappa variant '{self.variant}'")
        if self.lambda_decay <= 0.5:
            raise InvalidArgumentError("lambda_decay must exceed 1/2 so that (lambda_n) is square summable")


def _bump(r: np.ndarray, radius: float) -> np.ndarray:
    s = (r / radius) ** 2
    inside = s < 1.0
    out = np.zeros_like(r)
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
    return out


def _bump_derivative(r: np.ndarray, radius: float) -> np.ndarray:
    s = (r / radius) ** 2
    inside = s < 1.0
    out = np.zeros_like(r)
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si)) * (-2.0 * r[inside] / radius ** 2) / (1.0 - si) ** 2
    return out


class NoiseOperator:
    """
    Covariance map x -> Phi_m(x) on a Galerkin space with its declared constants

    Immutable after construction. Construction asserts that Phi(x) has
    trivial kernel for every x.
    """

    def __init__(
        self,
        space: GalerkinSpace,
        alpha: float = 1.3,
        c: float = 0.05,
        kappa: Optional[KappaSpec] = None,
        M1: float = 100.0,
        g: float = 0.05,
        r: float = 1.4,
        delta: float = 1.0,
    ):
        if c < 0:
            raise InvalidArgumentError(f"coupling c must be >= 0, got {c}")
        self.space = space
        self.alpha = float(alpha)
        self.c = float(c)
        self.kappa = kappa or KappaSpec()
        self.M1 = float(M1)
        self.g = float(g)
        self.r = float(r)
        self.delta = float(delta)

        mu = space.real_eigenvalues
        self.base = mu ** (-self.alpha)
        self.lambdas = (1.0 + np.arange(space.dim)) ** (-self.kappa.lambda_decay)
        self.multiplier_weight = self.c * mu ** (-1.5) * self.lambdas
        self.kernel_weight = self.kappa.kernel_scale * space.eigenvalues ** (-0.5 * self.kappa.kernel_decay)
        self.n_grid = 4 * space.cutoff

        for array in (self.base, self.lambdas, self.multiplier_weight, self.kernel_weight):
            array.setflags(write=False)

        self._assert_invertible()
        logger.debug(f"NoiseOperator ready: alpha={self.alpha}, c={self.c}, kappa={self.kappa.variant}, dim={space.dim}")

    @classmethod
    def from_section(cls, space: GalerkinSpace, section: NoiseSection) -> "NoiseOperator":
        kappa = KappaSpec(**section.kappa.model_dump())
        return cls(space, section.alpha, section.c, kappa, section.M1, section.g, section.r, section.delta)

    @property
    def variant(self) -> str:
        return "zero" if self.c == 0.0 else self.kappa.variant

    @property
    def is_constant(self) -> bool:
        return self.variant == "zero"

    @property
    def is_diagonal(self) -> bool:
        return self.variant in ("zero", "multiplier")

    def _assert_invertible(self) -> None:
        mu = self.space.real_eigenvalues
        if self.variant == "multiplier":
            worst = float(np.max(self.c * self.lambdas * mu ** (self.alpha - 1.5)))
        elif self.variant == "integral_kernel":
            worst = float(np.max(self.c * self.space.eigenvalues ** self.alpha * self.kernel_weight))
        else:
            worst = 0.0
        if worst >= 1.0:
            raise DegenerateNoiseError(
                f"coupling c={self.c} too large: relative perturbation {worst:.3f} >= 1 may leave Phi(x) singular"
            )

    # ------------------------------------------------------------------
    # array-level kernels; x, h coefficient arrays (..., n_modes, 3),
    # w real coordinate arrays (..., dim)
    # ------------------------------------------------------------------

    def diagonal(self, x: np.ndarray) -> np.ndarray:
        """Per-coordinate entries of Phi(x) for the diagonal variants"""
        if self.variant == "zero":
            return np.broadcast_to(self.base, (*x.shape[:-2], self.space.dim))
        return self.base + self.multiplier_weight * np.tanh(self.space.to_real(x))

    def _kernel(self, x: np.ndarray, h: np.ndarray, derivative_of: Optional[np.ndarray] = None) -> np.ndarray:
        grid_x = self.space.to_grid(x, self.n_grid)
        first = grid_x[..., 0, :, :, :]
        if derivative_of is None:
            modulation = _bump(first, self.kappa.kernel_radius)
        else:
            direction = self.space.to_grid(derivative_of, self.n_grid)[..., 0, :, :, :]
            modulation = _bump_derivative(first, self.kappa.kernel_radius) * direction
        product = modulation[..., None, :, :, :] * self.space.to_grid(h, self.n_grid)
        coeffs = self.space.from_grid(product)
        return self.kernel_weight[:, None] * self.space.leray_project(coeffs)

    def apply_array(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Phi_m(x) w with w in real coordinates"""
        if self.is_diagonal:
            return self.space.from_real(self.diagonal(x) * w)
        w_coeffs = self.space.from_real(w)
        return self.space.from_real(self.base * w) + self.c * self._kernel(x, w_coeffs)

    def derivative_array(self, x: np.ndarray, h: np.ndarray, w: np.ndarray) -> np.ndarray:
        """(Phi'(x) . h) w with w in real coordinates"""
        if self.variant == "zero":
            return np.zeros(np.broadcast_shapes(x.shape, h.shape), dtype=complex)
        if self.variant == "multiplier":
            sech_sq = 1.0 - np.tanh(self.space.to_real(x)) ** 2
            return self.space.from_real(self.multiplier_weight * sech_sq * self.space.to_real(h) * w)
        return self.c * self._kernel(x, self.space.from_real(w), derivative_of=h)

    def matrix(self, x: np.ndarray) -> np.ndarray:
        """Galerkin matrix of Phi(x) in real coordinates, shape (..., dim, dim)"""
        if self.is_diagonal:
            diag = self.diagonal(x)
            return diag[..., :, None] * np.eye(self.space.dim)
        eye = np.eye(self.space.dim)
        columns = self.space.to_real(self.apply_array(x[..., None, :, :], eye))
        return np.swapaxes(columns, -1, -2)

    def derivative_matrix(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Galerkin matrix of Phi'(x) . h in real coordinates"""
        eye = np.eye(self.space.dim)
        columns = self.space.to_real(self.derivative_array(x[..., None, :, :], h[..., None, :, :], eye))
        return np.swapaxes(columns, -1, -2)

    def inverse_array(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Real coordinates of v with Phi_m(x) v = h"""
        h_real = self.space.to_real(h)
        if self.is_diagonal:
            diag = self.diagonal(x)
            if np.min(np.abs(diag)) <= np.max(np.abs(diag)) / SINGULAR_CONDITION:
                raise DegenerateNoiseError("Phi(x) has a numerically zero diagonal entry")
            return h_real / diag
        matrix = self.matrix(x)
        condition = np.linalg.cond(matrix)
        if np.any(~np.isfinite(condition)) or np.max(condition) > SINGULAR_CONDITION:
            raise DegenerateNoiseError(f"Phi(x) is numerically singular (condition {np.max(condition):.3e})")
        return np.linalg.solve(matrix, h_real[..., None])[..., 0]

    def trace_sup(self) -> float:
        """
        sup_x Tr[Phi(x) Phi*(x)] on the Galerkin space

        Exact for the diagonal variants; for the kernel variant the
        Hilbert-Schmidt triangle bound with |psi| <= 1.
        """
        if self.is_diagonal:
            return float(np.sum((self.base + np.abs(self.multiplier_weight)) ** 2))
        kernel_hs = np.sqrt(2.0 * np.sum(self.kernel_weight ** 2))
        return float((np.sqrt(np.sum(self.base ** 2)) + self.c * kernel_hs) ** 2)

    def _check_space(self, *fields: SpectralField) -> None:
        for item in fields:
            if item.space != self.space:
                raise InvalidArgumentError(
                    f"field on cutoff {item.space.cutoff} used with noise on cutoff {self.space.cutoff}"
                )


def apply_noise(op: NoiseOperator, x: SpectralField, w: SpectralField) -> SpectralField:
    """Phi_m(x) w = (-A)^(-alpha) w + c kappa(x) w, Galerkin-projected"""
    op._check_space(x, w)
    return SpectralField(op.space, op.apply_array(x.coeffs, w.to_real()))


def inverse_apply(op: NoiseOperator, x: SpectralField, h: SpectralField) -> SpectralField:
    """The unique v with Phi_m(x) v = h"""
    op._check_space(x, h)
    return SpectralField.from_real(op.space, op.inverse_array(x.coeffs, h.coeffs))


def noise_derivative(op: NoiseOperator, x: SpectralField, h: SpectralField, w: SpectralField) -> SpectralField:
    """(Phi'(x) . h) w = c (kappa'(x) . h) w"""
    op._check_space(x, h, w)
    return SpectralField(op.space, op.derivative_array(x.coeffs, h.coeffs, w.to_real()))


def trace_closed_form(space: GalerkinSpace, alpha: float, g: float) -> float:
    """Tr[(-A)^(1+g) (-A)^(-2 alpha)] on the space: sum over modes of 2 |k|^(2(1+g-2 alpha))"""
    return float(np.sum(2.0 * space.eigenvalues ** (1.0 + g - 2.0 * alpha)))


@dataclass
class AssumptionReport:
    """Witnesses of the trace, inverse and derivative bounds over sampled states"""

    trace_values: List[float] = field(default_factory=list)
    inverse_witness: List[float] = field(default_factory=list)
    derivative_witness: List[float] = field(default_factory=list)
    declared_M1: float = 0.0
    g: float = 0.0
    r: float = 0.0
    delta: float = 0.0
    convergence_bound: float = 0.0
    trace_converges: bool = True

    @property
    def max_trace(self) -> float:
        return max(self.trace_values, default=0.0)

    @property
    def max_inverse(self) -> float:
        return max(self.inverse_witness, default=0.0)

    @property
    def max_derivative(self) -> float:
        return max(self.derivative_witness, default=0.0)

    @property
    def flags(self) -> List[str]:
        out = []
        if self.max_trace > self.declared_M1:
            out.append(f"trace {self.max_trace:.4g} exceeds M1={self.declared_M1}")
        if self.max_inverse > self.declared_M1:
            out.append(f"inverse witness {self.max_inverse:.4g} exceeds M1={self.declared_M1}")
        if self.max_derivative > self.declared_M1:
            out.append(f"derivative witness {self.max_derivative:.4g} exceeds M1={self.declared_M1}")
        if not self.trace_converges:
            out.append(f"g={self.g} >= 2 alpha - 5/2 = {self.convergence_bound:.4g}: infinite trace diverges")
        return out

    @property
    def passed(self) -> bool:
        return not self.flags

    def to_dict(self) -> dict:
        return {
            "max_trace": self.max_trace,
            "max_inverse": self.max_inverse,
            "max_derivative": self.max_derivative,
            "declared_M1": self.declared_M1,
            "convergence_bound": self.convergence_bound,
            "trace_converges": self.trace_converges,
            "flags": self.flags,
            "states": len(self.trace_values),
        }


def validate_assumptions(
    op: NoiseOperator,
    sample_states: Sequence[SpectralField],
    random_directions: int = 4,
    seed: int = 0,
) -> AssumptionReport:
    """
    Evaluate the covariance assumptions on sampled states

    Args:
        op: The noise operator
        sample_states: Nonempty list of states x
        random_directions: Random h added to the basis directions for the derivative witness
        seed: Seed for the random directions

    Returns:
        AssumptionReport with per-state witnesses and flags against M1
    """
    if not sample_states:
        raise InvalidArgumentError("validate_assumptions needs at least one state")
    op._check_space(*sample_states)

    space = op.space
    mu = space.real_eigenvalues
    rng = np.random.default_rng(seed)
    directions = np.concatenate([np.eye(space.dim), rng.standard_normal((random_directions, space.dim))])

    report = AssumptionReport(
        declared_M1=op.M1,
        g=op.g,
        r=op.r,
        delta=op.delta,
        convergence_bound=2.0 * op.alpha - 2.5,
        trace_converges=op.g < 2.0 * op.alpha - 2.5,
    )

    for x in sample_states:
        matrix = op.matrix(x.coeffs)
        report.trace_values.append(float(np.sum(mu[:, None] ** (1.0 + op.g) * matrix ** 2)))

        inverse = np.linalg.inv(matrix) if not op.is_diagonal else np.diag(1.0 / np.diag(matrix))
        column_norms = np.linalg.norm(inverse, axis=0)
        report.inverse_witness.append(float(np.max(column_norms / mu ** op.r)))

        if op.is_constant:
            report.derivative_witness.append(0.0)
            continue
        best = 0.0
        for h_real in directions:
            h = space.from_real(h_real)
            deriv = op.derivative_matrix(x.coeffs, h)
            numerator = float(np.sum(mu[:, None] ** 2 * deriv ** 2))
            denominator = float(np.sum(mu ** (2.0 * op.delta) * h_real ** 2))
            best = max(best, numerator / denominator)
        report.derivative_witness.append(best)

    for flag in report.flags:
        logger.warning(f"Noise assumption flag: {flag}")
    return report

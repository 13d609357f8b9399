"""
Type definitions for spde-lab
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..exceptions import InvalidArgumentError
from ..spectral import GalerkinSpace, SpectralField


# Integration schemes
class Scheme(Enum):
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"


# Observable classes
class ObservableClass(Enum):
    C_K = "C_k"
    E_CLASS = "E_class"
    BOUNDED = "bounded"
    CYLINDRICAL = "cylindrical"


@dataclass
class Trajectory:
    """
    One integrated path on a time grid

    States, variation and convolution are coefficient arrays of shape
    (n_steps + 1, n_modes, 3); increments are real-basis Brownian
    increments of shape (n_steps, dim) kept for replay.
    """

    space: GalerkinSpace
    times: np.ndarray
    states: np.ndarray
    increments: np.ndarray
    variation: Optional[np.ndarray] = None
    convolution: Optional[np.ndarray] = None
    seed: Optional[int] = None
    key: Tuple[int, ...] = ()

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_steps > 0 else 0.0

    @property
    def has_variation(self) -> bool:
        return self.variation is not None

    @property
    def has_convolution(self) -> bool:
        return self.convolution is not None

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.space, self.states[i])

    @property
    def final(self) -> SpectralField:
        return self.state(-1)

    def fields(self, which: str = "states") -> List[SpectralField]:
        data = getattr(self, which)
        if data is None:
            raise InvalidArgumentError(f"trajectory carries no {which}")
        return [SpectralField(self.space, row) for row in data]


@dataclass
class McEstimate:
    """Monte Carlo estimate with its standard error and censoring count"""

    value: float
    stderr: float
    samples: int
    seed: Optional[int]
    censored: int = 0
    quantity: str = ""
    valid: bool = True
    lower_bound: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EstimateReport:
    """
    Empirical witness for one a priori estimate

    A gated report passes exactly when its margin is nonnegative; an
    ungated report is informational and always passes.
    """

    name: str
    witness: Dict[str, Any]
    margin: float
    meta: Dict[str, Any] = field(default_factory=dict)
    details: List[Dict[str, Any]] = field(default_factory=list)
    gated: bool = True
    reference: str = ""

    @property
    def passed(self) -> bool:
        return (not self.gated) or bool(self.margin >= 0.0)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["passed"] = self.passed
        return data


@dataclass
class EmpiricalMeasure:
    """Weighted sample set approximating an invariant measure"""

    space: GalerkinSpace
    samples: np.ndarray
    weights: np.ndarray
    burn_in: float
    stride: float
    sources: List[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.samples) != len(self.weights):
            raise InvalidArgumentError("one weight per sample is required")
        if len(self.weights) and (np.any(self.weights < 0) or abs(np.sum(self.weights) - 1.0) > 1e-9):
            raise InvalidArgumentError("weights must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, space: GalerkinSpace, samples: np.ndarray, burn_in: float, stride: float, sources=None):
        n = len(samples)
        weights = np.full(n, 1.0 / n) if n else np.zeros(0)
        return cls(space, samples, weights, burn_in, stride, list(sources or []))

    def __len__(self) -> int:
        return len(self.samples)

    def expectation(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@dataclass
class ControlPath:
    """Deterministic steering path x̄ with its control ḡ and cutoff radius R"""

    space: GalerkinSpace
    T_star: float
    T: float
    dt: float
    n_star: int
    times: np.ndarray
    xbar: np.ndarray
    gbar: np.ndarray
    R: float

    def xbar_at(self, i: int) -> SpectralField:
        return SpectralField(self.space, self.xbar[i])

    def gbar_at(self, i: int) -> SpectralField:
        return SpectralField(self.space, self.gbar[i])


@dataclass
class ReachabilityReport:
    """Outcome of driving the controlled system towards the target ball"""

    distance: float
    epsilon: float
    reached: bool
    sup_norm: float
    R: float
    cutoff_inactive: bool
    breach_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class HandlerResult:
    """Result of one subcommand handler"""

    success: bool
    data: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    exit_code: int = 0


@dataclass
class RunManifest:
    """Provenance and outcome of one run"""

    subcommand: str
    config_hash: str
    version: str
    started_at: str
    finished_at: str = ""
    outputs: List[str] = field(default_factory=list)
    passed: bool = True
    errors: List[str] = field(default_factory=list)
    exit_code: int = 0
    reports: List[Dict[str, Any]] = field(default_factory=list)
    estimates: List[Dict[str, Any]] = field(default_factory=list)
    host: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        known = {name for name in cls.__dataclass_fields__}
        return cls(**{key: value for key, value in data.items() if key in known})


__all__ = [
    "Scheme",
    "ObservableClass",
    "Trajectory",
    "McEstimate",
    "EstimateReport",
    "EmpiricalMeasure",
    "ControlPath",
    "ReachabilityReport",
    "HandlerResult",
    "RunManifest",
]

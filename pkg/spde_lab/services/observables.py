"""
Named test observables phi on D(A)

Evaluators act on coefficient arrays of shape (..., n_modes, 3) and
return one value per leading index. They are built from module-level
functions and functools.partial so they pickle into worker processes.
"""

from dataclasses import dataclass
from functools import partial
from typing import Callable, List, Optional

import numpy as np

from ..exceptions import InvalidArgumentError
from ..spectral import GalerkinSpace, SpectralField
from ..types import ObservableClass

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Observable:
    """A test function with its class and declared norm bound"""

    name: str
    evaluator: Evaluator
    obs_class: ObservableClass
    bound: float = 1.0
    k: int = 0
    level: Optional[int] = None
    nonnegative: bool = False

    def __call__(self, x: SpectralField) -> float:
        return float(self.evaluator(x.coeffs))

    def batch(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(coeffs), dtype=float)

    def sup_norm(self) -> Optional[float]:
        """||phi||_0 for bounded classes, None otherwise"""
        if self.obs_class in (ObservableClass.BOUNDED, ObservableClass.CYLINDRICAL):
            return self.bound
        if self.obs_class == ObservableClass.E_CLASS and self.nonnegative:
            return self.bound
        return None

    def check_growth(self, coeffs: np.ndarray, space: GalerkinSpace) -> float:
        """Largest |phi(x)| / (bound (1 + |Ax|)^k) over a sample batch; <= 1 when the C_k bound holds"""
        values = np.abs(self.batch(coeffs))
        a_norm = np.sqrt(space.norm_sq(coeffs, 1.0))
        return float(np.max(values / (self.bound * (1.0 + a_norm) ** self.k), initial=0.0))

    def check_e_class(self, x1: np.ndarray, x2: np.ndarray, space: GalerkinSpace) -> float:
        """Largest E-class ratio over sample pairs; <= 1 when the E bound holds"""
        diff = np.abs(self.batch(x2) - self.batch(x1))
        scale = np.sqrt(space.norm_sq(x2 - x1, 1.0)) * (1.0 + space.norm_sq(x1, 1.0) + space.norm_sq(x2, 1.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(scale > 0, diff / (self.bound * scale), 0.0)
        return float(np.max(ratio, initial=0.0))


def _constant(coeffs: np.ndarray) -> np.ndarray:
    return np.ones(coeffs.shape[:-2])


def _sobolev_sq(space: GalerkinSpace, gamma: float, coeffs: np.ndarray) -> np.ndarray:
    return space.norm_sq(coeffs, gamma)


def _tanh_energy(space: GalerkinSpace, coeffs: np.ndarray) -> np.ndarray:
    return np.tanh(space.norm_sq(coeffs, 0.0))


def _coordinate(space: GalerkinSpace, index: int, coeffs: np.ndarray) -> np.ndarray:
    return space.to_real(coeffs)[..., index]


def _cylindrical_cos(space: GalerkinSpace, index: int, coeffs: np.ndarray) -> np.ndarray:
    return np.cos(_coordinate(space, index, coeffs))


def _cylindrical_bump(space: GalerkinSpace, index: int, coeffs: np.ndarray) -> np.ndarray:
    return np.exp(-_coordinate(space, index, coeffs) ** 2)


def _cylindrical_ratio(space: GalerkinSpace, index: int, coeffs: np.ndarray) -> np.ndarray:
    a = _coordinate(space, index, coeffs) ** 2
    return a / (1.0 + a)


OBSERVABLE_NAMES = [
    "const",
    "norm-sq",
    "energy",
    "da-norm-sq",
    "tanh-energy",
    "cos:<n>",
    "bump:<n>",
    "ratio:<n>",
]


def build_observable(name: str, space: GalerkinSpace) -> Observable:
    """
    Look up an observable by name

    Cylindrical observables take the real basis index after a colon, for
    example "cos:0" is cos((x, e_0)).
    """
    if name == "const":
        return Observable(name, _constant, ObservableClass.BOUNDED, bound=1.0, nonnegative=True)
    if name == "norm-sq":
        return Observable(name, partial(_sobolev_sq, space, 0.0), ObservableClass.C_K, bound=1.0, k=2, nonnegative=True)
    if name == "energy":
        return Observable(name, partial(_sobolev_sq, space, 0.5), ObservableClass.C_K, bound=1.0, k=2, nonnegative=True)
    if name == "da-norm-sq":
        return Observable(name, partial(_sobolev_sq, space, 1.0), ObservableClass.C_K, bound=1.0, k=2, nonnegative=True)
    if name == "tanh-energy":
        return Observable(name, partial(_tanh_energy, space), ObservableClass.E_CLASS, bound=1.0, nonnegative=True)

    family, sep, raw_index = name.partition(":")
    if sep and family in ("cos", "bump", "ratio"):
        try:
            index = int(raw_index)
        except ValueError:
            raise InvalidArgumentError(f"observable '{name}' needs an integer basis index")
        if not 0 <= index < space.dim:
            raise InvalidArgumentError(f"basis index {index} outside 0..{space.dim - 1}")
        evaluator = {"cos": _cylindrical_cos, "bump": _cylindrical_bump, "ratio": _cylindrical_ratio}[family]
        return Observable(
            name,
            partial(evaluator, space, index),
            ObservableClass.CYLINDRICAL,
            bound=1.0,
            level=index + 1,
            nonnegative=family != "cos",
        )

    raise InvalidArgumentError(f"unknown observable '{name}', expected one of {', '.join(OBSERVABLE_NAMES)}")


def cylindrical_panel(space: GalerkinSpace) -> List[Observable]:
    """Three bounded cylindrical observables used for factorization and invariance checks"""
    return [build_observable(name, space) for name in ("cos:0", "bump:1", "ratio:2")]

"""
Configuration management for spde-lab

Process settings come from the environment (pydantic-settings); the
experiment document is a JSON file validated section by section.
"""

import hashlib
import json
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import ConfigurationError


class Settings(BaseSettings):
    """Application settings"""

    # Output Configuration
    output_root: str = Field(default="./runs")

    # Logging Configuration
    log_level: str = Field(default="INFO")
    log_file: Optional[str] = Field(default=None)

    # Execution Configuration
    workers: int = Field(default=1, ge=1)
    debug: bool = Field(default=False)
    max_nested_paths: int = Field(default=20_000_000)
    chunk_memory_mb: int = Field(default=64, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="SPDE_LAB_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


# Global settings instance
settings = Settings()


# Human-readable reference of what each check witnesses
CHECK_REFERENCES: Dict[str, str] = {
    "simulate": "Galerkin SDE, semi-implicit Euler-Maruyama",
    "semigroup": "transition semigroup u_m(t,x) = E[phi(X_m(t,x))]",
    "feynman-kac": "damped semigroup E[exp(-K int |AX|^2) phi(X(t))]",
    "gradient": "Bismut-Elworthy-Li gradient of the damped semigroup",
    "crn-fd": "common-random-number finite difference of the damped semigroup",
    "voc-check": "variation of constants between transition and damped semigroups",
    "pathwise-energy": "pathwise D(A) bound via the stochastic convolution",
    "variation-bound": "damped energy bound for the first variation",
    "gradient-scaling": "small-time blow-up rate of the damped semigroup gradient",
    "time-modulus": "Holder modulus in time of u_m",
    "lipschitz-state": "Lipschitz modulus in the initial state of u_m",
    "z-regularity": "moments and time regularity of the stochastic convolution",
    "moment-bounds": "a priori energy and dissipation moments",
    "markov-factorization": "weak Markov factorization / Chapman-Kolmogorov",
    "galerkin-consistency": "law of observables across Galerkin levels",
    "ergodic": "invariant measure moments, mixing and invariance",
    "control": "irreducibility control: deterministic reachability",
    "reach-probability": "irreducibility: positive hitting probability",
    "noise-assumptions": "trace, inverse and derivative bounds on the covariance",
}

STOCHASTIC_SUBCOMMANDS = {"simulate", "estimate", "gradient", "voc-check", "verify", "ergodic", "control"}

VERIFY_ESTIMATES = [
    "pathwise-energy",
    "variation-bound",
    "gradient-scaling",
    "time-modulus",
    "lipschitz-state",
    "z-regularity",
    "moment-bounds",
    "markov-factorization",
    "galerkin-consistency",
    "noise-assumptions",
]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpaceSection(_Section):
    """Galerkin truncation"""

    cutoff: int = Field(default=2, ge=1)


class ForcingSection(_Section):
    """Deterministic forcing f in V"""

    kind: Literal["zero", "shear"] = "zero"
    amplitude: float = 0.0
    wavevector: Tuple[int, int, int] = (1, 0, 0)
    direction: Tuple[float, float, float] = (0.0, 1.0, 0.0)


class SdeSection(_Section):
    """Time stepping and replica streams"""

    dt: float = Field(default=1e-3, gt=0.0)
    T: float = Field(default=1.0, ge=0.0)
    seed: Optional[int] = 1234
    guard: float = Field(default=1e6, gt=0.0)
    forcing: ForcingSection = Field(default_factory=ForcingSection)
    nonlinear: bool = True
    check_every: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def _horizon_on_grid(self) -> "SdeSection":
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        return self


class KappaSection(_Section):
    """State-dependent part of the covariance"""

    variant: Literal["multiplier", "integral_kernel", "zero"] = "multiplier"
    lambda_decay: float = Field(default=1.0, gt=0.5)
    kernel_scale: float = Field(default=1.0, ge=0.0)
    kernel_decay: float = Field(default=4.0, gt=0.0)
    kernel_radius: float = Field(default=4.0, gt=0.0)


class NoiseSection(_Section):
    """Covariance Phi(x) = (-A)^(-alpha) + c kappa(x) and its declared constants"""

    alpha: float = 1.3
    c: float = Field(default=0.05)
    kappa: KappaSection = Field(default_factory=KappaSection)
    M1: float = Field(default=100.0, ge=0.0)
    g: float = 0.05
    r: float = 1.4
    delta: float = 1.0

    @field_validator("alpha")
    @classmethod
    def _alpha_window(cls, value: float) -> float:
        if not 1.25 < value < 1.5:
            raise ValueError("alpha outside (5/4,3/2), see noise assumptions")
        return value

    @field_validator("r")
    @classmethod
    def _r_window(cls, value: float) -> float:
        if not 1.0 < value < 1.5:
            raise ValueError("r outside (1,3/2), see the inverse-covariance assumption")
        return value

    @field_validator("g")
    @classmethod
    def _g_positive(cls, value: float) -> float:
        if value <= 0.0:
            raise ValueError("g must be > 0, see the trace-class assumption")
        return value

    @field_validator("delta")
    @classmethod
    def _delta_window(cls, value: float) -> float:
        if value >= 1.5:
            raise ValueError("delta must be < 3/2, see the covariance-derivative assumption")
        return value

    @field_validator("c")
    @classmethod
    def _c_nonnegative(cls, value: float) -> float:
        if value < 0.0:
            raise ValueError("c must be >= 0")
        return value


class ExperimentSection(_Section):
    """Subcommand parameters; each subcommand reads the keys it needs"""

    phi: str = "norm-sq"
    t: float = Field(default=0.5, ge=0.0)
    k_damp: float = Field(default=10.0, ge=0.0)
    samples: int = Field(default=1000, ge=2)
    initial: Literal["zero", "shear", "random"] = "shear"
    initial_amplitude: float = 0.5
    direction_mode: int = Field(default=0, ge=0)
    fd_epsilon: float = Field(default=1e-3, gt=0.0)
    n_outer: int = Field(default=1000, ge=2)
    n_inner: int = Field(default=1000, ge=2)
    quadrature_nodes: int = Field(default=8, ge=1)
    estimate: str = "pathwise-energy"
    paths: int = Field(default=1000, ge=2)
    c_grid: List[float] = Field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0, 50.0, 100.0])
    gamma: float = 1.0
    beta: float = 0.02
    epsilon_z: float = 0.002
    moment: int = Field(default=1, ge=1)
    delta_lemma: float = 1.0
    t_grid: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.5, 1.0])
    t_pairs: List[Tuple[float, float]] = Field(default_factory=lambda: [(0.1, 0.2), (0.5, 0.6)])
    radius: float = Field(default=5.0, gt=0.0)
    t_long: float = Field(default=500.0, gt=0.0)
    burn_in: float = Field(default=50.0, ge=0.0)
    stride: float = Field(default=1.0, gt=0.0)
    invariance_t: float = Field(default=0.5, gt=0.0)
    target: Optional[str] = None
    epsilon: float = Field(default=1e-3, gt=0.0)
    horizon: float = Field(default=3.0, gt=0.0)
    control_dt: float = Field(default=1e-4, gt=0.0)
    reach_samples: int = Field(default=0, ge=0)
    doubling_tol: float = Field(default=0.1, gt=0.0)


class OutputSection(_Section):
    """Where and how results are written"""

    directory: Optional[str] = None
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class RunConfig(_Section):
    """Fully resolved experiment configuration"""

    space: SpaceSection = Field(default_factory=SpaceSection)
    sde: SdeSection = Field(default_factory=SdeSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    output: OutputSection = Field(default_factory=OutputSection)


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        message = item["msg"].removeprefix("Value error, ")
        parts.append(f"{location}: {message}")
    return "; ".join(parts)


def parse_config(text: str, overrides: Optional[List[str]] = None) -> RunConfig:
    """
    Parse a JSON experiment document into a resolved RunConfig

    Args:
        text: The JSON document; empty text resolves to all defaults
        overrides: Optional "section.key=value" strings applied before validation

    Returns:
        The validated configuration with defaults applied
    """
    data: Dict[str, Any] = {}
    if text.strip():
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}")
        if not isinstance(data, dict):
            raise ConfigurationError("parse error at line 1, column 1: top level must be an object")

    for override in overrides or []:
        apply_override(data, override)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(_format_validation_error(e))


def apply_override(data: Dict[str, Any], override: str) -> None:
    """Apply one "section.key=value" override in place; values are parsed as JSON when possible"""
    key, sep, raw = override.lstrip("-").partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override '{override}' must look like section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw

    path = key.replace("-", "_").split(".")
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override '{override}' descends into a non-section value")
    node[path[-1]] = value


def serialize_config(config: RunConfig) -> str:
    """Canonical JSON form of a resolved config"""
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)


def config_hash(config: RunConfig) -> str:
    """Stable 16-hex-digit digest of the resolved config"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

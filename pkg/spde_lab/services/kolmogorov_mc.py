"""
Monte Carlo estimators for the Kolmogorov semigroups of the Galerkin SDE

    u_m(t, x) = E[phi(X(t, x))]
    v_m(t, x) = E[exp(-K int_0^t |AX|^2 ds) phi(X(t, x))]

plus the Bismut-Elworthy-Li gradient of v_m, its common-random-number
finite-difference counterpart, the variation of constants identity that
links u_m and v_m, and the weak Markov factorization.

All single-level estimators draw replica i from the stream
(seed, (ESTIMATE_STREAM, i)), so estimates at the same seed are computed
on identical noise and may be compared pathwise.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..config import settings
from ..exceptions import InvalidArgumentError, ResourceLimitError
from ..spectral import SpectralField, project
from ..types import McEstimate
from ..utils.replicas import batch_increments, chunk_size, compensated_mean, fan_out, sample_stderr
from .galerkin_sde import (
    ESTIMATE_STREAM,
    MARKOV_STREAM,
    NESTED_STREAM,
    SimConfig,
    iterate_batch,
    steps_for,
)
from .observables import Observable

CENSOR_TOLERANCE = 1e-3


@dataclass
class PathFunctionalTask:
    """
    Per-replica path functionals over replicas [start, stop) of one stream

    Returns phi(X(t)), the left-endpoint integral of |AX|^2, and when a
    direction h is given the two Bismut-Elworthy-Li path integrals. With a
    factor observable, also its value at factor_step.
    """

    cfg: SimConfig
    x0: np.ndarray
    n_steps: int
    phi: Observable
    h: Optional[np.ndarray] = None
    namespace: Tuple[int, ...] = (ESTIMATE_STREAM,)
    factor: Optional[Observable] = None
    factor_step: int = 0

    def __call__(self, start: int, stop: int) -> Dict[str, np.ndarray]:
        cfg = self.cfg
        space = cfg.space
        keys = [self.namespace + (i,) for i in range(start, stop)]
        increments = batch_increments(cfg.seed, keys, self.n_steps, space.dim, cfg.dt)
        batch = len(keys)

        damping = np.zeros(batch)
        stochastic = np.zeros(batch)
        drift = np.zeros(batch)
        factor = np.ones(batch)
        horizon = self.n_steps * cfg.dt
        out: Dict[str, np.ndarray] = {}

        for step in iterate_batch(cfg, self.x0, increments, n_steps=self.n_steps, h=self.h):
            if self.factor is not None and step.n == self.factor_step:
                factor = self.factor.batch(step.X)
            if step.n == self.n_steps:
                out["phi"] = self.phi.batch(step.X)
                out["alive"] = step.alive
                break
            damping += space.norm_sq(step.X, 1.0) * cfg.dt
            if step.eta is not None:
                v = cfg.noise.inverse_array(step.X, step.eta)
                stochastic += np.sum(v * step.dW, axis=-1)
                drift += (1.0 - step.t / horizon) * space.inner(step.X, step.eta, 1.0) * cfg.dt

        out.update(damping=damping, stochastic=stochastic, drift=drift, factor=factor)
        return out


def _check_common(cfg: SimConfig, t: float, N: int, K: float = 0.0) -> int:
    if N < 2:
        raise InvalidArgumentError(f"at least 2 samples are required, got {N}")
    if K < 0:
        raise InvalidArgumentError(f"damping K must be >= 0, got {K}")
    if t < 0 or t > cfg.T + 1e-12:
        raise InvalidArgumentError(f"t={t} outside [0, T={cfg.T}]")
    return steps_for(t, cfg.dt)


def run_paths(task: PathFunctionalTask, N: int) -> Dict[str, np.ndarray]:
    cfg = task.cfg
    chunk = chunk_size(task.n_steps, cfg.space.dim * (2 if task.h is not None else 1))
    return fan_out(task, N, chunk, cfg.workers)


def summarize(
    values: np.ndarray,
    alive: np.ndarray,
    seed: Optional[int],
    quantity: str,
    **extra: Any,
) -> McEstimate:
    """Collapse per-replica samples into an McEstimate, counting censored replicas"""
    values = np.asarray(values, dtype=float)
    kept = values[alive]
    censored = int(values.size - kept.size)
    valid = kept.size >= 2 and censored <= CENSOR_TOLERANCE * values.size
    if censored:
        logger.warning(f"{quantity}: {censored}/{values.size} replicas censored by the blow-up guard")
    return McEstimate(
        value=compensated_mean(kept) if kept.size else float("nan"),
        stderr=sample_stderr(kept),
        samples=int(kept.size),
        seed=seed,
        censored=censored,
        quantity=quantity,
        valid=bool(valid),
        extra=dict(extra),
    )


def _x0(x: SpectralField, cfg: SimConfig) -> np.ndarray:
    return project(x, cfg.space).coeffs


def estimate_semigroup(phi: Observable, t: float, x: SpectralField, cfg: SimConfig, N: int) -> McEstimate:
    """
    u_m(t, x) = E[phi(X_m(t, x))]

    Inputs outside the Galerkin space are projected first, so
    u_m(t, x) = u_m(t, P_m x).
    """
    n_steps = _check_common(cfg, t, N)
    data = run_paths(PathFunctionalTask(cfg, _x0(x, cfg), n_steps, phi), N)
    return summarize(data["phi"], data["alive"], cfg.seed, "semigroup", phi=phi.name, t=t)


def estimate_feynman_kac(phi: Observable, K: float, t: float, x: SpectralField, cfg: SimConfig, N: int) -> McEstimate:
    """v_m(t, x) = E[exp(-K int_0^t |AX|^2 ds) phi(X(t))], left-endpoint quadrature"""
    n_steps = _check_common(cfg, t, N, K)
    data = run_paths(PathFunctionalTask(cfg, _x0(x, cfg), n_steps, phi), N)
    values = np.exp(-K * data["damping"]) * data["phi"]
    return summarize(values, data["alive"], cfg.seed, "feynman-kac", phi=phi.name, t=t, K=K)


def feynman_kac_sweep(
    phi: Observable, K_values: Sequence[float], t: float, x: SpectralField, cfg: SimConfig, N: int
) -> List[McEstimate]:
    """v_m(t, x) for several K on one set of paths"""
    n_steps = _check_common(cfg, t, N, min(K_values, default=0.0))
    data = run_paths(PathFunctionalTask(cfg, _x0(x, cfg), n_steps, phi), N)
    return [
        summarize(np.exp(-K * data["damping"]) * data["phi"], data["alive"], cfg.seed, "feynman-kac", phi=phi.name, t=t, K=K)
        for K in K_values
    ]


def estimate_bel_gradient(
    phi: Observable,
    K: float,
    t: float,
    x: SpectralField,
    h: SpectralField,
    cfg: SimConfig,
    N: int,
) -> McEstimate:
    """
    Directional derivative D v_m(t, x) . h by the Bismut-Elworthy-Li formula

    The sample is exp(-K int |AX|^2) phi(X(t)) times
    (1/t) sum (Phi^-1(X_n) eta_n, dW_n) + 2K sum (1 - s_n/t)(AX_n, A eta_n) dt,
    with eta the first variation in direction h on the same increments.
    """
    n_steps = _check_common(cfg, t, N, K)
    if n_steps == 0:
        raise InvalidArgumentError("the gradient estimator needs t > 0")
    task = PathFunctionalTask(cfg, _x0(x, cfg), n_steps, phi, h=_x0(h, cfg))
    data = run_paths(task, N)
    weight = np.exp(-K * data["damping"]) * data["phi"]
    first = weight * data["stochastic"] / t
    second = weight * 2.0 * K * data["drift"]
    estimate = summarize(first + second, data["alive"], cfg.seed, "gradient", phi=phi.name, t=t, K=K)
    estimate.extra["stochastic_term"] = compensated_mean(first[data["alive"]])
    estimate.extra["damping_term"] = compensated_mean(second[data["alive"]])
    return estimate


def crn_finite_difference(
    phi: Observable,
    K: float,
    t: float,
    x: SpectralField,
    h: SpectralField,
    cfg: SimConfig,
    N: int,
    epsilon: float = 1e-3,
) -> McEstimate:
    """(v_m(t, x + eps h) - v_m(t, x)) / eps with both terms on common random numbers"""
    if epsilon <= 0:
        raise InvalidArgumentError(f"epsilon must be > 0, got {epsilon}")
    n_steps = _check_common(cfg, t, N, K)
    base = _x0(x, cfg)
    shifted = base + epsilon * _x0(h, cfg)
    lower = run_paths(PathFunctionalTask(cfg, base, n_steps, phi), N)
    upper = run_paths(PathFunctionalTask(cfg, shifted, n_steps, phi), N)
    values = (
        np.exp(-K * upper["damping"]) * upper["phi"] - np.exp(-K * lower["damping"]) * lower["phi"]
    ) / epsilon
    return summarize(values, lower["alive"] & upper["alive"], cfg.seed, "crn-fd", phi=phi.name, t=t, K=K, epsilon=epsilon)


@dataclass
class NestedTask:
    """
    Nested samples weight(X(tau)) * mean_r inner(Y_r(s)), Y_r started at X(tau)

    Outer replica i uses stream namespace + (0, i); its inner replica r
    uses namespace + (1 + i, r). The outer weight is
    exp(-K_outer int |AX|^2) times |AX(tau)|^2 when square_weight is set
    and outer_factor(X(tau)) when given; the inner value is
    exp(-K_inner int |AY|^2) phi(Y(s)).
    """

    cfg: SimConfig
    x0: np.ndarray
    outer_steps: int
    inner_steps: int
    n_inner: int
    phi: Observable
    namespace: Tuple[int, ...]
    K_outer: float = 0.0
    K_inner: float = 0.0
    square_weight: bool = False
    outer_factor: Optional[Observable] = None

    def _endpoint(self, x0: np.ndarray, keys: List[Tuple[int, ...]], n_steps: int, K: float):
        cfg = self.cfg
        increments = batch_increments(cfg.seed, keys, n_steps, cfg.space.dim, cfg.dt)
        damping = np.zeros(len(keys))
        for step in iterate_batch(cfg, x0, increments, n_steps=n_steps):
            if step.n == n_steps:
                return step.X, np.exp(-K * damping), step.alive
            damping += cfg.space.norm_sq(step.X, 1.0) * cfg.dt
        raise InvalidArgumentError("integration ended before the requested step")

    def __call__(self, start: int, stop: int) -> Dict[str, np.ndarray]:
        space = self.cfg.space
        X, weight, alive = self._endpoint(
            self.x0, [self.namespace + (0, i) for i in range(start, stop)], self.outer_steps, self.K_outer
        )
        if self.square_weight:
            weight = weight * space.norm_sq(X, 1.0)
        if self.outer_factor is not None:
            weight = weight * self.outer_factor.batch(X)

        inner_chunk = chunk_size(self.inner_steps, space.dim)
        inner_mean = np.zeros(stop - start)
        for offset, i in enumerate(range(start, stop)):
            parts, kept = [], []
            for lo in range(0, self.n_inner, inner_chunk):
                keys = [self.namespace + (1 + i, r) for r in range(lo, min(lo + inner_chunk, self.n_inner))]
                Y, inner_weight, inner_alive = self._endpoint(X[offset], keys, self.inner_steps, self.K_inner)
                parts.append(inner_weight * self.phi.batch(Y))
                kept.append(inner_alive)
            values = np.concatenate(parts)[np.concatenate(kept)]
            inner_mean[offset] = compensated_mean(values) if values.size else 0.0
            if not values.size:
                alive[offset] = False
        return {"value": weight * inner_mean, "alive": alive}


def _check_budget(paths: int) -> None:
    if paths > settings.max_nested_paths:
        raise ResourceLimitError(
            f"nested estimate needs {paths} paths, above the budget of {settings.max_nested_paths} (SPDE_LAB_MAX_NESTED_PATHS)"
        )


def _nested(task: NestedTask, n_outer: int) -> Dict[str, np.ndarray]:
    cfg = task.cfg
    chunk = max(1, chunk_size(task.outer_steps, cfg.space.dim) // 8)
    return fan_out(task, n_outer, chunk, cfg.workers)


@dataclass
class VocReport:
    """Both sides of the variation of constants identity and their residual"""

    K: float
    t: float
    lhs: McEstimate
    damped: McEstimate
    integral: float
    integral_stderr: float
    residual: float
    stderr: float
    nodes: List[float] = field(default_factory=list)

    @property
    def rhs(self) -> float:
        return self.damped.value + self.integral

    @property
    def within(self) -> bool:
        return abs(self.residual) <= 3.0 * self.stderr + 1e-12

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.update(rhs=self.rhs, within=self.within)
        return data


def check_variation_of_constants(
    phi: Observable,
    K: float,
    t: float,
    x: SpectralField,
    cfg: SimConfig,
    N_outer: int,
    N_inner: int,
    quadrature_nodes: int = 8,
) -> VocReport:
    """
    Residual of u_m(t) = S_t phi + K int_0^t S_{t-s}(|A.|^2 u_m(s)) ds at x

    The left side and S_t phi share their paths, so at K = 0 the residual
    vanishes identically. The s-integral uses Gauss-Legendre nodes mapped
    to [0, t] and rounded to the simulation grid; each node is a nested
    estimate with N_outer damped outer paths and N_inner inner paths.
    """
    n_steps = _check_common(cfg, t, N_outer, K)
    if n_steps == 0:
        raise InvalidArgumentError("the variation of constants check needs t > 0")
    if N_inner < 2:
        raise InvalidArgumentError(f"at least 2 inner samples are required, got {N_inner}")

    nested_paths = N_outer * (1 + N_inner) * quadrature_nodes if K > 0 else 0
    _check_budget(nested_paths)

    x0 = _x0(x, cfg)
    data = run_paths(PathFunctionalTask(cfg, x0, n_steps, phi), N_outer)
    undamped = data["phi"]
    damped = np.exp(-K * data["damping"]) * data["phi"]
    alive = data["alive"]
    lhs = summarize(undamped, alive, cfg.seed, "semigroup", phi=phi.name, t=t)
    rhs_damped = summarize(damped, alive, cfg.seed, "feynman-kac", phi=phi.name, t=t, K=K)
    paired = summarize(undamped - damped, alive, cfg.seed, "voc-pair")

    integral, integral_var, used_nodes = 0.0, 0.0, []
    if K > 0:
        points, weights = np.polynomial.legendre.leggauss(quadrature_nodes)
        for j, (point, weight) in enumerate(zip(points, weights)):
            s_steps = int(round(0.5 * (point + 1.0) * n_steps))
            s = s_steps * cfg.dt
            used_nodes.append(s)
            task = NestedTask(
                cfg, x0, n_steps - s_steps, s_steps, N_inner, phi,
                namespace=(NESTED_STREAM, j), K_outer=K, square_weight=True,
            )
            node = _nested(task, N_outer)
            estimate = summarize(node["value"], node["alive"], cfg.seed, "voc-node", s=s)
            scale = 0.5 * t * weight * K
            integral += scale * estimate.value
            integral_var += (scale * estimate.stderr) ** 2
            logger.debug(f"voc node {j}: s={s:.4g}, S_(t-s)(|A.|^2 u(s)) = {estimate.value:.6g} +/- {estimate.stderr:.2g}")

    residual = paired.value - integral
    stderr = math.sqrt(paired.stderr ** 2 + integral_var)
    report = VocReport(K, t, lhs, rhs_damped, integral, math.sqrt(integral_var), residual, stderr, used_nodes)
    logger.info(f"Variation of constants at K={K}, t={t}: residual {residual:.4g} +/- {stderr:.2g}")
    return report


@dataclass
class FactorizationResult:
    """Direct and nested estimates of E[f0(X(0)) f1(X(t1)) f2(X(t1 + t2))]"""

    direct: McEstimate
    nested: McEstimate
    t1: float
    t2: float

    @property
    def difference(self) -> float:
        return self.direct.value - self.nested.value

    @property
    def stderr(self) -> float:
        return math.sqrt(self.direct.stderr ** 2 + self.nested.stderr ** 2)

    @property
    def within(self) -> bool:
        return abs(self.difference) <= 3.0 * self.stderr + 1e-12

    def to_dict(self) -> Dict[str, Any]:
        return {
            "direct": self.direct.to_dict(),
            "nested": self.nested.to_dict(),
            "t1": self.t1,
            "t2": self.t2,
            "difference": self.difference,
            "stderr": self.stderr,
            "within": self.within,
        }


def estimate_markov_factorization(
    f0: Observable,
    f1: Observable,
    f2: Observable,
    t1: float,
    t2: float,
    x: SpectralField,
    cfg: SimConfig,
    N_outer: int,
    N_inner: int,
) -> FactorizationResult:
    """
    Weak Markov factorization at estimator level

    Compares E[f0(X(0)) f1(X(t1)) f2(X(t1 + t2))] on single paths with
    f0(x) P_t1[f1 P_t2 f2](x) on nested paths. With f0 = f1 = 1 this is the
    Chapman-Kolmogorov identity P_(t1+t2) f2 = P_t1 P_t2 f2.
    """
    n1 = _check_common(cfg, t1, N_outer)
    n_total = _check_common(cfg, t1 + t2, N_outer)
    _check_budget(N_outer * (1 + N_inner))

    x0 = _x0(x, cfg)
    head = f0.batch(x0)
    task = PathFunctionalTask(cfg, x0, n_total, f2, namespace=(MARKOV_STREAM, 0), factor=f1, factor_step=n1)
    data = run_paths(task, N_outer)
    direct = summarize(head * data["factor"] * data["phi"], data["alive"], cfg.seed, "markov-direct", t1=t1, t2=t2)

    nested_task = NestedTask(
        cfg, x0, n1, n_total - n1, N_inner, f2, namespace=(MARKOV_STREAM, 1), outer_factor=f1,
    )
    node = _nested(nested_task, N_outer)
    nested = summarize(head * node["value"], node["alive"], cfg.seed, "markov-nested", t1=t1, t2=t2)
    return FactorizationResult(direct, nested, t1, t2)

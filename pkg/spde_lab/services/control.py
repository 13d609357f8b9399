"""
Deterministic steering behind irreducibility

build_control follows the zero-noise flow from x up to T*, then bridges
linearly to the target x0 on [T*, T] and reads the control off the
discrete scheme, so that

    x̄_{n+1} (1 + dt mu) = x̄_n + dt (b_m(x̄_n) + ḡ_{n+1})

holds exactly on the grid. Replaying deterministic_solve with forcing ḡ
and the cutoff nonlinearity b_R, R = 2 sup |A x̄|, therefore retraces x̄
up to rounding.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
from loguru import logger
from scipy import stats

from ..exceptions import BlowUpError, ConstructionFailedError, InvalidArgumentError
from ..spectral import SpectralField, project, random_field
from ..types import ControlPath, McEstimate, ReachabilityReport
from ..utils.replicas import batch_increments, chunk_size, fan_out
from .galerkin_sde import REACH_STREAM, GalerkinStepper, SimConfig, deterministic_solve, iterate_batch, steps_for
from .kolmogorov_mc import summarize

R_FLOOR = 1e-6
DRIFT_BATCH = 256


def build_control(x: SpectralField, x0: SpectralField, T: float, cfg: SimConfig) -> ControlPath:
    """
    Control path steering x to x0 in time T

    Args:
        x: Start state
        x0: Target state
        T: Horizon, a multiple of cfg.dt
        cfg: Simulation configuration; its dt is the control grid

    Returns:
        ControlPath with T* the largest dyadic fraction of T/2 on which the
        free flow stays below the guard
    """
    if T <= 0:
        raise InvalidArgumentError(f"horizon must be > 0, got {T}")
    space = cfg.space
    n_total = steps_for(T, cfg.dt)
    if n_total < 2:
        raise InvalidArgumentError("the control horizon needs at least two time steps")
    start = project(x, space)
    target = project(x0, space).coeffs

    n_star = n_total // 2
    free = None
    while n_star >= 1:
        try:
            free = deterministic_solve(start, None, n_star * cfg.dt, cfg)
            break
        except BlowUpError as e:
            logger.info(f"Free flow blew up at t={e.time:.4g}; halving T* below {n_star * cfg.dt:.4g}")
            n_star //= 2
    if free is None:
        raise ConstructionFailedError(f"free flow from x blows up before any admissible T* (guard {cfg.guard})")

    xbar = np.zeros((n_total + 1, space.n_modes, 3), dtype=complex)
    xbar[: n_star + 1] = free.states
    theta = (np.arange(n_star, n_total + 1) - n_star) / (n_total - n_star)
    xbar[n_star:] = (1.0 - theta)[:, None, None] * free.states[-1] + theta[:, None, None] * target
    xbar[n_total] = target

    stepper = GalerkinStepper(cfg)
    mu = space.eigenvalues[:, None]
    gbar = np.zeros_like(xbar)
    segment = xbar[n_star:n_total]
    following = xbar[n_star + 1:]
    drift = np.concatenate([stepper.drift(segment[i:i + DRIFT_BATCH]) for i in range(0, len(segment), DRIFT_BATCH)])
    gbar[n_star + 1:] = (following - segment) / cfg.dt + mu * following - drift

    a_norm = np.sqrt(space.norm_sq(xbar, 1.0))
    R = max(2.0 * float(np.max(a_norm)), R_FLOOR)
    logger.info(f"Control built: T*={n_star * cfg.dt:.4g}, T={T}, R={R:.4g}")
    return ControlPath(
        space=space,
        T_star=n_star * cfg.dt,
        T=T,
        dt=cfg.dt,
        n_star=n_star,
        times=cfg.times(n_total),
        xbar=xbar,
        gbar=gbar,
        R=R,
    )


def _d_a_distance(a: np.ndarray, b: np.ndarray, cfg: SimConfig) -> float:
    return float(np.sqrt(cfg.space.norm_sq(a - b, 1.0)))


def verify_reachability(
    cp: ControlPath, x: SpectralField, x0: SpectralField, epsilon: float, cfg: SimConfig
) -> ReachabilityReport:
    """
    Drive dX = (AX + b_R(X) + ḡ) dt from x and measure |A(X(T) - x0)|

    Also reports sup_t |AX(t)| against R; staying below R means the cutoff
    never acts along the path.
    """
    if epsilon <= 0:
        raise InvalidArgumentError(f"epsilon must be > 0, got {epsilon}")
    if not np.isclose(cp.dt, cfg.dt) or cp.space != cfg.space:
        raise InvalidArgumentError("control path and configuration use different grids")

    target = project(x0, cfg.space).coeffs
    try:
        traj = deterministic_solve(x, cp.gbar, cp.T, cfg, radius=cp.R)
    except BlowUpError as e:
        logger.warning(f"Controlled trajectory breached the guard at t={e.time:.4g}")
        return ReachabilityReport(
            distance=float("inf"), epsilon=epsilon, reached=False, sup_norm=float(e.value or np.inf),
            R=cp.R, cutoff_inactive=False, breach_time=e.time,
        )

    sup_norm = float(np.max(np.sqrt(cfg.space.norm_sq(traj.states, 1.0))))
    distance = _d_a_distance(traj.states[-1], target, cfg)
    return ReachabilityReport(
        distance=distance,
        epsilon=epsilon,
        reached=distance < epsilon,
        sup_norm=sup_norm,
        R=cp.R,
        cutoff_inactive=sup_norm <= cp.R * (1.0 + 1e-9),
    )


def reachability_sweep(
    cp: ControlPath,
    x: SpectralField,
    x0: SpectralField,
    epsilon: float,
    cfg: SimConfig,
    sizes: Sequence[float] = (0.0, 1e-3, 1e-2, 1e-1),
    seed: int = 0,
) -> List[Dict[str, Any]]:
    """Diagnostic: terminal distance when the start is perturbed by a random field of D(A) size s"""
    rng = np.random.default_rng(seed)
    direction = random_field(cfg.space, rng, decay=1.0)
    direction = direction * (1.0 / max(direction.norm(1.0), 1e-300))
    start = project(x, cfg.space)
    rows = []
    for size in sizes:
        report = verify_reachability(cp, start + direction * size, x0, epsilon, cfg)
        rows.append({"perturbation": float(size), "distance": report.distance, "reached": report.reached})
    return rows


@dataclass
class ReachTask:
    """Hit indicators of the uncontrolled dynamics for replicas [start, stop)"""

    cfg: SimConfig
    x0: np.ndarray
    target: np.ndarray
    epsilon: float
    n_steps: int

    def __call__(self, start: int, stop: int) -> Dict[str, np.ndarray]:
        cfg = self.cfg
        keys = [(REACH_STREAM, i) for i in range(start, stop)]
        increments = batch_increments(cfg.seed, keys, self.n_steps, cfg.space.dim, cfg.dt)
        for step in iterate_batch(cfg, self.x0, increments, n_steps=self.n_steps):
            if step.n == self.n_steps:
                distance = np.sqrt(cfg.space.norm_sq(step.X - self.target, 1.0))
                return {"hit": (distance < self.epsilon).astype(float), "alive": step.alive}
        raise InvalidArgumentError("integration ended before the horizon")


def clopper_pearson_lower(hits: int, n: int, confidence: float = 0.95) -> float:
    """Exact one-sided binomial lower confidence bound"""
    if hits <= 0 or n <= 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - confidence, hits, n - hits + 1))


def stochastic_reach_probability(
    cp: ControlPath,
    x: SpectralField,
    x0: SpectralField,
    epsilon: float,
    cfg: SimConfig,
    N: int,
    confidence: float = 0.95,
) -> McEstimate:
    """
    Frequency of |A(X(T, x) - x0)| < epsilon under the uncontrolled SDE

    A strictly positive Clopper-Pearson lower bound witnesses positive
    hitting probability of the target ball.
    """
    if epsilon <= 0:
        raise InvalidArgumentError(f"epsilon must be > 0, got {epsilon}")
    if N < 2:
        raise InvalidArgumentError(f"at least 2 samples are required, got {N}")
    local = cfg.with_horizon(cp.T)
    n_steps = steps_for(cp.T, cfg.dt)
    task = ReachTask(local, project(x, cfg.space).coeffs, project(x0, cfg.space).coeffs, epsilon, n_steps)
    data = fan_out(task, N, chunk_size(n_steps, cfg.space.dim), cfg.workers)

    estimate = summarize(data["hit"], data["alive"], cfg.seed, "reach-probability", epsilon=epsilon, T=cp.T)
    hits = int(round(float(np.sum(data["hit"][data["alive"]]))))
    estimate.lower_bound = clopper_pearson_lower(hits, estimate.samples, confidence)
    estimate.extra.update(hits=hits, confidence=confidence)
    if estimate.lower_bound == 0.0:
        estimate.extra["note"] = f"indistinguishable from 0 at N={estimate.samples}"
    logger.info(f"Reach frequency {estimate.value:.4g} ({hits}/{estimate.samples}), lower bound {estimate.lower_bound:.3g}")
    return estimate

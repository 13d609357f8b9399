"""
Galerkin SDE integrator

Semi-implicit Euler-Maruyama for

    dX = (AX + b_m(X) + P_m f) dt + Phi_m(X) dW

co-integrating the first variation eta and the stochastic convolution Z
on the same increments:

    X_{n+1}   = (X_n + dt (b(X_n) + f_{n+1}) + Phi(X_n) dW_n) / (1 + dt mu)
    eta_{n+1} = (eta_n + dt (b(X_n, eta_n) + b(eta_n, X_n)) + (Phi'(X_n) eta_n) dW_n) / (1 + dt mu)
    Z_{n+1}   = (Z_n + Phi(X_n) dW_n) / (1 + dt mu)

Time-dependent forcing is sampled at the right end of each step.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from ..config import RunConfig, settings
from ..exceptions import BlowUpError, InvalidArgumentError
from ..spectral import GalerkinSpace, SpectralField, build_space, project, shear_mode, workspace_for
from ..types import Scheme, Trajectory
from ..utils.checkpoint import read_trajectory, write_trajectory
from ..utils.replicas import batch_increments, replica_increments
from .noise_model import NoiseOperator

ForcingInput = Union[None, SpectralField, np.ndarray]

# stream namespaces, the first component of every replica key
SIMULATE_STREAM = 0
ESTIMATE_STREAM = 1
NESTED_STREAM = 2
ERGODIC_STREAM = 3
REACH_STREAM = 4
MARKOV_STREAM = 5
INITIAL_STREAM = 6
DIRECTION_STREAM = 7


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a simulated path besides x0 and the replica key"""

    space: GalerkinSpace
    dt: float
    T: float
    noise: NoiseOperator
    forcing: Optional[SpectralField] = None
    seed: int = 1234
    guard: float = 1e6
    scheme: Scheme = Scheme.SEMI_IMPLICIT_EULER
    nonlinear: bool = True
    check_every: int = 100
    workers: Optional[int] = None

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidArgumentError(f"dt must be > 0, got {self.dt}")
        if self.T < 0:
            raise InvalidArgumentError(f"T must be >= 0, got {self.T}")
        steps_for(self.T, self.dt)
        if self.noise.space != self.space:
            raise InvalidArgumentError("noise operator and simulation live on different Galerkin spaces")
        if self.forcing is not None:
            if self.forcing.space != self.space:
                raise InvalidArgumentError("forcing lives on a different Galerkin space")
            self.space.assert_valid(self.forcing.coeffs, tol=1e-10, where=" in forcing")

    @property
    def n_steps(self) -> int:
        return steps_for(self.T, self.dt)

    def with_horizon(self, T: float) -> "SimConfig":
        return replace(self, T=T)

    def with_noise(self, noise: NoiseOperator) -> "SimConfig":
        return replace(self, noise=noise)

    def at_cutoff(self, cutoff: int) -> "SimConfig":
        """The same experiment on another Galerkin level; forcing is projected"""
        space = build_space(cutoff)
        if space == self.space:
            return self
        n = self.noise
        noise = NoiseOperator(space, n.alpha, n.c, n.kappa, n.M1, n.g, n.r, n.delta)
        forcing = None if self.forcing is None else project(self.forcing, space)
        return replace(self, space=space, noise=noise, forcing=forcing)

    def times(self, n_steps: Optional[int] = None) -> np.ndarray:
        n = self.n_steps if n_steps is None else n_steps
        return self.dt * np.arange(n + 1)


def steps_for(t: float, dt: float) -> int:
    """Number of grid steps to reach t; t must lie on the grid"""
    steps = t / dt
    n = int(round(steps))
    if abs(steps - n) > 1e-6 * max(1.0, steps):
        raise InvalidArgumentError(f"t={t} is not an integer multiple of dt={dt}")
    return n


def sim_config_from_run(cfg: RunConfig, workers: Optional[int] = None) -> SimConfig:
    """Build the simulation configuration described by a resolved RunConfig"""
    space = build_space(cfg.space.cutoff)
    noise = NoiseOperator.from_section(space, cfg.noise)
    forcing = None
    spec = cfg.sde.forcing
    if spec.kind == "shear" and spec.amplitude != 0.0:
        forcing = shear_mode(space, spec.wavevector, spec.direction, spec.amplitude)
    return SimConfig(
        space=space,
        dt=cfg.sde.dt,
        T=cfg.sde.T,
        noise=noise,
        forcing=forcing,
        seed=cfg.sde.seed if cfg.sde.seed is not None else 0,
        guard=cfg.sde.guard,
        nonlinear=cfg.sde.nonlinear,
        check_every=cfg.sde.check_every,
        workers=workers or settings.workers,
    )


class GalerkinStepper:
    """One semi-implicit step on batches of coefficient arrays"""

    def __init__(self, cfg: SimConfig, radius: Optional[float] = None):
        self.cfg = cfg
        self.space = cfg.space
        self.radius = radius
        self.workspace = workspace_for(cfg.space) if cfg.nonlinear else None
        self.denominator = (1.0 + cfg.dt * cfg.space.eigenvalues)[:, None]

    def drift(self, x: np.ndarray) -> np.ndarray:
        if self.workspace is None:
            return np.zeros_like(x)
        if self.radius is not None:
            return self.workspace.apply_cutoff(x, self.radius)
        return self.workspace.apply(x, x)

    def linearized_drift(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        if self.workspace is None:
            return np.zeros_like(eta)
        return self.workspace.apply(x, eta) + self.workspace.apply(eta, x)

    def step_state(self, x: np.ndarray, noise_term: Optional[np.ndarray], forcing: Optional[np.ndarray]) -> np.ndarray:
        rhs = x + self.cfg.dt * self.drift(x)
        if forcing is not None:
            rhs = rhs + self.cfg.dt * forcing
        if noise_term is not None:
            rhs = rhs + noise_term
        return rhs / self.denominator

    def step_variation(self, x: np.ndarray, eta: np.ndarray, dw: Optional[np.ndarray]) -> np.ndarray:
        rhs = eta + self.cfg.dt * self.linearized_drift(x, eta)
        if dw is not None and not self.cfg.noise.is_constant:
            rhs = rhs + self.cfg.noise.derivative_array(x, eta, dw)
        return rhs / self.denominator

    def step_convolution(self, z: np.ndarray, noise_term: Optional[np.ndarray]) -> np.ndarray:
        if noise_term is None:
            return z / self.denominator
        return (z + noise_term) / self.denominator


@dataclass
class BatchStep:
    """
    Batch state at grid index n

    dW holds the increments that move index n to n + 1 and is None at the
    final index. Rows with alive False were censored by the guard and are
    held at zero.
    """

    n: int
    t: float
    X: np.ndarray
    eta: Optional[np.ndarray]
    Z: Optional[np.ndarray]
    dW: Optional[np.ndarray]
    alive: np.ndarray


def _forcing_at(cfg: SimConfig, forcing: ForcingInput, n: int) -> Optional[np.ndarray]:
    if forcing is None:
        return None if cfg.forcing is None else cfg.forcing.coeffs
    if isinstance(forcing, SpectralField):
        return forcing.coeffs
    return forcing[n]


def iterate_batch(
    cfg: SimConfig,
    x0: np.ndarray,
    increments: Optional[np.ndarray],
    n_steps: Optional[int] = None,
    h: Optional[np.ndarray] = None,
    convolution: bool = False,
    censor: bool = True,
    forcing: ForcingInput = None,
    radius: Optional[float] = None,
    start_step: int = 0,
    z0: Optional[np.ndarray] = None,
) -> Iterator[BatchStep]:
    """
    Integrate a batch of replicas and yield the state at every grid index

    Args:
        cfg: Simulation configuration
        x0: State at start_step, shape (n_modes, 3) or (B, n_modes, 3)
        increments: Brownian increments (B, n_total, dim) indexed from step 0, or None for Phi = 0
        n_steps: Last grid index to reach; defaults to cfg.n_steps
        h: Variation at start_step, broadcastable to the state batch
        convolution: Co-integrate Z (zero at step 0 unless z0 is given)
        censor: Zero out and flag rows that cross the guard instead of raising
        forcing: None for cfg.forcing, a constant field, or per-index coefficients (n + 1, n_modes, 3)
        radius: Replace b_m by the cutoff nonlinearity b_R
        start_step: Grid index of x0
        z0: Convolution at start_step

    Yields:
        BatchStep for n = start_step, ..., n_steps
    """
    n_steps = cfg.n_steps if n_steps is None else n_steps
    stepper = GalerkinStepper(cfg, radius)
    space = cfg.space
    noise = cfg.noise

    batch = increments.shape[0] if increments is not None else (x0.shape[0] if x0.ndim == 3 else 1)
    if increments is not None and increments.shape[1] < n_steps:
        raise InvalidArgumentError(f"{increments.shape[1]} recorded increments cannot cover {n_steps} steps")

    X = np.array(np.broadcast_to(x0, (batch, space.n_modes, 3)), dtype=complex)
    eta = None if h is None else np.array(np.broadcast_to(h, X.shape), dtype=complex)
    Z = None
    if convolution:
        Z = space.zeros(batch) if z0 is None else np.array(np.broadcast_to(z0, X.shape), dtype=complex)
    alive = np.ones(batch, dtype=bool)
    check_every = 1 if settings.debug else cfg.check_every

    for n in range(start_step, n_steps + 1):
        dW = increments[:, n] if (increments is not None and n < n_steps) else None
        yield BatchStep(n, n * cfg.dt, X, eta, Z, dW, alive.copy())
        if n == n_steps:
            break

        noise_term = noise.apply_array(X, dW) if dW is not None else None
        f_next = _forcing_at(cfg, forcing, n + 1)
        X_next = stepper.step_state(X, noise_term, f_next)
        if eta is not None:
            eta = stepper.step_variation(X, eta, dW)
        if Z is not None:
            Z = stepper.step_convolution(Z, noise_term)
        X = X_next

        a_norm = np.sqrt(space.norm_sq(X, 1.0))
        bad = ~np.isfinite(a_norm) | (a_norm > cfg.guard)
        if np.any(bad & alive):
            if not censor:
                row = int(np.argmax(bad))
                value = float(a_norm[row])
                raise BlowUpError(
                    f"|AX| = {value:.3e} exceeds guard {cfg.guard:.3e} at step {n + 1} (t={(n + 1) * cfg.dt:.6g})",
                    step=n + 1,
                    time=(n + 1) * cfg.dt,
                    value=value,
                )
            logger.debug(f"Censoring {int(np.sum(bad & alive))} replicas at step {n + 1}")
        if np.any(bad):
            alive &= ~bad
            X[bad] = 0.0
            if eta is not None:
                eta[bad] = 0.0
            if Z is not None:
                Z[bad] = 0.0

        if (n + 1) % check_every == 0:
            space.assert_valid(X, tol=1e-8, where=f" at step {n + 1}")


def _replica_increments(cfg: SimConfig, key: Sequence[int], n_steps: Optional[int] = None) -> np.ndarray:
    return replica_increments(cfg.seed, key, cfg.n_steps if n_steps is None else n_steps, cfg.space.dim, cfg.dt)


def increments_for(cfg: SimConfig, keys: Sequence[Sequence[int]]) -> np.ndarray:
    """Increment block (B, n_steps, dim) for the given replica keys"""
    return batch_increments(cfg.seed, keys, cfg.n_steps, cfg.space.dim, cfg.dt)


def _project_input(x: SpectralField, space: GalerkinSpace) -> np.ndarray:
    return project(x, space).coeffs


def _integrate_path(
    cfg: SimConfig,
    x0: np.ndarray,
    increments: Optional[np.ndarray],
    h: Optional[np.ndarray] = None,
    forcing: ForcingInput = None,
    n_steps: Optional[int] = None,
    radius: Optional[float] = None,
    key: Tuple[int, ...] = (),
    checkpoint: Optional[Path] = None,
    resume_from: Optional[Trajectory] = None,
    steps_done: int = 0,
) -> Trajectory:
    n_steps = cfg.n_steps if n_steps is None else n_steps
    space = cfg.space
    times = cfg.times(n_steps)
    states = np.zeros((n_steps + 1, space.n_modes, 3), dtype=complex)
    variation = None if h is None else np.zeros_like(states)
    convolution = np.zeros_like(states) if increments is not None else None
    recorded = increments if increments is not None else np.zeros((n_steps, space.dim))

    start_x, start_h, start_z = x0, h, None
    if resume_from is not None and steps_done > 0:
        states[: steps_done + 1] = resume_from.states[: steps_done + 1]
        start_x = states[steps_done]
        if variation is not None and resume_from.variation is not None:
            variation[: steps_done + 1] = resume_from.variation[: steps_done + 1]
            start_h = variation[steps_done]
        if convolution is not None and resume_from.convolution is not None:
            convolution[: steps_done + 1] = resume_from.convolution[: steps_done + 1]
            start_z = convolution[steps_done]

    traj = Trajectory(space, times, states, recorded, variation, convolution, cfg.seed, tuple(key))
    stacked = None if increments is None else increments[None]
    try:
        for step in iterate_batch(
            cfg,
            start_x,
            stacked,
            n_steps=n_steps,
            h=start_h,
            convolution=convolution is not None,
            censor=False,
            forcing=forcing,
            radius=radius,
            start_step=steps_done,
            z0=start_z,
        ):
            states[step.n] = step.X[0]
            if variation is not None:
                variation[step.n] = step.eta[0]
            if convolution is not None:
                convolution[step.n] = step.Z[0]
    except BlowUpError as e:
        if checkpoint is not None:
            write_trajectory(checkpoint, traj, steps_done=e.step - 1)
        logger.warning(f"Trajectory blew up: {e.message}")
        raise

    if checkpoint is not None:
        write_trajectory(checkpoint, traj)
    return traj


def simulate(
    x0: SpectralField,
    cfg: SimConfig,
    replica: int = 0,
    checkpoint: Optional[Union[str, Path]] = None,
    resume: bool = False,
) -> Trajectory:
    """
    Integrate one replica of the Galerkin SDE from x0 with Z co-integrated

    Args:
        x0: Initial condition, projected onto cfg.space
        cfg: Simulation configuration
        replica: Replica index; the stream is (cfg.seed, (SIMULATE_STREAM, replica))
        checkpoint: Optional checkpoint file written on completion or blow-up
        resume: Continue from the checkpoint's last completed step

    Returns:
        Trajectory with states, convolution and recorded increments
    """
    key = (SIMULATE_STREAM, replica)
    increments = _replica_increments(cfg, key)
    path = Path(checkpoint) if checkpoint is not None else None

    previous, steps_done = None, 0
    if resume and path is not None and path.exists():
        previous, meta = read_trajectory(path)
        if previous.space != cfg.space or previous.n_steps != cfg.n_steps or previous.seed != cfg.seed:
            raise InvalidArgumentError(f"checkpoint {path} was written for a different configuration")
        steps_done = int(meta["steps_done"])
        logger.info(f"Resuming {path} from step {steps_done}/{cfg.n_steps}")

    return _integrate_path(
        cfg,
        _project_input(x0, cfg.space),
        increments,
        key=key,
        checkpoint=path,
        resume_from=previous,
        steps_done=steps_done,
    )


def simulate_with_variation(x0: SpectralField, h: SpectralField, cfg: SimConfig, replica: int = 0) -> Trajectory:
    """simulate plus the first variation eta in direction h, on the same increments"""
    key = (SIMULATE_STREAM, replica)
    increments = _replica_increments(cfg, key)
    return _integrate_path(
        cfg,
        _project_input(x0, cfg.space),
        increments,
        h=_project_input(h, cfg.space),
        key=key,
    )


def deterministic_solve(
    x0: SpectralField,
    forcing: ForcingInput,
    T: float,
    cfg: SimConfig,
    radius: Optional[float] = None,
) -> Trajectory:
    """
    Zero-noise flow dX/dt = AX + b_m(X) + forcing(t) on the simulation grid

    Args:
        x0: Initial condition
        forcing: None (no forcing), a constant field, or per-index coefficients of shape (n + 1, n_modes, 3)
        T: Horizon, a multiple of cfg.dt
        cfg: Simulation configuration; its noise is ignored
        radius: Use the cutoff nonlinearity b_R instead of b_m

    Returns:
        Trajectory with zero increments
    """
    n_steps = steps_for(T, cfg.dt)
    if forcing is None:
        forcing = SpectralField.zeros(cfg.space)
    elif isinstance(forcing, np.ndarray) and forcing.shape[0] < n_steps + 1:
        raise InvalidArgumentError(f"forcing has {forcing.shape[0]} samples, {n_steps + 1} needed")
    local = cfg.with_horizon(T)
    return _integrate_path(
        local,
        _project_input(x0, cfg.space),
        None,
        forcing=forcing,
        n_steps=n_steps,
        radius=radius,
    )


def replay(
    traj: Trajectory,
    cfg: SimConfig,
    x0: Optional[SpectralField] = None,
    h: Optional[SpectralField] = None,
) -> Trajectory:
    """
    Re-integrate with the increments recorded in traj, optionally from another x0

    The replay uses cfg's forcing and noise; with x0 omitted it starts
    from traj's own initial state.
    """
    if traj.space != cfg.space:
        raise InvalidArgumentError(f"trajectory on cutoff {traj.space.cutoff}, config on cutoff {cfg.space.cutoff}")
    if traj.increments.shape != (cfg.n_steps, cfg.space.dim) or (traj.n_steps and not math.isclose(traj.dt, cfg.dt)):
        raise InvalidArgumentError(
            f"recorded increments {traj.increments.shape} do not match the grid ({cfg.n_steps}, {cfg.space.dim}) at dt={cfg.dt}"
        )
    start = traj.states[0] if x0 is None else _project_input(x0, cfg.space)
    return _integrate_path(
        cfg,
        start,
        traj.increments,
        h=None if h is None else _project_input(h, cfg.space),
        key=traj.key,
    )


def sample_trajectories(
    x0: SpectralField,
    cfg: SimConfig,
    n: int,
    h: Optional[SpectralField] = None,
    start: int = 0,
) -> Iterator[Trajectory]:
    """Lazily yield n independent replicas (start, ..., start + n - 1)"""
    for replica in range(start, start + n):
        if h is None:
            yield simulate(x0, cfg, replica=replica)
        else:
            yield simulate_with_variation(x0, h, cfg, replica=replica)


# ----------------------------------------------------------------------
# Ornstein-Uhlenbeck closed forms (c = 0, no nonlinearity, f = 0)
# ----------------------------------------------------------------------

def _ou_variance(space: GalerkinSpace, alpha: float, t: float, dt: Optional[float]) -> np.ndarray:
    mu = space.real_eigenvalues
    sigma_sq = mu ** (-2.0 * alpha)
    if dt is None:
        return sigma_sq * (1.0 - np.exp(-2.0 * mu * t)) / (2.0 * mu)
    n = steps_for(t, dt)
    q = (1.0 + dt * mu) ** -2.0
    return sigma_sq * dt * q * (1.0 - q ** n) / (1.0 - q)


def ou_second_moment(
    space: GalerkinSpace,
    alpha: float,
    t: float,
    x0: Optional[SpectralField] = None,
    dt: Optional[float] = None,
    gamma: float = 0.0,
) -> float:
    """
    E|(-A)^gamma X(t)|^2 for additive noise (-A)^(-alpha) dW

    With dt given, the exact moment of the semi-implicit scheme instead of
    the continuous-time value.
    """
    mu = space.real_eigenvalues
    weight = mu ** (2.0 * gamma)
    total = float(np.sum(weight * _ou_variance(space, alpha, t, dt)))
    if x0 is not None:
        x_real = project(x0, space).to_real()
        if dt is None:
            decay = np.exp(-2.0 * mu * t)
        else:
            decay = (1.0 + dt * mu) ** (-2.0 * steps_for(t, dt))
        total += float(np.sum(weight * decay * x_real ** 2))
    return total


def ou_stationary_second_moment(space: GalerkinSpace, alpha: float, dt: Optional[float] = None, gamma: float = 0.0) -> float:
    """Second moment of the stationary law of the additive-noise linear dynamics"""
    mu = space.real_eigenvalues
    sigma_sq = mu ** (-2.0 * alpha)
    if dt is None:
        per_dof = sigma_sq / (2.0 * mu)
    else:
        q = (1.0 + dt * mu) ** -2.0
        per_dof = sigma_sq * dt * q / (1.0 - q)
    return float(np.sum(mu ** (2.0 * gamma) * per_dof))


def z_increment_closed_form(space: GalerkinSpace, alpha: float, gamma: float, t1: float, t2: float) -> float:
    """E|(-A)^gamma (Z(t2) - Z(t1))|^2 for additive noise, t1 <= t2"""
    if t2 < t1:
        t1, t2 = t2, t1
    mu = space.real_eigenvalues
    sigma_sq = mu ** (-2.0 * alpha)
    gap = t2 - t1
    carried = (1.0 - np.exp(-mu * gap)) ** 2 * sigma_sq * (1.0 - np.exp(-2.0 * mu * t1)) / (2.0 * mu)
    fresh = sigma_sq * (1.0 - np.exp(-2.0 * mu * gap)) / (2.0 * mu)
    return float(np.sum(mu ** (2.0 * gamma) * (carried + fresh)))

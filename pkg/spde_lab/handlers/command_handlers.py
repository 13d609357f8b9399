"""
Subcommand handlers for spde-lab

Each handler takes a RunContext, runs the services it needs and returns
a HandlerResult whose data holds serialisable reports, estimates, CSV
rows and the files it wrote.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from loguru import logger

from ..config import CHECK_REFERENCES, VERIFY_ESTIMATES, RunConfig
from ..exceptions import InvalidArgumentError
from ..spectral import GalerkinSpace, SpectralField, basis_field, project, random_field, shear_mode
from ..types import EstimateReport, HandlerResult, McEstimate
from ..utils.checkpoint import read_field, write_arrays, write_control, write_field
from ..utils.replicas import replica_generator
from ..services.analysis_lab import (
    check_galerkin_consistency,
    check_gradient_scaling,
    check_lipschitz_in_state,
    check_markov_factorization,
    check_moment_bounds,
    check_pathwise_energy,
    check_time_modulus,
    check_variation_bound,
    check_z_regularity,
    ergodic_averages,
)
from ..services.control import build_control, reachability_sweep, stochastic_reach_probability, verify_reachability
from ..services.galerkin_sde import INITIAL_STREAM, SimConfig, sample_trajectories, simulate
from ..services.kolmogorov_mc import (
    check_variation_of_constants,
    crn_finite_difference,
    estimate_bel_gradient,
    estimate_feynman_kac,
    estimate_semigroup,
)
from ..services.noise_model import validate_assumptions
from ..services.observables import build_observable, cylindrical_panel

GRADIENT_AGREEMENT = 0.05
NOISE_SAMPLE_STATES = 8


@dataclass
class RunContext:
    """Everything a handler needs: the resolved config, its simulation view and the output directory"""

    cfg: RunConfig
    sim: SimConfig
    out_dir: Path
    resume: bool = False

    @property
    def space(self) -> GalerkinSpace:
        return self.sim.space


def _row(
    quantity: str,
    value: float,
    stderr: Optional[float] = None,
    N: Optional[int] = None,
    seed: Optional[int] = None,
    reference: Optional[str] = None,
) -> Dict[str, Any]:
    return {
        "quantity": quantity,
        "value": value,
        "stderr": stderr,
        "N": N,
        "seed": seed,
        "reference": reference if reference is not None else CHECK_REFERENCES.get(quantity, ""),
    }


def _estimate_row(estimate: McEstimate, label: Optional[str] = None) -> Dict[str, Any]:
    return _row(label or estimate.quantity, estimate.value, estimate.stderr, estimate.samples, estimate.seed,
                CHECK_REFERENCES.get(estimate.quantity, ""))


def _report_row(report: EstimateReport, seed: int) -> Dict[str, Any]:
    return _row(f"{report.name}.margin", report.margin, None, report.meta.get("paths"), seed, report.reference)


def _finish(
    ctx: RunContext,
    reports: List[EstimateReport] = (),
    estimates: List[McEstimate] = (),
    rows: List[Dict[str, Any]] = (),
    outputs: List[Path] = (),
    **extra: Any,
) -> HandlerResult:
    all_rows = list(rows)
    all_rows += [_estimate_row(e) for e in estimates]
    all_rows += [_report_row(r, ctx.sim.seed) for r in reports]
    passed = all(r.passed for r in reports)
    return HandlerResult(
        success=passed,
        data={
            "reports": [r.to_dict() for r in reports],
            "estimates": [e.to_dict() for e in estimates],
            "rows": all_rows,
            "outputs": [str(p) for p in outputs],
            **extra,
        },
        exit_code=0 if passed else 1,
    )


def _horizon(sim: SimConfig, t: float) -> SimConfig:
    return sim.with_horizon(t) if t > sim.T else sim


# ----------------------------------------------------------------------
# States
# ----------------------------------------------------------------------

def _random_state(space: GalerkinSpace, seed: int, index: int, scale: float) -> SpectralField:
    return random_field(space, replica_generator(seed, INITIAL_STREAM, index), decay=1.0, scale=scale)


def _named_state(kind: str, space: GalerkinSpace, seed: int, amplitude: float, index: int = 0) -> SpectralField:
    if kind == "zero":
        return SpectralField.zeros(space)
    if kind == "shear":
        return shear_mode(space, (1, 0, 0), (0.0, 1.0, 0.0), amplitude)
    if kind == "random":
        return _random_state(space, seed, index, amplitude)
    path = Path(kind)
    if not path.exists():
        raise InvalidArgumentError(f"state '{kind}' is neither zero, shear, random nor an existing field file")
    return project(read_field(path), space)


def initial_state(ctx: RunContext) -> SpectralField:
    """The configured initial condition x"""
    exp = ctx.cfg.experiment
    return _named_state(exp.initial, ctx.space, ctx.sim.seed, exp.initial_amplitude)


def target_state(ctx: RunContext) -> SpectralField:
    """The control target x0; defaults to the zero field"""
    exp = ctx.cfg.experiment
    return _named_state(exp.target or "zero", ctx.space, ctx.sim.seed, exp.initial_amplitude, index=1)


def _direction(ctx: RunContext) -> SpectralField:
    mode = ctx.cfg.experiment.direction_mode
    if mode >= ctx.space.dim:
        raise InvalidArgumentError(f"direction_mode {mode} outside 0..{ctx.space.dim - 1}")
    return basis_field(ctx.space, mode)


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def simulate_handler(ctx: RunContext) -> HandlerResult:
    """Integrate one replica and checkpoint the trajectory"""
    x0 = initial_state(ctx)
    checkpoint = ctx.out_dir / "trajectory.spdt"
    traj = simulate(x0, ctx.sim, replica=0, checkpoint=checkpoint, resume=ctx.resume)
    final = ctx.out_dir / "final_state.spdf"
    write_field(final, traj.final)

    space, seed = ctx.space, ctx.sim.seed
    a_norm = np.sqrt(space.norm_sq(traj.states, 1.0))
    rows = [
        _row("final.norm-sq", float(space.norm_sq(traj.states[-1], 0.0)), seed=seed, reference=CHECK_REFERENCES["simulate"]),
        _row("final.energy", float(space.norm_sq(traj.states[-1], 0.5)), seed=seed, reference=CHECK_REFERENCES["simulate"]),
        _row("sup.da-norm", float(np.max(a_norm)), seed=seed, reference=CHECK_REFERENCES["simulate"]),
    ]
    logger.info(f"Simulated {traj.n_steps} steps at dt={traj.dt}; sup |AX| = {np.max(a_norm):.4g}")
    return _finish(ctx, rows=rows, outputs=[checkpoint, final])


def estimate_handler(ctx: RunContext) -> HandlerResult:
    """u_m(t, x) and, for K > 0, the damped semigroup at the same point"""
    exp = ctx.cfg.experiment
    sim = _horizon(ctx.sim, exp.t)
    phi = build_observable(exp.phi, ctx.space)
    x0 = initial_state(ctx)
    estimates = [estimate_semigroup(phi, exp.t, x0, sim, exp.samples)]
    if exp.k_damp > 0:
        estimates.append(estimate_feynman_kac(phi, exp.k_damp, exp.t, x0, sim, exp.samples))
    return _finish(ctx, estimates=estimates)


def gradient_handler(ctx: RunContext) -> HandlerResult:
    """Bismut-Elworthy-Li gradient checked against a common-random-number finite difference"""
    exp = ctx.cfg.experiment
    sim = _horizon(ctx.sim, exp.t)
    phi = build_observable(exp.phi, ctx.space)
    x0, h = initial_state(ctx), _direction(ctx)

    bel = estimate_bel_gradient(phi, exp.k_damp, exp.t, x0, h, sim, exp.samples)
    fd = crn_finite_difference(phi, exp.k_damp, exp.t, x0, h, sim, exp.samples, epsilon=exp.fd_epsilon)
    combined = math.sqrt(bel.stderr ** 2 + fd.stderr ** 2)
    gap = abs(bel.value - fd.value)
    tolerance = max(GRADIENT_AGREEMENT * abs(fd.value), 3.0 * combined)
    report = EstimateReport(
        name="gradient",
        witness={"bel": bel.value, "finite_difference": fd.value, "gap": gap, "combined_stderr": combined},
        margin=tolerance - gap if math.isfinite(gap) else -math.inf,
        meta={"paths": exp.samples, "cutoffs": [ctx.space.cutoff], "seeds": [sim.seed], "t": exp.t, "K": exp.k_damp,
              "direction_mode": exp.direction_mode},
        reference=CHECK_REFERENCES["gradient"],
    )
    return _finish(ctx, reports=[report], estimates=[bel, fd])


def voc_handler(ctx: RunContext) -> HandlerResult:
    """Residual of the variation of constants identity at K = k_damp"""
    exp = ctx.cfg.experiment
    sim = _horizon(ctx.sim, exp.t)
    phi = build_observable(exp.phi, ctx.space)
    voc = check_variation_of_constants(
        phi, exp.k_damp, exp.t, initial_state(ctx), sim, exp.n_outer, exp.n_inner, exp.quadrature_nodes
    )
    report = EstimateReport(
        name="voc-check",
        witness=voc.to_dict(),
        margin=3.0 * voc.stderr - abs(voc.residual) + 1e-12,
        meta={"paths": exp.n_outer, "inner_paths": exp.n_inner, "cutoffs": [ctx.space.cutoff], "seeds": [sim.seed]},
        reference=CHECK_REFERENCES["voc-check"],
    )
    rows = [_row("voc-check.residual", voc.residual, voc.stderr, exp.n_outer, sim.seed)]
    return _finish(ctx, reports=[report], estimates=[voc.lhs, voc.damped], rows=rows)


# ----------------------------------------------------------------------
# verify: one function per estimate
# ----------------------------------------------------------------------

def _paths(ctx: RunContext, h: Optional[SpectralField] = None):
    return list(sample_trajectories(initial_state(ctx), ctx.sim, ctx.cfg.experiment.paths, h=h))


def _verify_pathwise_energy(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    return check_pathwise_energy(_paths(ctx), exp.c_grid, exp.doubling_tol)


def _verify_variation_bound(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    pairs = _paths(ctx, h=_direction(ctx))
    return check_variation_bound(pairs, exp.gamma, exp.c_grid, ctx.cfg.noise.delta, exp.doubling_tol)


def _verify_gradient_scaling(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    phi = build_observable(exp.phi, ctx.space)
    sim = _horizon(ctx.sim, max(exp.t_grid))
    return check_gradient_scaling(phi, exp.gamma, exp.k_damp, exp.t_grid, sim, exp.samples, doubling_tol=exp.doubling_tol)


def _verify_time_modulus(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    phi = build_observable(exp.phi, ctx.space)
    return check_time_modulus(phi, initial_state(ctx), exp.t_pairs, exp.beta, ctx.sim, exp.samples, exp.doubling_tol)


def _verify_lipschitz_state(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    phi = build_observable(exp.phi, ctx.space)
    sim = _horizon(ctx.sim, exp.t)
    return check_lipschitz_in_state(
        phi, exp.t, sim, exp.samples, gamma=exp.gamma, radius=exp.radius, seed=sim.seed, doubling_tol=exp.doubling_tol
    )


def _verify_z_regularity(ctx: RunContext) -> EstimateReport:
    exp, noise = ctx.cfg.experiment, ctx.cfg.noise
    # the closed-form slope only exists for constant noise
    alpha = noise.alpha if noise.c == 0 else None
    return check_z_regularity(_paths(ctx), exp.epsilon_z, exp.beta, exp.moment, noise.g, alpha, exp.doubling_tol)


def _verify_moment_bounds(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    return check_moment_bounds(_paths(ctx), exp.delta_lemma, ctx.sim.noise.trace_sup(), ctx.cfg.noise.g, exp.doubling_tol)


def _verify_markov_factorization(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    f0, f1, f2 = cylindrical_panel(ctx.space)
    sim = _horizon(ctx.sim, 2.0 * exp.t)
    return check_markov_factorization(f0, f1, f2, exp.t, exp.t, initial_state(ctx), sim, exp.n_outer, exp.n_inner)


def _verify_galerkin_consistency(ctx: RunContext) -> EstimateReport:
    exp = ctx.cfg.experiment
    names = [phi.name for phi in cylindrical_panel(ctx.space)]
    return check_galerkin_consistency(names, initial_state(ctx), exp.t, ctx.sim, exp.samples)


def _verify_noise_assumptions(ctx: RunContext) -> EstimateReport:
    exp, sim = ctx.cfg.experiment, ctx.sim
    states = [initial_state(ctx)]
    states += [_random_state(ctx.space, sim.seed, 2 + i, exp.radius) for i in range(NOISE_SAMPLE_STATES)]
    found = validate_assumptions(sim.noise, states, seed=sim.seed)
    margin = min(found.declared_M1 - found.max_trace, found.declared_M1 - found.max_inverse,
                 found.declared_M1 - found.max_derivative)
    if not found.trace_converges:
        margin = min(margin, found.convergence_bound - found.g - 1e-12)
    return EstimateReport(
        name="noise-assumptions",
        witness=found.to_dict(),
        margin=margin,
        meta={"paths": len(states), "cutoffs": [ctx.space.cutoff], "seeds": [sim.seed]},
        reference=CHECK_REFERENCES["noise-assumptions"],
    )


VERIFY_HANDLERS: Dict[str, Callable[[RunContext], EstimateReport]] = {
    "pathwise-energy": _verify_pathwise_energy,
    "variation-bound": _verify_variation_bound,
    "gradient-scaling": _verify_gradient_scaling,
    "time-modulus": _verify_time_modulus,
    "lipschitz-state": _verify_lipschitz_state,
    "z-regularity": _verify_z_regularity,
    "moment-bounds": _verify_moment_bounds,
    "markov-factorization": _verify_markov_factorization,
    "galerkin-consistency": _verify_galerkin_consistency,
    "noise-assumptions": _verify_noise_assumptions,
}


def verify_handler(ctx: RunContext) -> HandlerResult:
    """Run the a priori estimate harness named by experiment.estimate"""
    name = ctx.cfg.experiment.estimate
    if name not in VERIFY_HANDLERS:
        raise InvalidArgumentError(f"unknown estimate '{name}', expected one of {', '.join(VERIFY_ESTIMATES)}")
    logger.info(f"Verifying {name}")
    report = VERIFY_HANDLERS[name](ctx)
    return _finish(ctx, reports=[report])


def ergodic_handler(ctx: RunContext) -> HandlerResult:
    """Long-run empirical invariant measure from the configured and a random initial condition"""
    exp = ctx.cfg.experiment
    starts = [initial_state(ctx), _random_state(ctx.space, ctx.sim.seed, 1, exp.initial_amplitude)]
    measure, report = ergodic_averages(
        starts, ctx.sim, exp.t_long, exp.burn_in, exp.stride,
        invariance_t=exp.invariance_t, doubling_tol=exp.doubling_tol,
    )
    path = write_arrays(
        ctx.out_dir / "ergodic_samples.spdt",
        {"samples": measure.samples, "weights": measure.weights, "sources": np.asarray(measure.sources, dtype=np.int64)},
        {"cutoff": ctx.space.cutoff, "burn_in": exp.burn_in, "stride": exp.stride, "seed": ctx.sim.seed},
    )
    moments = report.witness["moments"]
    rows = [_row(f"ergodic.{name}", value, N=len(measure), seed=ctx.sim.seed, reference=CHECK_REFERENCES["ergodic"])
            for name, value in sorted(moments.items())]
    return _finish(ctx, reports=[report], rows=rows, outputs=[path])


def control_handler(ctx: RunContext) -> HandlerResult:
    """Build the steering control, replay it, and optionally sample the uncontrolled hitting frequency"""
    exp = ctx.cfg.experiment
    x, x0 = initial_state(ctx), target_state(ctx)
    control_sim = replace(ctx.sim, dt=exp.control_dt, T=exp.horizon)

    cp = build_control(x, x0, exp.horizon, control_sim)
    path = write_control(ctx.out_dir / "control.spdt", cp)
    reach = verify_reachability(cp, x, x0, exp.epsilon, control_sim)
    sweep = reachability_sweep(cp, x, x0, exp.epsilon, control_sim, seed=ctx.sim.seed)

    report = EstimateReport(
        name="control",
        witness={**reach.to_dict(), "T_star": cp.T_star},
        margin=exp.epsilon - reach.distance if math.isfinite(reach.distance) else -math.inf,
        meta={"paths": 1, "cutoffs": [ctx.space.cutoff], "seeds": [ctx.sim.seed], "dt": exp.control_dt,
              "horizon": exp.horizon},
        details=sweep,
        reference=CHECK_REFERENCES["control"],
    )
    rows = [_row("control.distance", reach.distance, N=1, reference=CHECK_REFERENCES["control"])]

    estimates = []
    if exp.reach_samples > 0:
        estimates.append(stochastic_reach_probability(cp, x, x0, exp.epsilon, ctx.sim, exp.reach_samples))
    return _finish(ctx, reports=[report], estimates=estimates, rows=rows, outputs=[path])


SUBCOMMAND_HANDLERS: Dict[str, Callable[[RunContext], HandlerResult]] = {
    "simulate": simulate_handler,
    "estimate": estimate_handler,
    "gradient": gradient_handler,
    "voc-check": voc_handler,
    "verify": verify_handler,
    "ergodic": ergodic_handler,
    "control": control_handler,
}

"""Experiment assembly plus the verification and sweep suites.

This module owns the glue the CLI commands share: building targets and
kernels from a configuration, resolving the transport constant and the
automatic step size, measuring the finite-sample KSD noise floor, and
turning a finished run into pass/fail inequality checks.

Randomness discipline: each command derives one generator from the seed and
consumes it in a fixed documented order (initial particles, then transport
constant samples, then W1 reference samples, then any Monte-Carlo moments),
so identical configurations reproduce byte-identical outputs at any thread
count.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import ksd as _ksd
from . import metrics as _metrics
from . import svgd as _svgd
from . import targets as _targets
from . import theory as _theory
from .config import ConfigError, ExperimentConfig
from .kernels import Kernel, gaussian_kernel, imq_kernel, median_bandwidth
from .metrics import T1Estimate
from .svgd import Ensemble, RunResult
from .targets import Target
from .theory import TheoryConstants


class NoiseFloorError(RuntimeError):
    """A convergence claim was requested below the measurable sample floor."""


STATIONARY_TOL = 1e-10
RATE_CHECK_ITERS = (10, 50, 200)
W1_CHECK_ITERS = (0, 50, 200)
FLOOR_REPLICATES = 5
MC_MOMENT_SAMPLES = 200_000


# ---------------------------------------------------------------------------
# Construction from configuration
# ---------------------------------------------------------------------------

def build_target(cfg: ExperimentConfig) -> Target:
    name = cfg.target_name
    if name == "gaussian":
        target = _targets.standard_gaussian(cfg.target_d)
    elif name == "aniso_gaussian":
        if not cfg.target_variances:
            raise ConfigError("aniso_gaussian requires target.params.variances")
        target = _targets.aniso_gaussian(cfg.target_variances)
    elif name == "mixture":
        means = cfg.target_means if cfg.target_means is not None else [-2.0, 2.0]
        target = _targets.gaussian_mixture(means, cfg.target_weights, cfg.target_variance)
    elif name == "double_well":
        target = _targets.double_well()
    else:  # pragma: no cover - the parser rejects other names
        raise ConfigError(f"unknown target {name!r}")
    if cfg.target_smoothness_override is not None:
        if cfg.target_smoothness_override < target.smoothness:
            raise ConfigError(
                "target.L may only raise the smoothness constant "
                f"(built-in value {target.smoothness:g})"
            )
        target = dataclasses.replace(target, smoothness=cfg.target_smoothness_override)
    return target


def build_kernel(
    cfg: ExperimentConfig, dim: int, init_points: np.ndarray | None = None
) -> Kernel:
    scale = None
    if cfg.bandwidth_rule == "median_init":
        if init_points is None:
            raise ConfigError("bandwidth_rule median_init needs initial particles")
        scale = median_bandwidth(init_points)
    if cfg.kernel_family == "gaussian":
        return gaussian_kernel(dim, sigma=scale if scale is not None else cfg.kernel_sigma)
    return imq_kernel(dim, c=scale if scale is not None else cfg.kernel_c)


def stationary_point(target: Target) -> np.ndarray:
    if target.x_star is not None:
        return np.asarray(target.x_star, dtype=float)
    start = (
        target.stationary_seed
        if target.stationary_seed is not None
        else np.zeros(target.dim)
    )
    return _targets.find_stationary_point(target, start, tol=STATIONARY_TOL)


def normalized_potential_at(target: Target, x) -> float:
    """Potential of the *normalized* density: F(x) + log Z."""
    if target.log_norm_const is None:
        raise ConfigError(
            f"target {target.name!r} has no normalizing constant; "
            "theory bounds need the normalized potential"
        )
    return target.potential_at(x) + target.log_norm_const


@dataclass(frozen=True)
class LambdaChoice:
    value: float
    source: str  # "analytic" or "estimated"
    estimate: T1Estimate | None


def resolve_lambda(
    cfg: ExperimentConfig, target: Target, rng: np.random.Generator
) -> LambdaChoice:
    source = cfg.lambda_source
    if source == "auto":
        source = "analytic" if target.lsi_lambda is not None else "estimated"
    if source == "analytic":
        if target.lsi_lambda is None:
            raise ConfigError(
                f"target {target.name!r} has no analytic transport constant; "
                "set theory.lambda_source = estimated"
            )
        return LambdaChoice(target.lsi_lambda, "analytic", None)
    if target.sampler is None:
        raise ConfigError(
            f"target {target.name!r} has no exact sampler to estimate the "
            "transport constant from"
        )
    est = _metrics.t1_lambda_upper(target.sample(rng, cfg.t1_samples))
    return LambdaChoice(est.lambda_hat, "estimated", est)


def first_abs_moment_pi(
    target: Target, rng: np.random.Generator
) -> tuple[float, str] | None:
    """E_pi ||x||, closed form when the target knows it, else Monte-Carlo
    (flagged); None when neither is possible."""
    if target.first_abs_moment is not None:
        return target.first_abs_moment, "closed_form"
    if target.sampler is None:
        return None
    samples = target.sample(rng, MC_MOMENT_SAMPLES)
    return float(np.mean(np.linalg.norm(samples, axis=1))), "monte_carlo"


def moment_mu0(dim: int, smoothness: float) -> float:
    """E ||x - x*|| under the Gaussian initialization N(x*, I/L), exactly."""
    return _targets.gaussian_norm_moment(dim) / math.sqrt(smoothness)


@dataclass
class ExperimentSetup:
    """Everything a run needs, assembled in the documented rng order."""

    cfg: ExperimentConfig
    target: Target
    kernel: Kernel
    x_star: np.ndarray
    init: Ensemble
    gamma: float
    gamma_mode: str
    alpha: float
    lam: LambdaChoice | None
    kl0_raw: float | None
    kl0: float | None
    ceiling_pi: float | None
    ceiling_mu0: float | None
    ceiling_descent: float
    moment_pi: tuple[float, str] | None
    w1_reference: np.ndarray | None


def prepare(cfg: ExperimentConfig) -> ExperimentSetup:
    """Build target, initial ensemble N(x*, I/L), kernel and step size."""
    target = build_target(cfg)
    rng = np.random.default_rng(cfg.require_seed())
    x_star = stationary_point(target)
    init = _svgd.ensemble_from_gaussian(
        rng,
        cfg.n_particles,
        x_star,
        1.0 / target.smoothness,
        track_logdens=cfg.track_logdens,
    )
    kernel = build_kernel(cfg, target.dim, init.positions)
    alpha = cfg.alpha
    b = kernel.bound_b()
    ceiling_descent = _theory.gamma_ceiling_descent(alpha, b, target.smoothness)

    lam: LambdaChoice | None = None
    kl0_raw = kl0 = None
    ceiling_pi = ceiling_mu0 = None
    moment_pi = None
    need_theory = cfg.gamma_mode == "auto"
    try:
        lam = resolve_lambda(cfg, target, rng)
    except ConfigError:
        if need_theory:
            raise
    if target.log_norm_const is not None:
        kl0_raw, kl0 = _theory.kl0_bound(
            normalized_potential_at(target, x_star), target.smoothness, target.dim
        )
    elif need_theory:
        raise ConfigError(
            f"target {target.name!r} has no normalizing constant; "
            "use svgd.gamma = fixed:<value>"
        )

    w1_reference = None
    if cfg.w1_enabled and target.sampler is not None:
        w1_reference = target.sample(rng, cfg.w1_ref_samples)

    if lam is not None and kl0 is not None:
        moment_pi = first_abs_moment_pi(target, rng)
        ceiling_mu0 = _theory.gamma_ceiling_mu0(
            alpha, b, target.smoothness, kl0, lam.value,
            moment_mu0(target.dim, target.smoothness),
        )
        if moment_pi is not None:
            ceiling_pi = _theory.gamma_ceiling_pi(
                alpha, b, target.smoothness,
                target.grad_norm_at_zero(), moment_pi[0], kl0, lam.value,
            )

    if cfg.gamma_mode == "auto":
        candidates = [c for c in (ceiling_pi, ceiling_mu0) if c is not None]
        if not candidates:
            raise ConfigError("cannot derive a step ceiling for this target")
        gamma = min(candidates)
        gamma_mode = "auto_theorem1"
    else:
        gamma = float(cfg.gamma_value)
        gamma_mode = "fixed"

    return ExperimentSetup(
        cfg=cfg,
        target=target,
        kernel=kernel,
        x_star=x_star,
        init=init,
        gamma=gamma,
        gamma_mode=gamma_mode,
        alpha=alpha,
        lam=lam,
        kl0_raw=kl0_raw,
        kl0=kl0,
        ceiling_pi=ceiling_pi,
        ceiling_mu0=ceiling_mu0,
        ceiling_descent=ceiling_descent,
        moment_pi=moment_pi,
        w1_reference=w1_reference,
    )


def noise_floor(
    target: Target,
    kernel: Kernel,
    n_particles: int,
    seed: int,
    replicates: int = FLOOR_REPLICATES,
    threads: int = 1,
) -> float | None:
    """Mean squared KSD of exact target samples at the working particle
    count: the smallest value a convergence claim can honestly resolve."""
    if target.sampler is None:
        return None
    rng = np.random.default_rng(seed)
    vals = [
        _ksd.ksd_squared(target.sample(rng, n_particles), target, kernel, threads=threads)
        for _ in range(replicates)
    ]
    return float(np.mean(vals))


def run_experiment(
    cfg: ExperimentConfig, threads: int = 1, keep_iterates: bool = False
) -> tuple[ExperimentSetup, RunResult]:
    """The `run` command body; RunAborted propagates with partial records."""
    setup = prepare(cfg)
    result = _svgd.run(
        setup.target,
        setup.kernel,
        setup.init,
        setup.gamma,
        cfg.n_iters,
        record_every=cfg.record_every,
        w1_reference=setup.w1_reference,
        w1_seed=cfg.require_seed(),
        keep_iterates=keep_iterates,
        threads=threads,
    )
    return setup, result


# ---------------------------------------------------------------------------
# Verification suite
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool | None  # None = skipped (reason in detail)
    detail: str


@dataclass
class VerifyReport:
    checks: list[Check]
    setup: ExperimentSetup
    result: RunResult
    floor: float | None

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.passed is not None)


def _descent_check(setup: ExperimentSetup, result: RunResult) -> Check:
    """Per-step KL decrease must cover gamma (1 - gamma K / 2) ksd2 up to
    three Monte-Carlo standard errors of the paired estimate."""
    k_taylor = _theory.taylor_constant(
        setup.alpha, setup.target.smoothness, setup.kernel.bound_b()
    )
    factor = setup.gamma * (1.0 - setup.gamma * k_taylor / 2.0)
    contribs = result.kl_contributions
    worst = math.inf
    worst_iter = -1
    for rec in result.records[:-1]:
        k = rec.iteration
        if k + 1 not in contribs:
            continue
        diff = contribs[k] - contribs[k + 1]
        n = diff.size
        decrease = float(np.mean(diff))
        se = float(np.std(diff, ddof=1) / math.sqrt(n))
        slack = decrease - (factor * rec.ksd2 - 3.0 * se)
        if slack < worst:
            worst, worst_iter = slack, k
    return Check(
        "descent",
        worst >= 0.0,
        f"min slack {worst:.3e} at iteration {worst_iter} "
        f"(descent factor {factor:.3e})",
    )


def _rate_check(
    setup: ExperimentSetup,
    result: RunResult,
    floor: float | None,
    threads: int,
) -> list[Check]:
    checks = []
    for n in RATE_CHECK_ITERS:
        if n > len(result.iterates):
            continue
        bound = _theory.rate_bound(setup.kl0, setup.gamma, n)
        name = f"rate_n{n}"
        if floor is not None and bound < floor:
            checks.append(
                Check(name, None, f"bound {bound:.3e} below noise floor {floor:.3e}")
            )
            continue
        measured = _ksd.ksd_squared_mixture(
            result.iterates[:n], setup.target, setup.kernel, threads=threads
        )
        checks.append(
            Check(
                name,
                measured < bound,
                f"mixture ksd2 {measured:.4e} vs bound {bound:.4e}",
            )
        )
    return checks


def _w1_check(result: RunResult) -> Check:
    recorded = {r.iteration: r.w1 for r in result.records}
    iters = [k for k in W1_CHECK_ITERS if k in recorded]
    vals = [recorded[k] for k in iters]
    if len(vals) < 2 or any(math.isnan(v) for v in vals):
        return Check("w1_decrease", None, "W1 not tracked for this run")
    decreasing = all(b < a for a, b in zip(vals, vals[1:]))
    halved = vals[-1] < 0.5 * vals[0]
    detail = ", ".join(f"iter {k}: {v:.4f}" for k, v in zip(iters, vals))
    return Check("w1_decrease", decreasing and halved, detail)


def verify_suite(cfg: ExperimentConfig, threads: int = 1) -> VerifyReport:
    """Descent, rate, ceiling, margin and W1 checks on one instrumented run."""
    cfg = dataclasses.replace(cfg, record_every=1, track_logdens=True, w1_enabled=True)
    seed = cfg.require_seed()
    setup = prepare(cfg)
    target, kernel = setup.target, setup.kernel
    if target.log_norm_const is None or target.dim > 2:
        raise ConfigError("verify needs a d <= 2 target with a normalizing constant")
    if setup.lam is None or setup.kl0 is None:
        raise ConfigError("verify needs the transport constant and the KL bound")

    floor = noise_floor(target, kernel, cfg.n_particles, seed + 1, threads=threads)
    result = _svgd.run(
        target,
        kernel,
        setup.init,
        setup.gamma,
        cfg.n_iters,
        record_every=1,
        w1_reference=setup.w1_reference,
        w1_seed=seed,
        keep_iterates=True,
        threads=threads,
    )

    checks: list[Check] = []

    probe = _targets.verify_smoothness(target, 1000, seed + 2)
    checks.append(
        Check(
            "smoothness_probe",
            probe <= target.smoothness,
            f"probe {probe:.6g} vs declared {target.smoothness:.6g}",
        )
    )

    residual = float(np.linalg.norm(target.grad(setup.x_star)))
    checks.append(
        Check("stationary_residual", residual <= 1e-8, f"||grad|| = {residual:.2e}")
    )

    b = kernel.bound_b()
    margin = setup.gamma * b * max(r.h_norm for r in result.records)
    regime = (setup.alpha - 1.0) / setup.alpha
    checks.append(
        Check(
            "diffeo_margin",
            margin < 1.0,
            f"max gamma*B*||h|| = {margin:.4f} (theorem regime allows {regime:.4f})",
        )
    )

    checks.append(_descent_check(setup, result))
    checks.extend(_rate_check(setup, result, floor, threads))

    bundle = _theory.complexity_constants(
        b,
        target.smoothness,
        setup.lam.value,
        normalized_potential_at(target, setup.x_star),
        target.dim,
        alpha=setup.alpha,
    )
    checks.append(
        Check(
            "ceiling_consistency",
            bundle.gamma <= bundle.gamma_ceiling_mu0 * (1 + 1e-12),
            f"complexity gamma {bundle.gamma:.4e} vs mu0 ceiling "
            f"{bundle.gamma_ceiling_mu0:.4e}",
        )
    )

    checks.append(_w1_check(result))
    return VerifyReport(checks=checks, setup=setup, result=result, floor=floor)


# ---------------------------------------------------------------------------
# Dimension sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    dim: int
    gamma: float
    n_to_eps: int  # -1 when the accuracy target was not reached in time
    n_predicted: int

    @property
    def ok(self) -> bool:
        return 0 <= self.n_to_eps <= self.n_predicted


def _cfg_for_dim(cfg: ExperimentConfig, dim: int) -> ExperimentConfig:
    """Extend the configured target family to the requested dimension."""
    if cfg.target_name == "gaussian":
        return dataclasses.replace(cfg, target_d=dim)
    if cfg.target_name == "aniso_gaussian":
        base = cfg.target_variances or [1.0]
        variances = [base[i % len(base)] for i in range(dim)]
        return dataclasses.replace(cfg, target_variances=variances)
    if cfg.target_name == "mixture":
        means = cfg.target_means if cfg.target_means is not None else [-2.0, 2.0]
        if means and isinstance(means[0], list):
            if len(means[0]) != dim:
                raise ConfigError("mixture means dimension does not match sweep dim")
            return cfg
        # scalar means: place the components along the first coordinate
        embedded = [[m] + [0.0] * (dim - 1) for m in means]
        return dataclasses.replace(cfg, target_means=embedded)
    raise ConfigError(f"sweep does not support target {cfg.target_name!r}")


def sweep(cfg: ExperimentConfig, threads: int = 1) -> list[SweepRow]:
    """Observed iterations-to-accuracy vs the predicted sufficient count.

    Observed is the first n at which the running mean of per-iterate squared
    KSD values falls to eps. That mean upper-bounds the squared KSD of the
    mixture of iterates (convexity of the squared norm), so reaching eps on
    the mean certifies the mixture is at eps too.
    """
    seed = cfg.require_seed()
    rows = []
    for dim in cfg.sweep_dims:
        cfgd = _cfg_for_dim(cfg, dim)
        target = build_target(cfgd)
        rng = np.random.default_rng(seed + dim)
        x_star = stationary_point(target)
        init = _svgd.ensemble_from_gaussian(
            rng, cfg.n_particles, x_star, 1.0 / target.smoothness, track_logdens=False
        )
        kernel = build_kernel(cfgd, target.dim, init.positions)
        lam = resolve_lambda(cfgd, target, rng)
        bundle = _theory.complexity_constants(
            kernel.bound_b(),
            target.smoothness,
            lam.value,
            normalized_potential_at(target, x_star),
            target.dim,
            alpha=cfg.alpha,
            eps=cfg.epsilon,
        )
        floor = noise_floor(target, kernel, cfg.n_particles, seed + 1000 + dim,
                            threads=threads)
        if floor is not None and cfg.epsilon < floor:
            raise NoiseFloorError(
                f"requested accuracy {cfg.epsilon:g} is below the KSD noise "
                f"floor {floor:.3e} at N={cfg.n_particles} (d={dim}); "
                "raise eps or the particle count"
            )

        gamma, n_pred = bundle.gamma, bundle.n_predicted
        state = init
        ksd2_cur = _ksd.ksd_squared(state.positions, target, kernel, threads=threads)
        observed = 0 if ksd2_cur <= cfg.epsilon else -1
        prefix_sum = 0.0
        k = 0
        while observed < 0 and k < n_pred:
            state, _ = _svgd.step(
                state, target, kernel, gamma, threads=threads,
                precomputed_ksd2=ksd2_cur,
            )
            prefix_sum += ksd2_cur
            k += 1
            if prefix_sum / k <= cfg.epsilon:
                observed = k
                break
            ksd2_cur = _ksd.ksd_squared(state.positions, target, kernel, threads=threads)
        rows.append(SweepRow(dim, gamma, observed, n_pred))
    return rows


# ---------------------------------------------------------------------------
# Theory summary (for the `theory` command)
# ---------------------------------------------------------------------------

def theory_summary(cfg: ExperimentConfig) -> dict:
    """The constants bundle for the configured problem, as a flat dict."""
    target = build_target(cfg)
    rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
    x_star = stationary_point(target)
    init_points = None
    if cfg.bandwidth_rule == "median_init":
        init_points = _svgd.ensemble_from_gaussian(
            rng, cfg.n_particles, x_star, 1.0 / target.smoothness, track_logdens=False
        ).positions
    kernel = build_kernel(cfg, target.dim, init_points)
    lam = resolve_lambda(cfg, target, rng)
    bundle = _theory.complexity_constants(
        kernel.bound_b(),
        target.smoothness,
        lam.value,
        normalized_potential_at(target, x_star),
        target.dim,
        alpha=cfg.alpha,
        eps=cfg.epsilon,
    )
    out = bundle.as_dict()
    out["lambda_source"] = lam.source
    moment = first_abs_moment_pi(target, rng)
    if moment is not None:
        value, provenance = moment
        out["first_abs_moment_pi"] = value
        out["first_abs_moment_pi_source"] = provenance
        out["gamma_ceiling_pi"] = _theory.gamma_ceiling_pi(
            cfg.alpha, kernel.bound_b(), target.smoothness,
            target.grad_norm_at_zero(), value, bundle.kl0, lam.value,
        )
    out["dim"] = target.dim
    out["target"] = target.name
    out["kernel"] = f"{kernel.family}({kernel.bandwidth:g})"
    return out

"""The particle update, its drift field, and pushforward density tracking.

One iteration moves every particle by ``-gamma * drift(x)``, where the drift
is the kernel-smoothed gradient of the KL objective,

    drift(x) = (1/N) sum_j [ k(x, x_j) gF(x_j) - grad2 k(x, x_j) ],

evaluated against the *pre-step* ensemble (synchronous update: the whole
ensemble is one pushforward map). Because the map is explicit, its Jacobian
is available in closed form, and an ensemble initialized from a known
density can carry exact per-particle log-densities of the evolving measure
through the change-of-variables log-determinant. That is what makes KL
measurable along a run, and it is the package's stand-in for the
infinite-particle regime the convergence theory lives in: the bias of the
stand-in is quantified separately as a sample-noise floor, never assumed
away.

A step is refused outright (rather than clamped) when ``gamma * B *
||drift||_H >= 1``: outside that margin the update map may fail to be a
diffeomorphism and every guarantee downstream is off.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import ksd as _ksd
from . import metrics as _metrics
from .kernels import Kernel
from .parallel import block_ranges, map_blocks
from .targets import Target

_QUERY_BLOCK = 512


class StepSizeError(RuntimeError):
    """Step too large: the update map may not be a diffeomorphism."""


class NonFiniteError(RuntimeError):
    """Particle state or update became non-finite."""


@dataclass(frozen=True)
class Ensemble:
    """N weighted-equally particle positions, optionally with log-densities.

    ``logdens[i]`` is log mu_n evaluated at particle i's current position,
    transported from the initial distribution by the per-step
    log-determinant rule; it is only meaningful when the ensemble was built
    by one of the constructors below that set it from a known density.
    """

    positions: np.ndarray
    logdens: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", pts)
        if pts.shape[0] == 0:
            raise ValueError("empty ensemble")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteError("non-finite particle positions")
        if self.logdens is not None:
            ld = np.asarray(self.logdens, dtype=float).reshape(-1)
            if ld.shape != (pts.shape[0],):
                raise ValueError("logdens length does not match particle count")
            if not np.all(np.isfinite(ld)):
                raise NonFiniteError("non-finite log-densities")
            object.__setattr__(self, "logdens", ld)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics; ``diffeo_margin`` is gamma * B * ||drift||_H and
    is strictly below 1 for every accepted step."""

    gamma: float
    sup_displacement: float
    logdet_max: float
    h_norm: float
    diffeo_margin: float


def ensemble_from_gaussian(
    rng: np.random.Generator,
    n: int,
    mean,
    variance,
    track_logdens: bool = True,
) -> Ensemble:
    """Sample N(mean, diag(variance)) and record exact initial log-densities."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    var = np.broadcast_to(np.asarray(variance, dtype=float), mean.shape).astype(float)
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    pts = mean[None, :] + np.sqrt(var)[None, :] * rng.standard_normal((n, mean.size))
    logdens = None
    if track_logdens:
        logdens = -0.5 * np.sum(
            np.log(2 * math.pi * var)[None, :] + (pts - mean[None, :]) ** 2 / var[None, :],
            axis=1,
        )
    return Ensemble(pts, logdens)


def ensemble_from_target(
    rng: np.random.Generator,
    n: int,
    target: Target,
    track_logdens: bool = True,
) -> Ensemble:
    """Exact samples of the target itself (the fixed point of the update)."""
    pts = target.sample(rng, n)
    logdens = None
    if track_logdens:
        if target.log_norm_const is None:
            raise ValueError("target has no normalizing constant; cannot track")
        logdens = -target.potential(pts) - target.log_norm_const
    return Ensemble(pts, logdens)


def ensemble_from_points(points, logdens=None) -> Ensemble:
    return Ensemble(np.array(points, dtype=float), logdens)


# ---------------------------------------------------------------------------
# Drift field and its Jacobian
# ---------------------------------------------------------------------------

def _drift_block(
    queries: np.ndarray,
    pts: np.ndarray,
    grads: np.ndarray,
    kernel: Kernel,
) -> np.ndarray:
    k, gw, _, _ = kernel.pair_terms(queries, pts)
    # sum_j grad2 k(q, x_j) = q * rowsum(gw) - gw @ x
    attract = k @ grads
    repel = queries * np.sum(gw, axis=1)[:, None] - gw @ pts
    return (attract - repel) / pts.shape[0]


def drift_field(
    ensemble: Ensemble,
    target: Target,
    kernel: Kernel,
    queries: np.ndarray | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Drift evaluated at each query point (default: at the particles)."""
    pts = ensemble.positions
    q = pts if queries is None else np.atleast_2d(np.asarray(queries, dtype=float))
    grads = target.grad_batch(pts)

    def block(s: int, e: int) -> np.ndarray:
        return _drift_block(q[s:e], pts, grads, kernel)

    parts = map_blocks(block_ranges(q.shape[0], _QUERY_BLOCK), block, threads)
    return np.concatenate(parts, axis=0)


def drift(ensemble: Ensemble, target: Target, kernel: Kernel, x) -> np.ndarray:
    """Drift at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return drift_field(ensemble, target, kernel, queries=x)[0]


def drift_jacobian_field(
    ensemble: Ensemble,
    target: Target,
    kernel: Kernel,
    queries: np.ndarray | None = None,
    threads: int = 1,
) -> np.ndarray:
    """d x d Jacobian of the drift at each query point, shape (m, d, d).

    Writing delta = q - x_j and using the radial kernel derivatives,

        J(q) = (1/N) sum_j [ -gw_j gF(x_j) delta^T
                             - gw_j I + hw_j delta delta^T ],

    expanded into matrix products so no (m, N, d, d) intermediate is formed.
    """
    pts = ensemble.positions
    q = pts if queries is None else np.atleast_2d(np.asarray(queries, dtype=float))
    n, d = pts.shape
    grads = target.grad_batch(pts)
    eye = np.eye(d)
    g_outer_x = (grads[:, :, None] * pts[:, None, :]).reshape(n, d * d)
    x_outer_x = (pts[:, :, None] * pts[:, None, :]).reshape(n, d * d)

    def block(s: int, e: int) -> np.ndarray:
        qb = q[s:e]
        m = qb.shape[0]
        _, gw, hw, _ = kernel.pair_terms(qb, pts)
        a = gw @ grads                                   # (m, d)
        b = (gw @ g_outer_x).reshape(m, d, d)
        c = hw @ pts                                     # (m, d)
        dd = (hw @ x_outer_x).reshape(m, d, d)
        gw_row = np.sum(gw, axis=1)
        hw_row = np.sum(hw, axis=1)
        jac = b - a[:, :, None] * qb[:, None, :]
        jac -= gw_row[:, None, None] * eye[None, :, :]
        jac += hw_row[:, None, None] * (qb[:, :, None] * qb[:, None, :])
        jac -= qb[:, :, None] * c[:, None, :]
        jac -= c[:, :, None] * qb[:, None, :]
        jac += dd
        return jac / n

    parts = map_blocks(block_ranges(q.shape[0], _QUERY_BLOCK), block, threads)
    return np.concatenate(parts, axis=0)


def drift_jacobian(ensemble: Ensemble, target: Target, kernel: Kernel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return drift_jacobian_field(ensemble, target, kernel, queries=x)[0]


# ---------------------------------------------------------------------------
# The update
# ---------------------------------------------------------------------------

def step(
    ensemble: Ensemble,
    target: Target,
    kernel: Kernel,
    gamma: float,
    threads: int = 1,
    precomputed_ksd2: float | None = None,
) -> tuple[Ensemble, StepReport]:
    """One synchronous update of every particle against the pre-step state.

    When log-densities are tracked, each particle's entry is decremented by
    log|det(I - gamma J)| with J the drift Jacobian at the particle: the
    change of variables for the pushforward of the measure under the update
    map. A singular or orientation-reversing factor raises StepSizeError.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    pts = ensemble.positions
    h = drift_field(ensemble, target, kernel, threads=threads)

    ksd2 = precomputed_ksd2
    if ksd2 is None:
        ksd2 = _ksd.ksd_squared(pts, target, kernel, threads=threads)
    h_norm = math.sqrt(max(ksd2, 0.0))
    margin = gamma * kernel.bound_b() * h_norm
    if margin >= 1.0:
        raise StepSizeError(
            f"diffeomorphism margin {margin:.3g} >= 1 at iteration "
            f"{ensemble.iteration}; reduce the step size"
        )

    displacement = gamma * h
    new_pts = pts - displacement
    if not np.all(np.isfinite(new_pts)):
        raise NonFiniteError(f"non-finite update at iteration {ensemble.iteration}")

    logdet_max = 0.0
    new_logdens = ensemble.logdens
    if ensemble.logdens is not None:
        jac = drift_jacobian_field(ensemble, target, kernel, threads=threads)
        maps = np.eye(ensemble.dim)[None, :, :] - gamma * jac
        sign, logabs = np.linalg.slogdet(maps)
        if np.any(sign <= 0):
            raise StepSizeError(
                f"update map singular or orientation-reversing at iteration "
                f"{ensemble.iteration} (gamma={gamma:g} too large)"
            )
        new_logdens = ensemble.logdens - logabs
        logdet_max = float(np.max(np.abs(logabs)))

    report = StepReport(
        gamma=gamma,
        sup_displacement=float(np.max(np.linalg.norm(displacement, axis=1))),
        logdet_max=logdet_max,
        h_norm=h_norm,
        diffeo_margin=margin,
    )
    new_ensemble = Ensemble(new_pts, new_logdens, ensemble.iteration + 1)
    return new_ensemble, report


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryRecord:
    """Diagnostics of the ensemble state at one recorded iteration.

    ``logdet_max`` belongs to the step that produced the state (0 at
    iteration 0); nan marks quantities that were not tracked.
    """

    iteration: int
    gamma: float
    ksd2: float
    kl: float
    kl_stderr: float
    w1: float
    w1_stderr: float
    h_norm: float
    logdet_max: float
    wall_time_ms: float

    CSV_HEADER = "iter,gamma,ksd2,kl,w1,h_norm,logdet_max"

    def csv_row(self) -> str:
        vals = [self.gamma, self.ksd2, self.kl, self.w1, self.h_norm, self.logdet_max]
        return ",".join([str(self.iteration)] + [f"{float(v):.17g}" for v in vals])


@dataclass
class RunResult:
    records: list[TrajectoryRecord]
    final: Ensemble
    iterates: list[np.ndarray] | None = None
    kl_contributions: dict[int, np.ndarray] | None = None


class RunAborted(RuntimeError):
    """A run died mid-way; carries the partial trajectory."""

    def __init__(self, message: str, partial: RunResult):
        super().__init__(message)
        self.partial = partial


def run(
    target: Target,
    kernel: Kernel,
    init: Ensemble,
    gamma: float,
    n_iters: int,
    record_every: int = 1,
    w1_reference: np.ndarray | None = None,
    w1_seed: int = 0,
    keep_iterates: bool = False,
    threads: int = 1,
) -> RunResult:
    """Iterate the update ``n_iters`` times, recording diagnostics.

    Deterministic given the initial ensemble: the loop itself draws no
    randomness (the only exception is the subsampled W1 fallback in
    dimension >= 2, which derives its stream from ``w1_seed``).
    ``keep_iterates`` retains each pre-step position array, which is what
    the mixture-of-iterates KSD consumes.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")

    track_kl = init.logdens is not None and target.log_norm_const is not None
    result = RunResult(
        records=[],
        final=init,
        iterates=[] if keep_iterates else None,
        kl_contributions={} if track_kl else None,
    )
    start = time.perf_counter()

    def record(state: Ensemble, logdet_max: float) -> float:
        ksd2 = _ksd.ksd_squared(state.positions, target, kernel, threads=threads)
        kl = kl_se = float("nan")
        if track_kl:
            contribs = _metrics.kl_contributions(state, target)
            result.kl_contributions[state.iteration] = contribs
            est_n = contribs.size
            kl = float(np.mean(contribs))
            kl_se = float(np.std(contribs, ddof=1) / math.sqrt(est_n))
        w1_val = w1_se = float("nan")
        if w1_reference is not None:
            if state.dim == 1:
                w1_val = _metrics.w1(state.positions, w1_reference)
                w1_se = 0.0
            else:
                est = _metrics.w1_subsampled(
                    state.positions,
                    w1_reference,
                    np.random.default_rng(w1_seed + state.iteration),
                )
                w1_val, w1_se = est.value, est.stderr
        result.records.append(
            TrajectoryRecord(
                iteration=state.iteration,
                gamma=gamma,
                ksd2=ksd2,
                kl=kl,
                kl_stderr=kl_se,
                w1=w1_val,
                w1_stderr=w1_se,
                h_norm=math.sqrt(max(ksd2, 0.0)),
                logdet_max=logdet_max,
                wall_time_ms=(time.perf_counter() - start) * 1e3,
            )
        )
        return ksd2

    state = init
    last_logdet = 0.0
    for k in range(n_iters + 1):
        recorded_ksd2 = None
        if k % record_every == 0 or k == n_iters:
            recorded_ksd2 = record(state, last_logdet)
        if k == n_iters:
            break
        if keep_iterates:
            result.iterates.append(state.positions)
        try:
            state, report = step(
                state, target, kernel, gamma,
                threads=threads, precomputed_ksd2=recorded_ksd2,
            )
        except (StepSizeError, NonFiniteError) as exc:
            result.final = state
            raise RunAborted(str(exc), result) from exc
        last_logdet = report.logdet_max
        result.final = state
    return result

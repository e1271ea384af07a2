"""Unnormalized target distributions pi ~ exp(-F).

Each target carries its potential F, the gradient of F (batched, no
numerical differentiation anywhere near the hot path), and an analytically
declared smoothness constant: an upper bound on the operator norm of the
Hessian of F. The built-ins additionally know their normalizing constant,
an exact sampler, and moment values where a closed form exists, because the
step-size formulas and the KL/W1 diagnostics consume those numbers.

Smoothness constants are declared, never fitted: ``verify_smoothness``
probes gradient increments and must come in at or below the declared value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import erf, gammaln, logsumexp


class ConvergenceError(RuntimeError):
    """Gradient descent hit its iteration cap before reaching tolerance."""


@dataclass(frozen=True)
class Target:
    """A target pi ~ exp(-potential) on R^d.

    ``potential`` maps (n, d) -> (n,) and ``gradient`` maps (n, d) -> (n, d).
    ``smoothness`` bounds the Hessian operator norm of the potential (for the
    double well: on ``probe_box`` only, see its builder). Optional fields are
    None when no closed form is available:

    - ``x_star``: a stationary point of the potential.
    - ``sampler``: (rng, n) -> (n, d) exact samples of pi.
    - ``log_norm_const``: log of the integral of exp(-potential).
    - ``first_abs_moment``: E_pi ||x||.
    - ``lsi_lambda``: a log-Sobolev constant of pi, which is also a valid
      transport-inequality constant with the same value.
    - ``stationary_seed``: recommended start for the stationary-point search;
      for multimodal targets this pins down *which* stationary point the
      default toolchain uses.

    Targets are immutable; ``grad`` is pure and thread-safe.
    """

    name: str
    dim: int
    smoothness: float
    potential: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    x_star: np.ndarray | None = None
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    log_norm_const: float | None = None
    first_abs_moment: float | None = None
    lsi_lambda: float | None = None
    stationary_seed: np.ndarray | None = None
    probe_box: tuple[float, float] = (-4.0, 4.0)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if not (self.smoothness > 0 and math.isfinite(self.smoothness)):
            raise ValueError("smoothness constant must be positive and finite")

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.dim,):
            raise ValueError(
                f"point has dimension {x.shape[0]}, target expects {self.dim}"
            )
        return x

    def potential_at(self, x) -> float:
        x = self._check_point(x)
        return float(self.potential(x[None, :])[0])

    def grad(self, x) -> np.ndarray:
        """Gradient of the potential at a single point."""
        x = self._check_point(x)
        g = self.gradient(x[None, :])[0]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at {x!r}")
        return g

    def grad_batch(self, xs: np.ndarray) -> np.ndarray:
        """Gradient of the potential at each row of ``xs``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != self.dim:
            raise ValueError("row dimension does not match target dimension")
        g = self.gradient(xs)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in batch")
        return g

    def grad_norm_at_zero(self) -> float:
        return float(np.linalg.norm(self.grad(np.zeros(self.dim))))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.sampler is None:
            raise ValueError(f"target {self.name!r} has no exact sampler")
        return self.sampler(rng, n)


def find_stationary_point(
    target: Target,
    x0,
    tol: float = 1e-8,
    max_iters: int = 100_000,
) -> np.ndarray:
    """Gradient descent on the potential with step 1/L until ||grad|| <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = target._check_point(x0).copy()
    step = 1.0 / target.smoothness
    for _ in range(max_iters):
        g = target.grad(x)
        if np.linalg.norm(g) <= tol:
            return x
        x -= step * g
    raise ConvergenceError(
        f"no stationary point within {max_iters} iterations (tol={tol:g})"
    )


def verify_smoothness(
    target: Target,
    n_probes: int,
    seed: int,
    box: tuple[float, float] | None = None,
) -> float:
    """Largest observed gradient-increment ratio ||dg|| / ||dx|| over probe pairs.

    The probes are uniform in ``box``^d (the target's own probe box by
    default). The returned estimate must not exceed the declared smoothness
    constant; callers assert that.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    lo, hi = box if box is not None else target.probe_box
    rng = np.random.default_rng(seed)
    xs = rng.uniform(lo, hi, size=(n_probes, target.dim))
    ys = rng.uniform(lo, hi, size=(n_probes, target.dim))
    gap = np.linalg.norm(xs - ys, axis=1)
    keep = gap > 1e-12
    dg = np.linalg.norm(
        target.grad_batch(xs[keep]) - target.grad_batch(ys[keep]), axis=1
    )
    return float(np.max(dg / gap[keep]))


# ---------------------------------------------------------------------------
# Built-ins
# ---------------------------------------------------------------------------

def gaussian_norm_moment(dim: int) -> float:
    """E ||Z|| for Z ~ N(0, I_d): sqrt(2) Gamma((d+1)/2) / Gamma(d/2)."""
    return math.sqrt(2.0) * math.exp(gammaln((dim + 1) / 2) - gammaln(dim / 2))


def _folded_normal_mean(m: float, s: float) -> float:
    # E |X| for X ~ N(m, s^2)
    return m * erf(m / (s * math.sqrt(2.0))) + s * math.sqrt(2.0 / math.pi) * math.exp(
        -0.5 * (m / s) ** 2
    )


def standard_gaussian(dim: int) -> Target:
    """N(0, I_d): potential ||x||^2 / 2, smoothness exactly 1."""

    def potential(xs):
        return 0.5 * np.sum(xs * xs, axis=1)

    def gradient(xs):
        return xs.copy()

    return Target(
        name="gaussian",
        dim=dim,
        smoothness=1.0,
        potential=potential,
        gradient=gradient,
        x_star=np.zeros(dim),
        sampler=lambda rng, n: rng.standard_normal((n, dim)),
        log_norm_const=0.5 * dim * math.log(2 * math.pi),
        first_abs_moment=gaussian_norm_moment(dim),
        lsi_lambda=1.0,
        stationary_seed=np.zeros(dim),
    )


def aniso_gaussian(variances) -> Target:
    """Centered Gaussian with diagonal covariance; smoothness is 1/min variance."""
    var = np.asarray(variances, dtype=float).reshape(-1)
    if var.size < 1 or np.any(var <= 0):
        raise ValueError("variances must be positive")
    dim = var.size
    prec = 1.0 / var

    def potential(xs):
        return 0.5 * np.sum(xs * xs * prec[None, :], axis=1)

    def gradient(xs):
        return xs * prec[None, :]

    if dim == 1:
        first_abs = math.sqrt(2.0 / math.pi) * math.sqrt(var[0])
    elif np.allclose(var, var[0]):
        first_abs = math.sqrt(var[0]) * gaussian_norm_moment(dim)
    else:
        first_abs = None  # no elementary closed form; callers fall back to MC

    std = np.sqrt(var)
    return Target(
        name="aniso_gaussian",
        dim=dim,
        smoothness=float(np.max(prec)),
        potential=potential,
        gradient=gradient,
        x_star=np.zeros(dim),
        sampler=lambda rng, n: rng.standard_normal((n, dim)) * std[None, :],
        log_norm_const=float(0.5 * np.sum(np.log(2 * math.pi * var))),
        first_abs_moment=first_abs,
        lsi_lambda=float(np.min(prec)),
        stationary_seed=np.zeros(dim),
    )


def gaussian_mixture(means, weights=None, variance: float = 1.0) -> Target:
    """Mixture of isotropic Gaussians with a common component variance.

    ``means`` is (k,) for a 1-d mixture or (k, d) in general. Weights are
    normalized. The declared smoothness constant is

        max(1/s^2, D^2 / (4 s^4) - 1/s^2),   D = diameter of the means,

    which bounds the Hessian norm of -log(density) for any number of
    components and is attained for two components. Separated mixtures have
    a nonconvex potential, which is the regime these built-ins exist for.
    """
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    k, dim = means.shape
    if k < 1:
        raise ValueError("need at least one component")
    if weights is None:
        weights = np.full(k, 1.0 / k)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape != (k,) or np.any(weights <= 0):
        raise ValueError("weights must be positive, one per component")
    weights = weights / weights.sum()
    if not (variance > 0):
        raise ValueError("component variance must be positive")
    s2 = float(variance)
    logw = np.log(weights)

    diam = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            diam = max(diam, float(np.linalg.norm(means[i] - means[j])))
    smoothness = max(1.0 / s2, diam**2 / (4.0 * s2 * s2) - 1.0 / s2)

    def _logits(xs):
        sq = np.sum((xs[:, None, :] - means[None, :, :]) ** 2, axis=2)
        return logw[None, :] - 0.5 * sq / s2

    def potential(xs):
        return -logsumexp(_logits(xs), axis=1)

    def gradient(xs):
        a = _logits(xs)
        r = np.exp(a - logsumexp(a, axis=1, keepdims=True))
        return (xs - r @ means) / s2

    def sampler(rng, n):
        idx = rng.choice(k, size=n, p=weights)
        return means[idx] + math.sqrt(s2) * rng.standard_normal((n, dim))

    if dim == 1:
        first_abs = float(
            sum(w * _folded_normal_mean(abs(m[0]), math.sqrt(s2))
                for w, m in zip(weights, means))
        )
    else:
        first_abs = None

    reach = float(np.max(np.abs(means))) + 3.0 * math.sqrt(s2)
    heaviest = means[int(np.argmax(weights))].copy()
    return Target(
        name="mixture",
        dim=dim,
        smoothness=smoothness,
        potential=potential,
        gradient=gradient,
        x_star=None,  # found numerically; search starts at the heaviest mean
        sampler=sampler,
        log_norm_const=0.5 * dim * math.log(2 * math.pi * s2),
        first_abs_moment=first_abs,
        lsi_lambda=None,
        stationary_seed=heaviest,
        probe_box=(-reach, reach),
    )


def double_well(well_offset: float = 1.0) -> Target:
    """1-d potential (x^2 - a^2)^2 / 4 with minima at +-a.

    The Hessian 3x^2 - a^2 is unbounded, so the declared smoothness constant
    is only valid on the probe box [-2a, 2a]; everything that consumes the
    constant (stationary-point steps, smoothness probes) stays inside it.
    """
    a2 = float(well_offset) ** 2
    if a2 <= 0:
        raise ValueError("well offset must be nonzero")

    def potential(xs):
        return 0.25 * (xs[:, 0] ** 2 - a2) ** 2

    def gradient(xs):
        x = xs[:, 0]
        return (x * (x * x - a2))[:, None]

    box = 2.0 * math.sqrt(a2)
    z, _ = integrate.quad(lambda x: math.exp(-0.25 * (x * x - a2) ** 2), -np.inf, np.inf)
    m1, _ = integrate.quad(
        lambda x: abs(x) * math.exp(-0.25 * (x * x - a2) ** 2), -np.inf, np.inf
    )
    return Target(
        name="double_well",
        dim=1,
        smoothness=3.0 * box**2 - a2,
        potential=potential,
        gradient=gradient,
        x_star=np.array([math.sqrt(a2)]),
        sampler=None,
        log_norm_const=math.log(z),
        first_abs_moment=m1 / z,
        lsi_lambda=None,
        stationary_seed=np.array([0.5 * math.sqrt(a2)]),
        probe_box=(-box, box),
    )


def custom_target(
    name: str,
    dim: int,
    potential: Callable[[np.ndarray], np.ndarray],
    gradient: Callable[[np.ndarray], np.ndarray],
    smoothness: float,
    **optional,
) -> Target:
    """Plugin entry point: batched potential/gradient plus a declared
    smoothness constant. Optional keywords are forwarded to ``Target``."""
    return Target(
        name=name,
        dim=dim,
        smoothness=smoothness,
        potential=potential,
        gradient=gradient,
        **optional,
    )

"""Step-size ceilings, descent constants and iteration-count predictions.

Everything here is pure scalar arithmetic with domain-checked inputs. The
stochastic ingredients (moment integrals, estimated transport constants,
measured KL values) are computed elsewhere and passed in, so a constants
bundle is exactly reproducible from its inputs.

Notation used throughout: L is the smoothness constant of the target
potential, B the kernel bound, alpha > 1 the free margin parameter of the
descent analysis, lam a valid transport-inequality constant, and kl0 a
bound on the KL divergence of the initial distribution from the target.
Replacing lam by any smaller (more conservative) value shrinks every
ceiling and grows every predicted iteration count, so a loose estimate
never invalidates a guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _check_common(alpha: float, b: float, lam: float | None = None) -> None:
    _require(alpha > 1, "alpha must be > 1")
    _require(b > 0, "kernel bound B must be positive")
    if lam is not None:
        _require(lam > 0, "transport constant lambda must be positive")


@dataclass(frozen=True)
class TheoryConstants:
    """The full bundle of constants governing one configuration.

    ``gamma`` is the usable step size: min of the descent ceiling and the
    complexity ceiling (alpha-1)/(alpha * k_complexity). ``n_predicted`` is
    the iteration count sufficient to push the squared KSD of the averaged
    iterates below ``eps`` (None when no eps was requested).
    ``gamma_ceiling_pi`` requires target moments that the complexity bundle
    does not consume, so it may be absent.
    """

    alpha: float
    smoothness: float
    kernel_bound: float
    lam: float
    kl0_raw: float
    kl0: float
    k_taylor: float
    k_complexity: float
    gamma_ceiling_descent: float
    gamma_ceiling_mu0: float
    gamma_ceiling_pi: float | None
    gamma: float
    eps: float | None
    n_predicted: int | None

    def as_dict(self) -> dict[str, float | int | None]:
        return {
            "alpha": self.alpha,
            "L": self.smoothness,
            "B": self.kernel_bound,
            "lambda": self.lam,
            "kl0_raw": self.kl0_raw,
            "kl0": self.kl0,
            "K_taylor": self.k_taylor,
            "K_complexity": self.k_complexity,
            "gamma_ceiling_descent": self.gamma_ceiling_descent,
            "gamma_ceiling_mu0": self.gamma_ceiling_mu0,
            "gamma_ceiling_pi": self.gamma_ceiling_pi,
            "gamma": self.gamma,
            "eps": self.eps,
            "n_predicted": self.n_predicted,
        }


def taylor_constant(alpha: float, smoothness: float, kernel_bound: float) -> float:
    """K = (alpha^2 + L) B, the curvature constant of the descent inequality."""
    _check_common(alpha, kernel_bound)
    _require(smoothness > 0, "smoothness constant must be positive")
    return (alpha**2 + smoothness) * kernel_bound


def gamma_ceiling_descent(alpha: float, kernel_bound: float, smoothness: float) -> float:
    """Largest step with a positive descent factor: 2 / (B (alpha^2 + L))."""
    return 2.0 / taylor_constant(alpha, smoothness, kernel_bound)


def gamma_ceiling_pi(
    alpha: float,
    kernel_bound: float,
    smoothness: float,
    grad_at_zero_norm: float,
    first_moment_pi: float,
    kl0: float,
    lam: float,
) -> float:
    """Step ceiling expressed through moments of the target:

    (alpha-1) / (alpha B^2 (1 + ||gF(0)|| + L E_pi||x|| + L sqrt(2 kl0/lam)))
    """
    _check_common(alpha, kernel_bound, lam)
    _require(smoothness > 0, "smoothness constant must be positive")
    _require(grad_at_zero_norm >= 0, "gradient norm must be >= 0")
    _require(first_moment_pi >= 0, "first moment must be >= 0")
    _require(kl0 >= 0, "kl0 must be >= 0")
    bracket = (
        1.0
        + grad_at_zero_norm
        + smoothness * first_moment_pi
        + smoothness * math.sqrt(2.0 * kl0 / lam)
    )
    return (alpha - 1.0) / (alpha * kernel_bound**2 * bracket)


def gamma_ceiling_mu0(
    alpha: float,
    kernel_bound: float,
    smoothness: float,
    kl0: float,
    lam: float,
    first_abs_moment_mu0: float,
) -> float:
    """Step ceiling expressed through the initial distribution:

    (alpha-1) / (alpha B^2 (1 + 2L sqrt(2 kl0/lam) + L E_mu0||x - x*||)).

    For the Gaussian initialization N(x*, I/L) the moment term is at most
    sqrt(d/L); passing the exact moment gives a slightly larger (still
    valid) ceiling.
    """
    _check_common(alpha, kernel_bound, lam)
    _require(smoothness > 0, "smoothness constant must be positive")
    _require(kl0 >= 0, "kl0 must be >= 0")
    _require(first_abs_moment_mu0 >= 0, "moment must be >= 0")
    bracket = (
        1.0
        + 2.0 * smoothness * math.sqrt(2.0 * kl0 / lam)
        + smoothness * first_abs_moment_mu0
    )
    return (alpha - 1.0) / (alpha * kernel_bound**2 * bracket)


def kl0_bound(potential_at_xstar: float, smoothness: float, dim: int) -> tuple[float, float]:
    """Bound on KL(mu0 | pi) for mu0 = N(x*, I/L): F(x*) + (d/2) log(L / 2 pi).

    ``potential_at_xstar`` must be the *normalized* potential (-log of the
    normalized density) at the stationary point. Returns (raw, clamped):
    the raw value may be negative when L < 2 pi, in which case 0 is already
    a valid bound since KL >= 0.
    """
    _require(smoothness > 0, "smoothness constant must be positive")
    _require(dim >= 1, "dimension must be >= 1")
    raw = potential_at_xstar + 0.5 * dim * math.log(smoothness / (2.0 * math.pi))
    return raw, max(raw, 0.0)


def rate_bound(kl0: float, gamma: float, n: int) -> float:
    """Upper bound 2 kl0 / (n gamma) on the squared KSD of the averaged
    iterates after n steps (valid below the descent ceiling)."""
    _require(kl0 >= 0, "kl0 must be >= 0")
    _require(gamma > 0, "gamma must be positive")
    _require(n >= 1, "n must be >= 1")
    return 2.0 * kl0 / (n * gamma)


def n_sufficient(kl0: float, gamma: float, eps: float) -> int:
    """Iterations sufficient for the rate bound to reach eps: ceil(2 kl0 / (gamma eps))."""
    _require(kl0 >= 0, "kl0 must be >= 0")
    _require(gamma > 0, "gamma must be positive")
    _require(eps > 0, "eps must be positive")
    return math.ceil(2.0 * kl0 / (gamma * eps))


def complexity_constants(
    kernel_bound: float,
    smoothness: float,
    lam: float,
    potential_at_xstar: float,
    dim: int,
    alpha: float = 2.0,
    eps: float | None = None,
) -> TheoryConstants:
    """Full constants bundle for the Gaussian initialization N(x*, I/L).

    The step size is min(2/(B(alpha^2+L)), (alpha-1)/(alpha K)) with

        K = B^2 (1 + 2L sqrt(2/lam) sqrt(kl0) + sqrt(L d)),

    where kl0 is the clamped initialization bound above. The second term of
    the min equals the mu0 ceiling evaluated at the moment bound sqrt(d/L),
    so the bundle's gamma never exceeds that ceiling.
    """
    _check_common(alpha, kernel_bound, lam)
    _require(smoothness > 0, "smoothness constant must be positive")
    _require(dim >= 1, "dimension must be >= 1")
    raw, kl0 = kl0_bound(potential_at_xstar, smoothness, dim)
    k_complexity = kernel_bound**2 * (
        1.0
        + 2.0 * smoothness * math.sqrt(2.0 / lam) * math.sqrt(kl0)
        + math.sqrt(smoothness * dim)
    )
    ceiling_descent = gamma_ceiling_descent(alpha, kernel_bound, smoothness)
    ceiling_mu0 = gamma_ceiling_mu0(
        alpha, kernel_bound, smoothness, kl0, lam,
        first_abs_moment_mu0=math.sqrt(dim / smoothness),
    )
    gamma = min(ceiling_descent, (alpha - 1.0) / (alpha * k_complexity))
    n_pred = None if eps is None else n_sufficient(kl0, gamma, eps)
    return TheoryConstants(
        alpha=alpha,
        smoothness=smoothness,
        kernel_bound=kernel_bound,
        lam=lam,
        kl0_raw=raw,
        kl0=kl0,
        k_taylor=taylor_constant(alpha, smoothness, kernel_bound),
        k_complexity=k_complexity,
        gamma_ceiling_descent=ceiling_descent,
        gamma_ceiling_mu0=ceiling_mu0,
        gamma_ceiling_pi=None,
        gamma=gamma,
        eps=eps,
        n_predicted=n_pred,
    )


def drift_norm_bound(
    kernel_bound: float,
    smoothness: float,
    grad_at_zero_norm: float,
    first_moment_pi: float,
    kl_mu: float,
    lam: float,
) -> float:
    """Upper bound on the RKHS drift norm through target moments:

    B (1 + ||gF(0)|| + L E_pi||x||) + B L sqrt(2 KL(mu)/lam).
    """
    _require(kernel_bound >= 0, "kernel bound must be >= 0")
    _require(smoothness > 0, "smoothness constant must be positive")
    _require(grad_at_zero_norm >= 0 and first_moment_pi >= 0, "moments must be >= 0")
    _require(kl_mu >= 0, "KL must be >= 0")
    _require(lam > 0, "transport constant lambda must be positive")
    return kernel_bound * (
        1.0 + grad_at_zero_norm + smoothness * first_moment_pi
    ) + kernel_bound * smoothness * math.sqrt(2.0 * kl_mu / lam)


def drift_norm_bound_centered(
    kernel_bound: float,
    smoothness: float,
    kl0: float,
    kl_mu: float,
    lam: float,
    first_abs_moment_mu0: float,
) -> float:
    """Stationary-point-centered variant of the drift norm bound:

    B (1 + L sqrt(2 kl0/lam) + L sqrt(2 KL(mu)/lam) + L E_mu0||x - x*||).
    """
    _require(kernel_bound >= 0, "kernel bound must be >= 0")
    _require(smoothness > 0, "smoothness constant must be positive")
    _require(kl0 >= 0 and kl_mu >= 0, "KL values must be >= 0")
    _require(lam > 0, "transport constant lambda must be positive")
    _require(first_abs_moment_mu0 >= 0, "moment must be >= 0")
    return kernel_bound * (
        1.0
        + smoothness * math.sqrt(2.0 * kl0 / lam)
        + smoothness * math.sqrt(2.0 * kl_mu / lam)
        + smoothness * first_abs_moment_mu0
    )

"""KL, 1-Wasserstein and transport-inequality diagnostics.

The KL estimate consumes the transported log-density that the sampler
carries on each particle; it is a plain Monte-Carlo mean, reported raw with
a standard error (slightly negative values are legitimate noise).

W1 is exact on both code paths: sorted quantile matching in one dimension
(any sample counts), and the discrete transport linear program in higher
dimension (small point sets only; large multivariate sets get an explicitly
approximate subsampled estimate).

``t1_lambda_upper`` estimates a valid constant for the W1-from-KL transport
inequality by minimizing the moment-generating objective

    (1/beta^2) * (1 + log E_pi exp(beta ||x - a||^2))

over a grid of centers a and exponents beta. A grid minimum can only land
at or above the true minimum, so the returned constant errs conservative:
every step-size ceiling and iteration count derived from it stays valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import erf, logsumexp

from .targets import Target

LP_SIZE_CAP = 512

# Divergence heuristic for the empirical MGF: an exponent beta is unusable
# once the largest TOP_SHARE_FRACTION of the sample carries more than
# DIVERGENCE_SHARE of the whole sum.
TOP_SHARE_FRACTION = 0.01
DIVERGENCE_SHARE = 0.5


class TailConditionError(RuntimeError):
    """The MGF estimate diverged at every grid exponent.

    Signals that the tail condition behind the transport inequality likely
    fails for the sampled distribution (e.g. heavy tails)."""


@dataclass(frozen=True)
class MeanWithError:
    value: float
    stderr: float
    n: int


@dataclass(frozen=True)
class T1Estimate:
    """A valid (possibly loose) transport-inequality constant.

    ``lambda_hat`` satisfies W1(mu, pi) <= sqrt(2 KL(mu|pi) / lambda_hat) for
    all mu; ``center`` and ``beta`` are the minimizing grid point and
    ``objective`` the minimized value (= 1 / lambda_hat).
    """

    lambda_hat: float
    center: np.ndarray
    beta: float
    n_samples: int
    objective: float


@dataclass(frozen=True)
class T1GridSpec:
    n_centers: int = 5
    center_spread: float = 1.0
    n_beta: int = 40
    beta_lo: float = 0.01   # in units of 1 / mean squared spread
    beta_hi: float = 2.0


# ---------------------------------------------------------------------------
# KL from transported log-densities
# ---------------------------------------------------------------------------

def kl_contributions(ensemble, target: Target) -> np.ndarray:
    """Per-particle log(mu/pi) terms; their mean estimates KL(mu|pi)."""
    logdens = getattr(ensemble, "logdens", None)
    if logdens is None:
        raise ValueError("ensemble does not track log-densities")
    if target.log_norm_const is None:
        raise ValueError(f"target {target.name!r} has no normalizing constant")
    pts = np.atleast_2d(np.asarray(ensemble.positions, dtype=float))
    return logdens + target.potential(pts) + target.log_norm_const


def kl_estimate(ensemble, target: Target) -> MeanWithError:
    c = kl_contributions(ensemble, target)
    n = c.size
    stderr = float(np.std(c, ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return MeanWithError(float(np.mean(c)), stderr, n)


# ---------------------------------------------------------------------------
# Wasserstein-1
# ---------------------------------------------------------------------------

def _as_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("samples must be a nonempty (n, d) array")
    return x


def _w1_exact_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 of two empirical measures on the line, any sample counts.

    Integrates |quantile_a - quantile_b| over the merged quantile levels of
    the two samples.
    """
    a = np.sort(a.ravel())
    b = np.sort(b.ravel())
    n, m = a.size, b.size
    pa = np.arange(1, n + 1) / n
    pb = np.arange(1, m + 1) / m
    levels = np.union1d(pa, pb)
    left = np.concatenate(([0.0], levels[:-1]))
    widths = levels - left
    ia = np.searchsorted(pa, left, side="right")
    ib = np.searchsorted(pb, left, side="right")
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


def _w1_lp(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 via the discrete optimal-transport linear program."""
    n, m = a.shape[0], b.shape[0]
    if n > LP_SIZE_CAP or m > LP_SIZE_CAP:
        raise ValueError(
            f"LP path capped at {LP_SIZE_CAP} points per side (got {n} x {m}); "
            "use w1_subsampled for larger multivariate sets"
        )
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2)).ravel()

    idx = np.arange(n * m)
    row_a = np.repeat(np.arange(n), m)
    row_b = n + np.tile(np.arange(m), n)
    a_eq = sparse.csr_matrix(
        (
            np.ones(2 * n * m),
            (np.concatenate([row_a, row_b]), np.concatenate([idx, idx])),
        ),
        shape=(n + m, n * m),
    )
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def w1(samples_a, samples_b) -> float:
    """Exact W1 between two empirical measures.

    One-dimensional inputs use sorted quantile matching; higher dimensions
    solve the transport LP and are capped at ``LP_SIZE_CAP`` points per side.
    """
    a = _as_samples(samples_a)
    b = _as_samples(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample dimensions differ")
    if a.shape[1] == 1:
        return _w1_exact_1d(a, b)
    return _w1_lp(a, b)


def w1_subsampled(
    samples_a,
    samples_b,
    rng: np.random.Generator,
    size: int = 256,
    resamples: int = 8,
) -> MeanWithError:
    """Approximate W1 for large multivariate sets: exact LPs on random
    subsamples, averaged. The stderr quantifies subsampling scatter only."""
    a = _as_samples(samples_a)
    b = _as_samples(samples_b)
    vals = []
    for _ in range(resamples):
        sa = a[rng.choice(a.shape[0], size=min(size, a.shape[0]), replace=False)]
        sb = b[rng.choice(b.shape[0], size=min(size, b.shape[0]), replace=False)]
        vals.append(_w1_lp(sa, sb))
    vals = np.asarray(vals)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return MeanWithError(float(np.mean(vals)), stderr, len(vals))


# ---------------------------------------------------------------------------
# Transport-inequality constant
# ---------------------------------------------------------------------------

def t1_lambda_upper(pi_samples, grid: T1GridSpec = T1GridSpec()) -> T1Estimate:
    """Estimate a valid transport-inequality constant from samples of pi.

    Minimizes the MGF objective over centers (sample mean plus/minus a
    spread of per-coordinate deviations) and a log-spaced exponent grid.
    Exponents are dropped once the empirical MGF is tail-dominated per the
    divergence heuristic above; if every exponent is dropped the tail
    condition itself is in doubt and ``TailConditionError`` is raised.
    """
    x = _as_samples(pi_samples)
    n = x.shape[0]
    if n < 10:
        raise ValueError("need at least 10 samples")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    spread_sq = float(np.mean(np.sum((x - mean) ** 2, axis=1)))
    if spread_sq <= 0:
        raise ValueError("degenerate sample (zero spread)")

    offsets = np.linspace(-grid.center_spread, grid.center_spread, grid.n_centers)
    betas = np.geomspace(grid.beta_lo / spread_sq, grid.beta_hi / spread_sq, grid.n_beta)
    top_k = max(1, math.ceil(TOP_SHARE_FRACTION * n))

    best: tuple[float, np.ndarray, float] | None = None
    for t in offsets:
        a = mean + t * std
        r2 = np.sum((x - a) ** 2, axis=1)
        top = np.partition(r2, n - top_k)[n - top_k:]
        for beta in betas:
            log_total = logsumexp(beta * r2)
            share = math.exp(logsumexp(beta * top) - log_total)
            if share > DIVERGENCE_SHARE:
                break  # this and all larger exponents are tail-dominated
            objective = (1.0 + log_total - math.log(n)) / beta**2
            if best is None or objective < best[0]:
                best = (objective, a, float(beta))
    if best is None:
        raise TailConditionError(
            "MGF estimate tail-dominated at every grid exponent; "
            "the sampled distribution may not satisfy the tail condition"
        )
    objective, center, beta = best
    return T1Estimate(1.0 / objective, center, beta, n, objective)


# ---------------------------------------------------------------------------
# Closed forms for 1-d Gaussians (used by validity checks and tests)
# ---------------------------------------------------------------------------

def gaussian_kl(m1: float, s1: float, m2: float, s2: float) -> float:
    """KL(N(m1, s1^2) | N(m2, s2^2))."""
    return math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5


def gaussian_w1(m1: float, s1: float, m2: float, s2: float) -> float:
    """W1(N(m1, s1^2), N(m2, s2^2)): the folded-normal mean of the quantile gap."""
    d = m1 - m2
    t = abs(s1 - s2)
    if t == 0:
        return abs(d)
    return abs(d) * erf(abs(d) / (t * math.sqrt(2.0))) + t * math.sqrt(
        2.0 / math.pi
    ) * math.exp(-0.5 * (d / t) ** 2)

"""Positive-definite kernels with the derivative surface the sampler needs.

Two radial families are provided: the Gaussian kernel
``exp(-||x-y||^2 / (2 sigma^2))`` and the inverse multiquadric
``(c^2 + ||x-y||^2)^(-1/2)``. Both are bounded together with their first
derivatives, which is what the step-size theory requires; ``bound_b``
returns the explicit constant.

Derivative convention: ``grad2`` differentiates in the *second* argument.
All call sites in this package use that single convention; the gradient in
the first argument follows from symmetry, ``grad1(x, y) = grad2(y, x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

GAUSSIAN = "gaussian"
IMQ = "imq"

_FAMILIES = (GAUSSIAN, IMQ)


class PairTerms(NamedTuple):
    """Pairwise kernel quantities shared by the drift, Jacobian and KSD code.

    For both families the derivatives are radial:

        grad2(x, y)     = (x - y) * gw
        mixed_div(x, y) = d * gw - sq * hw
        d/dx grad2(x,y) = gw * I - hw * (x - y)(x - y)^T

    where ``sq = ||x - y||^2`` and (k, gw, hw) are the arrays below.
    """

    k: np.ndarray    # kernel values, shape (n, m)
    gw: np.ndarray   # gradient weight, shape (n, m)
    hw: np.ndarray   # second-derivative weight, shape (n, m)
    sq: np.ndarray   # squared distances, shape (n, m)


def _pair_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance matrix via the dot-product expansion."""
    xx = np.sum(x * x, axis=1)
    yy = np.sum(y * y, axis=1)
    sq = xx[:, None] + yy[None, :] - 2.0 * (x @ y.T)
    # float cancellation can leave tiny negatives on (near-)diagonal entries
    return np.maximum(sq, 0.0)


@dataclass(frozen=True)
class Kernel:
    """A radial positive-definite kernel on R^d.

    ``bandwidth`` is the length scale: sigma for the Gaussian family, c for
    the inverse multiquadric. Instances are immutable and all methods are
    pure, so a kernel may be shared freely across threads.
    """

    family: str
    bandwidth: float
    dim: int

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError("bandwidth must be a positive finite number")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")

    def _check_point(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.dim,):
            raise ValueError(
                f"point has dimension {x.shape[0]}, kernel expects {self.dim}"
            )
        return x

    def pair_terms(self, x: np.ndarray, y: np.ndarray) -> PairTerms:
        """Pairwise (k, gw, hw, sq) between row sets x (n,d) and y (m,d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if x.shape[1] != self.dim or y.shape[1] != self.dim:
            raise ValueError("row dimension does not match kernel dimension")
        sq = _pair_sq_dists(x, y)
        if self.family == GAUSSIAN:
            s2 = self.bandwidth**2
            k = np.exp(-0.5 * sq / s2)
            gw = k / s2
            hw = k / (s2 * s2)
        else:
            s = self.bandwidth**2 + sq
            k = s**-0.5
            gw = s**-1.5
            hw = 3.0 * s**-2.5
        return PairTerms(k, gw, hw, sq)

    def gram(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Kernel matrix [k(x_i, y_j)]."""
        return self.pair_terms(x, y).k

    def eval(self, x, y) -> float:
        """k(x, y); strictly positive for both families."""
        x = self._check_point(x)
        y = self._check_point(y)
        return float(self.pair_terms(x[None, :], y[None, :]).k[0, 0])

    def grad2(self, x, y) -> np.ndarray:
        """Gradient of k in the second argument, evaluated at (x, y)."""
        x = self._check_point(x)
        y = self._check_point(y)
        gw = self.pair_terms(x[None, :], y[None, :]).gw[0, 0]
        return (x - y) * gw

    def grad1(self, x, y) -> np.ndarray:
        """Gradient of k in the first argument; equals grad2(y, x)."""
        return self.grad2(y, x)

    def mixed_div(self, x, y) -> float:
        """sum_i d^2 k / dx_i dy_i, the trace of the cross-derivative matrix."""
        x = self._check_point(x)
        y = self._check_point(y)
        _, gw, hw, sq = self.pair_terms(x[None, :], y[None, :])
        return float(self.dim * gw[0, 0] - sq[0, 0] * hw[0, 0])

    def bound_b(self) -> float:
        """Uniform bound B with k(x,x) <= B^2 and mixed_div(x,x) <= B^2.

        Both suprema are attained on the diagonal (the radial profiles are
        maximal at distance zero), so the bound is tight.
        """
        if self.family == GAUSSIAN:
            return max(1.0, math.sqrt(self.dim) / self.bandwidth)
        c = self.bandwidth
        return max(c**-0.5, math.sqrt(self.dim) * c**-1.5)


def gaussian_kernel(dim: int, sigma: float | None = None) -> Kernel:
    """Gaussian kernel; default sigma = sqrt(d) keeps bound_b() == 1 in any d."""
    if sigma is None:
        sigma = math.sqrt(dim)
    return Kernel(GAUSSIAN, sigma, dim)


def imq_kernel(dim: int, c: float = 1.0) -> Kernel:
    """Inverse-multiquadric kernel (c^2 + ||x-y||^2)^(-1/2)."""
    return Kernel(IMQ, c, dim)


def median_bandwidth(points: np.ndarray) -> float:
    """Median pairwise distance of a point set.

    Intended for one-shot bandwidth selection at initialization; adapting the
    bandwidth during a run would silently change every theory constant, so
    the run loop never calls this.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 2:
        raise ValueError("need at least two points for the median heuristic")
    d = np.sqrt(_pair_sq_dists(points, points))
    vals = d[np.triu_indices(points.shape[0], k=1)]
    med = float(np.median(vals))
    if med <= 0:
        raise ValueError("median pairwise distance is zero (degenerate points)")
    return med

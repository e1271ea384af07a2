"""Particle sampling by kernelized gradient descent on the KL objective,
with the convergence theory's constants and inequalities as executable,
checkable formulas."""

from .kernels import Kernel, gaussian_kernel, imq_kernel, median_bandwidth
from .ksd import ksd_squared, ksd_squared_mixture, stein_kernel
from .metrics import (
    T1Estimate,
    TailConditionError,
    kl_estimate,
    t1_lambda_upper,
    w1,
    w1_subsampled,
)
from .svgd import (
    Ensemble,
    RunAborted,
    RunResult,
    StepReport,
    StepSizeError,
    TrajectoryRecord,
    drift,
    drift_jacobian,
    ensemble_from_gaussian,
    ensemble_from_points,
    ensemble_from_target,
    run,
    step,
)
from .targets import (
    Target,
    aniso_gaussian,
    custom_target,
    double_well,
    find_stationary_point,
    gaussian_mixture,
    standard_gaussian,
    verify_smoothness,
)
from .theory import (
    TheoryConstants,
    complexity_constants,
    drift_norm_bound,
    drift_norm_bound_centered,
    gamma_ceiling_descent,
    gamma_ceiling_mu0,
    gamma_ceiling_pi,
    kl0_bound,
    n_sufficient,
    rate_bound,
    taylor_constant,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""Experiment configuration: flat ``key = value`` text with dotted keys.

Grammar
-------
- One ``key = value`` pair per line; ``#`` starts a comment (whole-line or
  trailing); blank lines are ignored.
- Keys are dotted lowercase identifiers from the registry below; anything
  else is rejected (no silent typo tolerance).
- Scalars parse as int/float/bool (``true``/``false``); lists are
  comma-separated; 2-d point lists separate points with ``;`` as in
  ``means = -2,0; 2,0``.

Recognized keys, with defaults in parentheses:

    seed                      integer; mandatory for any stochastic command
    target.name               gaussian | aniso_gaussian | mixture | double_well
    target.params.d           dimension for gaussian (1)
    target.params.means       mixture component means (-2, 2)
    target.params.weights     mixture weights (uniform)
    target.params.variance    mixture component variance (1.0)
    target.params.variances   aniso_gaussian per-coordinate variances
    target.L                  smoothness override, must not undercut the
                              built-in constant
    kernel.family             gaussian | imq (gaussian)
    kernel.sigma              gaussian bandwidth (sqrt(d))
    kernel.c                  imq offset (1.0)
    kernel.bandwidth_rule     fixed | median_init (fixed)
    svgd.n_particles          (500)
    svgd.n_iters              (200)
    svgd.gamma                auto_theorem1 | fixed:<value> (auto_theorem1)
    svgd.track_logdens        (true)
    svgd.record_every         (1)
    metrics.w1                record W1 along runs when a sampler exists (true)
    metrics.w1_ref_samples    reference sample count for W1 (2000)
    theory.alpha              margin parameter, > 1 (2.0)
    theory.lambda_source      auto | analytic | estimated (auto)
    theory.t1_samples         sample count for the estimated constant (100000)
    theory.epsilon            accuracy target for complexity checks (0.05)
    sweep.dims                dimensions for the sweep command (1, 2, 4)
    output.svg                also emit SVG line plots (false)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable


class ConfigError(Exception):
    """Malformed or inconsistent configuration."""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int(s: str) -> int:
    try:
        return int(s.strip())
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {s!r}") from exc


def _parse_float(s: str) -> float:
    try:
        return float(s.strip())
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {s!r}") from exc


def _parse_floats(s: str) -> list[float]:
    return [_parse_float(tok) for tok in s.split(",") if tok.strip()]


def _parse_ints(s: str) -> list[int]:
    return [_parse_int(tok) for tok in s.split(",") if tok.strip()]


def _parse_means(s: str):
    if ";" in s:
        return [_parse_floats(part) for part in s.split(";") if part.strip()]
    return _parse_floats(s)


def _parse_choice(*choices: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        val = s.strip().lower()
        if val not in choices:
            raise ConfigError(f"expected one of {choices}, got {s!r}")
        return val
    return parse


def _parse_gamma(s: str):
    val = s.strip().lower()
    if val == "auto_theorem1":
        return ("auto", None)
    if val.startswith("fixed:"):
        g = _parse_float(val.split(":", 1)[1])
        if g <= 0:
            raise ConfigError("fixed gamma must be positive")
        return ("fixed", g)
    raise ConfigError(f"svgd.gamma must be auto_theorem1 or fixed:<value>, got {s!r}")


_REGISTRY: dict[str, Callable[[str], Any]] = {
    "seed": _parse_int,
    "target.name": _parse_choice("gaussian", "aniso_gaussian", "mixture", "double_well"),
    "target.params.d": _parse_int,
    "target.params.means": _parse_means,
    "target.params.weights": _parse_floats,
    "target.params.variance": _parse_float,
    "target.params.variances": _parse_floats,
    "target.L": _parse_float,
    "kernel.family": _parse_choice("gaussian", "imq"),
    "kernel.sigma": _parse_float,
    "kernel.c": _parse_float,
    "kernel.bandwidth_rule": _parse_choice("fixed", "median_init"),
    "svgd.n_particles": _parse_int,
    "svgd.n_iters": _parse_int,
    "svgd.gamma": _parse_gamma,
    "svgd.track_logdens": _parse_bool,
    "svgd.record_every": _parse_int,
    "metrics.w1": _parse_bool,
    "metrics.w1_ref_samples": _parse_int,
    "theory.alpha": _parse_float,
    "theory.lambda_source": _parse_choice("auto", "analytic", "estimated"),
    "theory.t1_samples": _parse_int,
    "theory.epsilon": _parse_float,
    "sweep.dims": _parse_ints,
    "output.svg": _parse_bool,
}


@dataclass
class ExperimentConfig:
    """Typed view of a parsed configuration; ``raw`` keeps the original
    strings so nothing is lost in translation."""

    seed: int | None = None
    target_name: str = "gaussian"
    target_d: int = 1
    target_means: Any = None
    target_weights: list[float] | None = None
    target_variance: float = 1.0
    target_variances: list[float] | None = None
    target_smoothness_override: float | None = None
    kernel_family: str = "gaussian"
    kernel_sigma: float | None = None
    kernel_c: float = 1.0
    bandwidth_rule: str = "fixed"
    n_particles: int = 500
    n_iters: int = 200
    gamma_mode: str = "auto"
    gamma_value: float | None = None
    track_logdens: bool = True
    record_every: int = 1
    w1_enabled: bool = True
    w1_ref_samples: int = 2000
    alpha: float = 2.0
    lambda_source: str = "auto"
    t1_samples: int = 100_000
    epsilon: float = 0.05
    sweep_dims: list[int] = field(default_factory=lambda: [1, 2, 4])
    svg: bool = False
    raw: dict[str, str] = field(default_factory=dict)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("seed is mandatory for stochastic runs")
        return self.seed


_FIELD_BY_KEY = {
    "seed": "seed",
    "target.name": "target_name",
    "target.params.d": "target_d",
    "target.params.means": "target_means",
    "target.params.weights": "target_weights",
    "target.params.variance": "target_variance",
    "target.params.variances": "target_variances",
    "target.L": "target_smoothness_override",
    "kernel.family": "kernel_family",
    "kernel.sigma": "kernel_sigma",
    "kernel.c": "kernel_c",
    "kernel.bandwidth_rule": "bandwidth_rule",
    "svgd.n_particles": "n_particles",
    "svgd.n_iters": "n_iters",
    "svgd.track_logdens": "track_logdens",
    "svgd.record_every": "record_every",
    "metrics.w1": "w1_enabled",
    "metrics.w1_ref_samples": "w1_ref_samples",
    "theory.alpha": "alpha",
    "theory.lambda_source": "lambda_source",
    "theory.t1_samples": "t1_samples",
    "theory.epsilon": "epsilon",
    "sweep.dims": "sweep_dims",
    "output.svg": "svg",
}


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _REGISTRY:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in cfg.raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            parsed = _REGISTRY[key](value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
        cfg.raw[key] = value
        if key == "svgd.gamma":
            cfg.gamma_mode, cfg.gamma_value = parsed
        else:
            setattr(cfg, _FIELD_BY_KEY[key], parsed)
    _validate(cfg)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.n_particles < 1:
        raise ConfigError("svgd.n_particles must be >= 1")
    if cfg.n_iters < 1:
        raise ConfigError("svgd.n_iters must be >= 1")
    if cfg.record_every < 1:
        raise ConfigError("svgd.record_every must be >= 1")
    if cfg.alpha <= 1:
        raise ConfigError("theory.alpha must be > 1")
    if cfg.epsilon <= 0:
        raise ConfigError("theory.epsilon must be positive")
    if cfg.t1_samples < 10:
        raise ConfigError("theory.t1_samples must be >= 10")
    if cfg.w1_ref_samples < 2:
        raise ConfigError("metrics.w1_ref_samples must be >= 2")
    if cfg.kernel_sigma is not None and cfg.kernel_sigma <= 0:
        raise ConfigError("kernel.sigma must be positive")
    if cfg.kernel_c <= 0:
        raise ConfigError("kernel.c must be positive")
    if cfg.target_d < 1:
        raise ConfigError("target.params.d must be >= 1")
    if not cfg.sweep_dims:
        raise ConfigError("sweep.dims must be nonempty")
    if any(d < 1 for d in cfg.sweep_dims):
        raise ConfigError("sweep.dims entries must be >= 1")

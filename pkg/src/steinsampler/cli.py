"""Command-line interface.

Subcommands: run, verify, sweep, ksd, metrics, theory. Exit codes follow a
fixed contract:

    0  completed, all asserted inequalities hold
    2  an inequality check failed (verify/sweep)
    3  runtime abort (step rejected, non-finite state, tail-condition or
       noise-floor refusal)
    4  configuration or usage error

Worker threads come from --threads or the STEIN_SAMPLER_THREADS variable;
results are identical at any thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import experiments, metrics, svgplot
from .config import ConfigError, ExperimentConfig, load_config
from .ksd import ksd_squared
from .metrics import TailConditionError
from .parallel import thread_count
from .svgd import NonFiniteError, RunAborted, StepSizeError, TrajectoryRecord
from .targets import ConvergenceError

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_ABORT = 3
EXIT_CONFIG = 4


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which collides with the
    # inequality-violation code; route usage errors to the config exit code.
    def error(self, message):
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="config file path")
    parser.add_argument("--seed", type=int, default=None, help="overrides config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")


def _load(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _outdir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_samples(path: str) -> np.ndarray:
    """Numeric CSV, one row per particle; a single header line is tolerated."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
        skip = 0
        try:
            [float(tok) for tok in first.strip().split(",") if tok]
        except ValueError:
            skip = 1
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read samples file {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"malformed samples file {path}: {exc}") from exc
    if data.size == 0:
        raise ConfigError(f"samples file {path} is empty")
    return data


def _write_trajectory(path: str, records: list[TrajectoryRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TrajectoryRecord.CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


def _write_plots(outdir: str, records: list[TrajectoryRecord]) -> None:
    xs = [r.iteration for r in records]
    svgplot.write_line_plot(
        os.path.join(outdir, "trajectory_ksd2.svg"),
        xs,
        {"ksd2": [r.ksd2 for r in records]},
        title="squared KSD along the run",
    )
    if any(not np.isnan(r.kl) for r in records):
        svgplot.write_line_plot(
            os.path.join(outdir, "trajectory_kl.svg"),
            xs,
            {"kl": [r.kl for r in records]},
            title="KL estimate along the run",
        )


def cmd_run(args) -> int:
    cfg = _load(args)
    threads = thread_count(args.threads)
    outdir = _outdir(args)
    csv_path = os.path.join(outdir, "trajectory.csv")
    try:
        setup, result = experiments.run_experiment(cfg, threads=threads)
    except RunAborted as exc:
        _write_trajectory(csv_path, exc.partial.records)
        print(f"aborted: {exc}", file=sys.stderr)
        print(f"partial trajectory written to {csv_path}", file=sys.stderr)
        return EXIT_ABORT
    _write_trajectory(csv_path, result.records)
    if cfg.svg:
        _write_plots(outdir, result.records)
    last = result.records[-1]
    print(
        f"run complete: {cfg.n_iters} iterations, gamma={setup.gamma:.6g} "
        f"({setup.gamma_mode}), final ksd2={last.ksd2:.6g}"
    )
    print(f"trajectory written to {csv_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    threads = thread_count(args.threads)
    report = experiments.verify_suite(cfg, threads=threads)
    lines = []
    if report.floor is not None:
        lines.append(
            f"noise floor: ksd2 = {report.floor:.4e} on exact target samples "
            f"at N = {cfg.n_particles}"
        )
    lines.append(
        f"gamma = {report.setup.gamma:.6g} ({report.setup.gamma_mode}), "
        f"lambda = {report.setup.lam.value:.6g} ({report.setup.lam.source}), "
        f"kl0 bound = {report.setup.kl0:.6g}"
    )
    for check in report.checks:
        status = "PASS" if check.passed else ("SKIP" if check.passed is None else "FAIL")
        lines.append(f"{status:4s} {check.name}: {check.detail}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        outdir = _outdir(args)
        _write_trajectory(os.path.join(outdir, "trajectory.csv"), report.result.records)
        with open(os.path.join(outdir, "verify_report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        if cfg.svg:
            _write_plots(outdir, report.result.records)
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_sweep(args) -> int:
    cfg = _load(args)
    threads = thread_count(args.threads)
    rows = experiments.sweep(cfg, threads=threads)
    outdir = _outdir(args)
    path = os.path.join(outdir, "sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("d,gamma,n_to_eps,n_predicted\n")
        for row in rows:
            fh.write(
                f"{row.dim},{row.gamma:.17g},{row.n_to_eps},{row.n_predicted}\n"
            )
    ok = True
    for row in rows:
        verdict = "ok" if row.ok else "VIOLATION"
        ok = ok and row.ok
        print(
            f"d={row.dim}: gamma={row.gamma:.6g} observed={row.n_to_eps} "
            f"predicted={row.n_predicted} [{verdict}]"
        )
    print(f"sweep written to {path}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_ksd(args) -> int:
    cfg = _load(args)
    threads = thread_count(args.threads)
    points = _load_samples(args.particles)
    target = experiments.build_target(cfg)
    if points.shape[1] != target.dim:
        raise ConfigError(
            f"particle dimension {points.shape[1]} does not match target "
            f"dimension {target.dim}"
        )
    kernel = experiments.build_kernel(cfg, target.dim, points)
    value = ksd_squared(points, target, kernel, threads=threads)
    print(f"{value:.17g}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _load(args)
    samples = _load_samples(args.samples)
    if args.mode == "kl":
        target = experiments.build_target(cfg)
        if samples.shape[1] != target.dim + 1:
            raise ConfigError(
                "kl mode expects position columns plus a trailing logdens column"
            )
        from .svgd import Ensemble

        ens = Ensemble(samples[:, :-1], samples[:, -1])
        est = metrics.kl_estimate(ens, target)
        print(f"kl,{est.value:.17g},{est.stderr:.17g}")
        return EXIT_OK
    if args.mode == "w1":
        if args.samples_b is None:
            raise ConfigError("w1 mode needs --samples-b")
        other = _load_samples(args.samples_b)
        big = max(samples.shape[0], other.shape[0])
        if samples.shape[1] == 1 or big <= metrics.LP_SIZE_CAP:
            print(f"w1,{metrics.w1(samples, other):.17g},0")
            return EXIT_OK
        rng = np.random.default_rng(cfg.require_seed())
        est = metrics.w1_subsampled(samples, other, rng)
        print(f"w1_subsampled,{est.value:.17g},{est.stderr:.17g}")
        return EXIT_OK
    # t1
    est = metrics.t1_lambda_upper(samples)
    print(f"t1_lambda,{est.lambda_hat:.17g},nan")
    return EXIT_OK


def cmd_theory(args) -> int:
    cfg = _load(args)
    summary = experiments.theory_summary(cfg)
    for key, value in summary.items():
        print(f"{key}={value}")
    print(json.dumps(summary, indent=2, default=float))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="steinsampler", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the sampler, write a trajectory CSV")
    _add_common(p)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("verify", help="descent/rate/ceiling inequality checks")
    _add_common(p)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("sweep", help="dimension sweep: observed vs predicted")
    _add_common(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("ksd", help="squared KSD of a particle CSV")
    _add_common(p)
    p.add_argument("--particles", required=True, help="particle CSV, one row each")
    p.set_defaults(handler=cmd_ksd)

    p = sub.add_parser("metrics", help="kl/w1/t1 over sample CSVs")
    _add_common(p)
    p.add_argument("--mode", required=True, choices=("kl", "w1", "t1"))
    p.add_argument("--samples", required=True, help="sample CSV")
    p.add_argument("--samples-b", default=None, help="second sample CSV (w1)")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("theory", help="print the constants bundle")
    _add_common(p, config_required=True)
    p.set_defaults(handler=cmd_theory)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        StepSizeError,
        NonFiniteError,
        ConvergenceError,
        TailConditionError,
        experiments.NoiseFloorError,
        FloatingPointError,
    ) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface: fit, simulate, study and bootstrap subcommands.

Exit codes: 0 on success, 2 on input or estimation failure, 3 when
``--warn-improper`` is set and the final estimate is improper.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import FIT_FUNCTIONS
from .diagnostics import bootstrap_se, residual_corr, srmr
from .fileio import (
    CovarianceFormatError,
    ManifestIntegrityError,
    read_cov_csv,
    read_raw_csv,
    verify_manifest,
    write_manifest,
)
from .model import PARAM_NAMES, StartsParams, implied_cov
from .results import FitOptions
from .simulate import (
    FIT_INITIAL_DISTS,
    SimConfig,
    draw_initial_values,
    gen_dataset,
    sample_cov,
    write_dataset_csv,
)
from .study import StudyConfig, paper_study_config, run_study

EXIT_OK = 0
EXIT_FAILURE = 2
EXIT_IMPROPER = 3

# Below this many resamples the bootstrap spread is itself too noisy to
# report as a standard error.
MIN_MEANINGFUL_BOOT = 30


class CliError(RuntimeError):
    pass


def _default_jobs(value):
    env = os.environ.get("STARTSMD_JOBS")
    if env:
        return int(env)
    return value


def _load_input(args):
    """Return (labels, data_or_none, s, n_obs) from --input or --cov."""
    if args.input and args.cov:
        raise CliError("give either --input or --cov, not both")
    if args.input:
        labels, data = read_raw_csv(args.input)
        return labels, data, sample_cov(data), data.shape[0]
    if args.cov:
        if args.n is None:
            raise CliError("--cov requires --n (the sample size)")
        labels, s = read_cov_csv(args.cov)
        return labels, None, s, int(args.n)
    raise CliError("an input is required: --input data.csv or --cov cov.csv")


def _check_psd(s):
    evals = np.linalg.eigvalsh(s)
    if evals[0] < -1e-10 * max(evals[-1], 1.0):
        raise CliError(
            "covariance input is not positive semidefinite "
            f"(smallest eigenvalue {evals[0]:.3e})"
        )


def _fit_options(args) -> FitOptions:
    return FitOptions(
        n_starts=args.starts,
        patience=args.patience,
        param_tol=args.tol,
        max_iters=args.max_iters,
        rng_seed=args.seed,
    )


def _run_fit(args):
    labels, data, s, n_obs = _load_input(args)
    _check_psd(s)
    t = s.shape[0]
    opts = _fit_options(args)
    inits = draw_initial_values(FIT_INITIAL_DISTS, args.starts,
                                seed=args.seed)
    fit_fn = FIT_FUNCTIONS[args.method]
    fit = fit_fn(s, n_obs, t, opts, inits)
    sigma_hat = implied_cov(fit.theta_hat, t)
    resid = residual_corr(s, sigma_hat)
    report = {
        "method": args.method,
        "n_obs": n_obs,
        "t": t,
        "labels": labels,
        "n_starts": args.starts,
        "seed": args.seed,
        "estimates": {p: getattr(fit.theta_hat, p) for p in PARAM_NAMES},
        "loss": fit.loss,
        "converged": fit.converged,
        "n_iters": fit.n_iters,
        "start_index": fit.start_index,
        "improper_strict": fit.improper_strict,
        "improper_lenient": fit.improper_lenient,
        "elapsed_seconds": fit.elapsed,
        "residual_correlations": [list(row) for row in resid],
        "srmr": srmr(s, sigma_hat),
    }
    if args.bootstrap:
        report["bootstrap"] = _bootstrap_report(
            args, fit.theta_hat, data, s, n_obs, args.bootstrap
        )
    _write_report(args.out, report)
    if args.warn_improper and fit.improper_strict:
        return EXIT_IMPROPER
    return EXIT_OK


def _bootstrap_report(args, theta_hat, data, s, n_obs, n_boot):
    mode = args.bootstrap_mode
    if mode is None:
        mode = "nonparametric" if data is not None else "parametric"
    if mode == "nonparametric" and data is None:
        raise CliError("nonparametric bootstrap needs raw data (--input)")
    kwargs = dict(
        n_boot=n_boot,
        local_starts=args.local_starts,
        jitter=args.jitter,
        seed=args.seed,
        options=_fit_options(args),
    )
    if mode == "nonparametric":
        result = bootstrap_se(FIT_FUNCTIONS[args.method], theta_hat,
                              data=data, **kwargs)
    else:
        result = bootstrap_se(FIT_FUNCTIONS[args.method], theta_hat,
                              cov=s, n_obs=n_obs, **kwargs)
    report = {
        "mode": result.mode,
        "n_boot": result.n_boot,
        "n_failed": result.n_failed,
        "jitter": result.jitter,
        "local_starts": result.local_starts,
        "se": result.se,
    }
    if n_boot < MIN_MEANINGFUL_BOOT:
        report["warning"] = (
            f"only {n_boot} bootstrap samples; the reported standard "
            "errors are statistically meaningless"
        )
    return report


def _run_bootstrap(args):
    labels, data, s, n_obs = _load_input(args)
    _check_psd(s)
    t = s.shape[0]
    opts = _fit_options(args)
    inits = draw_initial_values(FIT_INITIAL_DISTS, args.starts,
                                seed=args.seed)
    fit = FIT_FUNCTIONS[args.method](s, n_obs, t, opts, inits)
    report = {
        "method": args.method,
        "n_obs": n_obs,
        "t": t,
        "labels": labels,
        "estimates": {p: getattr(fit.theta_hat, p) for p in PARAM_NAMES},
        "bootstrap": _bootstrap_report(
            args, fit.theta_hat, data, s, n_obs, args.n_boot
        ),
    }
    _write_report(args.out, report)
    return EXIT_OK


def _run_simulate(args):
    if args.verify:
        verify_manifest(args.verify)
        print(f"manifest OK: {args.verify}")
        return EXIT_OK
    if not args.config:
        raise CliError("simulate needs --config sim.json (or --verify)")
    with open(args.config) as fh:
        raw = json.load(fh)
    theta = StartsParams(**raw["theta_true"])
    cfg = SimConfig(
        theta_true=theta,
        n_obs=int(raw["n_obs"]),
        t=int(raw["t"]),
        seed=int(raw.get("seed", 0)),
        centered=bool(raw.get("centered", True)),
    )
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    name = raw.get("name", "dataset")
    data_path = os.path.join(out_dir, f"{name}.csv")
    y = gen_dataset(cfg)
    write_dataset_csv(data_path, y)
    write_manifest(
        os.path.join(out_dir, f"{name}_manifest.json"),
        seed=cfg.seed,
        theta_true={p: getattr(theta, p) for p in PARAM_NAMES},
        files=[data_path],
    )
    print(f"wrote {data_path}")
    return EXIT_OK


def _study_config(args) -> StudyConfig:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        for key in ("t_values", "n_values", "psi2_values", "methods"):
            if key in raw:
                raw[key] = tuple(raw[key])
        overrides.update(raw)
    if args.preset and not args.config:
        pass  # the preset is the StudyConfig default grid
    if args.T:
        overrides["t_values"] = tuple(args.T)
    if args.N:
        overrides["n_values"] = tuple(args.N)
    if args.psi2:
        overrides["psi2_values"] = tuple(args.psi2)
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.starts is not None:
        overrides["n_starts"] = args.starts
    if args.methods:
        overrides["methods"] = tuple(args.methods)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.patience is not None:
        overrides["patience"] = args.patience
    if args.tol is not None:
        overrides["param_tol"] = args.tol
    return paper_study_config(**overrides)


def _run_study(args):
    if not args.config and not args.preset:
        raise CliError("study needs --preset paper-study or --config file")
    if args.preset and args.preset != "paper-study":
        raise CliError(f"unknown preset {args.preset!r}")
    config = _study_config(args)
    jobs = _default_jobs(args.jobs)
    out_dir = args.out or "study_out"
    results = run_study(config, out_dir=out_dir, jobs=jobs)
    n_fail = sum(len(r.failures) for r in results.records)
    print(
        f"study complete: {len(results.records)} replications across "
        f"{len(results.summaries)} conditions, {n_fail} method failures; "
        f"outputs in {out_dir}"
    )
    return EXIT_OK


def _write_report(path, report):
    text = json.dumps(report, indent=1, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _add_input_args(p):
    p.add_argument("--input", help="raw dataset CSV (header + one row "
                                   "per person)")
    p.add_argument("--cov", help="covariance matrix CSV")
    p.add_argument("--n", type=int, help="sample size behind --cov")


def _add_fit_args(p):
    p.add_argument("--method", choices=sorted(FIT_FUNCTIONS),
                   default="tsmdfa")
    p.add_argument("--starts", type=int, default=20,
                   help="number of multi-start initial values")
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-6,
                   help="per-parameter convergence tolerance")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report output path (stdout if omitted)")


def _add_bootstrap_args(p):
    p.add_argument("--bootstrap-mode",
                   choices=["parametric", "nonparametric"], default=None)
    p.add_argument("--local-starts", type=int, default=20)
    p.add_argument("--jitter", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="startsmd",
        description="Fit and study the trait/state/error panel model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model to data or a "
                                       "covariance matrix")
    _add_input_args(p_fit)
    _add_fit_args(p_fit)
    _add_bootstrap_args(p_fit)
    p_fit.add_argument("--bootstrap", type=int, default=0, metavar="B",
                       help="add bootstrap standard errors with B resamples")
    p_fit.add_argument("--warn-improper", action="store_true",
                       help="exit with code 3 when the final estimate is "
                            "improper")
    p_fit.set_defaults(func=_run_fit)

    p_sim = sub.add_parser("simulate", help="generate a dataset from a "
                                            "config file")
    p_sim.add_argument("--config", help="simulation config JSON")
    p_sim.add_argument("--out", help="output directory")
    p_sim.add_argument("--verify", help="verify a manifest instead of "
                                        "simulating")
    p_sim.set_defaults(func=_run_simulate)

    p_study = sub.add_parser("study", help="run a Monte Carlo study grid")
    p_study.add_argument("--preset", help="named preset (paper-study)")
    p_study.add_argument("--config", help="study config JSON")
    p_study.add_argument("--T", type=int, action="append",
                         help="restrict time points (repeatable)")
    p_study.add_argument("--N", type=int, action="append",
                         help="restrict sample sizes (repeatable)")
    p_study.add_argument("--psi2", type=float, action="append",
                         help="restrict error variances (repeatable)")
    p_study.add_argument("--reps", type=int)
    p_study.add_argument("--starts", type=int)
    p_study.add_argument("--methods", nargs="+",
                         choices=sorted(FIT_FUNCTIONS))
    p_study.add_argument("--seed", type=int)
    p_study.add_argument("--patience", type=int)
    p_study.add_argument("--tol", type=float)
    p_study.add_argument("--jobs", type=int, default=1,
                         help="worker processes (env STARTSMD_JOBS "
                              "overrides)")
    p_study.add_argument("--out", help="output directory")
    p_study.set_defaults(func=_run_study)

    p_boot = sub.add_parser("bootstrap", help="bootstrap standard errors")
    _add_input_args(p_boot)
    _add_fit_args(p_boot)
    _add_bootstrap_args(p_boot)
    p_boot.add_argument("-B", "--n-boot", type=int, default=200)
    p_boot.set_defaults(func=_run_bootstrap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, CovarianceFormatError, ManifestIntegrityError,
            ValueError, RuntimeError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

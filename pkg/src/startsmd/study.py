"""Monte Carlo study harness: seeded replications, timing and aggregation."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from .diagnostics import (
    STRICT_THRESHOLD,
    bias_rmse,
    detect_improper,
    method_correlations,
)
from .linalg import cholesky_pd
from .model import PARAM_NAMES, StartsParams, implied_cov
from .results import FitOptions, FitResult
from .simulate import STUDY_INITIAL_DISTS, draw_initial_values, sample_cov, \
    simulate_rows

METHOD_NAMES = ("ml", "cml", "uls", "tsmdfa")


@dataclass(frozen=True)
class StudyConfig:
    """Grid definition and execution knobs for a simulation study.

    Every (t, n_obs, psi2) triple in the cross product of the value tuples
    is one condition; the remaining truth components are fixed, with the
    innovation variance defaulting to the stationary value
    (1 - beta**2) * sigma1_2 so outcome variances do not drift over time.
    """

    t_values: tuple = (4, 6, 8)
    n_values: tuple = (200, 1000)
    psi2_values: tuple = (0.2, 1.0)
    phi2: float = 0.5
    beta: float = 0.3
    sigma1_2: float = 1.0
    omega2: float | None = None
    replications: int = 50
    n_starts: int = 20
    methods: tuple = METHOD_NAMES
    seed: int = 2026
    jobs: int = 1
    patience: int = 10
    param_tol: float = 1e-6
    max_iters: int = 500

    def __post_init__(self):
        if not (self.t_values and self.n_values and self.psi2_values):
            raise ValueError("the condition grid must be nonempty")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        unknown = set(self.methods) - set(METHOD_NAMES)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    def effective_omega2(self) -> float:
        if self.omega2 is not None:
            return self.omega2
        return (1.0 - self.beta ** 2) * self.sigma1_2

    def conditions(self) -> list[tuple[int, int, float]]:
        return [
            (int(t), int(n), float(p))
            for t, n, p in product(
                self.t_values, self.n_values, self.psi2_values
            )
        ]

    def truth(self, psi2: float) -> StartsParams:
        return StartsParams(
            psi2=psi2,
            phi2=self.phi2,
            beta=self.beta,
            omega2=self.effective_omega2(),
            sigma1_2=self.sigma1_2,
        )

    def fit_options(self) -> FitOptions:
        return FitOptions(
            n_starts=self.n_starts,
            patience=self.patience,
            param_tol=self.param_tol,
            max_iters=self.max_iters,
        )


def paper_study_config(**overrides) -> StudyConfig:
    """The shipped full-grid study preset.

    T in {4, 6, 8}, N in {200, 1000}, error variance in {0.2, 1.0}, trait
    variance 0.5, autoregression 0.3 with stationary innovation variance,
    50 replications and 20 shared starts per replication.  Keyword overrides
    replace any field, for example restricting the grid to a single
    condition.
    """
    return StudyConfig(**overrides)


def condition_label(t: int, n_obs: int, psi2: float) -> str:
    return f"T{t}_N{n_obs}_psi2_{psi2:g}"


@dataclass
class ReplicationRecord:
    """Everything recorded for one condition x replication."""

    condition_index: int
    t: int
    n_obs: int
    psi2_true: float
    replication: int
    initial_values: list[StartsParams]
    fits: dict[str, FitResult] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return condition_label(self.t, self.n_obs, self.psi2_true)


def run_replication(
    config: StudyConfig, condition_index: int, replication: int
) -> ReplicationRecord:
    """Run every configured method once on one freshly simulated dataset.

    The data stream and the initial-value stream are keyed by
    (seed, condition index, replication index), so serial and parallel
    executions produce identical records.  All methods share the same
    initial values.
    """
    from . import FIT_FUNCTIONS

    t, n_obs, psi2 = config.conditions()[condition_index]
    truth = config.truth(psi2)
    ss = np.random.SeedSequence([config.seed, condition_index, replication])
    data_key, init_key = ss.spawn(2)
    chol = cholesky_pd(implied_cov(truth, t))
    if chol is None:
        raise ValueError("condition truth implies a non-PD covariance")
    y = simulate_rows(chol, n_obs, np.random.default_rng(data_key))
    y = y - y.mean(axis=0)
    s = sample_cov(y)
    inits = draw_initial_values(
        STUDY_INITIAL_DISTS, config.n_starts, seed=init_key
    )
    record = ReplicationRecord(
        condition_index=condition_index,
        t=t,
        n_obs=n_obs,
        psi2_true=psi2,
        replication=replication,
        initial_values=inits,
    )
    opts = config.fit_options()
    for method in config.methods:
        try:
            record.fits[method] = FIT_FUNCTIONS[method](
                s, n_obs, t, opts, list(inits)
            )
        except Exception as e:  # partial failures never abort the grid
            record.failures[method] = f"{type(e).__name__}: {e}"
    return record


@dataclass
class StudySummary:
    """Per-condition aggregates of a study run.

    Bias, RMSE and cross-method correlations are restricted to the jointly
    admissible replications (no configured method failed or produced a
    strictly improper solution), matching how such simulation summaries are
    conventionally reported.  ``improper_all_mcu`` is the proportion of
    replications where ML, CML and ULS were all improper at once; it is None
    unless all three ran.
    """

    t: int
    n_obs: int
    psi2_true: float
    n_replications: int
    n_joint_admissible: int
    improper_strict: dict
    improper_lenient: dict
    improper_all_mcu: float | None
    n_failures: dict
    bias: dict
    rmse: dict
    correlations: dict
    timing_mean: dict
    timing_sd: dict

    @property
    def label(self) -> str:
        return condition_label(self.t, self.n_obs, self.psi2_true)


def _proportion(flags: list[bool]) -> float | None:
    if not flags:
        return None
    return float(np.mean(flags))


def summarize_condition(
    config: StudyConfig, records: list[ReplicationRecord]
) -> StudySummary:
    t, n_obs, psi2 = (
        records[0].t, records[0].n_obs, records[0].psi2_true,
    )
    truth = config.truth(psi2)
    methods = list(config.methods)

    improper_strict = {}
    improper_lenient = {}
    n_failures = {}
    timing_mean = {}
    timing_sd = {}
    for method in methods:
        fits = [r.fits[method] for r in records if method in r.fits]
        n_failures[method] = sum(method in r.failures for r in records)
        improper_strict[method] = _proportion(
            [f.improper_strict for f in fits]
        )
        improper_lenient[method] = _proportion(
            [f.improper_lenient for f in fits]
        )
        seconds = np.array([f.elapsed for f in fits])
        timing_mean[method] = float(seconds.mean()) if len(seconds) else None
        timing_sd[method] = (
            float(seconds.std(ddof=1)) if len(seconds) > 1 else None
        )

    mcu = ("ml", "cml", "uls")
    if all(m in methods for m in mcu):
        joint_flags = [
            all(m in r.fits and r.fits[m].improper_strict for m in mcu)
            for r in records
        ]
        improper_all_mcu = _proportion(joint_flags)
    else:
        improper_all_mcu = None

    admissible = [
        r
        for r in records
        if all(
            m in r.fits and not r.fits[m].improper_strict for m in methods
        )
    ]
    bias = {}
    rmse = {}
    for method in methods:
        ests = [r.fits[method].theta_hat for r in admissible]
        if ests:
            stats = bias_rmse(ests, truth)
            bias[method] = {p: stats[p][0] for p in PARAM_NAMES}
            rmse[method] = {p: stats[p][1] for p in PARAM_NAMES}
        else:
            bias[method] = {p: None for p in PARAM_NAMES}
            rmse[method] = {p: None for p in PARAM_NAMES}

    estimates_by_method = {
        m: [r.fits[m].theta_hat for r in admissible] for m in methods
    }
    correlations = {}
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            key = f"{a}|{b}"
            per_param = {}
            for p in PARAM_NAMES:
                try:
                    value = method_correlations(
                        estimates_by_method, (a, b), p
                    )
                except ValueError:
                    per_param[p] = None
                    continue
                per_param[p] = None if math.isnan(value) else value
            correlations[key] = per_param

    return StudySummary(
        t=t,
        n_obs=n_obs,
        psi2_true=psi2,
        n_replications=len(records),
        n_joint_admissible=len(admissible),
        improper_strict=improper_strict,
        improper_lenient=improper_lenient,
        improper_all_mcu=improper_all_mcu,
        n_failures=n_failures,
        bias=bias,
        rmse=rmse,
        correlations=correlations,
        timing_mean=timing_mean,
        timing_sd=timing_sd,
    )


@dataclass
class StudyResults:
    config: StudyConfig
    records: list[ReplicationRecord]
    summaries: list[StudySummary]


def _job(args):
    config, cond_index, rep = args
    return run_replication(config, cond_index, rep)


def run_study(config: StudyConfig, out_dir=None, jobs=None) -> StudyResults:
    """Execute the full condition grid and aggregate the results.

    Replications are independent jobs; with ``jobs`` above one they run in a
    process pool, and because every replication owns a keyed random stream
    the outputs are identical to a serial run.  ``out_dir``, when given,
    receives the CSV/JSON report files.
    """
    n_jobs = jobs if jobs is not None else config.jobs
    tasks = [
        (config, ci, rep)
        for ci in range(len(config.conditions()))
        for rep in range(config.replications)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(_job, tasks, chunksize=1))
    else:
        records = [_job(task) for task in tasks]
    records.sort(key=lambda r: (r.condition_index, r.replication))

    summaries = []
    for ci in range(len(config.conditions())):
        cond_records = [r for r in records if r.condition_index == ci]
        if cond_records:
            summaries.append(summarize_condition(config, cond_records))
    results = StudyResults(config=config, records=records,
                           summaries=summaries)
    if out_dir is not None:
        write_study_outputs(results, out_dir)
    return results


def _summary_payload(summary: StudySummary, with_timing: bool) -> dict:
    payload = {
        "condition": {
            "label": summary.label,
            "t": summary.t,
            "n_obs": summary.n_obs,
            "psi2_true": summary.psi2_true,
        },
        "n_replications": summary.n_replications,
        "n_joint_admissible": summary.n_joint_admissible,
        "improper_strict": summary.improper_strict,
        "improper_lenient": summary.improper_lenient,
        "improper_all_mcu": summary.improper_all_mcu,
        "n_failures": summary.n_failures,
        "bias": summary.bias,
        "rmse": summary.rmse,
        "correlations": summary.correlations,
    }
    if with_timing:
        payload["timing_mean_seconds"] = summary.timing_mean
        payload["timing_sd_seconds"] = summary.timing_sd
    return payload


def write_study_outputs(results: StudyResults, out_dir) -> None:
    """Write the long-format results CSV and the plot-ready aggregates.

    Every file except timing.csv is byte-for-byte reproducible for a fixed
    config and seed; wall-clock timing lives in timing.csv and in the
    ``seconds`` column of results.csv only.
    """
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["condition", "replication", "method", "parameter", "estimate",
             "improper_strict", "improper_lenient", "seconds"]
        )
        for r in results.records:
            for method in results.config.methods:
                if method not in r.fits:
                    continue
                fit = r.fits[method]
                for p in PARAM_NAMES:
                    writer.writerow(
                        [r.label, r.replication, method, p,
                         repr(getattr(fit.theta_hat, p)),
                         int(fit.improper_strict),
                         int(fit.improper_lenient),
                         repr(fit.elapsed)]
                    )

    with open(os.path.join(out_dir, "failures.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "replication", "method", "error"])
        for r in results.records:
            for method, message in sorted(r.failures.items()):
                writer.writerow([r.label, r.replication, method, message])

    with open(os.path.join(out_dir, "initial_values.json"), "w") as fh:
        payload = [
            {
                "condition": r.label,
                "replication": r.replication,
                "order": list(PARAM_NAMES),
                "values": [list(v.to_array()) for v in r.initial_values],
            }
            for r in results.records
        ]
        json.dump(payload, fh, indent=1, sort_keys=True)

    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(
            [_summary_payload(s, with_timing=False)
             for s in results.summaries],
            fh, indent=1, sort_keys=True,
        )

    with open(os.path.join(out_dir, "improper.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["condition", "method", "improper_strict", "improper_lenient"]
        )
        for s in results.summaries:
            for method in results.config.methods:
                writer.writerow(
                    [s.label, method,
                     _fmt(s.improper_strict[method]),
                     _fmt(s.improper_lenient[method])]
                )
            if s.improper_all_mcu is not None:
                writer.writerow(
                    [s.label, "ml+cml+uls", _fmt(s.improper_all_mcu), ""]
                )

    with open(os.path.join(out_dir, "bias_rmse.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["condition", "method", "parameter", "bias", "rmse", "n_used"]
        )
        for s in results.summaries:
            for method in results.config.methods:
                for p in PARAM_NAMES:
                    writer.writerow(
                        [s.label, method, p, _fmt(s.bias[method][p]),
                         _fmt(s.rmse[method][p]), s.n_joint_admissible]
                    )

    with open(os.path.join(out_dir, "correlations.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["condition", "method_a", "method_b", "parameter",
             "correlation", "n_used"]
        )
        for s in results.summaries:
            for pair, per_param in sorted(s.correlations.items()):
                a, b = pair.split("|")
                for p in PARAM_NAMES:
                    writer.writerow(
                        [s.label, a, b, p, _fmt(per_param[p]),
                         s.n_joint_admissible]
                    )

    with open(os.path.join(out_dir, "timing.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["condition", "method", "mean_seconds", "sd_seconds"]
        )
        for s in results.summaries:
            for method in results.config.methods:
                writer.writerow(
                    [s.label, method, _fmt(s.timing_mean[method]),
                     _fmt(s.timing_sd[method])]
                )


def _fmt(value) -> str:
    return "" if value is None else repr(value)

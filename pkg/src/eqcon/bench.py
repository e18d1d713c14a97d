"""Synthetic estimator comparison against analytic ground-truth gradients.

For each randomly generated parameter set the analytic gradient of the
closed-form expected loss serves as ground truth; every estimator then
produces a cloud of single-sample estimates ``h_1..h_N`` whose quality is
summarized under cosine distance (1 - cosine similarity) by three metrics:

* bias       -- ``1 - cos(mean_j h_j, h_gt)``
* variance   -- ``var({1 - cos(h_i, mean_j h_j)})``
* avg_error  -- ``mean_i (1 - cos(h_i, h_gt))``

Metrics are averaged across parameter sets and reported with their standard
deviations. Parameter sets get independently derived random streams, so runs
are reproducible bit-for-bit for a fixed seed regardless of how many worker
threads evaluate them.
"""
from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import estimators as est_mod
from . import gaussian as gaussian_mod
from . import losses as losses_mod
from .constraints import ConstraintSystem, new_constraint
from .discrete import ExactlyK, exactly_k
from .errors import IllConditioned, RankDeficient, ValidationError, ZeroVector
from .estimators import POISSON_ESTIMATORS, EstimatorKind, project_l2
from .gaussian import GaussianParams
from .losses import LossKind


class Family(enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"


@dataclass(frozen=True)
class BenchConfig:
    n_vars: int
    n_constraints: int
    n_param_sets: int
    n_grad_samples: int
    loss_kind: LossKind
    family: Family
    seed: int

    def validate(self) -> None:
        for name in ("n_vars", "n_constraints", "n_param_sets", "n_grad_samples"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.n_constraints >= self.n_vars:
            raise ValidationError(
                f"n_constraints ({self.n_constraints}) must be < n_vars ({self.n_vars})"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit integer")
        if self.family is Family.POISSON and self.n_constraints != 1:
            raise ValidationError("the exactly-k family supports a single sum constraint")


@dataclass(frozen=True)
class EstimatorReport:
    kind: EstimatorKind
    bias: float
    variance: float
    avg_error: float
    bias_std: float
    variance_std: float
    avg_error_std: float


def cosine_distance(u, v) -> float:
    """``1 - (u . v) / (|u| |v|)``, clipped to [0, 2] against rounding."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine distance is undefined for zero vectors")
    return float(np.clip(1.0 - float(u @ v) / (nu * nv), 0.0, 2.0))


def sample_metrics(estimates: np.ndarray, ground_truth: np.ndarray) -> tuple[float, float, float]:
    """(bias, variance, avg_error) of an estimate cloud vs the true gradient.

    Zero-norm estimates (possible in the discrete family when a sample hits
    the target exactly) are scored at distance 1, the value an uninformative
    direction attains in expectation.
    """
    norms = np.linalg.norm(estimates, axis=1)
    nonzero = norms > 0
    gt_unit = ground_truth / np.linalg.norm(ground_truth)
    cos_gt = np.zeros(len(estimates))
    cos_gt[nonzero] = (estimates[nonzero] @ gt_unit) / norms[nonzero]
    avg_error = float(np.mean(1.0 - cos_gt))
    center = estimates.mean(axis=0)
    center_norm = float(np.linalg.norm(center))
    if center_norm == 0.0:
        return 1.0, 0.0, avg_error
    bias = float(1.0 - (center @ gt_unit) / center_norm)
    cos_center = np.zeros(len(estimates))
    cos_center[nonzero] = (estimates[nonzero] @ (center / center_norm)) / norms[nonzero]
    variance = float(np.var(1.0 - cos_center))
    return bias, variance, avg_error


def _gaussian_instance(
    rng: np.random.Generator, n: int, a: int
) -> tuple[GaussianParams, ConstraintSystem, np.ndarray]:
    """Random diagonal Gaussian, constraint system, and feasible target.

    mu ~ N(0, I); sigma ~ log-uniform[0.1, 2]; constraint rows standard
    normal (redrawn until well-posed); the target is standard normal
    L2-projected onto the constraint subspace, and k is its image under A.
    """
    mean = rng.standard_normal(n)
    sigma = np.exp(rng.uniform(np.log(0.1), np.log(2.0), n))
    params = GaussianParams.diagonal(mean, sigma**2)
    for _ in range(100):
        a_mat = rng.standard_normal((a, n))
        k_init = rng.standard_normal(a)
        try:
            cs = new_constraint(a_mat, k_init)
            gaussian_mod.conditioning_parts(params, cs)
        except (RankDeficient, IllConditioned):
            continue
        y = project_l2(cs, rng.standard_normal(n))
        return params, cs, y
    raise ValidationError("could not draw a well-posed random instance")


def _poisson_instance(
    rng: np.random.Generator, n: int
) -> tuple[ExactlyK, np.ndarray]:
    """Random exactly-k law (rates log-uniform[0.5, 5], total 2n) and a
    feasible integer target drawn from an independent flat multinomial."""
    rates = np.exp(rng.uniform(np.log(0.5), np.log(5.0), n))
    total = 2 * n
    ek = exactly_k(rates, total)
    target_probs = rng.dirichlet(np.ones(n))
    y = rng.multinomial(total, target_probs)
    return ek, y


def _estimator_list(family: Family) -> tuple[EstimatorKind, ...]:
    if family is Family.POISSON:
        return POISSON_ESTIMATORS
    return tuple(EstimatorKind)


def _run_param_set(cfg: BenchConfig, set_index: int) -> dict[EstimatorKind, tuple[float, float, float]]:
    instance_rng = np.random.default_rng(
        np.random.SeedSequence([int(cfg.seed), int(set_index)])
    )
    results: dict[EstimatorKind, tuple[float, float, float]] = {}
    if cfg.family is Family.GAUSSIAN:
        params, cs, y = _gaussian_instance(instance_rng, cfg.n_vars, cfg.n_constraints)
        grad_mean, grad_scale = losses_mod.grad_expected_loss_gaussian(
            params, cs, y, cfg.loss_kind
        )
        ground_truth = np.concatenate([grad_mean, grad_scale])
        for ordinal, kind in enumerate(_estimator_list(cfg.family)):
            est_rng = np.random.default_rng(
                np.random.SeedSequence([int(cfg.seed), int(set_index), ordinal])
            )
            estimates = est_mod.estimate_grad_samples(
                kind, params, cs, y, cfg.loss_kind, est_rng, cfg.n_grad_samples
            )
            results[kind] = sample_metrics(estimates, ground_truth)
    else:
        ek, y = _poisson_instance(instance_rng, cfg.n_vars)
        ground_truth = losses_mod.grad_expected_loss_poisson(ek, y, cfg.loss_kind)
        for ordinal, kind in enumerate(_estimator_list(cfg.family)):
            est_rng = np.random.default_rng(
                np.random.SeedSequence([int(cfg.seed), int(set_index), ordinal])
            )
            estimates = est_mod.poisson_grad_samples(
                kind, ek, y, cfg.loss_kind, est_rng, cfg.n_grad_samples
            )
            results[kind] = sample_metrics(estimates, ground_truth)
    return results


def run_bench(cfg: BenchConfig, threads: int = 1) -> list[EstimatorReport]:
    """Run the estimator comparison; deterministic for a fixed seed.

    Parameter sets are independent tasks with derived seeds, so the thread
    count changes scheduling only, never results; aggregation happens in
    set-index order.
    """
    cfg.validate()
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    indices = range(cfg.n_param_sets)
    if threads == 1:
        per_set = [_run_param_set(cfg, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_set = list(pool.map(lambda i: _run_param_set(cfg, i), indices))
    reports = []
    for kind in _estimator_list(cfg.family):
        triples = np.array([s[kind] for s in per_set])
        means = triples.mean(axis=0)
        stds = triples.std(axis=0)
        reports.append(
            EstimatorReport(
                kind=kind,
                bias=float(means[0]),
                variance=float(means[1]),
                avg_error=float(means[2]),
                bias_std=float(stds[0]),
                variance_std=float(stds[1]),
                avg_error_std=float(stds[2]),
            )
        )
    return reports


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------

CSV_HEADER = ("family", "loss", "estimator", "metric", "mean", "std")
_METRIC_FIELDS = (
    ("bias", "bias", "bias_std"),
    ("variance", "variance", "variance_std"),
    ("avg_error", "avg_error", "avg_error_std"),
)


def bench_csv_rows(cfg: BenchConfig, reports: list[EstimatorReport]) -> list[tuple[str, ...]]:
    rows = [CSV_HEADER]
    for report in reports:
        for metric, mean_field, std_field in _METRIC_FIELDS:
            rows.append(
                (
                    cfg.family.value,
                    cfg.loss_kind.value,
                    report.kind.value,
                    metric,
                    repr(getattr(report, mean_field)),
                    repr(getattr(report, std_field)),
                )
            )
    return rows


def bench_report_dict(cfg: BenchConfig, reports: list[EstimatorReport]) -> dict:
    return {
        "config": {
            "n_vars": cfg.n_vars,
            "n_constraints": cfg.n_constraints,
            "n_param_sets": cfg.n_param_sets,
            "n_grad_samples": cfg.n_grad_samples,
            "loss_kind": cfg.loss_kind.value,
            "family": cfg.family.value,
            "seed": cfg.seed,
        },
        "reports": [
            {
                "estimator": r.kind.value,
                "bias": {"mean": r.bias, "std": r.bias_std},
                "variance": {"mean": r.variance, "std": r.variance_std},
                "avg_error": {"mean": r.avg_error, "std": r.avg_error_std},
            }
            for r in reports
        ],
    }


def write_bench_csv(path, cfg: BenchConfig, reports: list[EstimatorReport]) -> None:
    rows = bench_csv_rows(cfg, reports)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\r\n".join(",".join(row) for row in rows) + "\r\n")


def write_bench_json(path, cfg: BenchConfig, reports: list[EstimatorReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bench_report_dict(cfg, reports), fh, indent=2)
        fh.write("\n")

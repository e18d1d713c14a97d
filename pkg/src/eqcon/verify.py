"""Built-in oracle suite backing the ``verify`` CLI subcommand.

The checks pit each closed form against an independent route: Monte-Carlo
estimates over exact samples (agreement within three standard errors) and,
for the discrete family, exhaustive enumeration of the support (agreement to
tight absolute tolerances). Exact-sampling feasibility is spot-checked as
well. All checks are deterministic for a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import discrete as discrete_mod
from . import gaussian as gaussian_mod
from . import losses as losses_mod
from .bench import _gaussian_instance, _poisson_instance
from .discrete import exactly_k
from .losses import LossKind


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check_gaussian_mc(seed: int, n_instances: int, mc_count: int, kind: LossKind) -> CheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10, ord(kind.value[1])]))
    worst = 0.0
    for _ in range(n_instances):
        params, cs, y = _gaussian_instance(rng, n=5, a=2)
        law = gaussian_mod.condition(params, cs)
        closed = losses_mod.expected_loss_gaussian(law, y, kind)
        estimate, stderr = losses_mod.mc_expected_loss(law, y, kind, rng, mc_count)
        worst = max(worst, abs(closed - estimate) / stderr)
    return CheckResult(
        name=f"gaussian_{kind.value}_closed_vs_mc",
        passed=worst <= 3.0,
        detail=f"max |closed - mc| = {worst:.2f} standard errors (limit 3)",
    )


def _check_poisson_mc(seed: int, n_instances: int, mc_count: int, kind: LossKind) -> CheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11, ord(kind.value[1])]))
    worst = 0.0
    for _ in range(n_instances):
        ek, y = _poisson_instance(rng, n=5)
        closed = losses_mod.expected_loss_poisson(ek, y, kind)
        estimate, stderr = losses_mod.mc_expected_loss(ek, y, kind, rng, mc_count)
        worst = max(worst, abs(closed - estimate) / stderr)
    return CheckResult(
        name=f"poisson_{kind.value}_closed_vs_mc",
        passed=worst <= 3.0,
        detail=f"max |closed - mc| = {worst:.2f} standard errors (limit 3)",
    )


def _check_poisson_enumeration(seed: int, kind: LossKind) -> CheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 12]))
    worst = 0.0
    for _ in range(8):
        n = int(rng.integers(2, 4))
        total = int(rng.integers(0, 7))
        ek = exactly_k(np.exp(rng.uniform(np.log(0.3), np.log(3.0), n)), total)
        y = rng.multinomial(total, np.full(n, 1.0 / n))
        closed = losses_mod.expected_loss_poisson(ek, y, kind)
        points, pmf = discrete_mod.enumerated_support(ek)
        if kind is LossKind.L2:
            exact = float(np.sum(pmf * np.sum((points - y) ** 2, axis=1)))
        else:
            exact = float(np.sum(pmf * np.sum(np.abs(points - y), axis=1)))
        worst = max(worst, abs(closed - exact))
    return CheckResult(
        name=f"poisson_{kind.value}_closed_vs_enumeration",
        passed=worst <= 1e-10,
        detail=f"max |closed - enumeration| = {worst:.2e} (limit 1e-10)",
    )


def _check_discrete_law(seed: int) -> CheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    worst_tv = 0.0
    worst_marg = 0.0
    for _ in range(8):
        n = int(rng.integers(2, 4))
        total = int(rng.integers(0, 7))
        rates = np.exp(rng.uniform(np.log(0.3), np.log(3.0), n))
        ek = exactly_k(rates, total)
        points, pmf = discrete_mod.enumerated_support(ek)
        # normalized product-Poisson restriction of the support (log space)
        log_w = points @ np.log(rates) - gammaln(points + 1.0).sum(axis=1)
        weights = np.exp(log_w - log_w.max())
        weights /= weights.sum()
        worst_tv = max(worst_tv, 0.5 * float(np.sum(np.abs(weights - pmf))))
        for i in range(n):
            marg = np.zeros(total + 1)
            for z, w in zip(points[:, i], pmf):
                marg[z] += w
            direct = np.array(
                [discrete_mod.marginal_pmf(ek, i, v) for v in range(total + 1)]
            )
            worst_marg = max(worst_marg, float(np.max(np.abs(marg - direct))))
    passed = worst_tv <= 1e-12 and worst_marg <= 1e-12
    return CheckResult(
        name="discrete_law_vs_product_poisson_restriction",
        passed=passed,
        detail=f"TV distance {worst_tv:.2e}, marginal gap {worst_marg:.2e} (limits 1e-12)",
    )


def _check_sampling_feasibility(seed: int) -> CheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 14]))
    worst = 0.0
    for _ in range(5):
        params, cs, _ = _gaussian_instance(rng, n=6, a=2)
        law = gaussian_mod.condition(params, cs)
        draws = gaussian_mod.sample(law, rng, 2000)
        residual = draws @ cs.matrix_a.T - cs.vector_k
        worst = max(worst, float(np.max(np.abs(residual))))
    ek, _ = _poisson_instance(rng, n=6)
    counts = discrete_mod.sample(ek, rng, 2000)
    sums_ok = bool(np.all(counts.sum(axis=1) == ek.total))
    passed = worst <= 1e-9 and sums_ok
    return CheckResult(
        name="exact_sampling_feasibility",
        passed=passed,
        detail=f"gaussian max residual {worst:.2e} (limit 1e-9), discrete sums exact: {sums_ok}",
    )


def run_verify(seed: int = 0, n_instances: int = 5, mc_count: int = 200_000) -> list[CheckResult]:
    """Run every oracle check; returns one result per check."""
    checks = []
    for kind in (LossKind.L1, LossKind.L2):
        checks.append(_check_gaussian_mc(seed, n_instances, mc_count, kind))
        checks.append(_check_poisson_mc(seed, n_instances, mc_count, kind))
        checks.append(_check_poisson_enumeration(seed, kind))
    checks.append(_check_discrete_law(seed))
    checks.append(_check_sampling_feasibility(seed))
    return checks

"""Gradient estimators for expected losses under constrained laws, plus the
L1- and L2-minimal feasibility projections used as baselines.

All estimators share the same forward/backward split: the forward pass draws
a sample, the backward pass differentiates a proxy ``m(theta)`` and contracts
its Jacobian against the loss gradient at the frozen sample,

    grad ~= (d m / d theta)^T  grad_z loss(z, y).

Proxies (Gaussian case, diagonal covariance):

* ``RANDOM``                 -- no proxy; gradients drawn from N(0, I).
* ``UNCONSTRAINED_MARGINAL`` -- m_i = pdf of the unconstrained N(mu_i, s_i)
                                at z_i (constraint ignored in the backward
                                pass); z is still an exact constrained draw.
* ``CONSTRAINED_LAYER``      -- pathwise through mu + sigma*eps followed by
                                the L1-minimal repair of ``project_l1``;
                                the Jacobian of the realized projection
                                branch is used at kinks.
* ``CONSTRAINED_REPARAM``    -- pathwise through the variance-weighted
                                correction z = zh + Sigma A^T (A Sigma
                                A^T)^{-1} (k - A zh), zh = mu + sigma*eps.
* ``CONSTRAINED_MARGINAL``   -- m_i = pdf of the conditional marginal at z_i.
* ``MARGINAL_EXPECTATION``   -- m_i = conditional marginal mean.

The pdf proxies differentiate the density in the parameters with the sample
value frozen; each sample coordinate pairs with its own proxy coordinate.
Gradients are returned in the same parameterization as the loss module
(mean, log standard deviations).

The exactly-k counterparts (``poisson_grad_samples``) support the subset
{RANDOM, UNCONSTRAINED_MARGINAL, CONSTRAINED_MARGINAL, MARGINAL_EXPECTATION}
with gradients taken with respect to the rates; the reparameterization-based
designs have no discrete analogue.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from . import discrete as discrete_mod
from . import gaussian as gaussian_mod
from .constraints import ConstraintSystem
from .discrete import ExactlyK
from .errors import (
    DegenerateMarginal,
    DimensionMismatch,
    LpFailure,
    ValidationError,
)
from .gaussian import GaussianParams
from .losses import LossKind, _check_discrete_target, _check_gaussian_target


class EstimatorKind(enum.Enum):
    RANDOM = "random"
    UNCONSTRAINED_MARGINAL = "unconstrained_marginal"
    CONSTRAINED_LAYER = "constrained_layer"
    CONSTRAINED_REPARAM = "constrained_reparam"
    CONSTRAINED_MARGINAL = "constrained_marginal"
    MARGINAL_EXPECTATION = "marginal_expectation"


#: Estimators applicable to the exactly-k (Poisson) family.
POISSON_ESTIMATORS = (
    EstimatorKind.RANDOM,
    EstimatorKind.UNCONSTRAINED_MARGINAL,
    EstimatorKind.CONSTRAINED_MARGINAL,
    EstimatorKind.MARGINAL_EXPECTATION,
)


@dataclass(frozen=True)
class GradEstimate:
    """Averaged gradient estimate in (mean, log-sigma) coordinates."""

    grad_mean: np.ndarray
    grad_scale: np.ndarray
    samples_used: int


def _loss_grad(z: np.ndarray, y: np.ndarray, kind: LossKind) -> np.ndarray:
    if kind is LossKind.L2:
        return 2.0 * (z - y)
    return np.sign(z - y)


# ---------------------------------------------------------------------------
# feasibility projections
# ---------------------------------------------------------------------------


def project_l2(cs: ConstraintSystem, z_hat, weight=None) -> np.ndarray:
    """Project onto ``{z : A z = k}`` minimizing ``(z - z_hat)^T W^{-1} (z - z_hat)``.

    The KKT solution is ``z = z_hat + W A^T (A W A^T)^{-1} (k - A z_hat)``;
    the identity weight recovers the orthogonal (minimal-L2) repair.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    if z_hat.shape != (cs.n_vars,):
        raise DimensionMismatch(f"point shape {z_hat.shape}, expected ({cs.n_vars},)")
    a_mat = cs.matrix_a
    if weight is None:
        w_at = a_mat.T
    else:
        weight = np.asarray(weight, dtype=float)
        if weight.shape != (cs.n_vars, cs.n_vars):
            raise DimensionMismatch("weight must be n x n")
        scale = max(float(np.max(np.abs(weight))), 1.0)
        if np.max(np.abs(weight - weight.T)) > 1e-10 * scale:
            raise ValidationError("weight matrix must be symmetric")
        try:
            np.linalg.cholesky(weight)
        except np.linalg.LinAlgError:
            raise ValidationError("weight matrix must be positive definite") from None
        w_at = weight @ a_mat.T
    gram = a_mat @ w_at
    correction = w_at @ np.linalg.solve(gram, cs.vector_k - a_mat @ z_hat)
    return z_hat + correction


def project_l1(cs: ConstraintSystem, z_hat) -> np.ndarray:
    """Project onto ``{z : A z = k}`` minimizing the L1 distance.

    Single-constraint systems are solved exactly: the residual is absorbed
    by the coordinate with the largest |coefficient| (ties go to the lowest
    index). Multi-row systems solve ``min ||d||_1 s.t. A d = r`` as a small
    dense linear program by variable splitting.
    """
    z_hat = np.asarray(z_hat, dtype=float)
    if z_hat.shape != (cs.n_vars,):
        raise DimensionMismatch(f"point shape {z_hat.shape}, expected ({cs.n_vars},)")
    r = cs.vector_k - cs.matrix_a @ z_hat
    if cs.n_rows == 1:
        row = cs.matrix_a[0]
        j = int(np.argmax(np.abs(row)))
        delta = np.zeros(cs.n_vars)
        delta[j] = r[0] / row[j]
        return z_hat + delta
    delta, _ = _l1_min_correction(cs.matrix_a, r)
    return z_hat + delta


def _l1_min_correction(
    a_mat: np.ndarray, r: np.ndarray, max_iter: int = 500
) -> tuple[np.ndarray, list[int]]:
    """Solve ``min ||d||_1 s.t. A d = r`` by phase-2 simplex with Bland's rule.

    The split form uses variables ``x = [d+; d-] >= 0`` with columns
    ``[A, -A]`` and unit costs. An initial basic feasible solution comes from
    the QR column pivots of ``A`` with signs flipped as needed, so no
    artificial variables are required. Returns the correction ``d`` and the
    final basis (variable indices into the split vector), which identifies
    the active linearization branch of the projection map.
    """
    a_rows, n = a_mat.shape
    cols = np.concatenate([a_mat, -a_mat], axis=1)
    piv = scipy.linalg.qr(a_mat, mode="r", pivoting=True)[1]
    basis = sorted(int(j) for j in piv[:a_rows])
    basic = np.linalg.solve(cols[:, basis], r)
    basis = [b + n if v < 0 else b for b, v in zip(basis, basic)]
    costs = np.ones(2 * n)
    tol = 1e-11
    for _ in range(max_iter):
        b_mat = cols[:, basis]
        lam = np.linalg.solve(b_mat.T, costs[basis])
        reduced = costs - lam @ cols
        reduced[basis] = 0.0
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            basic = np.linalg.solve(b_mat, r)
            delta = np.zeros(n)
            for idx, value in zip(basis, basic):
                if idx < n:
                    delta[idx] += value
                else:
                    delta[idx - n] -= value
            return delta, list(basis)
        enter = int(entering[0])  # Bland's rule: lowest variable index
        direction = np.linalg.solve(b_mat, cols[:, enter])
        basic = np.linalg.solve(b_mat, r)
        positive = direction > tol
        if not np.any(positive):
            raise LpFailure("L1 projection subproblem is unbounded")
        ratios = np.where(positive, basic / np.where(positive, direction, 1.0), np.inf)
        best = float(np.min(ratios))
        leave = min(
            (basis[i], i) for i in range(a_rows) if ratios[i] <= best + 1e-15
        )[1]
        basis[leave] = enter
    raise LpFailure(f"simplex did not converge within {max_iter} pivots")


def _l1_batch_core(
    a_mat: np.ndarray, z_hat: np.ndarray, residuals: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """Batched L1 projection returning per-sample branch Jacobians.

    Reduced costs of the split LP do not depend on the residual, so any
    basis that is optimal for one residual is optimal wherever it stays
    feasible; discovered bases are therefore reused across the batch and
    only genuinely new cones trigger a fresh simplex solve.
    """
    n_samples, n = z_hat.shape
    a_rows = a_mat.shape[0]
    projected = np.empty_like(z_hat)
    if a_rows == 1:
        row = a_mat[0]
        j = int(np.argmax(np.abs(row)))
        branch = np.eye(n)
        branch[j, :] -= row / row[j]
        projected[:] = z_hat
        projected[:, j] += residuals[:, 0] / row[j]
        return projected, [branch], np.zeros(n_samples, dtype=np.int64)

    branch_ids = np.full(n_samples, -1, dtype=np.int64)
    branches: list[np.ndarray] = []
    basis_solves: list[np.ndarray] = []
    basis_embeds: list[np.ndarray] = []
    feas_tol = -1e-10
    for start in range(n_samples):
        if branch_ids[start] >= 0:
            continue
        _, basis = _l1_min_correction(a_mat, residuals[start])
        signs = np.array([1.0 if b < n else -1.0 for b in basis])
        coords = [b if b < n else b - n for b in basis]
        basis_cols = a_mat[:, coords] * signs
        inv = np.linalg.inv(basis_cols)
        embed = np.zeros((n, a_rows))
        for col, (coord, sign) in enumerate(zip(coords, signs)):
            embed[coord, col] = sign
        branches.append(np.eye(n) - embed @ inv @ a_mat)
        basis_solves.append(inv)
        basis_embeds.append(embed)
        bid = len(branches) - 1
        unassigned = branch_ids < 0
        basics = residuals[unassigned] @ inv.T
        covered = np.all(basics >= feas_tol, axis=1)
        idx = np.flatnonzero(unassigned)[covered]
        branch_ids[idx] = bid
    for bid, (inv, embed) in enumerate(zip(basis_solves, basis_embeds)):
        rows = branch_ids == bid
        projected[rows] = z_hat[rows] + (residuals[rows] @ inv.T) @ embed.T
    return projected, branches, branch_ids


def _l1_project_batch(
    cs: ConstraintSystem, z_hat: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    residuals = cs.vector_k - z_hat @ cs.matrix_a.T
    return _l1_batch_core(cs.matrix_a, z_hat, residuals)


# ---------------------------------------------------------------------------
# Gaussian estimators
# ---------------------------------------------------------------------------


def _require_diagonal(params: GaussianParams) -> None:
    if not params.is_diagonal:
        raise NotImplementedError(
            "gradient estimators are implemented for diagonal covariances "
            "(the reparameterized designs are defined through mu + sigma*eps)"
        )


def estimate_grad_samples(
    kind: EstimatorKind,
    params: GaussianParams,
    cs: ConstraintSystem,
    y,
    loss_kind: LossKind,
    rng: np.random.Generator,
    n_estimates: int,
) -> np.ndarray:
    """Draw ``n_estimates`` independent single-sample gradient estimates.

    Returns an array of shape ``(n_estimates, 2n)``: the mean-gradient block
    followed by the log-sigma block. This is the batch engine behind
    :func:`estimate_grad` and the benchmark.
    """
    _require_diagonal(params)
    y = _check_gaussian_target(cs, y)
    if n_estimates < 1:
        raise ValidationError(f"n_estimates must be >= 1, got {n_estimates}")
    n = params.n
    count = int(n_estimates)

    if kind is EstimatorKind.RANDOM:
        return rng.standard_normal((count, 2 * n))

    variances = params.cov_diag
    sigma = np.sqrt(variances)
    parts = gaussian_mod.conditioning_parts(params, cs)

    if kind in (
        EstimatorKind.UNCONSTRAINED_MARGINAL,
        EstimatorKind.CONSTRAINED_MARGINAL,
        EstimatorKind.MARGINAL_EXPECTATION,
    ):
        law = gaussian_mod.condition(params, cs)
        z = gaussian_mod.sample(law, rng, count)
        c = _loss_grad(z, y, loss_kind)
        if kind is EstimatorKind.MARGINAL_EXPECTATION:
            g_mean, g_scale = gaussian_mod.chain_diag_adjoints(
                parts, variances, c, np.zeros_like(c)
            )
            return np.concatenate([g_mean, g_scale], axis=1)
        if kind is EstimatorKind.UNCONSTRAINED_MARGINAL:
            dev = z - params.mean
            pdf = np.exp(-(dev**2) / (2 * variances)) / np.sqrt(2 * np.pi * variances)
            g_mean = c * pdf * dev / variances
            g_s = c * pdf * (dev**2 / variances - 1.0) / (2 * variances)
            return np.concatenate([g_mean, g_s * 2.0 * variances], axis=1)
        floor = gaussian_mod.PDF_FLOOR_RATIO * variances
        if np.any(law.marg_vars < floor):
            raise DegenerateMarginal(
                "pdf proxy undefined: a coordinate is fully determined by "
                "the constraints"
            )
        dev = z - law.marg_means
        marg_var = law.marg_vars
        pdf = np.exp(-(dev**2) / (2 * marg_var)) / np.sqrt(2 * np.pi * marg_var)
        g_mu_bar = c * pdf * dev / marg_var
        g_var = c * pdf * (dev**2 / marg_var - 1.0) / (2 * marg_var)
        g_mean, g_scale = gaussian_mod.chain_diag_adjoints(
            parts, variances, g_mu_bar, g_var
        )
        return np.concatenate([g_mean, g_scale], axis=1)

    # reparameterized designs: zh = mu + sigma * eps
    eps = rng.standard_normal((count, n))
    z_hat = params.mean + sigma * eps

    if kind is EstimatorKind.CONSTRAINED_REPARAM:
        gram = cs.matrix_a @ (variances[:, None] * cs.matrix_a.T)
        shift = np.linalg.solve(gram, (cs.vector_k - z_hat @ cs.matrix_a.T).T).T
        z = z_hat + (shift @ cs.matrix_a) * variances
        c = _loss_grad(z, y, loss_kind)
        g_mean = c @ parts.mean_jac
        w_hat = shift @ cs.matrix_a
        g_scale = g_mean * (eps + 2.0 * sigma * w_hat) * sigma
        return np.concatenate([g_mean, g_scale], axis=1)

    if kind is EstimatorKind.CONSTRAINED_LAYER:
        z, branches, branch_ids = _l1_project_batch(cs, z_hat)
        c = _loss_grad(z, y, loss_kind)
        g_mean = np.empty_like(c)
        for bid, branch in enumerate(branches):
            rows = branch_ids == bid
            if np.any(rows):
                g_mean[rows] = c[rows] @ branch
        g_scale = g_mean * eps * sigma
        return np.concatenate([g_mean, g_scale], axis=1)

    raise ValidationError(f"unknown estimator kind {kind!r}")


def estimate_grad(
    kind: EstimatorKind,
    params: GaussianParams,
    cs: ConstraintSystem,
    y,
    loss_kind: LossKind,
    rng: np.random.Generator,
    n_samples: int,
) -> GradEstimate:
    """Estimate the parameter gradient, averaged over ``n_samples`` draws."""
    samples = estimate_grad_samples(kind, params, cs, y, loss_kind, rng, n_samples)
    mean = samples.mean(axis=0)
    n = params.n
    return GradEstimate(
        grad_mean=mean[:n], grad_scale=mean[n:], samples_used=int(n_samples)
    )


# ---------------------------------------------------------------------------
# exactly-k estimators
# ---------------------------------------------------------------------------


def poisson_grad_samples(
    kind: EstimatorKind,
    ek: ExactlyK,
    y,
    loss_kind: LossKind,
    rng: np.random.Generator,
    n_estimates: int,
) -> np.ndarray:
    """Single-sample gradient estimates wrt the rates, shape ``(n_estimates, n)``."""
    if kind not in POISSON_ESTIMATORS:
        raise ValidationError(f"estimator {kind.value} has no exactly-k analogue")
    y = _check_discrete_target(ek, y).astype(float)
    if n_estimates < 1:
        raise ValidationError(f"n_estimates must be >= 1, got {n_estimates}")
    count = int(n_estimates)
    n = ek.n
    if kind is EstimatorKind.RANDOM:
        return rng.standard_normal((count, n))
    p = ek.probs
    k = ek.total
    rates = ek.rates
    total_rate = float(rates.sum())
    z = discrete_mod.sample(ek, rng, count).astype(float)
    c = _loss_grad(z, y, loss_kind)
    if kind is EstimatorKind.UNCONSTRAINED_MARGINAL:
        pmf = np.exp(-rates + z * np.log(rates) - gammaln(z + 1.0))
        return c * pmf * (z / rates - 1.0)
    if kind is EstimatorKind.MARGINAL_EXPECTATION:
        g = c * k
    else:  # CONSTRAINED_MARGINAL: Binomial pmf proxy
        if n == 1:
            raise DegenerateMarginal("pdf proxy undefined for a single coordinate")
        log_pmf = (
            gammaln(k + 1.0)
            - gammaln(z + 1.0)
            - gammaln(k - z + 1.0)
            + z * np.log(p)
            + (k - z) * np.log1p(-p)
        )
        pmf = np.exp(log_pmf)
        g = c * pmf * (z / p - (k - z) / (1.0 - p))
    return (g - np.sum(g * p, axis=1, keepdims=True)) / total_rate


def poisson_estimate_grad(
    kind: EstimatorKind,
    ek: ExactlyK,
    y,
    loss_kind: LossKind,
    rng: np.random.Generator,
    n_samples: int,
) -> GradEstimate:
    """Averaged exactly-k gradient estimate; the scale block is empty."""
    samples = poisson_grad_samples(kind, ek, y, loss_kind, rng, n_samples)
    return GradEstimate(
        grad_mean=samples.mean(axis=0),
        grad_scale=np.zeros(0),
        samples_used=int(n_samples),
    )

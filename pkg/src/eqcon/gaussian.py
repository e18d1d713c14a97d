"""Multivariate Gaussians conditioned on linear equality constraints.

Conditioning ``N(mu, Sigma)`` on ``A z = k`` yields another Gaussian whose
support is the affine subspace ``{z : A z = k}``. We keep the conditioned law
in full n-dimensional form:

    cond_mean = mu + Sigma A^T (A Sigma A^T)^{-1} (k - A mu)
    cond_cov  = Sigma - Sigma A^T (A Sigma A^T)^{-1} A Sigma

``cond_cov`` is positive semidefinite of rank ``n - a``; the rank deficiency
is exactly what guarantees sampled points satisfy the constraints. Sampling
uses a square-root factor from a symmetric eigendecomposition, so every draw
lies on the constraint subspace up to rounding.

Each coordinate's conditional marginal is the univariate Gaussian
``N(cond_mean[i], cond_cov[i, i])``; coordinates that the constraints fully
determine degenerate to point masses and are reported as such rather than
given an infinite density.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constraints import ConstraintSystem
from .errors import (
    DegenerateMarginal,
    DimensionMismatch,
    IllConditioned,
    NonFiniteInput,
    ValidationError,
)

#: Eigenvalues of cond_cov below CLAMP_RATIO * lambda_max are clamped to zero.
CLAMP_RATIO = 1e-12
#: Marginal variances below PDF_FLOOR_RATIO * (source variance) are treated
#: as point masses.
PDF_FLOOR_RATIO = 1e-12
#: Condition-number threshold for A Sigma A^T.
MAX_CONDITION_NUMBER = 1e12
#: Relative symmetry tolerance for full covariance matrices.
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class GaussianParams:
    """Mean vector plus diagonal or full covariance.

    Use :meth:`diagonal` or :meth:`full` to construct; both validate
    positive definiteness and finiteness.
    """

    mean: np.ndarray
    cov_diag: np.ndarray | None = None
    cov_full: np.ndarray | None = None

    @classmethod
    def diagonal(cls, mean, variances) -> "GaussianParams":
        mean = np.array(mean, dtype=float)
        variances = np.array(variances, dtype=float)
        if mean.ndim != 1 or variances.shape != mean.shape:
            raise DimensionMismatch(
                f"mean shape {mean.shape} and variance shape {variances.shape} differ"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(variances))):
            raise NonFiniteInput("Gaussian parameters contain NaN or Inf")
        if np.any(variances <= 0):
            raise ValidationError("diagonal covariance requires all variances > 0")
        mean.setflags(write=False)
        variances.setflags(write=False)
        return cls(mean=mean, cov_diag=variances)

    @classmethod
    def full(cls, mean, cov) -> "GaussianParams":
        mean = np.array(mean, dtype=float)
        cov = np.array(cov, dtype=float)
        n = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (n, n):
            raise DimensionMismatch(
                f"covariance shape {cov.shape} inconsistent with mean length {n}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonFiniteInput("Gaussian parameters contain NaN or Inf")
        scale = max(float(np.max(np.abs(cov))), 1.0)
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
            raise ValidationError("covariance matrix is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError("covariance matrix is not positive definite") from None
        mean.setflags(write=False)
        cov.setflags(write=False)
        return cls(mean=mean, cov_full=cov)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.cov_diag is not None

    def covariance(self) -> np.ndarray:
        """Dense covariance matrix (copy-safe view)."""
        if self.is_diagonal:
            return np.diag(self.cov_diag)
        return self.cov_full

    def variances(self) -> np.ndarray:
        """Per-coordinate variances Sigma_ii."""
        if self.is_diagonal:
            return self.cov_diag
        return np.diag(self.cov_full)


@dataclass(frozen=True)
class ConditioningParts:
    """Internal products of the conditioning map shared by losses/estimators.

    ``mean_jac`` is d(cond_mean)/d(mu) = I - Sigma A^T (A Sigma A^T)^{-1} A,
    an oblique projector onto the constraint tangent space; ``weight`` is
    A^T (A Sigma A^T)^{-1} (k - A mu), which drives the covariance
    sensitivity of the conditioned mean.
    """

    cond_mean: np.ndarray
    cond_cov: np.ndarray
    mean_jac: np.ndarray
    weight: np.ndarray


@dataclass(frozen=True)
class ConditionedGaussian:
    """Gaussian law conditioned on ``A z = k``, in full-dimensional form."""

    source: GaussianParams
    constraint: ConstraintSystem
    cond_mean: np.ndarray
    cond_cov: np.ndarray
    sqrt_factor: np.ndarray
    marg_means: np.ndarray
    marg_vars: np.ndarray


def conditioning_parts(params: GaussianParams, cs: ConstraintSystem) -> ConditioningParts:
    """Compute the conditioned mean/covariance and the mean Jacobian.

    The linear solves go through a Cholesky factorization of
    ``A Sigma A^T`` (never an explicit inverse).

    Raises
    ------
    DimensionMismatch
        If the parameter dimension differs from the system's.
    IllConditioned
        If cond(A Sigma A^T) exceeds ``MAX_CONDITION_NUMBER``.
    """
    if params.n != cs.n_vars:
        raise DimensionMismatch(
            f"Gaussian has {params.n} coordinates but system expects {cs.n_vars}"
        )
    a_mat = cs.matrix_a
    sigma = params.covariance()
    sig_at = sigma @ a_mat.T                       # (n, a)
    gram = a_mat @ sig_at                          # A Sigma A^T
    gram = 0.5 * (gram + gram.T)
    eigs = np.linalg.eigvalsh(gram)
    if eigs[0] <= 0 or eigs[-1] / eigs[0] > MAX_CONDITION_NUMBER:
        raise IllConditioned(
            "A Sigma A^T has condition number above "
            f"{MAX_CONDITION_NUMBER:g}; constraint rows interact "
            "near-degenerately with the covariance"
        )
    cho = scipy.linalg.cho_factor(gram, lower=True)
    shift = scipy.linalg.cho_solve(cho, cs.vector_k - a_mat @ params.mean)
    cond_mean = params.mean + sig_at @ shift
    gram_inv_a = scipy.linalg.cho_solve(cho, a_mat)   # (A Sigma A^T)^{-1} A
    cond_cov = sigma - sig_at @ (gram_inv_a @ sigma)
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    mean_jac = np.eye(params.n) - sig_at @ gram_inv_a
    weight = a_mat.T @ shift
    return ConditioningParts(
        cond_mean=cond_mean, cond_cov=cond_cov, mean_jac=mean_jac, weight=weight
    )


def condition(params: GaussianParams, cs: ConstraintSystem) -> ConditionedGaussian:
    """Condition a Gaussian on ``A z = k``.

    The square-root factor keeps the ``n - a`` largest eigenvalues of the
    conditioned covariance; eigenvalues below ``CLAMP_RATIO * lambda_max``
    are clamped to zero (exactly ``a`` of them are expected to fall below
    the clamp; a warning is emitted otherwise).
    """
    parts = conditioning_parts(params, cs)
    n, a = params.n, cs.n_rows
    eigvals, eigvecs = np.linalg.eigh(parts.cond_cov)
    lam_max = max(float(eigvals[-1]), 0.0)
    clamp = CLAMP_RATIO * lam_max
    clamped = int(np.sum(eigvals <= clamp))
    if clamped != a:
        warnings.warn(
            f"expected exactly {a} near-zero eigenvalues in the conditioned "
            f"covariance, found {clamped}",
            RuntimeWarning,
            stacklevel=2,
        )
    keep = max(n - a, 0)
    lam = np.where(eigvals <= clamp, 0.0, eigvals)[n - keep:]
    vecs = eigvecs[:, n - keep:]
    sqrt_factor = vecs * np.sqrt(lam)
    marg_vars = np.clip(np.diag(parts.cond_cov), 0.0, None)
    for arr in (parts.cond_mean, parts.cond_cov, sqrt_factor, marg_vars):
        arr.setflags(write=False)
    return ConditionedGaussian(
        source=params,
        constraint=cs,
        cond_mean=parts.cond_mean,
        cond_cov=parts.cond_cov,
        sqrt_factor=sqrt_factor,
        marg_means=parts.cond_mean,
        marg_vars=marg_vars,
    )


def sample(cg: ConditionedGaussian, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` exact samples from the conditioned law.

    Each sample is ``cond_mean + S eps`` with ``eps`` standard normal of
    dimension ``n - a``, so every row satisfies the constraints to rounding.
    Deterministic given the generator state; no hidden shared state.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    eps = rng.standard_normal((int(count), cg.sqrt_factor.shape[1]))
    return cg.cond_mean + eps @ cg.sqrt_factor.T


def _normal_pdf(x: float, mean: float, var: float) -> float:
    return float(np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var))


def marginal_pdf(cg: ConditionedGaussian, i: int, z_i: float) -> float:
    """Density of the conditional marginal ``N(cond_mean[i], cond_cov[i,i])``.

    Raises
    ------
    DegenerateMarginal
        If the constraints fully determine coordinate ``i`` (the marginal is
        a point mass; a density would be infinite).
    """
    n = cg.cond_mean.shape[0]
    if not 0 <= i < n:
        raise DimensionMismatch(f"coordinate index {i} out of range [0, {n})")
    floor = PDF_FLOOR_RATIO * float(cg.source.variances()[i])
    var = float(cg.marg_vars[i])
    if var < floor:
        raise DegenerateMarginal(
            f"coordinate {i} is fully determined by the constraints "
            f"(variance {var:.3e})"
        )
    return _normal_pdf(float(z_i), float(cg.marg_means[i]), var)


def unconstrained_pdf(params: GaussianParams, i: int, z_i: float) -> float:
    """Density of the unconstrained marginal ``N(mu_i, Sigma_ii)``."""
    if not 0 <= i < params.n:
        raise DimensionMismatch(f"coordinate index {i} out of range [0, {params.n})")
    return _normal_pdf(float(z_i), float(params.mean[i]), float(params.variances()[i]))


def chain_diag_adjoints(
    parts: ConditioningParts,
    variances: np.ndarray,
    g_mean: np.ndarray,
    g_var: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Pull per-coordinate adjoints back through the conditioning map.

    Given sensitivities of a scalar objective with respect to the conditioned
    means (``g_mean``) and marginal variances (``g_var``), returns gradients
    with respect to the unconstrained mean and log standard deviations of a
    diagonal-covariance Gaussian. Uses the first-order identities

        d(cond_mean) = J dSigma w + J dmu
        d(cond_cov)  = J dSigma J^T

    which hold because ``J Sigma A^T = 0``. Accepts stacked adjoints of shape
    ``(..., n)`` and broadcasts, so batches of per-sample adjoints chain in
    one call.
    """
    jac = parts.mean_jac
    grad_mean = g_mean @ jac
    grad_s = grad_mean * parts.weight + g_var @ (jac * jac)
    return grad_mean, grad_s * 2.0 * variances

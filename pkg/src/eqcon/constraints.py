"""Linear equality constraint systems A z = k.

A system is validated once at construction (finite entries, consistent
shapes, full row rank) and is immutable afterwards, so instances can be
shared freely across threads.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFiniteInput, RankDeficient, ValidationError

#: Default satisfaction tolerance (max norm) for float64 residuals.
DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class ConstraintSystem:
    """Validated system of linear equality constraints.

    Attributes
    ----------
    matrix_a : (n_rows, n_vars) ndarray
        Constraint coefficients. Rows are kept exactly as supplied; callers
        own any scaling.
    vector_k : (n_rows,) ndarray
        Right-hand side.
    n_vars, n_rows : int
        Problem dimensions, with ``n_rows <= n_vars`` and
        ``rank(matrix_a) == n_rows``.
    """

    matrix_a: np.ndarray
    vector_k: np.ndarray
    n_vars: int
    n_rows: int

    def residual(self, z: np.ndarray) -> np.ndarray:
        """Return ``A z - k``."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_vars,):
            raise DimensionMismatch(
                f"expected point of length {self.n_vars}, got shape {z.shape}"
            )
        return self.matrix_a @ z - self.vector_k

    def is_satisfied(self, z: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
        """True iff the max-norm residual of ``z`` is at most ``tol``."""
        if tol < 0:
            raise ValidationError(f"tolerance must be nonnegative, got {tol}")
        return bool(np.max(np.abs(self.residual(z))) <= tol)


def new_constraint(matrix_a, vector_k) -> ConstraintSystem:
    """Build and validate a constraint system.

    Raises
    ------
    DimensionMismatch
        If shapes are inconsistent.
    NonFiniteInput
        If any entry is NaN or Inf.
    RankDeficient
        If the rows of ``matrix_a`` are linearly dependent (redundant or
        contradictory constraints), detected by pivoted QR with threshold
        ``n_vars * eps * max_column_norm``.
    """
    a_mat = np.array(matrix_a, dtype=float)
    k_vec = np.array(vector_k, dtype=float)
    if a_mat.ndim != 2:
        raise DimensionMismatch(f"constraint matrix must be 2-D, got ndim={a_mat.ndim}")
    if k_vec.ndim != 1:
        raise DimensionMismatch(f"right-hand side must be 1-D, got ndim={k_vec.ndim}")
    n_rows, n_vars = a_mat.shape
    if n_rows < 1 or n_vars < 1:
        raise DimensionMismatch(f"system must be at least 1x1, got {n_rows}x{n_vars}")
    if k_vec.shape[0] != n_rows:
        raise DimensionMismatch(
            f"matrix has {n_rows} rows but right-hand side has {k_vec.shape[0]} entries"
        )
    if not np.all(np.isfinite(a_mat)) or not np.all(np.isfinite(k_vec)):
        raise NonFiniteInput("constraint system contains NaN or Inf")

    r = scipy.linalg.qr(a_mat, mode="r", pivoting=True)[0]
    col_norms = np.linalg.norm(a_mat, axis=0)
    threshold = n_vars * np.finfo(float).eps * float(col_norms.max())
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > threshold))
    if rank < n_rows:
        raise RankDeficient(
            f"constraint matrix has rank {rank} < {n_rows} rows "
            "(redundant or contradictory constraints)"
        )

    a_mat.setflags(write=False)
    k_vec.setflags(write=False)
    return ConstraintSystem(matrix_a=a_mat, vector_k=k_vec, n_vars=n_vars, n_rows=n_rows)


def residual(cs: ConstraintSystem, z) -> np.ndarray:
    """Return ``A z - k`` for a candidate point."""
    return cs.residual(np.asarray(z, dtype=float))


def is_satisfied(cs: ConstraintSystem, z, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``z`` satisfies the system within ``tol`` in max norm."""
    return cs.is_satisfied(np.asarray(z, dtype=float), tol)


def constraint_from_json(obj: dict) -> ConstraintSystem:
    """Parse the on-disk JSON schema ``{"A": [[...]], "k": [...]}``."""
    if not isinstance(obj, dict):
        raise DimensionMismatch("constraint JSON must be an object")
    unknown = set(obj) - {"A", "k"}
    if unknown:
        raise DimensionMismatch(f"unknown constraint field: {sorted(unknown)[0]!r}")
    if "A" not in obj or "k" not in obj:
        raise DimensionMismatch('constraint JSON requires fields "A" and "k"')
    return new_constraint(obj["A"], obj["k"])

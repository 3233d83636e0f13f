"""Sparse assembly and linear solves on top of :mod:`scipy.sparse`.

Matrices are plain ``scipy.sparse.csr_matrix`` objects in canonical form
(sorted column indices, no duplicates).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

METHODS = ("direct-LU", "GMRES", "BiCGStab")
PRECONDITIONERS = ("none", "Jacobi", "ILU0")


class SolverError(RuntimeError):
    """Iterative breakdown or non-convergence; carries the final residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class SingularMatrixError(SolverError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class LinearSolverConfig:
    method: str = "direct-LU"
    rtol: float = 1e-10
    max_iter: int = 10_000
    preconditioner: str = "none"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")
        if not self.rtol > 0:
            raise ValueError("rtol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def assemble(rows, cols, values, shape) -> sp.csr_matrix:
    """Sum a triplet stream into a canonical CSR matrix."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=float).ravel()
    n, m = shape
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        bad = rows[(rows < 0) | (rows >= n)][0]
        raise IndexError(f"row index {bad} out of range for {n} rows")
    if cols.size and (cols.min() < 0 or cols.max() >= m):
        bad = cols[(cols < 0) | (cols >= m)][0]
        raise IndexError(f"column index {bad} out of range for {m} columns")
    mat = sp.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def scatter(test_dofs, trial_dofs, local, shape) -> sp.csr_matrix:
    """Assemble element matrices ``local[e]`` (n_test x n_trial) at the given dofs."""
    test_dofs = np.asarray(test_dofs)
    trial_dofs = np.asarray(trial_dofs)
    rows = np.broadcast_to(test_dofs[:, :, None], local.shape)
    cols = np.broadcast_to(trial_dofs[:, None, :], local.shape)
    return assemble(rows, cols, local, shape)


def _zero_pivot_row(A: sp.spmatrix) -> int | None:
    empty = np.flatnonzero(np.diff(A.tocsr().indptr) == 0)
    if len(empty):
        return int(empty[0])
    if A.shape[0] <= 3000:
        _, _, u = scipy.linalg.lu(A.toarray())
        d = np.abs(np.diag(u))
        small = np.flatnonzero(d <= 1e-14 * max(d.max(), 1.0))
        if len(small):
            return int(small[0])
    return None


def factorize(A: sp.spmatrix):
    """LU factorization; raises :class:`SingularMatrixError` naming a zero pivot."""
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        row = _zero_pivot_row(A)
        where = f" (zero pivot at row {row})" if row is not None else ""
        raise SingularMatrixError(f"singular factorization{where}: {exc}", row) from None


def _preconditioner(A, kind):
    if kind == "none":
        return None
    if kind == "Jacobi":
        d = A.diagonal()
        if np.any(d == 0):
            raise SingularMatrixError("Jacobi preconditioner needs a zero-free diagonal",
                                      int(np.flatnonzero(d == 0)[0]))
        return spla.LinearOperator(A.shape, matvec=lambda x: x / d)
    ilu = spla.spilu(sp.csc_matrix(A), drop_tol=0.0, fill_factor=1.0)
    return spla.LinearOperator(A.shape, matvec=ilu.solve)


def solve(A: sp.spmatrix, rhs, config: LinearSolverConfig | None = None) -> np.ndarray:
    config = config or LinearSolverConfig()
    A = sp.csr_matrix(A)
    rhs = np.asarray(rhs, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    if rhs.shape[0] != A.shape[0]:
        raise ValueError(f"rhs has length {rhs.shape[0]}, expected {A.shape[0]}")

    if config.method == "direct-LU":
        x = factorize(A).solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("direct solve produced non-finite values", _zero_pivot_row(A))
        return x

    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return np.zeros_like(rhs)
    M = _preconditioner(A, config.preconditioner)
    kwargs = dict(rtol=config.rtol, atol=0.0, maxiter=config.max_iter, M=M)
    if config.method == "GMRES":
        x, info = spla.gmres(A, rhs, restart=min(200, A.shape[0]), **kwargs)
    else:
        x, info = spla.bicgstab(A, rhs, **kwargs)
    res = float(np.linalg.norm(rhs - A @ x))
    if info != 0 or res > config.rtol * bnorm * (1 + 1e-8):
        what = "breakdown" if info < 0 else "no convergence"
        raise SolverError(f"{config.method} {what}: relative residual {res / bnorm:.3e}", res)
    return x


def write_matrix_market(path, A: sp.spmatrix) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))

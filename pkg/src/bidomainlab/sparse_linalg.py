"""Deterministic linear-algebra kernels.

Sparse matrices are scipy CSR matrices (the indptr/indices/data triplet).
The conjugate-gradient solver and the inverse-power generalized eigensolver
are written out here so every run is bitwise reproducible and failures map
onto a fixed error taxonomy:

* NonConvergenceError  - iteration cap hit; carries the last residual
* NumericBreakdownError - NaN/inf or an indefinite operator detected
* SingularMatrixError  - the dense LU oracle met a singular matrix

The dense solver is the small-system oracle used to cross-check CG.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (ConfigurationError, NonConvergenceError,
                     NumericBreakdownError, SingularMatrixError)

DENSE_ORACLE_MAX_SIZE = 500


def spmv(matrix, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product in CSR semantics."""
    matrix = sp.csr_matrix(matrix)
    x = np.asarray(x, dtype=float)
    if x.shape != (matrix.shape[1],):
        raise ConfigurationError(
            f"spmv shape mismatch: matrix {matrix.shape}, vector {x.shape}")
    return matrix @ x


def symmetry_defect(matrix) -> float:
    """Largest absolute entry of A - A^T, relative to the largest entry of A."""
    matrix = sp.csr_matrix(matrix)
    defect = abs(matrix - matrix.T)
    if defect.nnz == 0:
        return 0.0
    scale = max(1.0, abs(matrix).max())
    return float(defect.max() / scale)


def check_symmetric(matrix, tol: float = 1e-12) -> None:
    defect = symmetry_defect(matrix)
    if defect > tol:
        raise ConfigurationError(f"matrix is not symmetric: defect {defect:.3e}")


@dataclass
class LinearSystem:
    """One SPD solve request: matrix, right-hand side, tolerances."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    tol: float = 1e-10
    maxiter: int | None = None      # defaults to 10 * n


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    residual: float                 # final relative residual
    residual_history: np.ndarray


def cg_solve(system: LinearSystem, preconditioner: str = "jacobi") -> CgResult:
    """Preconditioned conjugate gradients with a fixed, deterministic schedule.

    Starts from zero, stops when ||r|| <= tol * ||b||.  A zero right-hand
    side returns exact zero without iterating.  Raises NumericBreakdownError
    when the operator is detected indefinite (p^T A p <= 0) or values go
    non-finite, NonConvergenceError at the iteration cap.

    The returned iterate is the minimal-residual smoothed sequence
    (Schoenauer-Weiss smoothing): alongside the plain CG iterate x_k a second
    iterate s_k = s_{k-1} + eta_k (x_k - s_{k-1}) is kept, with eta_k chosen
    to minimize the norm of the corresponding residual.  Plain CG residual
    norms can oscillate; the smoothed norms are non-increasing by
    construction, which makes the recorded residual history a reliable
    convergence monitor.  Convergence is judged on the smoothed residual,
    which is never larger than the plain CG one.
    """
    a = sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"cg needs a square matrix, got {a.shape}")
    if b.shape != (n,):
        raise ConfigurationError(f"rhs shape {b.shape} does not match matrix {a.shape}")
    if preconditioner not in ("jacobi", "none"):
        raise ConfigurationError(f"unknown preconditioner {preconditioner!r}")
    if not np.all(np.isfinite(b)):
        raise NumericBreakdownError("right-hand side contains non-finite values")

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CgResult(x=np.zeros(n), iterations=0, residual=0.0,
                        residual_history=np.array([0.0]))

    if preconditioner == "jacobi":
        diag = a.diagonal()
        if np.any(diag <= 0.0):
            raise NumericBreakdownError(
                "jacobi preconditioner needs a strictly positive diagonal")
        inv_diag = 1.0 / diag
    else:
        inv_diag = None

    maxiter = system.maxiter if system.maxiter is not None else 10 * n
    x = np.zeros(n)
    r = b.copy()
    z = r * inv_diag if inv_diag is not None else r.copy()
    p = z.copy()
    rho = float(r @ z)
    smooth_x = np.zeros(n)
    smooth_r = b.copy()
    history = []
    residual = 1.0
    for iteration in range(1, maxiter + 1):
        q = a @ p
        pq = float(p @ q)
        if not np.isfinite(pq):
            raise NumericBreakdownError("non-finite curvature in cg")
        if pq <= 0.0:
            raise NumericBreakdownError(
                f"operator not positive definite: p^T A p = {pq:.3e}")
        step = rho / pq
        x += step * p
        r -= step * q
        diff = r - smooth_r
        denom = float(diff @ diff)
        eta = 0.0 if denom == 0.0 else -float(smooth_r @ diff) / denom
        smooth_r += eta * diff
        smooth_x += eta * (x - smooth_x)
        residual = float(np.linalg.norm(smooth_r)) / b_norm
        history.append(residual)
        if not np.isfinite(residual):
            raise NumericBreakdownError("non-finite residual in cg")
        if residual <= system.tol:
            return CgResult(x=smooth_x, iterations=iteration, residual=residual,
                            residual_history=np.array(history))
        z = r * inv_diag if inv_diag is not None else r
        rho_next = float(r @ z)
        p = z + (rho_next / rho) * p
        rho = rho_next
    raise NonConvergenceError(
        f"cg did not reach tol {system.tol:.1e} in {maxiter} iterations "
        f"(residual {residual:.3e})",
        residual=residual, iterations=maxiter)


def dense_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Small-system LU oracle (n <= 500).

    Accepts dense arrays or sparse matrices; raises SingularMatrixError for
    matrices singular to working precision.
    """
    if sp.issparse(matrix):
        matrix = matrix.toarray()
    a = np.asarray(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"dense_solve needs a square matrix, got {a.shape}")
    n = a.shape[0]
    if n > DENSE_ORACLE_MAX_SIZE:
        raise ConfigurationError(
            f"dense oracle is sized for tests: n = {n} > {DENSE_ORACLE_MAX_SIZE}")
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"dense solve failed: {exc}") from exc
    scale = np.linalg.norm(a, ord="fro") * np.linalg.norm(x) + np.linalg.norm(b)
    residual = np.linalg.norm(a @ x - b)
    if not np.all(np.isfinite(x)) or residual > 1e-8 * max(scale, 1e-300):
        raise SingularMatrixError(
            f"matrix singular to working precision (residual {residual:.3e})")
    return x


def smallest_generalized_eigenvalue(a, b, tol: float = 1e-10,
                                    maxiter: int = 500) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of A x = lambda B x for SPD A and B.

    Inverse power iteration on A with CG inner solves; the start vector is a
    fixed seeded draw, so results are deterministic.  Returns the eigenvalue
    and the B-normalized eigenvector.
    """
    a = sp.csr_matrix(a)
    b = sp.csr_matrix(b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"pencil shapes do not match: {a.shape} vs {b.shape}")
    n = a.shape[0]
    inner_tol = max(tol * 1e-3, 1e-14)
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.sqrt(float(x @ (b @ x)))
    lam = float(x @ (a @ x))
    for _ in range(maxiter):
        y = cg_solve(LinearSystem(matrix=a, rhs=b @ x, tol=inner_tol)).x
        norm_b = np.sqrt(float(y @ (b @ y)))
        if norm_b <= 0.0 or not np.isfinite(norm_b):
            raise NumericBreakdownError("inverse power iterate degenerated")
        y /= norm_b
        lam_next = float(y @ (a @ y))
        if abs(lam_next - lam) <= tol * max(abs(lam_next), 1e-300):
            return lam_next, y
        x = y
        lam = lam_next
    raise NonConvergenceError(
        f"inverse power iteration did not settle in {maxiter} steps",
        residual=abs(lam_next - lam), iterations=maxiter)

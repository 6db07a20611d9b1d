"""Sparse kernels against dense oracles."""

import numpy as np
import pytest
import scipy.sparse as sp

from bidomainlab.errors import (ConfigurationError, NonConvergenceError,
                                NumericBreakdownError, SingularMatrixError)
from bidomainlab.sparse_linalg import (CgResult, LinearSystem, cg_solve,
                                       check_symmetric, dense_solve,
                                       smallest_generalized_eigenvalue, spmv,
                                       symmetry_defect)


def laplacian_1d(n, h=None):
    """Dirichlet Laplacian on n interior nodes of (0, 1)."""
    h = h if h is not None else 1.0 / (n + 1)
    main = np.full(n, 2.0 / h)
    off = np.full(n - 1, -1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


def mass_1d(n, h=None):
    h = h if h is not None else 1.0 / (n + 1)
    main = np.full(n, 4.0 * h / 6.0)
    off = np.full(n - 1, h / 6.0)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


# --- spmv -------------------------------------------------------------------

def test_spmv_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m = rng.integers(2, 40, size=2)
        a = sp.random(n, m, density=0.3, random_state=np.random.default_rng(1),
                      format="csr")
        x = rng.normal(size=m)
        dense = a.toarray() @ x
        np.testing.assert_allclose(spmv(a, x), dense, atol=1e-13)


def test_spmv_handles_zero_rows():
    a = sp.csr_matrix(np.array([[0.0, 0.0], [1.0, 2.0]]))
    np.testing.assert_array_equal(spmv(a, np.array([3.0, 4.0])), [0.0, 11.0])


def test_spmv_rejects_shape_mismatch():
    a = sp.identity(3, format="csr")
    with pytest.raises(ConfigurationError):
        spmv(a, np.ones(4))


def test_symmetry_helpers():
    a = laplacian_1d(10)
    assert symmetry_defect(a) == 0.0
    check_symmetric(a)
    b = a.tolil()
    b[0, 1] += 1e-3
    with pytest.raises(ConfigurationError):
        check_symmetric(b.tocsr())


# --- cg ----------------------------------------------------------------------

def test_cg_identity_converges_in_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    result = cg_solve(LinearSystem(sp.identity(3, format="csr"), b, tol=1e-12))
    assert result.iterations == 1
    np.testing.assert_array_equal(result.x, b)


def test_cg_zero_rhs_returns_zero_bitwise():
    result = cg_solve(LinearSystem(laplacian_1d(20), np.zeros(20)))
    assert result.iterations == 0
    assert np.array_equal(result.x, np.zeros(20))


@pytest.mark.parametrize("preconditioner", ["jacobi", "none"])
def test_cg_matches_dense_oracle(preconditioner):
    a = laplacian_1d(100)
    rng = np.random.default_rng(2)
    b = rng.normal(size=100)
    tol = 1e-11
    result = cg_solve(LinearSystem(a, b, tol=tol), preconditioner=preconditioner)
    oracle = dense_solve(a.toarray(), b)
    scale = np.linalg.norm(oracle)
    assert np.linalg.norm(result.x - oracle) <= 10 * tol * scale * 100


def test_cg_residual_history_non_increasing():
    a = laplacian_1d(60)
    b = np.sin(np.linspace(0.1, 3.0, 60))
    result = cg_solve(LinearSystem(a, b, tol=1e-12))
    history = result.residual_history
    assert np.all(np.diff(history) <= 1e-12)


def test_cg_nonconvergence_carries_residual():
    a = laplacian_1d(50)
    b = np.ones(50)
    with pytest.raises(NonConvergenceError) as err:
        cg_solve(LinearSystem(a, b, tol=1e-14, maxiter=2))
    assert err.value.iterations == 2
    assert err.value.residual is not None and err.value.residual > 0.0


def test_cg_indefinite_matrix_breaks_down():
    a = sp.diags([1.0, -1.0]).tocsr()
    with pytest.raises(NumericBreakdownError):
        cg_solve(LinearSystem(a, np.array([0.0, 1.0])), preconditioner="none")


def test_cg_nan_rhs_breaks_down():
    a = laplacian_1d(5)
    with pytest.raises(NumericBreakdownError):
        cg_solve(LinearSystem(a, np.array([1.0, np.nan, 0.0, 0.0, 0.0])))


def test_cg_deterministic():
    a = laplacian_1d(80)
    b = np.cos(np.linspace(0.0, 5.0, 80))
    r1 = cg_solve(LinearSystem(a, b, tol=1e-11))
    r2 = cg_solve(LinearSystem(a, b, tol=1e-11))
    assert np.array_equal(r1.x, r2.x)
    assert r1.iterations == r2.iterations


# --- dense oracle ------------------------------------------------------------

def test_dense_solve_hilbert():
    n = 4
    hilbert = np.array([[1.0 / (i + j + 1) for j in range(n)] for i in range(n)])
    x_true = np.array([1.0, 2.0, 3.0, 4.0])
    x = dense_solve(hilbert, hilbert @ x_true)
    np.testing.assert_allclose(x, x_true, atol=1e-8)


def test_dense_solve_rejects_singular():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError):
        dense_solve(a, np.array([1.0, 1.0]))


def test_dense_solve_rejects_oversize():
    n = 501
    with pytest.raises(ConfigurationError):
        dense_solve(np.eye(n), np.zeros(n))


# --- generalized eigenvalue ---------------------------------------------------

def test_eigen_identity_pencil():
    lam, vec = smallest_generalized_eigenvalue(sp.identity(5, format="csr"),
                                               sp.identity(5, format="csr"))
    assert lam == pytest.approx(1.0, abs=1e-12)
    assert vec.shape == (5,)


def test_eigen_diagonal_pencil():
    a = sp.diags([2.0, 5.0]).tocsr()
    lam, vec = smallest_generalized_eigenvalue(a, sp.identity(2, format="csr"),
                                               tol=1e-12)
    assert lam == pytest.approx(2.0, abs=1e-10)
    # eigenvector concentrates on the first coordinate
    assert abs(vec[0]) > 100 * abs(vec[1])


def test_eigen_dirichlet_laplacian_recovers_pi_squared():
    n = 64
    h = 1.0 / n
    a = laplacian_1d(n - 1, h=h)
    m = mass_1d(n - 1, h=h)
    lam, _ = smallest_generalized_eigenvalue(a, m, tol=1e-10)
    assert abs(lam - np.pi ** 2) <= 0.05 * np.pi ** 2


def test_eigen_deterministic():
    a = laplacian_1d(30)
    m = mass_1d(30)
    lam1, v1 = smallest_generalized_eigenvalue(a, m)
    lam2, v2 = smallest_generalized_eigenvalue(a, m)
    assert lam1 == lam2
    assert np.array_equal(v1, v2)


def test_eigen_shape_mismatch():
    with pytest.raises(ConfigurationError):
        smallest_generalized_eigenvalue(sp.identity(3, format="csr"),
                                        sp.identity(4, format="csr"))

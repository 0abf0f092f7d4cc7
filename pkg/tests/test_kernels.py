import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from skeleton_ddm.kernels import (
    ConvergenceError, IndefiniteError, SingularMatrixError, finalize, gmres_solve, lu_factor,
    lu_solve, pcg_solve,
)


def random_sparse(n, density, seed, complex_=True):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    if complex_:
        A = A + 1j * sp.random(n, n, density=density, random_state=rng, format="csr")
    return A + sp.identity(n) * (n * 0.5)


def test_finalize_canonical():
    A = sp.coo_matrix(([1.0, 2.0, 0.0, -1.0], ([0, 0, 1, 1], [1, 1, 0, 1])), shape=(2, 2))
    F = finalize(A)
    assert F.nnz == 2 and F.has_sorted_indices
    assert F.toarray().tolist() == [[0, 3], [0, -1]]


def test_lu_identity():
    b = np.arange(5.0) + 1j
    assert np.array_equal(lu_solve(lu_factor(sp.identity(5)), b), b)


def test_lu_complex_diagonal():
    F = lu_factor(sp.diags([2.0, 1j]))
    assert np.allclose(F.solve(np.array([2.0, 1j])), [1.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_lu_random_residual(seed):
    A = random_sparse(50, 0.1, seed)
    b = np.random.default_rng(seed).standard_normal(50) + 0j
    x = lu_factor(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_lu_real_matrix_complex_rhs():
    A = random_sparse(30, 0.2, 5, complex_=False)
    b = np.random.default_rng(1).standard_normal(30) * (1 + 2j)
    x = lu_factor(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_lu_singular():
    with pytest.raises(SingularMatrixError):
        lu_factor(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]])))
    with pytest.raises(SingularMatrixError):
        lu_factor(sp.csr_matrix((3, 3)))
    with pytest.raises(ValueError):
        lu_factor(sp.csr_matrix((2, 3)))


def test_lu_empty():
    assert lu_factor(sp.csr_matrix((0, 0))).solve(np.zeros(0)).shape == (0,)


def test_pcg_identity_one_iteration():
    b = np.random.default_rng(0).standard_normal(10)
    x, it = pcg_solve(lambda v: v, lambda v: v, b)
    assert it == 1 and np.allclose(x, b)


def test_pcg_exact_preconditioner_one_iteration():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((20, 20))
    A = G @ G.T + 20 * np.eye(20)
    Ainv = np.linalg.inv(A)
    x, it = pcg_solve(lambda v: A @ v, lambda v: Ainv @ v, rng.standard_normal(20))
    assert it == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(5, 50))
def test_pcg_random_spd(seed, n):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    A = G @ G.T + np.eye(n)
    b = rng.standard_normal(n)
    x, it = pcg_solve(lambda v: A @ v, lambda v: v, b, tol=1e-12, maxit=2 * n + 50)
    assert it <= 2 * n + 50
    assert np.allclose(x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-8 * np.abs(x).max())


def test_pcg_within_n_iterations():
    rng = np.random.default_rng(11)
    n = 40
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = Qm @ np.diag(np.linspace(1, 10, n)) @ Qm.T
    _, it = pcg_solve(lambda v: A @ v, lambda v: v, rng.standard_normal(n), tol=1e-12)
    assert it <= 2 * n


def test_pcg_zero_rhs():
    x, it = pcg_solve(lambda v: v, lambda v: v, np.zeros(4))
    assert it == 0 and not x.any()


def test_pcg_indefinite():
    A = np.diag([1.0, -1.0])
    with pytest.raises(IndefiniteError, match="curvature"):
        pcg_solve(lambda v: A @ v, lambda v: v, np.array([0.0, 1.0]))


def test_pcg_cap_carries_best_iterate():
    n = 60
    A = np.diag(np.logspace(0, 6, n))
    with pytest.raises(ConvergenceError) as info:
        pcg_solve(lambda v: A @ v, lambda v: v, np.ones(n), tol=1e-14, maxit=3)
    assert info.value.x is not None and info.value.iterations == 3


def test_gmres_identity():
    b = np.arange(1.0, 6.0)
    res = gmres_solve(lambda v: v, b)
    assert res.iterations == 1 and res.converged and np.allclose(res.x, b)


def test_gmres_scaled_identity():
    b = np.random.default_rng(2).standard_normal(7) + 1j
    res = gmres_solve(lambda v: 2 * v, b)
    assert res.iterations == 1 and np.allclose(res.x, b / 2)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([5, 20, 80]))
def test_gmres_random_matches_dense(seed, restart):
    rng = np.random.default_rng(seed)
    n = 80
    A = np.eye(n) * 4 + rng.standard_normal((n, n)) / np.sqrt(n) + 1j * rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    res = gmres_solve(lambda v: A @ v, b, restart=restart, tol=1e-10, maxit=2000)
    assert res.converged
    x = np.linalg.solve(A, b)
    assert np.linalg.norm(res.x - x) <= 1e-8 * np.linalg.norm(x)
    assert len(res.residuals) == res.iterations + 1
    # Krylov optimality: non-increasing inside each restart cycle
    h = np.array(res.residuals)
    for start in range(0, res.iterations, restart):
        cyc = h[start:start + restart + 1]
        assert np.all(np.diff(cyc) <= 1e-14)


def test_gmres_callback_stops():
    seen = []

    def cb(it, x, relres):
        seen.append(it)
        return it == 3

    A = np.diag(np.arange(1.0, 30.0))
    res = gmres_solve(lambda v: A @ v, np.ones(29), tol=1e-14, callback=cb)
    assert seen == [1, 2, 3] and res.iterations == 3 and res.converged


def test_gmres_stagnation_reported():
    # cyclic shift: restarted GMRES(1) makes no progress
    n = 6
    P = np.roll(np.eye(n), 1, axis=0)
    b = np.zeros(n)
    b[0] = 1.0
    res = gmres_solve(lambda v: P @ v, b, restart=1, tol=1e-10, maxit=50)
    assert res.stagnated and not res.converged


def test_gmres_zero_rhs_and_bad_restart():
    res = gmres_solve(lambda v: v, np.zeros(3))
    assert res.converged and res.iterations == 0
    with pytest.raises(ValueError):
        gmres_solve(lambda v: v, np.ones(3), restart=0)

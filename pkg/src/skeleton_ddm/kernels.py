"""Sparse storage helpers, sparse LU, preconditioned CG and restarted GMRES.

All iterative kernels take operator callbacks rather than matrices so that the
matrix-free Gram and Schur-complement paths can use them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

Operator = Callable[[np.ndarray], np.ndarray]


class KernelError(RuntimeError):
    pass


class SingularMatrixError(KernelError):
    pass


class ConvergenceError(KernelError):
    def __init__(self, message, x=None, residual=None, iterations=None):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class IndefiniteError(KernelError):
    pass


def finalize(A) -> sp.csr_matrix:
    """Return ``A`` as CSR with summed duplicates, sorted indices, no stored zeros."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


class LUFactor:
    """Sparse LU with partial pivoting and a COLAMD column preordering.

    Real matrices accept complex right-hand sides (real and imaginary parts
    are solved together as two columns). Back-solves allocate their own
    workspace, so one factor may be shared read-only between threads.
    """

    def __init__(self, A, pivot_tol: float = 1e-14):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self.is_complex = np.iscomplexobj(A.data)
        self._empty = A.shape[0] == 0
        if self._empty:
            return
        scale = np.abs(A.data).max() if A.nnz else 0.0
        if scale == 0.0:
            raise SingularMatrixError("zero matrix")
        try:
            self._lu = spla.splu(A, permc_spec="COLAMD", diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        udiag = np.abs(self._lu.U.diagonal())
        if udiag.min() < pivot_tol * scale:
            cond = udiag.max() / max(udiag.min(), np.finfo(float).tiny)
            raise SingularMatrixError(
                f"numerically singular pivot {udiag.min():.3e} "
                f"(max|A| = {scale:.3e}, pivot ratio estimate {cond:.3e})"
            )

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"rhs has length {b.shape[0]}, expected {self.shape[0]}")
        if self._empty:
            return np.zeros(b.shape, dtype=np.result_type(b.dtype, float))
        if self.is_complex:
            return self._lu.solve(b.astype(complex, copy=False))
        if np.iscomplexobj(b):
            if b.ndim == 1:
                xs = self._lu.solve(np.column_stack([b.real, b.imag]))
                return xs[:, 0] + 1j * xs[:, 1]
            return self._lu.solve(np.ascontiguousarray(b.real)) + 1j * self._lu.solve(
                np.ascontiguousarray(b.imag)
            )
        return self._lu.solve(np.asarray(b, dtype=float))


def lu_factor(A) -> LUFactor:
    return LUFactor(A)


def lu_solve(F: LUFactor, b: np.ndarray) -> np.ndarray:
    return F.solve(b)


def pcg_solve(
    apply_A: Operator,
    apply_M: Operator,
    b: np.ndarray,
    tol: float = 1e-12,
    maxit: int = 500,
    x0: Optional[np.ndarray] = None,
):
    """Preconditioned conjugate gradient for Hermitian positive definite systems.

    Convergence is declared when the preconditioned residual norm
    ``sqrt(r^H M r)`` drops below ``tol`` times its value for ``x = 0``
    (that is ``sqrt(b^H M b)``).

    Returns ``(x, iterations)``. Raises :class:`ConvergenceError` carrying the
    best iterate when ``maxit`` is exhausted and :class:`IndefiniteError` when a
    non-positive curvature ``p^H A p`` or ``r^H M r`` shows up.
    """
    b = np.asarray(b)
    dtype = np.result_type(b.dtype, float)
    n = b.shape[0]
    if x0 is None:
        x = np.zeros(n, dtype=dtype)
        r = b.astype(dtype, copy=True)
    else:
        x = np.array(x0, dtype=np.result_type(dtype, np.asarray(x0).dtype))
        r = b - apply_A(x)
    z = apply_M(b)
    ref = np.sqrt(abs(np.vdot(b, z)))
    if ref == 0.0:
        return np.zeros(n, dtype=dtype), 0
    if x0 is not None:
        z = apply_M(r)
    rz = np.vdot(r, z)
    if rz.real < 0:
        raise IndefiniteError(f"preconditioner not positive: r^H M r = {rz}")
    if np.sqrt(abs(rz)) <= tol * ref:
        return x, 0
    p = z.copy()
    best = (np.sqrt(abs(rz)), x.copy())
    for it in range(1, maxit + 1):
        Ap = apply_A(p)
        curv = np.vdot(p, Ap)
        if curv.real <= 0:
            raise IndefiniteError(f"non-positive curvature p^H A p = {curv} at iteration {it}")
        alpha = rz / curv
        x = x + alpha * p
        r = r - alpha * Ap
        z = apply_M(r)
        rz_new = np.vdot(r, z)
        if rz_new.real < -1e-14 * abs(rz):
            raise IndefiniteError(f"preconditioner not positive: r^H M r = {rz_new} at iteration {it}")
        res = np.sqrt(abs(rz_new))
        if res < best[0]:
            best = (res, x.copy())
        if res <= tol * ref:
            return x, it
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"PCG did not reach {tol:.1e} in {maxit} iterations (best {best[0] / ref:.3e})",
        x=best[1],
        residual=best[0] / ref,
        iterations=maxit,
    )


@dataclass
class GMRESResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)  # relative, one per iteration incl. 0
    stagnated: bool = False
    breakdown: bool = False


def gmres_solve(
    apply_A: Operator,
    b: np.ndarray,
    restart: int = 20,
    tol: float = 1e-8,
    maxit: int = 1000,
    callback: Optional[Callable[[int, np.ndarray, float], bool]] = None,
    reorth_tol: float = 1e-8,
) -> GMRESResult:
    """Restarted GMRES with modified Gram-Schmidt, initial guess zero.

    A second orthogonalization pass is run whenever the new Krylov vector
    lost more than ``reorth_tol`` of its norm relative to the largest
    projection coefficient. ``callback(it, x_it, relres)`` is invoked after
    every iteration with the current iterate; returning ``True`` stops the
    solve and marks it converged.
    """
    if restart < 1:
        raise ValueError("restart must be >= 1")
    b = np.asarray(b, dtype=complex)
    n = b.shape[0]
    x = np.zeros(n, dtype=complex)
    bnorm = np.linalg.norm(b)
    result = GMRESResult(x=x, iterations=0, converged=False, residuals=[1.0 if bnorm else 0.0])
    if bnorm == 0.0:
        result.converged = True
        return result
    total = 0
    r = b.copy()
    while total < maxit:
        beta = np.linalg.norm(r)
        cycle_start = beta
        m = restart
        V = np.zeros((n, m + 1), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        s = np.zeros(m + 1, dtype=complex)
        s[0] = beta
        V[:, 0] = r / beta
        k_used = 0
        lucky = False
        stop = False
        for k in range(m):
            w = apply_A(V[:, k])
            w_norm0 = np.linalg.norm(w)
            for i in range(k + 1):
                H[i, k] = np.vdot(V[:, i], w)
                w = w - H[i, k] * V[:, i]
            h_next = np.linalg.norm(w)
            if h_next < reorth_tol * max(w_norm0, np.abs(H[: k + 1, k]).max(initial=0.0)):
                for i in range(k + 1):
                    c = np.vdot(V[:, i], w)
                    H[i, k] += c
                    w = w - c * V[:, i]
                h_next = np.linalg.norm(w)
            H[k + 1, k] = h_next
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -np.conj(sn[i]) * H[i, k] + np.conj(cs[i]) * H[i + 1, k]
                H[i, k] = t
            a, c = H[k, k], H[k + 1, k]
            denom = np.sqrt(abs(a) ** 2 + abs(c) ** 2)
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            elif a == 0:
                cs[k], sn[k] = 0.0, 1.0
            else:
                cs[k] = abs(a) / denom
                sn[k] = (a / abs(a)) * np.conj(c) / denom
            H[k, k] = cs[k] * a + sn[k] * c
            H[k + 1, k] = 0.0
            s[k + 1] = -np.conj(sn[k]) * s[k]
            s[k] = cs[k] * s[k]
            total += 1
            k_used = k + 1
            relres = abs(s[k + 1]) / bnorm
            result.residuals.append(relres)
            if callback is not None:
                xk = x + V[:, :k_used] @ _upper_solve(H[:k_used, :k_used], s[:k_used])
                if callback(total, xk, relres):
                    stop = True
            if h_next < 1e-16 * max(w_norm0, 1.0):
                lucky = True
            if stop or relres <= tol or lucky or total >= maxit:
                break
            V[:, k + 1] = w / h_next
        y = _upper_solve(H[:k_used, :k_used], s[:k_used])
        x = x + V[:, :k_used] @ y
        r = b - apply_A(x)
        true_relres = np.linalg.norm(r) / bnorm
        result.x = x
        result.iterations = total
        if stop or true_relres <= tol:
            result.converged = True
            return result
        if lucky:
            result.breakdown = True
            result.converged = true_relres <= tol
            return result
        if np.linalg.norm(r) > cycle_start * (1 - 1e-14):
            result.stagnated = True
            return result
    return result


def _upper_solve(R: np.ndarray, s: np.ndarray) -> np.ndarray:
    n = R.shape[0]
    y = np.zeros(n, dtype=complex)
    for i in range(n - 1, -1, -1):
        y[i] = (s[i] - R[i, i + 1 :] @ y[i + 1 :]) / R[i, i]
    return y

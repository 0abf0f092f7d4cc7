"""Local impedance solves and the block-diagonal scattering operator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import LocalSystem
from .kernels import LUFactor
from .partition import IndexMap, IndexMaps
from .traces import Mapper, Projector, SchurInductance, TraceLayout


class LocalSolver:
    """Factorized local problem ``(A_j - i B_j^T T_j B_j) u = f + B_j^T T_j p``.

    ``plain`` factors that matrix directly (explicit ``T_j``); ``augmented``
    factors the sparse saddle matrix
    ``[[A_j, 0, B_j^T], [0, -i C_j, -B'_j^T], [B_j, -B'_j, 0]]`` whose
    ``u``-block solution for right-hand side ``(f, 0, i p)`` is the same
    field, without ever forming the Schur-complement ``T_j``.
    """

    def __init__(self, kind, factor, n, B: IndexMap, T=None, n_aux=0):
        self.kind = kind
        self.factor = factor
        self.n = n
        self.B = B
        self.T = T
        self.n_aux = n_aux

    def solve(self, f=None, p=None):
        nb = self.B.codomain_size
        if self.kind == "plain":
            rhs = np.zeros(self.n, dtype=complex)
            if f is not None:
                rhs += f
            if p is not None and nb:
                rhs += self.B.apply_transpose(self.T @ p).astype(complex)
            return self.factor.solve(rhs)
        rhs = np.zeros(self.n + self.n_aux + nb, dtype=complex)
        if f is not None:
            rhs[: self.n] = f
        if p is not None:
            rhs[self.n + self.n_aux:] = 1j * p
        return self.factor.solve(rhs)[: self.n]


def factor_local(local: LocalSystem, B: IndexMap, inductance, j: int) -> LocalSolver:
    """Factor the local impedance problem of subdomain ``j`` (0-based)."""
    n = local.A.shape[0]
    nb = B.codomain_size
    if isinstance(inductance, SchurInductance) and nb:
        aux = inductance.aux[j]
        Bs = B.to_sparse()
        Bp = aux.Bp.to_sparse()
        M = sp.bmat(
            [[local.A, None, Bs.T], [None, -1j * aux.C, -Bp.T], [Bs, -Bp, None]],
            format="csc",
        )
        return LocalSolver("augmented", LUFactor(M), n, B, n_aux=aux.C.shape[0])
    if nb:
        T = inductance.matrix(j)
        Bs = B.to_sparse()
        K = local.A - 1j * (Bs.T @ T @ Bs)
    else:
        T = sp.csr_matrix((0, 0))
        K = local.A
    return LocalSolver("plain", LUFactor(K.tocsc()), n, B, T=T)


@dataclass
class SkeletonRHS:
    g: np.ndarray  # -2i Pi B (A - i B^T T B)^-1 f
    b: np.ndarray  # 2i B u0 - 2 Q v, the same vector assembled without Pi


class Scattering:
    """Scattering operator ``S = Id + 2i B (A - i B^T T B)^-1 B^T T`` and friends."""

    def __init__(self, locals_: list, maps: IndexMaps, inductance, layout: TraceLayout, mapper: Mapper = None):
        self.locals = locals_
        self.maps = maps
        self.inductance = inductance
        self.layout = layout
        self.mapper = mapper or Mapper(1)
        self.solvers = self.mapper(lambda j: factor_local(locals_[j], maps.B[j], inductance, j),
                                   range(len(locals_)))

    @property
    def J(self):
        return len(self.solvers)

    def local_fields(self, p=None, with_source=True):
        """Per-subdomain ``u_j = (A_j - i B_j^T T_j B_j)^-1 (B_j^T T_j p_j + f_j)``."""
        def one(j):
            f = self.locals[j].f if with_source else None
            pj = self.layout.block(p, j) if p is not None else None
            return self.solvers[j].solve(f, pj)
        return self.mapper(one, range(self.J))

    def traces(self, u):
        """``B u`` for a broken field given as a list of local vectors."""
        return self.layout.join([self.maps.B[j].apply(u[j]) for j in range(self.J)])

    def apply_S(self, p):
        """Return ``(S p, v)`` with ``v = (A - i B^T T B)^-1 B^T T p``."""
        p = np.asarray(p, dtype=complex)
        v = self.local_fields(p, with_source=False)
        return p + 2j * self.traces(v), v

    def dissipation(self, v):
        """``-Im(conj(v)^T A v)`` summed over subdomains."""
        return float(sum(-np.imag(np.vdot(vj, loc.A @ vj)) for vj, loc in zip(v, self.locals)))

    def rhs(self, projector: Projector) -> SkeletonRHS:
        u0 = self.local_fields(None, with_source=True)
        Bu0 = self.traces(u0)
        g = -2j * projector.communicate(Bu0)
        v = projector.solve_gram(projector.gram_rhs(2j * Bu0))
        b = 2j * Bu0 - 2 * projector.lift(v)
        return SkeletonRHS(g, b)

    def recover(self, p):
        """Broken volume field for skeleton unknown ``p``."""
        return self.local_fields(p, with_source=True)

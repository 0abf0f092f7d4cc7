"""Inductances, the T-orthogonal projector onto single traces, and the communication operator.

Multi-traces are stored as flat complex arrays of length ``n_sys``: the
block of subdomain ``j`` (ascending) holds values on ``Gamma_j`` ordered by
global edge id. Single traces are arrays over ``Gamma``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import kernels
from .assembly import AuxiliarySystem, assemble_auxiliary, assemble_despres, decouple_classes
from .kernels import LUFactor
from .partition import EdgeSets, IndexMaps, Skeleton


class TraceLayout:
    """Offsets of the per-subdomain blocks inside a flat multi-trace vector."""

    def __init__(self, sizes):
        self.sizes = [int(s) for s in sizes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)

    @property
    def J(self):
        return len(self.sizes)

    @property
    def n_sys(self):
        return int(self.offsets[-1])

    def block(self, x, j):
        """View of block ``j`` (0-based)."""
        return x[self.offsets[j]:self.offsets[j + 1]]

    def split(self, x):
        return [self.block(x, j) for j in range(self.J)]

    def join(self, blocks):
        if not blocks:
            return np.zeros(0, dtype=complex)
        return np.concatenate([np.asarray(b, dtype=complex) for b in blocks])

    def zeros(self):
        return np.zeros(self.n_sys, dtype=complex)


class Mapper:
    """Runs per-subdomain work serially or on a thread pool; results keep subdomain order."""

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def __call__(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))


# ---------------------------------------------------------------- inductances


class ExplicitInductance:
    """Block-diagonal inductance stored as per-subdomain matrices.

    Blocks may be sparse or dense; they are factorized once for ``apply_inv``.
    ``matched`` records that every block satisfies the class-wise block
    hypothesis, which makes the projection an explicit average.
    """

    explicit = True

    def __init__(self, blocks, kind: str, matched: bool = False):
        self.kind = kind
        self.blocks = blocks
        self.matched = matched
        self._inv = []
        for T in blocks:
            if T.shape[0] == 0:
                self._inv.append(None)
            elif sp.issparse(T) and _is_diagonal(T):
                self._inv.append(("diag", 1.0 / T.diagonal()))
            elif sp.issparse(T):
                self._inv.append(("lu", LUFactor(T)))
            else:
                self._inv.append(("chol", sla.cho_factor(np.asarray(T), lower=True)))

    @property
    def J(self):
        return len(self.blocks)

    def apply(self, j, x):
        return self.blocks[j] @ x

    def apply_inv(self, j, x):
        inv = self._inv[j]
        if inv is None:
            return np.zeros(0, dtype=complex)
        how, data = inv
        if how == "diag":
            return data * x
        if how == "lu":
            return data.solve(x)
        return sla.cho_solve(data, x)

    def matrix(self, j):
        """Block ``j`` as a sparse matrix (for assembling local operators)."""
        return sp.csr_matrix(self.blocks[j])

    def dense(self, j):
        T = self.blocks[j]
        return T.toarray() if sp.issparse(T) else np.asarray(T)


def _is_diagonal(T):
    T = sp.coo_matrix(T)
    return bool(np.all(T.row == T.col))


class SchurInductance:
    """Inductance defined implicitly as the Schur complement of an auxiliary SPD matrix.

    ``T x`` is the multiplier ``q`` of the saddle system
    ``[[C, -B'^T], [B', 0]] (v, q) = (0, x)``, and ``T^-1 x = B' C^-1 B'^T x``.
    Neither is ever formed densely.
    """

    explicit = False
    matched = False

    def __init__(self, aux: list, kind: str = "schur"):
        self.kind = kind
        self.aux = aux
        self._C = []
        self._Ct = []
        for a in aux:
            nb = a.Bp.codomain_size
            if nb == 0:
                self._C.append(None)
                self._Ct.append(None)
                continue
            Bp = a.Bp.to_sparse()
            self._C.append(LUFactor(a.C.tocsc()))
            Ct = sp.bmat([[a.C, -Bp.T], [Bp, None]], format="csc")
            self._Ct.append(LUFactor(Ct))

    @property
    def J(self):
        return len(self.aux)

    def saddle_matrix(self, j):
        a = self.aux[j]
        Bp = a.Bp.to_sparse()
        return sp.bmat([[a.C, -Bp.T], [Bp, None]], format="csr")

    def apply(self, j, x):
        if self._Ct[j] is None:
            return np.zeros(0, dtype=complex)
        a = self.aux[j]
        rhs = np.zeros(a.C.shape[0] + len(x), dtype=complex)
        rhs[a.C.shape[0]:] = x
        return self._Ct[j].solve(rhs)[a.C.shape[0]:]

    def apply_inv(self, j, x):
        if self._C[j] is None:
            return np.zeros(0, dtype=complex)
        a = self.aux[j]
        return a.Bp.apply(self._C[j].solve(a.Bp.apply_transpose(np.asarray(x, dtype=complex))))

    def dense(self, j):
        n = self.aux[j].Bp.codomain_size
        return np.column_stack([self.apply(j, e).real for e in np.eye(n)]) if n else np.zeros((0, 0))


def scalar_inductance(skeleton: Skeleton, a: float = 1.0) -> ExplicitInductance:
    if a <= 0:
        raise ValueError("scalar inductance must be positive")
    blocks = [sp.identity(len(g), format="csr") * a for g in skeleton.gamma_j]
    return ExplicitInductance(blocks, f"scalar({a:g})", matched=True)


def despres_inductance(mesh, skeleton, medium, edge_sets=None, interface_decouple=False) -> ExplicitInductance:
    blocks = [
        assemble_despres(j, mesh, skeleton, medium, edge_sets, interface_decouple)
        for j in range(1, len(skeleton.gamma_j) + 1)
    ]
    # diagonal blocks built from a per-edge quantity agree across subdomains
    matched = all(_is_diagonal(T) for T in blocks)
    return ExplicitInductance(blocks, "despres", matched=matched)


def schur_inductance(mesh, partition, skeleton, medium, omega_prime="full", ed=None) -> SchurInductance:
    aux = [
        assemble_auxiliary(j, mesh, partition, skeleton, medium, omega_prime, ed=ed)
        for j in range(1, partition.J + 1)
    ]
    return SchurInductance(aux, "schur")


def schur_interface_inductance(mesh, partition, skeleton, medium, edge_sets: EdgeSets,
                               omega_prime="full", ed=None) -> ExplicitInductance:
    """Subdomain Schur complement with couplings between distinct interfaces removed.

    The per-subdomain Schur complements are formed densely (they live on
    ``Gamma_j`` only) and their cross-class blocks are zeroed.
    """
    full = schur_inductance(mesh, partition, skeleton, medium, omega_prime, ed)
    blocks = []
    for j, gj in enumerate(skeleton.gamma_j):
        T = full.dense(j)
        T = 0.5 * (T + T.T)
        blocks.append(decouple_classes(T, gj, edge_sets))
    return ExplicitInductance(blocks, "schur-interface")


# ------------------------------------------------------------------ projector


@dataclass
class PCGStats:
    last: int = 0
    max: int = 0
    calls: int = 0

    def record(self, it):
        self.last = it
        self.max = max(self.max, it)
        self.calls += 1


class Projector:
    """T-orthogonal projector ``P = Q (Q^T T Q)^-1 Q^T T`` and ``Pi = 2P - Id``.

    The Gram system is solved by CG with the Neumann-Neumann preconditioner
    ``D Q^T T^-1 Q D``, ``D = diag(1/d_e)``. For explicit inductances the
    Gram matrix is assembled once; otherwise it is applied matrix-free.
    """

    def __init__(self, maps: IndexMaps, skeleton: Skeleton, edge_sets: EdgeSets, inductance,
                 layout: TraceLayout = None, tol: float = 1e-12, maxit: int = 500, mapper: Mapper = None):
        self.maps = maps
        self.skeleton = skeleton
        self.inductance = inductance
        self.layout = layout or TraceLayout([len(g) for g in skeleton.gamma_j])
        self.tol = tol
        self.maxit = maxit
        self.mapper = mapper or Mapper(1)
        self.n_gamma = len(skeleton.gamma)
        self.mult = edge_sets.multiplicity[skeleton.gamma].astype(float)
        self.D = 1.0 / self.mult
        self.stats = PCGStats()
        self._gram = None
        if inductance.explicit:
            G = sp.csr_matrix((self.n_gamma, self.n_gamma))
            for j, Qj in enumerate(maps.Q):
                Qs = Qj.to_sparse()
                G = G + Qs.T @ inductance.matrix(j) @ Qs
            self._gram = kernels.finalize(G)

    @property
    def J(self):
        return self.layout.J

    def _sum_over_subdomains(self, local):
        # fixed j-ascending accumulation keeps results bit-reproducible
        parts = self.mapper(local, range(self.J))
        out = np.zeros(self.n_gamma, dtype=complex)
        for j, part in enumerate(parts):
            self.maps.Q[j].apply_transpose(part, out)
        return out

    def apply_gram(self, v):
        v = np.asarray(v)
        if v.shape != (self.n_gamma,):
            raise ValueError(f"expected a single trace of length {self.n_gamma}, got {v.shape}")
        if self._gram is not None:
            return self._gram @ v
        return self._sum_over_subdomains(lambda j: self.inductance.apply(j, self.maps.Q[j].apply(v)))

    def nn_precondition(self, r):
        r = self.D * np.asarray(r)
        return self.D * self._sum_over_subdomains(
            lambda j: self.inductance.apply_inv(j, self.maps.Q[j].apply(r))
        )

    def gram_rhs(self, u):
        """``Q^T T u`` for a multi-trace ``u``."""
        return self._sum_over_subdomains(lambda j: self.inductance.apply(j, self.layout.block(u, j)))

    def solve_gram(self, g):
        """Solve ``Q^T T Q v = g`` by Neumann-Neumann PCG; records the iteration count."""
        if self.n_gamma == 0:
            self.stats.record(0)
            return np.zeros(0, dtype=complex)
        v, it = kernels.pcg_solve(self.apply_gram, self.nn_precondition, g, self.tol, self.maxit)
        self.stats.record(it)
        return v

    def lift(self, v):
        """``Q v`` as a flat multi-trace."""
        return self.layout.join([Qj.apply(v) for Qj in self.maps.Q])

    def restrict_sum(self, u):
        """``Q^T u``."""
        out = np.zeros(self.n_gamma, dtype=complex)
        for j, Qj in enumerate(self.maps.Q):
            Qj.apply_transpose(self.layout.block(u, j), out)
        return out

    def project(self, u):
        u = np.asarray(u, dtype=complex)
        if u.shape != (self.layout.n_sys,):
            raise ValueError(f"expected a multi-trace of length {self.layout.n_sys}, got {u.shape}")
        return self.lift(self.solve_gram(self.gram_rhs(u)))

    def communicate(self, u):
        return 2 * self.project(u) - np.asarray(u, dtype=complex)

    def project_explicit_diagonal(self, u):
        """Average of the copies of every edge; valid only for matched block-diagonal inductances."""
        if not getattr(self.inductance, "matched", False):
            raise ValueError(f"inductance {self.inductance.kind!r} does not satisfy the block hypothesis")
        return self.lift(self.D * self.restrict_sum(np.asarray(u, dtype=complex)))

    # T scalar product on multi-traces
    def apply_T(self, x):
        return self.layout.join(self.mapper(lambda j: self.inductance.apply(j, self.layout.block(x, j)),
                                            range(self.J)))

    def inner_T(self, x, y):
        """``(x, y)_T = x^T T conj(y)``."""
        return complex(np.asarray(x) @ np.conj(self.apply_T(y)))

    def norm_T(self, x):
        return float(np.sqrt(max(self.inner_T(x, x).real, 0.0)))


def build_inductance(kind: str, mesh, partition, edge_sets, skeleton, medium,
                     interface_decouple=False, omega_prime="full", ed=None):
    """Inductance by name: ``despres``, ``schur``, ``schur-interface`` or ``scalar:a``."""
    if kind == "despres":
        return despres_inductance(mesh, skeleton, medium, edge_sets, interface_decouple)
    if kind in ("schur", "schur-subdomain"):
        return schur_inductance(mesh, partition, skeleton, medium, omega_prime, ed)
    if kind == "schur-interface":
        return schur_interface_inductance(mesh, partition, skeleton, medium, edge_sets, omega_prime, ed)
    if kind.startswith("scalar"):
        _, _, a = kind.partition(":")
        return scalar_inductance(skeleton, float(a) if a else 1.0)
    raise ValueError(f"unknown inductance {kind!r}")

"""Outer iterations on the skeleton equation ``(Id + Pi S) p = g``."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import kernels
from .assembly import (
    Medium, SourceSpec, assemble_global, assemble_local, element_data, energy_gram,
)
from .mesh import Mesh
from .partition import (
    Partition, build_edge_sets, build_index_maps, build_thick_skeleton,
)
from .scattering import Scattering
from .traces import Mapper, Projector, TraceLayout, build_inductance


@dataclass
class SolverConfig:
    method: str = "gmres"  # or "richardson"
    damping: float = 0.5
    restart: int = 20
    tol: float = 1e-8
    max_iters: int = 1000
    criterion: str = "residual"  # or "error" (needs reference)
    reference: bool = True

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if self.method not in ("gmres", "richardson"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.criterion not in ("residual", "error"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.criterion == "error" and not self.reference:
            raise ValueError("error criterion needs the reference solve")


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    residual_history: list = field(default_factory=list)
    error_history: list = field(default_factory=list)
    pcg_history: list = field(default_factory=list)
    pcg_iters_max: int = 0
    wall_time: float = 0.0
    final_error: Optional[float] = None
    alpha_estimate: Optional[float] = None
    note: str = ""


class DDMProblem:
    """Everything needed to run the skeleton solvers on one configuration.

    Building the problem assembles local systems, the inductance, the
    projector and the local factorizations; the undecomposed matrix and its
    direct solution are kept as the reference. ``inductance`` is a kind name
    or a prebuilt inductance object.
    """

    def __init__(self, mesh: Mesh, partition: Partition, medium: Medium, source: SourceSpec,
                 skeleton_policy: str = "thin", inductance="despres",
                 interface_decouple: bool = False, omega_prime="full",
                 pcg_tol: float = 1e-12, pcg_maxit: int = 500, threads: int = 1,
                 reference: bool = True):
        self.mesh = mesh
        self.partition = partition
        self.medium = medium
        self.source = source
        self.inductance_kind = inductance if isinstance(inductance, str) else inductance.kind
        self.mapper = Mapper(threads)
        self.ed = element_data(mesh)
        self.edge_sets = build_edge_sets(mesh, partition)
        self.skeleton = build_thick_skeleton(self.edge_sets, mesh, skeleton_policy)
        self.maps = build_index_maps(self.edge_sets, self.skeleton, mesh.n_edges)
        self.layout = TraceLayout([len(g) for g in self.skeleton.gamma_j])
        self.locals = self.mapper(
            lambda j: assemble_local(j + 1, mesh, partition, medium, source, self.ed, self.edge_sets),
            range(partition.J),
        )
        if isinstance(inductance, str):
            inductance = build_inductance(
                inductance, mesh, partition, self.edge_sets, self.skeleton, medium,
                interface_decouple, omega_prime, self.ed,
            )
        self.inductance = inductance
        self.projector = Projector(self.maps, self.skeleton, self.edge_sets, self.inductance,
                                   self.layout, pcg_tol, pcg_maxit, self.mapper)
        self.scattering = Scattering(self.locals, self.maps, self.inductance, self.layout, self.mapper)
        self.gram = energy_gram(mesh, medium.kappa, ed=self.ed)
        self.local_grams = [
            energy_gram(mesh, medium.kappa, partition.triangles_of(j + 1), self.edge_sets.E[j], self.ed)
            for j in range(partition.J)
        ]
        self.u_ref = None
        if reference:
            A, f = assemble_global(mesh, medium, source, self.ed)
            self.A_global, self.f_global = A, f
            self.u_ref = kernels.lu_factor(A.tocsc()).solve(f)
        self._rhs = None

    @property
    def J(self):
        return self.partition.J

    @property
    def n_sys(self):
        return self.layout.n_sys

    def rhs(self):
        if self._rhs is None:
            self._rhs = self.scattering.rhs(self.projector)
        return self._rhs

    def apply_skeleton_operator(self, p):
        """``(Id + Pi S) p`` computed as ``-2i B u + 2 Q v``, ``v`` the Gram solve of ``Q^T T S p``."""
        p = np.asarray(p, dtype=complex)
        Sp, _ = self.scattering.apply_S(p)
        v = self.projector.solve_gram(self.projector.gram_rhs(Sp))
        return p - Sp + 2 * self.projector.lift(v)

    def broken_error(self, u):
        """Relative energy-norm error of a broken field against the direct solution."""
        ref = self.u_ref
        num = 0.0
        for j, uj in enumerate(u):
            d = uj - self.maps.R[j].apply(ref)
            num += np.vdot(d, self.local_grams[j] @ d).real
        den = np.vdot(ref, self.gram @ ref).real
        return float(np.sqrt(num / den))

    def merge(self, u):
        """``(R^T R)^-1 R^T u``: average duplicated edge values."""
        out = np.zeros(self.mesh.n_edges, dtype=complex)
        for j, uj in enumerate(u):
            self.maps.R[j].apply_transpose(uj, out)
        return out / self.edge_sets.multiplicity


def recover_volume(problem: DDMProblem, p):
    """Broken field ``u`` and merged global field for the skeleton unknown ``p``."""
    u = problem.scattering.recover(p)
    return u, problem.merge(u)


def energy_norm_error(u, u_ref, gram) -> float:
    """``||u - u_ref|| / ||u_ref||`` in the norm with Gram matrix ``gram``."""
    u_ref = np.asarray(u_ref)
    den = np.vdot(u_ref, gram @ u_ref).real
    if den <= 0:
        raise ValueError("reference field has zero norm")
    d = np.asarray(u) - u_ref
    return float(np.sqrt(np.vdot(d, gram @ d).real / den))


def solve_richardson(problem: DDMProblem, config: SolverConfig):
    """Damped Richardson ``p <- p + 2r (i B u - Q v)``, starting from ``p = 0``."""
    t0 = time.perf_counter()
    pr = problem.projector
    report = SolveReport()
    p = problem.layout.zeros()
    u = problem.scattering.local_fields(p)
    use_err = config.reference and problem.u_ref is not None
    g_norm = np.linalg.norm(problem.rhs().g) if problem.n_sys else 0.0
    pcg0 = pr.stats.calls
    for n in range(config.max_iters + 1):
        Bu = problem.scattering.traces(u)
        v = pr.solve_gram(pr.gram_rhs(p + 2j * Bu))
        # update direction equals the skeleton residual g - (Id + Pi S) p
        step = 2 * (1j * Bu - pr.lift(v))
        res = np.linalg.norm(step) / g_norm if g_norm else 0.0
        report.residual_history.append(float(res))
        report.pcg_history.append(pr.stats.last if pr.stats.calls > pcg0 else 0)
        err = problem.broken_error(u) if use_err else float("nan")
        report.error_history.append(err)
        measure = err if config.criterion == "error" else res
        if measure <= config.tol:
            report.converged = True
            break
        if n == config.max_iters:
            break
        p = p + config.damping * step
        u = problem.scattering.local_fields(p)
    report.iterations = len(report.residual_history) - 1
    _finish(problem, report, p, t0)
    return p, report


def solve_gmres(problem: DDMProblem, config: SolverConfig):
    """Restarted GMRES on ``(Id + Pi S) p = b`` with zero initial guess."""
    t0 = time.perf_counter()
    pr = problem.projector
    report = SolveReport()
    b = problem.rhs().b
    use_err = config.reference and problem.u_ref is not None
    pcg_last = [0]

    def op(x):
        y = problem.apply_skeleton_operator(x)
        pcg_last[0] = pr.stats.last
        return y

    def err_of(p):
        return problem.broken_error(problem.scattering.recover(p)) if use_err else float("nan")

    report.error_history.append(err_of(problem.layout.zeros()))
    report.pcg_history.append(pr.stats.last)

    def callback(it, x, relres):
        report.pcg_history.append(pcg_last[0])
        err = err_of(x) if use_err else float("nan")
        report.error_history.append(err)
        return config.criterion == "error" and err <= config.tol

    if problem.n_sys == 0:
        res = kernels.GMRESResult(x=np.zeros(0, dtype=complex), iterations=0, converged=True, residuals=[0.0])
    else:
        tol = 0.0 if config.criterion == "error" else config.tol
        res = kernels.gmres_solve(op, b, config.restart, tol, config.max_iters, callback)
    report.residual_history = [float(r) for r in res.residuals]
    report.iterations = res.iterations
    report.converged = bool(res.converged)
    if res.stagnated:
        report.note = "stagnation"
    elif res.breakdown:
        report.note = "breakdown"
    _finish(problem, report, res.x, t0)
    return res.x, report


def _finish(problem, report, p, t0):
    report.pcg_iters_max = int(max(report.pcg_history, default=0))
    if problem.u_ref is not None:
        _, u_glob = recover_volume(problem, p)
        report.final_error = energy_norm_error(u_glob, problem.u_ref, problem.gram)
    report.wall_time = time.perf_counter() - t0


def solve(problem: DDMProblem, config: SolverConfig):
    if config.method == "richardson":
        return solve_richardson(problem, config)
    return solve_gmres(problem, config)


# ------------------------------------------------------------------ spectra


MAX_SPECTRUM_SIZE = 2000


def dense_operator(problem: DDMProblem, which: str = "id+pis"):
    """Dense matrix of ``Id + Pi S`` (or ``Pi S``) built column by column."""
    n = problem.n_sys
    if n > MAX_SPECTRUM_SIZE:
        raise ValueError(f"n_sys = {n} exceeds the dense cap {MAX_SPECTRUM_SIZE}")
    K = np.empty((n, n), dtype=complex)
    e = np.zeros(n, dtype=complex)
    for k in range(n):
        e[k] = 1.0
        K[:, k] = problem.apply_skeleton_operator(e)
        e[k] = 0.0
    if which == "pis":
        K -= np.eye(n)
    elif which != "id+pis":
        raise ValueError(f"unknown operator {which!r}")
    return K


def dense_T(problem: DDMProblem):
    n = problem.n_sys
    T = np.zeros((n, n))
    o = problem.layout.offsets
    for j in range(problem.J):
        T[o[j]:o[j + 1], o[j]:o[j + 1]] = problem.inductance.dense(j)
    return 0.5 * (T + T.T)


def coercivity_constant(K, T):
    """``min Re (p, K p)_T / ||p||_T^2`` via the generalized Hermitian eigenproblem."""
    H = 0.5 * (K.conj().T @ T + T @ K)
    return float(sla.eigh(H, T, eigvals_only=True)[0])


def spectrum(problem: DDMProblem, which: str = "id+pis"):
    """Eigenvalues of the dense skeleton operator and the coercivity estimate.

    Returns ``(eigenvalues, alpha)``; ``alpha`` always refers to ``Id + Pi S``.
    """
    K = dense_operator(problem, "id+pis")
    lam = np.linalg.eigvals(K)
    alpha = coercivity_constant(K, dense_T(problem)) if problem.n_sys else float("nan")
    if which == "pis":
        lam = lam - 1
    order = np.lexsort((lam.imag, lam.real))
    return lam[order], alpha

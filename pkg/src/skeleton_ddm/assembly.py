"""Lowest-order edge-element assembly for the 2D time-harmonic Maxwell problem.

The unknown is an in-plane field ``E`` with scalar curl
``curl E = dE_y/dx - dE_x/dy``. Basis functions are Whitney forms
``w_e = l_a grad(l_b) - l_b grad(l_a)`` with ``a < b`` the global vertex
ids of edge ``e``, normalized so that the line integral of ``w_e`` along
``e`` (from ``a`` to ``b``) is one. All volume integrals are exact for
piecewise constant coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .kernels import finalize
from .mesh import Mesh
from .partition import EdgeSets, IndexMap, Partition, Skeleton, local_positions


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Medium:
    eps: np.ndarray  # (nt,) complex relative permittivity
    mu: np.ndarray  # (nt,) complex relative permeability
    eta: np.ndarray  # (ne,) complex impedance, used on boundary edges
    kappa: float
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def check(self, mesh: Mesh, tol: float = 0.0):
        if self.kappa <= 0:
            raise AssemblyError("kappa must be positive")
        if len(self.eps) != mesh.n_triangles or len(self.mu) != mesh.n_triangles:
            raise AssemblyError("eps/mu must have one value per triangle")
        if len(self.eta) != mesh.n_edges:
            raise AssemblyError("eta must have one value per edge")
        bnd = mesh.boundary_edges
        if np.any(self.eps.real <= 0) or np.any(self.mu.real <= 0) or np.any(self.eta[bnd].real <= 0):
            raise AssemblyError("coefficients must have positive real parts")
        if np.any(self.eps.imag < -tol) or np.any(self.mu.imag < -tol) or np.any(self.eta[bnd].imag < -tol):
            raise AssemblyError("coefficients must have non-negative imaginary parts")


def homogeneous_medium(mesh: Mesh, kappa: float, eps=1.0, mu=1.0, eta=1.0) -> Medium:
    return Medium(
        np.full(mesh.n_triangles, eps, dtype=complex),
        np.full(mesh.n_triangles, mu, dtype=complex),
        np.full(mesh.n_edges, eta, dtype=complex),
        float(kappa),
        name="homogeneous",
    )


FLOWER_DMU = 5 / 2
FLOWER_DEPS = 3 / 2


def flower_profile(points, delta):
    """Piecewise profile ``2 delta`` / ``1 + delta psi`` / ``1`` in the flower geometry."""
    x, y = points[:, 0], points[:, 1]
    r = np.hypot(x, y)
    theta = np.mod(np.arctan2(y, x), 2 * np.pi)
    rho = 1 + np.cos(6 * theta) / 2
    psi = 2 * (1 + np.cos(6 * theta) / 6) / 3
    out = np.ones_like(r)
    mid = r < rho
    out[mid] = 1 + delta * psi[mid]
    core = r < rho / 5
    out[core] = 2 * delta
    return out


def flower_kappa0(mesh: Mesh) -> float:
    """Product of the area-weighted means of the flower ``mu0`` and ``eps0``."""
    c = mesh.centroids
    w = mesh.areas / mesh.areas.sum()
    return float((w @ flower_profile(c, FLOWER_DMU)) * (w @ flower_profile(c, FLOWER_DEPS)))


def medium_preset(name: str, mesh: Mesh, kappa: float) -> Medium:
    """Named media: ``homogeneous``, ``flower-heterogeneous``, ``flower-dissipative``,
    ``flower-averaged`` (unit coefficients with ``kappa * kappa0``)."""
    c = mesh.centroids
    if name == "homogeneous":
        return homogeneous_medium(mesh, kappa)
    if name == "flower-averaged":
        k0 = flower_kappa0(mesh)
        m = homogeneous_medium(mesh, kappa * k0)
        return Medium(m.eps, m.mu, m.eta, m.kappa, name=name, meta={"kappa0": k0})
    if name in ("flower-heterogeneous", "flower-dissipative"):
        mu0 = flower_profile(c, FLOWER_DMU).astype(complex)
        eps0 = flower_profile(c, FLOWER_DEPS).astype(complex)
        if name == "flower-dissipative":
            mu0 = mu0 * (1 + 1j / 4)
            eps0 = eps0 * (1 + 1j / 6)
        return Medium(
            eps0, mu0, np.ones(mesh.n_edges, dtype=complex), float(kappa), name=name,
            meta={"kappa0": flower_kappa0(mesh)},
        )
    raise AssemblyError(f"unknown medium preset {name!r}")


def load_medium(path, mesh: Mesh, kappa: Optional[float] = None) -> Medium:
    """Read per-triangle ``eps``/``mu`` (and optional per-edge ``eta``) from JSON.

    Complex values are written as ``[re, im]`` pairs or plain numbers.
    """
    data = json.loads(Path(path).read_text())

    def arr(key, n, default):
        if key not in data:
            return np.full(n, default, dtype=complex)
        a = np.asarray(data[key], dtype=float)
        a = a[:, 0] + 1j * a[:, 1] if a.ndim == 2 else a.astype(complex)
        if len(a) != n:
            raise AssemblyError(f"{key} has {len(a)} entries, expected {n}")
        return a

    k = kappa if kappa is not None else data.get("kappa")
    if k is None:
        raise AssemblyError("kappa missing")
    return Medium(
        arr("eps", mesh.n_triangles, 1.0),
        arr("mu", mesh.n_triangles, 1.0),
        arr("eta", mesh.n_edges, 1.0),
        float(k),
        name=str(data.get("name", Path(path).stem)),
    )


@dataclass(frozen=True)
class PlaneWave:
    """``E_inc(x) = amplitude * p * exp(i kappa d.x)`` with ``p`` the rotation of ``d`` by +90 degrees."""

    direction: tuple = (1.0, 0.0)
    amplitude: complex = 1.0

    def _dp(self):
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        return d, np.array([-d[1], d[0]])

    def field(self, x, kappa):
        d, p = self._dp()
        phase = self.amplitude * np.exp(1j * kappa * (x @ d))
        return phase[..., None] * p

    def curl(self, x, kappa):
        d, p = self._dp()
        return 1j * kappa * (d[0] * p[1] - d[1] * p[0]) * self.amplitude * np.exp(1j * kappa * (x @ d))


@dataclass(frozen=True, eq=False)
class SourceSpec:
    volume_F: Optional[np.ndarray] = None  # (nt, 2) complex
    plane_wave: Optional[PlaneWave] = None

    def __post_init__(self):
        if self.volume_F is None and self.plane_wave is None:
            raise AssemblyError("source needs a volume term or a plane wave")


# ------------------------------------------------------------ element kernels


@dataclass(frozen=True, eq=False)
class ElementData:
    """Per-triangle geometric quantities of the Whitney basis."""

    area: np.ndarray  # (nt,)
    grads: np.ndarray  # (nt, 3, 2) barycentric gradients
    ends: np.ndarray  # (nt, 3, 2) local vertex pair (a, b), global a < b, per local edge
    curl: np.ndarray  # (nt, 3) scalar curl of each local basis function
    mass: np.ndarray  # (nt, 3, 3) exact L2 Gram of the local basis
    stiff: np.ndarray  # (nt, 3, 3) area * curl_k * curl_l


def element_data(mesh: Mesh) -> ElementData:
    p = mesh.vertices[mesh.triangles]
    area = mesh.areas
    # grad l_k = rot90(edge opposite k) / (2 area), for a ccw triangle
    grads = np.empty((mesh.n_triangles, 3, 2))
    for k in range(3):
        e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        grads[:, k, 0] = -e[:, 1] / (2 * area)
        grads[:, k, 1] = e[:, 0] / (2 * area)
    tri = mesh.triangles
    ends = np.empty((mesh.n_triangles, 3, 2), dtype=np.int64)
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        swap = tri[:, a] > tri[:, b]
        ends[:, k, 0] = np.where(swap, b, a)
        ends[:, k, 1] = np.where(swap, a, b)
    nt = mesh.n_triangles
    rows = np.arange(nt)[:, None]
    ga = grads[rows, ends[:, :, 0]]  # (nt, 3, 2)
    gb = grads[rows, ends[:, :, 1]]
    curl = 2 * (ga[..., 0] * gb[..., 1] - ga[..., 1] * gb[..., 0])
    G = np.einsum("tid,tjd->tij", grads, grads)
    lam = (np.ones((3, 3)) + np.eye(3)) / 12  # integral of l_i l_j over area
    mass = np.empty((nt, 3, 3))
    for k in range(3):
        i, j = ends[:, k, 0], ends[:, k, 1]
        for m in range(3):
            kk, ll = ends[:, m, 0], ends[:, m, 1]
            mass[:, k, m] = area * (
                lam[i, kk] * G[rows[:, 0], j, ll]
                - lam[i, ll] * G[rows[:, 0], j, kk]
                - lam[j, kk] * G[rows[:, 0], i, ll]
                + lam[j, ll] * G[rows[:, 0], i, kk]
            )
    stiff = area[:, None, None] * curl[:, :, None] * curl[:, None, :]
    return ElementData(area, grads, ends, curl, mass, stiff)


def basis_values(ed: ElementData, t: int, bary: np.ndarray) -> np.ndarray:
    """Values of the three local basis functions of triangle ``t`` at barycentric points.

    Returns ``(npts, 3, 2)``.
    """
    g = ed.grads[t]
    out = np.empty((len(bary), 3, 2))
    for k in range(3):
        a, b = ed.ends[t, k]
        out[:, k] = bary[:, a, None] * g[b] - bary[:, b, None] * g[a]
    return out


_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)


def _assemble(mesh: Mesh, ed: ElementData, tris, local_coef, n, index):
    """Scatter ``local_coef[t] (3x3)`` for ``tris`` into an ``n x n`` matrix via ``index``."""
    te = index(mesh.tri_edges[tris])
    rows = np.repeat(te, 3, axis=1).ravel()
    cols = np.tile(te, (1, 3)).ravel()
    return sp.coo_matrix((local_coef.ravel(), (rows, cols)), shape=(n, n))


def _volume_matrix(ed, tris, mu, eps, kappa):
    return (ed.stiff[tris] / mu[tris, None, None]) - kappa**2 * eps[tris, None, None] * ed.mass[tris]


def _boundary_diag(mesh: Mesh, edges, coef):
    return coef / mesh.edge_lengths[edges]


def _source_vector(mesh, ed, medium, source, tris, bedges):
    """Load entries (global edge ids, values) from triangles ``tris`` and boundary edges ``bedges``."""
    ids, vals = [], []
    if source.volume_F is not None:
        F = np.asarray(source.volume_F, dtype=complex)[tris]
        nt = len(tris)
        r = np.arange(nt)
        ga = ed.grads[tris][r[:, None], ed.ends[tris][:, :, 0]]
        gb = ed.grads[tris][r[:, None], ed.ends[tris][:, :, 1]]
        integral = (ed.area[tris, None, None] / 3) * (gb - ga)  # integral of w_k
        ids.append(mesh.tri_edges[tris].ravel())
        vals.append(np.einsum("tkd,td->tk", integral, F).ravel())
    if source.plane_wave is not None and len(bedges):
        pw = source.plane_wave
        kappa = medium.kappa
        tan = mesh.boundary_tangents()
        L = mesh.edge_lengths
        canon = mesh.edge_tangents
        x0 = mesh.vertices[mesh.edges[bedges, 0]]
        x1 = mesh.vertices[mesh.edges[bedges, 1]]
        s = 0.5 * (_GL4_X + 1)
        pts = x0[:, None, :] + s[None, :, None] * (x1 - x0)[:, None, :]  # (nb, 4, 2)
        t = tan[bedges]
        tri = mesh.edge_triangles[bedges, 0]
        E = pw.field(pts, kappa)
        curlE = pw.curl(pts, kappa)
        Et = np.einsum("bqd,bd->bq", E, t)
        g = curlE / medium.mu[tri, None] - 1j * (kappa / medium.eta[bedges, None]) * Et
        sign = np.einsum("bd,bd->b", t, canon[bedges])
        # trace of w_e along t is sign / L; quadrature weights sum to 2 on [-1, 1]
        vals.append(sign * (g @ _GL4_W) / 2)
        ids.append(np.asarray(bedges))
    if not ids:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=complex)
    return np.concatenate(ids), np.concatenate(vals)


def assemble_global(mesh: Mesh, medium: Medium, source: Optional[SourceSpec] = None, ed=None):
    """Galerkin matrix and load vector of the undecomposed problem."""
    medium.check(mesh)
    ed = ed or element_data(mesh)
    n = mesh.n_edges
    tris = np.arange(mesh.n_triangles)
    loc = _volume_matrix(ed, tris, medium.mu, medium.eps, medium.kappa)
    A = _assemble(mesh, ed, tris, loc, n, lambda te: te)
    bnd = mesh.boundary_edges
    diag = -1j * _boundary_diag(mesh, bnd, medium.kappa / medium.eta[bnd])
    A = A + sp.coo_matrix((diag, (bnd, bnd)), shape=(n, n))
    f = np.zeros(n, dtype=complex)
    if source is not None:
        ids, vals = _source_vector(mesh, ed, medium, source, tris, bnd)
        np.add.at(f, ids, vals)
    return finalize(A), f


@dataclass(frozen=True, eq=False)
class LocalSystem:
    A: sp.csr_matrix
    f: np.ndarray
    edges: np.ndarray  # E_j


def assemble_local(j: int, mesh: Mesh, partition: Partition, medium: Medium,
                   source: Optional[SourceSpec] = None, ed=None, edge_sets: EdgeSets = None) -> LocalSystem:
    """Matrix and load of subdomain ``j`` (1-based) on its local edge set ``E_j``.

    The impedance term only covers edges of ``E_j`` on the exterior boundary.
    """
    medium.check(mesh)
    ed = ed or element_data(mesh)
    tris = partition.triangles_of(j)
    Ej = edge_sets.E[j - 1] if edge_sets is not None else np.unique(mesh.tri_edges[tris])
    n = len(Ej)

    def index(te):
        return local_positions(Ej, te.ravel()).reshape(te.shape)

    loc = _volume_matrix(ed, tris, medium.mu, medium.eps, medium.kappa)
    A = _assemble(mesh, ed, tris, loc, n, index)
    bnd = np.intersect1d(mesh.boundary_edges, Ej, assume_unique=True)
    lb = index(bnd)
    diag = -1j * _boundary_diag(mesh, bnd, medium.kappa / medium.eta[bnd])
    A = A + sp.coo_matrix((diag, (lb, lb)), shape=(n, n))
    f = np.zeros(n, dtype=complex)
    if source is not None:
        ids, vals = _source_vector(mesh, ed, medium, source, tris, bnd)
        np.add.at(f, index(ids), vals)
    return LocalSystem(finalize(A), f, Ej)


def eta_bar(mesh: Mesh, medium: Medium) -> np.ndarray:
    """Per-edge mean of ``Re sqrt(mu/eps)`` over the adjacent triangles."""
    z = np.sqrt(medium.mu / medium.eps).real
    et = mesh.edge_triangles
    two = et[:, 1] >= 0
    out = z[et[:, 0]].copy()
    out[two] = 0.5 * (z[et[two, 0]] + z[et[two, 1]])
    return out


def assemble_despres(j: int, mesh: Mesh, skeleton: Skeleton, medium: Medium,
                     edge_sets: EdgeSets = None, interface_decouple: bool = False) -> sp.csr_matrix:
    """Tangential-trace mass inductance on ``Gamma_j`` weighted by ``kappa / eta_bar``.

    A lowest-order edge function has a tangential trace only on its own
    edge, where it equals ``1/L``; the matrix is therefore diagonal with
    entries ``kappa / (eta_bar L)``. ``interface_decouple`` drops couplings
    between edges of different classes, which keeps it unchanged here.
    """
    gj = skeleton.gamma_j[j - 1]
    diag = medium.kappa / (eta_bar(mesh, medium)[gj] * mesh.edge_lengths[gj])
    T = sp.diags(diag).tocsr()
    if interface_decouple and edge_sets is not None:
        T = decouple_classes(T, gj, edge_sets)
    return T


def decouple_classes(T, gamma_j, edge_sets: EdgeSets):
    """Zero entries ``T[e, f]`` whose edges belong to different subdomain classes."""
    ids = {}
    cid = np.array([ids.setdefault(edge_sets.classes[e], len(ids)) for e in gamma_j], dtype=np.int64)
    if sp.issparse(T):
        T = sp.coo_matrix(T)
        keep = cid[T.row] == cid[T.col]
        return finalize(sp.coo_matrix((T.data[keep], (T.row[keep], T.col[keep])), shape=T.shape))
    T = np.array(T)
    T[cid[:, None] != cid[None, :]] = 0.0
    return T


@dataclass(frozen=True, eq=False)
class AuxiliarySystem:
    C: sp.csr_matrix  # real SPD on E'_j
    Bp: IndexMap  # E'_j -> Gamma_j
    omega_prime: np.ndarray  # triangles of Omega'_j
    edges: np.ndarray  # E'_j


def assemble_auxiliary(j: int, mesh: Mesh, partition: Partition, skeleton: Skeleton, medium: Medium,
                       omega_prime="full", ed=None) -> AuxiliarySystem:
    """Real coercive curl-curl + mass problem on ``Omega'_j`` and its trace map to ``Gamma_j``.

    ``omega_prime`` is ``"full"`` (``Omega' = Omega``), ``"layers:k"`` (triangles
    of ``Omega_j`` within ``k`` adjacency hops of a triangle touching
    ``Gamma_j``) or an explicit boolean triangle mask over the whole mesh.
    The impedance term ``Re(kappa/eta)`` acts on the artificial boundary
    ``Gamma'_j`` and on exterior-boundary edges of ``Gamma_j``; on artificial
    boundary edges inside the domain ``eta`` is taken as ``eta_bar``.
    """
    ed = ed or element_data(mesh)
    tris_j = partition.triangles_of(j)
    gj = skeleton.gamma_j[j - 1]
    if isinstance(omega_prime, str):
        if omega_prime == "full":
            tris = tris_j
        elif omega_prime.startswith("layers:"):
            k = int(omega_prime.split(":")[1])
            if k < 0:
                raise AssemblyError("layer count must be >= 0")
            in_j = np.zeros(mesh.n_triangles, dtype=bool)
            in_j[tris_j] = True
            seed = np.unique(mesh.edge_triangles[gj].ravel())
            seed = seed[(seed >= 0)]
            seed = seed[in_j[seed]]
            reached = np.zeros(mesh.n_triangles, dtype=bool)
            reached[seed] = True
            front = seed
            nbrs = mesh.triangle_neighbors()
            for _ in range(k):
                new = [s for t in front for s in nbrs[t] if in_j[s] and not reached[s]]
                new = np.unique(np.array(new, dtype=np.int64))
                reached[new] = True
                front = new
            tris = np.flatnonzero(reached)
        else:
            raise AssemblyError(f"unknown omega_prime policy {omega_prime!r}")
    else:
        mask = np.asarray(omega_prime, dtype=bool)
        tris = np.intersect1d(np.flatnonzero(mask), tris_j)
    Ep = np.unique(mesh.tri_edges[tris]) if len(tris) else np.zeros(0, dtype=np.int64)
    if not np.all(np.isin(gj, Ep)):
        raise AssemblyError(f"Omega'_{j} does not contain Gamma_{j}")
    n = len(Ep)

    def index(te):
        return local_positions(Ep, te.ravel()).reshape(te.shape)

    loc = ed.stiff[tris] * (1 / medium.mu[tris]).real[:, None, None] \
        + medium.kappa**2 * medium.eps[tris].real[:, None, None] * ed.mass[tris]
    C = _assemble(mesh, ed, tris, loc, n, index)
    # boundary of Omega'_j: edges seen by exactly one of its triangles
    te = mesh.tri_edges[tris].ravel()
    uniq, cnt = np.unique(te, return_counts=True)
    bnd_prime = uniq[cnt == 1]
    on_ext = mesh.edge_triangles[:, 1] < 0
    artificial = np.setdiff1d(bnd_prime, gj, assume_unique=True)
    ext_in_gamma = gj[on_ext[gj]]
    bedges = np.union1d(artificial, ext_in_gamma)
    eta = np.where(on_ext[bedges], medium.eta[bedges], eta_bar(mesh, medium)[bedges])
    diag = _boundary_diag(mesh, bedges, (medium.kappa / eta).real)
    lb = index(bedges)
    C = C + sp.coo_matrix((diag, (lb, lb)), shape=(n, n))
    Bp = IndexMap(n, local_positions(Ep, gj), "Bp")
    return AuxiliarySystem(finalize(C).real.tocsr(), Bp, tris, Ep)


def energy_gram(mesh: Mesh, kappa: float, tris=None, edges=None, ed=None) -> sp.csr_matrix:
    """Gram matrix of ``||u||^2_L2 + kappa^-2 ||curl u||^2_L2`` on a triangle subset."""
    ed = ed or element_data(mesh)
    if tris is None:
        tris = np.arange(mesh.n_triangles)
    loc = ed.mass[tris] + ed.stiff[tris] / kappa**2
    if edges is None:
        return finalize(_assemble(mesh, ed, tris, loc, mesh.n_edges, lambda te: te))
    return finalize(_assemble(
        mesh, ed, tris, loc, len(edges),
        lambda te: local_positions(edges, te.ravel()).reshape(te.shape),
    ))


# Dunavant degree-5 rule on the reference triangle (barycentric points, weights sum to 1)
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
TRI_QUAD_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
])
TRI_QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def field_error_vs_exact(mesh: Mesh, u: np.ndarray, exact_field, exact_curl, kappa: float, ed=None):
    """Relative energy-norm distance between a discrete field and a closed-form one.

    Uses the degree-5 triangle rule on every element.
    """
    ed = ed or element_data(mesh)
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    X = np.einsum("qk,tkd->tqd", TRI_QUAD_POINTS, p)
    E = exact_field(X, kappa)  # (nt, nq, 2)
    cE = exact_curl(X, kappa)  # (nt, nq)
    coef = u[mesh.tri_edges]  # (nt, 3)
    nt = mesh.n_triangles
    r = np.arange(nt)[:, None]
    ga = ed.grads[r, ed.ends[:, :, 0]]
    gb = ed.grads[r, ed.ends[:, :, 1]]
    la = TRI_QUAD_POINTS[:, ed.ends[:, :, 0]].transpose(1, 0, 2)  # (nt, nq, 3)
    lb = TRI_QUAD_POINTS[:, ed.ends[:, :, 1]].transpose(1, 0, 2)
    Wh = la[..., None] * gb[:, None] - lb[..., None] * ga[:, None]  # (nt, nq, 3, 2)
    Eh = np.einsum("tqkd,tk->tqd", Wh, coef)
    cEh = (ed.curl * coef).sum(axis=1)[:, None]
    w = ed.area[:, None] * TRI_QUAD_WEIGHTS[None, :]
    err = (w * (np.abs(Eh - E) ** 2).sum(-1)).sum() + (w * np.abs(cEh - cE) ** 2).sum() / kappa**2
    ref = (w * (np.abs(E) ** 2).sum(-1)).sum() + (w * np.abs(cE) ** 2).sum() / kappa**2
    return float(np.sqrt(err / ref))

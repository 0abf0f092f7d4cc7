"""Subdomain partitions, edge sets, thin/thick skeletons and boolean index maps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Partition:
    subdomain_of_triangle: np.ndarray  # 1-based labels
    J: int

    def __post_init__(self):
        labels = self.subdomain_of_triangle
        if labels.min() < 1 or labels.max() > self.J:
            raise PartitionError("labels must lie in 1..J")

    def triangles_of(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.subdomain_of_triangle == j)


def partition_pie(mesh: Mesh, J: int, center=(0.0, 0.0)) -> Partition:
    """Assign each triangle to the angular sector of its centroid.

    Sector ``j`` (1-based) covers ``[2pi (j-1)/J, 2pi j/J)`` about ``center``.
    """
    if J < 1:
        raise PartitionError("J must be >= 1")
    c = mesh.centroids - np.asarray(center, dtype=float)
    theta = np.mod(np.arctan2(c[:, 1], c[:, 0]), 2 * np.pi)
    labels = np.floor(theta * J / (2 * np.pi)).astype(np.int64)
    labels = np.minimum(labels, J - 1) + 1
    return Partition(labels, J)


def partition_grid(mesh: Mesh, nx: int, ny: int = 1) -> Partition:
    """Cartesian ``nx x ny`` split of the bounding box, by centroid.

    Cells that receive no triangle are dropped and the labels compacted.
    """
    if nx < 1 or ny < 1:
        raise PartitionError("grid sizes must be >= 1")
    c = mesh.centroids
    lo = mesh.vertices.min(axis=0)
    span = np.ptp(mesh.vertices, axis=0)
    ix = np.minimum((nx * (c[:, 0] - lo[0]) / span[0]).astype(np.int64), nx - 1)
    iy = np.minimum((ny * (c[:, 1] - lo[1]) / span[1]).astype(np.int64), ny - 1)
    raw = iy * nx + ix
    _, labels = np.unique(raw, return_inverse=True)
    return Partition(labels.astype(np.int64) + 1, int(labels.max()) + 1)


def partition_from_file(mesh: Mesh, path) -> Partition:
    """Read one integer label per triangle; 0-based files are shifted to 1-based."""
    text = Path(path).read_text()
    tokens = text.split()
    if not tokens:
        raise PartitionError("empty partition file")
    try:
        labels = np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as exc:
        raise PartitionError(f"non-integer label: {exc}") from exc
    if len(labels) != mesh.n_triangles:
        raise PartitionError(f"{len(labels)} labels for {mesh.n_triangles} triangles")
    if labels.min() < 0:
        raise PartitionError("negative label")
    if labels.min() == 0:
        labels = labels + 1
    return Partition(labels, int(labels.max()))


def write_partition(partition: Partition, path, zero_based: bool = False) -> None:
    shift = 1 if zero_based else 0
    Path(path).write_text("\n".join(str(int(v) - shift) for v in partition.subdomain_of_triangle) + "\n")


# ----------------------------------------------------------------- edge sets


@dataclass(frozen=True, eq=False)
class EdgeSets:
    E: list  # E[j-1]: sorted global edge ids of subdomain j
    thin_skeleton: np.ndarray  # sorted edge ids with multiplicity >= 2
    multiplicity: np.ndarray  # (ne,) number of subdomains containing each edge
    classes: list  # classes[e]: tuple of owning subdomains (1-based, sorted)

    @property
    def J(self):
        return len(self.E)


def build_edge_sets(mesh: Mesh, partition: Partition) -> EdgeSets:
    ne = mesh.n_edges
    owners = [set() for _ in range(ne)]
    E = []
    for j in range(1, partition.J + 1):
        tris = partition.triangles_of(j)
        if len(tris) == 0:
            raise PartitionError(f"subdomain {j} is empty")
        ej = np.unique(mesh.tri_edges[tris])
        E.append(ej)
        for e in ej:
            owners[e].add(j)
    classes = [tuple(sorted(o)) for o in owners]
    mult = np.array([len(c) for c in classes], dtype=np.int64)
    thin = np.flatnonzero(mult >= 2)
    return EdgeSets(E, thin, mult, classes)


@dataclass(frozen=True, eq=False)
class Skeleton:
    gamma: np.ndarray  # sorted global edge ids
    gamma_j: list  # gamma_j[j-1]: sorted ids of gamma ∩ E_j
    policy: str

    @property
    def n_sys(self):
        return int(sum(len(g) for g in self.gamma_j))


def parse_skeleton_policy(policy: str):
    """``thin``, ``layers:k``, ``with-boundary`` or ``layers:k+boundary``."""
    policy = policy.strip()
    with_boundary = False
    layers = None
    for part in policy.split("+"):
        part = part.strip()
        if part in ("thin", ""):
            continue
        if part in ("with-boundary", "with-external-boundary", "boundary"):
            with_boundary = True
        elif part.startswith("layers"):
            _, _, k = part.partition(":")
            try:
                layers = int(k)
            except ValueError as exc:
                raise PartitionError(f"bad layer count in {policy!r}") from exc
            if layers < 0:
                raise PartitionError("layer count must be >= 0")
        else:
            raise PartitionError(f"unknown skeleton policy {policy!r}")
    return layers, with_boundary


def build_thick_skeleton(edge_sets: EdgeSets, mesh: Mesh, policy: str = "thin") -> Skeleton:
    layers, with_boundary = parse_skeleton_policy(policy)
    gamma = set(edge_sets.thin_skeleton.tolist())
    if layers is not None and len(edge_sets.thin_skeleton):
        # hop 0: triangles touching the thin skeleton; then grow by edge adjacency
        seed = np.unique(mesh.edge_triangles[edge_sets.thin_skeleton].ravel())
        seed = seed[seed >= 0]
        reached = np.zeros(mesh.n_triangles, dtype=bool)
        reached[seed] = True
        front = seed
        nbrs = mesh.triangle_neighbors()
        for _ in range(layers):
            new = []
            for t in front:
                for s in nbrs[t]:
                    if not reached[s]:
                        reached[s] = True
                        new.append(s)
            front = np.array(new, dtype=np.int64)
        gamma.update(np.unique(mesh.tri_edges[reached]).tolist())
    if with_boundary:
        gamma.update(mesh.boundary_edges.tolist())
    gamma = np.array(sorted(gamma), dtype=np.int64)
    gamma_j = [np.intersect1d(ej, gamma, assume_unique=True) for ej in edge_sets.E]
    return Skeleton(gamma, gamma_j, policy)


# ---------------------------------------------------------------- index maps


@dataclass(frozen=True, eq=False)
class IndexMap:
    """Boolean matrix with exactly one unit entry per row.

    Row ``r`` picks entry ``targets[r]`` of a vector of length ``domain_size``.
    """

    domain_size: int
    targets: np.ndarray
    kind: str = ""

    @property
    def codomain_size(self):
        return len(self.targets)

    def apply(self, x):
        return np.asarray(x)[..., self.targets]

    def apply_transpose(self, y, out=None):
        y = np.asarray(y)
        if out is None:
            out = np.zeros(self.domain_size, dtype=y.dtype)
        np.add.at(out, self.targets, y)
        return out

    def to_sparse(self):
        n = self.codomain_size
        return sp.csr_matrix(
            (np.ones(n), (np.arange(n), self.targets)), shape=(n, self.domain_size)
        )


@dataclass(frozen=True, eq=False)
class IndexMaps:
    R: list  # E -> E_j
    Q: list  # Gamma -> Gamma_j
    B: list  # E_j -> Gamma_j
    Bc: list  # E_j -> E_j \ Gamma_j

    @property
    def J(self):
        return len(self.R)


def build_index_maps(edge_sets: EdgeSets, skeleton: Skeleton, n_edges: int = None) -> IndexMaps:
    if n_edges is None:
        n_edges = len(edge_sets.multiplicity)
    R, Q, B, Bc = [], [], [], []
    for ej, gj in zip(edge_sets.E, skeleton.gamma_j):
        R.append(IndexMap(n_edges, ej, "R"))
        Q.append(IndexMap(len(skeleton.gamma), np.searchsorted(skeleton.gamma, gj), "Q"))
        in_gamma = np.isin(ej, gj, assume_unique=True)
        B.append(IndexMap(len(ej), np.flatnonzero(in_gamma), "B"))
        Bc.append(IndexMap(len(ej), np.flatnonzero(~in_gamma), "Bc"))
    return IndexMaps(R, Q, B, Bc)


def local_positions(E_j: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Positions of global ``edges`` inside the sorted local edge list ``E_j``."""
    pos = np.searchsorted(E_j, edges)
    if np.any(pos >= len(E_j)) or np.any(E_j[np.minimum(pos, len(E_j) - 1)] != edges):
        raise KeyError("edge not in local set")
    return pos


def sector_of_point(point, J, center=(0.0, 0.0)) -> int:
    theta = math.atan2(point[1] - center[1], point[0] - center[0]) % (2 * math.pi)
    return min(int(math.floor(theta * J / (2 * math.pi))), J - 1) + 1

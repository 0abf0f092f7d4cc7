"""2D triangulations with globally numbered, canonically oriented edges."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """A conforming triangulation of a planar domain.

    Edges are numbered by lexicographic order of their ``(vmin, vmax)``
    vertex pairs and oriented from the lower to the higher vertex id.
    ``tri_edges[t, k]`` is the global edge opposite local vertex ``k`` of
    triangle ``t``.
    """

    vertices: np.ndarray  # (nv, 2) float
    triangles: np.ndarray  # (nt, 3) int, counter-clockwise
    edges: np.ndarray  # (ne, 2) int, edges[:, 0] < edges[:, 1]
    tri_edges: np.ndarray  # (nt, 3) int
    edge_triangles: np.ndarray  # (ne, 2) int, -1 where absent
    boundary_tags: dict = field(default_factory=dict)  # boundary edge id -> physical tag

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_triangles[:, 1] < 0)

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_tangents(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return d / np.hypot(d[:, 0], d[:, 1])[:, None]

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def boundary_tangents(self) -> np.ndarray:
        """Unit tangent of every boundary edge, oriented with the domain on its left.

        Returned as an ``(ne, 2)`` array, zero on interior edges.
        """
        out = np.zeros((self.n_edges, 2))
        for e in self.boundary_edges:
            t = self.edge_triangles[e, 0]
            tri = self.triangles[t]
            k = int(np.flatnonzero(self.tri_edges[t] == e)[0])
            a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
            d = self.vertices[b] - self.vertices[a]
            out[e] = d / np.hypot(*d)
        return out

    def triangle_neighbors(self) -> list:
        """Triangles sharing an edge with each triangle."""
        nbrs = [[] for _ in range(self.n_triangles)]
        for t0, t1 in self.edge_triangles:
            if t1 >= 0:
                nbrs[t0].append(int(t1))
                nbrs[t1].append(int(t0))
        return nbrs


def signed_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_mesh(vertices, triangles, boundary_tags=None, line_tags=None) -> Mesh:
    """Derive edges and adjacency from raw vertex/triangle arrays.

    Triangles are re-oriented counter-clockwise, unreferenced vertices are
    dropped. ``line_tags`` maps vertex pairs (any order) to physical tags and
    is translated into ``boundary_tags`` keyed by edge id.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.array(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] < 2:
        raise MeshError(f"vertices must be (nv, 2), got {vertices.shape}")
    vertices = np.ascontiguousarray(vertices[:, :2])
    if triangles.size == 0:
        raise MeshError("mesh has no triangles")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError(f"triangles must be (nt, 3), got {triangles.shape}")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle references a missing vertex")
    if np.any(triangles[:, 0] == triangles[:, 1]) or np.any(triangles[:, 1] == triangles[:, 2]) \
            or np.any(triangles[:, 0] == triangles[:, 2]):
        raise MeshError("triangle with repeated vertex")

    used = np.unique(triangles)
    if len(used) < len(vertices):
        renum = -np.ones(len(vertices), dtype=np.int64)
        renum[used] = np.arange(len(used))
        old_to_new = renum
        vertices = vertices[used]
        triangles = renum[triangles]
    else:
        old_to_new = None

    area = signed_areas(vertices, triangles)
    span = np.ptp(vertices, axis=0).max()
    if np.any(np.abs(area) < 1e-14 * span**2):
        bad = int(np.flatnonzero(np.abs(area) < 1e-14 * span**2)[0])
        raise MeshError(f"degenerate triangle {bad}")
    neg = area < 0
    triangles[neg] = triangles[neg][:, [0, 2, 1]]

    nv = len(vertices)
    # local edge k is opposite local vertex k
    pairs = np.stack(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1
    )
    lo = pairs.min(axis=2)
    hi = pairs.max(axis=2)
    keys = lo * nv + hi
    ukeys, inverse, counts = np.unique(keys.ravel(), return_inverse=True, return_counts=True)
    if counts.max() > 2:
        e = int(np.argmax(counts))
        raise MeshError(
            f"non-conforming triangulation: edge ({ukeys[e] // nv}, {ukeys[e] % nv}) "
            f"shared by {counts[e]} triangles"
        )
    edges = np.column_stack([ukeys // nv, ukeys % nv])
    tri_edges = inverse.reshape(-1, 3)
    edge_triangles = -np.ones((len(edges), 2), dtype=np.int64)
    owner = np.repeat(np.arange(len(triangles)), 3)
    flat = tri_edges.ravel()
    order = np.argsort(flat, kind="stable")
    fs, os_ = flat[order], owner[order]
    first = np.ones(len(fs), dtype=bool)
    first[1:] = fs[1:] != fs[:-1]
    edge_triangles[fs[first], 0] = os_[first]
    edge_triangles[fs[~first], 1] = os_[~first]

    tags = dict(boundary_tags or {})
    if line_tags:
        for (a, b), tag in line_tags.items():
            if old_to_new is not None:
                a, b = old_to_new[a], old_to_new[b]
            if a < 0 or b < 0:
                continue
            key = min(a, b) * nv + max(a, b)
            pos = np.searchsorted(ukeys, key)
            if pos < len(ukeys) and ukeys[pos] == key and edge_triangles[pos, 1] < 0:
                tags[int(pos)] = int(tag)
    return Mesh(vertices, triangles, edges, tri_edges, edge_triangles, tags)


def edge_ids(mesh: Mesh, pairs) -> np.ndarray:
    """Global ids of edges given as vertex pairs (either orientation)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    nv = mesh.n_vertices
    keys = pairs.min(axis=1) * nv + pairs.max(axis=1)
    all_keys = mesh.edges[:, 0] * nv + mesh.edges[:, 1]
    pos = np.searchsorted(all_keys, keys)
    pos = np.minimum(pos, len(all_keys) - 1)
    if np.any(all_keys[pos] != keys):
        raise KeyError("edge not in mesh")
    return pos


# --------------------------------------------------------------------------- io


def load_mesh(path) -> Mesh:
    """Read a mesh from an ASCII MSH 2.2 file or the native JSON format."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        return _parse_json(text)
    return _parse_msh2(text)


def _parse_json(text) -> Mesh:
    try:
        data = json.loads(text)
        vertices = np.asarray(data["vertices"], dtype=float)
        triangles = np.asarray(data["triangles"], dtype=np.int64)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MeshError(f"malformed JSON mesh: {exc}") from exc
    line_tags = {}
    for item in data.get("boundary_tags", []):
        a, b, tag = item
        line_tags[(int(a), int(b))] = int(tag)
    return build_mesh(vertices, triangles, line_tags=line_tags)


def _parse_msh2(text) -> Mesh:
    lines = text.splitlines()
    sections = {}
    i = 0
    try:
        while i < len(lines):
            line = lines[i].strip()
            if line.startswith("$") and not line.startswith("$End"):
                name = line[1:]
                j = i + 1
                while j < len(lines) and lines[j].strip() != f"$End{name}":
                    j += 1
                if j == len(lines):
                    raise MeshError(f"section ${name} is not terminated")
                sections[name] = lines[i + 1 : j]
                i = j
            i += 1
        if "MeshFormat" in sections:
            version = sections["MeshFormat"][0].split()
            if not version[0].startswith("2"):
                raise MeshError(f"unsupported MSH version {version[0]}")
            if len(version) > 1 and version[1] != "0":
                raise MeshError("binary MSH files are not supported")
        if "Nodes" not in sections or "Elements" not in sections:
            raise MeshError("MSH file lacks $Nodes or $Elements")
        node_lines = sections["Nodes"]
        n_nodes = int(node_lines[0])
        node_id = {}
        coords = np.zeros((n_nodes, 2))
        for k, line in enumerate(node_lines[1 : 1 + n_nodes]):
            tok = line.split()
            node_id[int(tok[0])] = k
            coords[k] = float(tok[1]), float(tok[2])
        if len(node_id) != n_nodes:
            raise MeshError("node count mismatch")
        elem_lines = sections["Elements"]
        n_elem = int(elem_lines[0])
        tris = []
        line_tags = {}
        for line in elem_lines[1 : 1 + n_elem]:
            tok = [int(x) for x in line.split()]
            etype, ntags = tok[1], tok[2]
            tags = tok[3 : 3 + ntags]
            nodes = [node_id[n] for n in tok[3 + ntags :]]
            if etype == 2:
                tris.append(nodes[:3])
            elif etype == 1:
                line_tags[(nodes[0], nodes[1])] = tags[0] if tags else 0
        if len(elem_lines) - 1 < n_elem:
            raise MeshError("element count mismatch")
    except (IndexError, ValueError, KeyError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed MSH file: {exc}") from exc
    if not tris:
        raise MeshError("MSH file contains no triangles")
    return build_mesh(coords, tris, line_tags=line_tags)


def save_mesh_json(mesh: Mesh, path) -> None:
    tags = [
        [int(mesh.edges[e, 0]), int(mesh.edges[e, 1]), int(t)]
        for e, t in sorted(mesh.boundary_tags.items())
    ]
    data = {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
        "boundary_tags": tags,
    }
    Path(path).write_text(json.dumps(data))


def save_mesh_msh2(mesh: Mesh, path, boundary_tag: int = 1) -> None:
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    out += [f"{k + 1} {float(x)!r} {float(y)!r} 0" for k, (x, y) in enumerate(mesh.vertices)]
    out += ["$EndNodes", "$Elements"]
    bnd = mesh.boundary_edges
    out.append(str(len(bnd) + mesh.n_triangles))
    k = 1
    for e in bnd:
        a, b = mesh.edges[e] + 1
        tag = mesh.boundary_tags.get(int(e), boundary_tag)
        out.append(f"{k} 1 2 {tag} {tag} {a} {b}")
        k += 1
    for a, b, c in mesh.triangles + 1:
        out.append(f"{k} 2 2 0 0 {a} {b} {c}")
        k += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


# --------------------------------------------------------------------- builtin


def disk_mesh(radius: float = 1.0, h: float = 0.1, center=(0.0, 0.0)) -> Mesh:
    """Structured triangulation of a disk by concentric rings.

    Ring ``k`` sits at radius ``k * radius / n`` with ``6k`` equispaced
    points; consecutive rings are stitched by merging their angular
    orderings, which gives near-equilateral triangles of size ``~h``.
    """
    if radius <= 0 or h <= 0:
        raise ValueError("radius and h must be positive")
    n = max(1, math.ceil(radius / h))
    pts = [np.zeros(2)]
    rings = [np.array([0])]
    for k in range(1, n + 1):
        m = 6 * k
        theta = 2 * np.pi * np.arange(m) / m
        r = radius * k / n
        start = len(pts)
        pts.extend(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        rings.append(np.arange(start, start + m))
    vertices = np.asarray(pts) + np.asarray(center, dtype=float)
    tris = []
    inner = rings[1]
    for a in range(len(inner)):
        tris.append([0, inner[a], inner[(a + 1) % len(inner)]])
    for k in range(2, n + 1):
        tris.extend(_stitch(rings[k - 1], rings[k]))
    return build_mesh(vertices, tris)


def _stitch(inner, outer):
    # both rings start at angle 0 and are equispaced
    m, p = len(inner), len(outer)
    i = j = 0
    out = []
    while i < m or j < p:
        next_inner = (i + 1) / m
        next_outer = (j + 1) / p
        if j < p and (i >= m or next_outer <= next_inner):
            out.append([inner[i % m], outer[j % p], outer[(j + 1) % p]])
            j += 1
        else:
            out.append([inner[i % m], outer[j % p], inner[(i + 1) % m]])
            i += 1
    return out


def square_mesh(n: int = 1, length: float = 1.0) -> Mesh:
    """Uniform ``n x n`` grid of the square ``[0, length]^2``, two triangles per cell."""
    x = np.linspace(0, length, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for r in range(n):
        for c in range(n):
            v0 = r * (n + 1) + c
            v1, v2, v3 = v0 + 1, v0 + n + 2, v0 + n + 1
            tris += [[v0, v1, v2], [v0, v2, v3]]
    return build_mesh(vertices, tris)

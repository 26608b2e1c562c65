"""Conforming triangulations of planar polygonal domains.

Provides the uniform right-triangle meshes of the unit square used by the
convergence studies, nested red refinement, and a mesh audit that checks the
edge-wise cotangent condition of Xu & Zikatanov (1999).  That condition (for
every internal edge, the sum over adjacent triangles of the cotangent of the
angle opposite the edge is nonnegative) guarantees that the P1 stiffness
matrix of the Laplacian on interior nodes is an M-matrix, which the monotone
time-stepping schemes rely on.

An edge is called *internal* when it contains at least one interior vertex;
only internal edges enter the audit and carry stabilization weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: slack on the cotangent sums so exactly-right angles (cot = 0) pass in
#: floating point
XZ_TOL = 1e-12

_AREA_TOL = 1e-14


class MeshError(ValueError):
    """Invalid mesh data (degenerate, non-conforming, bad indices)."""


class MeshIOError(OSError):
    """Unreadable or malformed mesh file."""


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


@dataclass(frozen=True)
class MeshAudit:
    """Result of the admissibility audit of a mesh.

    Attributes:
        xz_pass: True when every internal edge has a nonnegative
            opposite-angle cotangent sum (up to ``XZ_TOL``).
        worst_edge_cot_sum: minimum cotangent sum over internal edges
            (``inf`` when the mesh has no internal edge).
        shape_regularity_delta: max over elements of diam(K) / inradius(K).
        max_h: maximum element diameter.
    """

    xz_pass: bool
    worst_edge_cot_sum: float
    shape_regularity_delta: float
    max_h: float


class Mesh:
    """Conforming triangulation with edge/vertex adjacency and boundary flags.

    Attributes:
        vertices:        (nv, 2) float coordinates.
        triangles:       (nt, 3) vertex indices, positively oriented.
        edges:           (ne, 2) vertex indices with edges[i, 0] < edges[i, 1].
        edge_length:     (ne,) edge diameters.
        edge_tangent:    (ne, 2) unit tangents, oriented low index -> high
                         index; the orientation never affects assembled
                         operators (only t (x) t products are used).
        edge_tris:       (ne, 2) adjacent triangle indices, -1 padding.
        tri_edges:       (nt, 3) edge index opposite each local vertex.
        tri_area:        (nt,) triangle areas (> 0).
        tri_diam:        (nt,) triangle diameters (longest edge).
        boundary_vertex: (nv,) bool.
        boundary_edge:   (ne,) bool, true when the edge lies in exactly one
                         triangle (or was flagged in an input file).
        internal_edge:   (ne,) bool, true when the edge contains at least one
                         interior vertex.
        parent:          (nt,) index of the parent triangle when the mesh was
                         produced by ``refine_uniform``, else None.
    """

    def __init__(self, vertices, triangles, boundary_vertex=None, parent=None):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an (nt, 3) array")
        if not np.isfinite(vertices).all():
            raise MeshError("non-finite vertex coordinates")
        nv = len(vertices)
        if len(triangles) == 0:
            raise MeshError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= nv:
            raise MeshError("triangle vertex index out of range")

        # enforce positive orientation; zero area is a hard error
        p = vertices[triangles]
        cross = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        flip = cross < 0
        if flip.any():
            triangles = triangles.copy()
            tmp = triangles[flip, 1].copy()
            triangles[flip, 1] = triangles[flip, 2]
            triangles[flip, 2] = tmp
            p = vertices[triangles]
            cross = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        area = 0.5 * cross
        if (area <= _AREA_TOL).any():
            raise MeshError("degenerate (zero-area) triangle")

        used = np.zeros(nv, dtype=bool)
        used[triangles] = True
        if not used.all():
            raise MeshError("vertices not referenced by any triangle")

        self.vertices = vertices
        self.triangles = triangles
        self.tri_area = area
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64)

        self._build_edges()

        if boundary_vertex is not None:
            extra = np.asarray(boundary_vertex, dtype=bool)
            if extra.shape != (nv,):
                raise MeshError("boundary_vertex must have one flag per vertex")
            self.boundary_vertex = self.boundary_vertex | extra
            self.internal_edge = ~(
                self.boundary_vertex[self.edges[:, 0]]
                & self.boundary_vertex[self.edges[:, 1]]
            )

        self._neighbors = None
        for arr in (self.vertices, self.triangles, self.edges, self.tri_area):
            arr.setflags(write=False)

    def _build_edges(self):
        tri = self.triangles
        nt = len(tri)
        # local edge `loc` is opposite local vertex `loc`
        pairs = np.stack(
            [tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=1
        ).reshape(-1, 2)
        pairs_sorted = np.sort(pairs, axis=1)
        edges, inverse, counts = np.unique(
            pairs_sorted, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if counts.max() > 2:
            raise MeshError("edge shared by more than two triangles")

        self.edges = edges
        self.tri_edges = inverse.reshape(nt, 3)

        ne = len(edges)
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        owner = np.repeat(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_e, sorted_t = inverse[order], owner[order]
        first = np.r_[True, sorted_e[1:] != sorted_e[:-1]]
        edge_tris[sorted_e[first], 0] = sorted_t[first]
        edge_tris[sorted_e[~first], 1] = sorted_t[~first]
        self.edge_tris = edge_tris
        single = edge_tris[:, 1] < 0

        # conformity: an interior edge must be traversed in opposite senses
        # by its two triangles (rules out overlaps and folds)
        sense = np.zeros(ne, dtype=np.int64)
        forward = pairs[:, 0] < pairs[:, 1]
        np.add.at(sense, inverse, np.where(forward, 1, -1))
        if (sense[~single] != 0).any():
            raise MeshError("inconsistent triangle orientations across an edge")

        vec = self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]
        self.edge_length = np.hypot(vec[:, 0], vec[:, 1])
        self.edge_tangent = vec / self.edge_length[:, None]

        self.tri_diam = self.edge_length[self.tri_edges].max(axis=1)

        self.boundary_edge = single
        bv = np.zeros(len(self.vertices), dtype=bool)
        bv[edges[single].ravel()] = True
        self.boundary_vertex = bv
        self.internal_edge = ~(bv[edges[:, 0]] & bv[edges[:, 1]])

    # ------------------------------------------------------------------
    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_vertex)

    @property
    def h(self) -> float:
        """Maximum element diameter."""
        return float(self.tri_diam.max())

    def vertex_neighbors(self, i: int) -> np.ndarray:
        """Indices of vertices sharing an edge with vertex ``i``."""
        if self._neighbors is None:
            nbr = [[] for _ in range(self.num_vertices)]
            for a, b in self.edges:
                nbr[a].append(b)
                nbr[b].append(a)
            self._neighbors = [np.array(sorted(s), dtype=np.int64) for s in nbr]
        return self._neighbors[i]


def generate_uniform_unit_square(n: int) -> Mesh:
    """Uniform mesh of the closed unit square with 2*n**2 right triangles.

    Every grid square is split along the same diagonal, from its lower-left
    to its upper-right corner, so the family stays shape-regular with one
    constant and refinement by doubling n is nested.
    """
    if n < 1:
        raise MeshError("n must be a positive integer")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    a = (jj * (n + 1) + ii).ravel()
    b = a + 1
    c = b + (n + 1)
    d = a + (n + 1)
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])
    return Mesh(vertices, tris)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into 4 children via edge midpoints.

    Parent vertices keep their indices and exact coordinates; each child lies
    inside its parent, so the refined mesh is nested in the input mesh.
    """
    nv = mesh.num_vertices
    mid_id = nv + np.arange(mesh.num_edges)
    midpoints = 0.5 * (
        mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]]
    )
    vertices = np.vstack([mesh.vertices, midpoints])

    tri = mesh.triangles
    m0 = mid_id[mesh.tri_edges[:, 0]]  # midpoint of the edge opposite vertex 0
    m1 = mid_id[mesh.tri_edges[:, 1]]
    m2 = mid_id[mesh.tri_edges[:, 2]]
    children = np.empty((mesh.num_triangles, 4, 3), dtype=np.int64)
    children[:, 0] = np.column_stack([tri[:, 0], m2, m1])
    children[:, 1] = np.column_stack([m2, tri[:, 1], m0])
    children[:, 2] = np.column_stack([m1, m0, tri[:, 2]])
    children[:, 3] = np.column_stack([m0, m1, m2])
    parent = np.repeat(np.arange(mesh.num_triangles), 4)
    return Mesh(vertices, children.reshape(-1, 3), parent=parent)


def audit(mesh: Mesh) -> MeshAudit:
    """Audit edge cotangent sums, shape regularity and mesh size.

    For each audited edge E the quantity checked is
    ``sum_{K containing E} cot(angle opposite E in K)``; the mesh passes when
    the minimum is >= -XZ_TOL.  The monotonicity argument only needs the
    condition on internal edges, but the audit conservatively also covers
    edges shared by two triangles whose endpoints both sit on the boundary.
    """
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    if (mesh.tri_area <= _AREA_TOL).any():
        raise MeshError("degenerate (zero-area) triangle")
    # cot of the angle at local vertex `loc` = angle opposite local edge `loc`
    va = p[:, [1, 2, 0]] - p
    vb = p[:, [2, 0, 1]] - p
    cot = np.einsum("tlx,tlx->tl", va, vb) / (2.0 * mesh.tri_area)[:, None]
    sums = np.zeros(mesh.num_edges)
    np.add.at(sums, mesh.tri_edges.ravel(), cot.ravel())
    checked = mesh.internal_edge | ~mesh.boundary_edge
    worst = float(sums[checked].min()) if checked.any() else np.inf

    # inradius = area / semiperimeter
    semi = 0.5 * mesh.edge_length[mesh.tri_edges].sum(axis=1)
    delta = float((mesh.tri_diam * semi / mesh.tri_area).max())
    return MeshAudit(
        xz_pass=bool(worst >= -XZ_TOL),
        worst_edge_cot_sum=worst,
        shape_regularity_delta=delta,
        max_h=mesh.h,
    )


# ----------------------------------------------------------------------
# text format: header "d=2 nv=<int> nt=<int>", then "v x y [b]" lines,
# then "t i j k" lines (0-based)


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"d=2 nv={mesh.num_vertices} nt={mesh.num_triangles}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary_vertex):
            fh.write(f"v {float(x)!r} {float(y)!r} {int(b)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"t {int(i)} {int(j)} {int(k)}\n")


def load_mesh(path) -> Mesh:
    try:
        with open(path, encoding="ascii") as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
    except OSError as exc:
        raise MeshIOError(f"cannot read mesh file {path}: {exc}") from exc
    if not lines:
        raise MeshIOError(f"empty mesh file {path}")
    try:
        header = dict(item.split("=") for item in lines[0])
        if int(header["d"]) != 2:
            raise MeshIOError("only d=2 meshes are supported")
        nv, nt = int(header["nv"]), int(header["nt"])
        verts, flags, tris = [], [], []
        for parts in lines[1:]:
            if parts[0] == "v":
                verts.append((float(parts[1]), float(parts[2])))
                flags.append(len(parts) > 3 and parts[3] == "1")
            elif parts[0] == "t":
                tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                raise MeshIOError(f"unknown record {parts[0]!r}")
        if len(verts) != nv or len(tris) != nt:
            raise MeshIOError("header counts do not match records")
    except MeshIOError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise MeshIOError(f"malformed mesh file {path}: {exc}") from exc
    flags_arr = np.array(flags, dtype=bool)
    return Mesh(verts, tris, boundary_vertex=flags_arr if flags_arr.any() else None)

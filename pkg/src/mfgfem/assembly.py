"""P1 finite elements on interior nodes: mass lumping and stabilized operators.

The discrete space is the span of nodal hat functions over interior vertices
(homogeneous Dirichlet data is imposed by eliminating boundary nodes).  The
lumped inner product is ``(w, v)_lump = sum_i mu_i w_i v_i`` with node masses
``mu_i = integral of the hat function = (support area) / 3``, and it induces
a diagonal mass matrix, which is what makes the implicit Euler steps of the
transport solvers monotone.

Advection is stabilized with a per-element artificial diffusion tensor

    D|_K = sum over internal edges E of K of  omega_E * t_E (x) t_E,

where t_E is a unit tangent.  With edge weights omega_E proportional to the
edge length (above an explicit shape-dependent threshold), the operator
``v -> (nu I + D) grad v . grad phi + b . grad v phi`` has an M-matrix sign
structure for any advection field bounded by the Hamiltonian's Lipschitz
constant, hence solutions with nonnegative data stay nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, audit
from .quadrature import triangle_rule


@dataclass(frozen=True)
class SparseOperator:
    """CSR matrix over interior dofs with a symmetry tag."""

    matrix: sp.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self):
        return self.matrix.toarray()


class FeSpace:
    """P1 space on the interior vertices of a mesh.

    Attributes:
        mesh:        the underlying triangulation.
        ndof:        number of interior vertices.
        dof_vertex:  (ndof,) vertex index of each dof.
        vertex_dof:  (nv,) dof index per vertex, -1 on the boundary.
        tri_dof:     (nt, 3) dof index per local vertex, -1 on the boundary.
        lumped_mass: (ndof,) node masses mu_i > 0.
        grads:       (nt, 3, 2) constant basis gradients per element.
        quad_bary:   (nq, 3) barycentric quadrature points.
        quad_w:      (nq,) quadrature weights summing to 1.
        quad_xy:     (nt, nq, 2) physical quadrature points.
        centroids:   (nt, 2) element centroids.
    """

    def __init__(self, mesh: Mesh, quadrature_degree: int = 6):
        self.mesh = mesh
        self.quadrature_degree = quadrature_degree

        self.dof_vertex = mesh.interior_vertices
        self.ndof = len(self.dof_vertex)
        vertex_dof = -np.ones(mesh.num_vertices, dtype=np.int64)
        vertex_dof[self.dof_vertex] = np.arange(self.ndof)
        self.vertex_dof = vertex_dof
        self.tri_dof = vertex_dof[mesh.triangles]

        mu = np.zeros(self.ndof)
        contrib = np.repeat(mesh.tri_area / 3.0, 3)
        dofs = self.tri_dof.ravel()
        keep = dofs >= 0
        np.add.at(mu, dofs[keep], contrib[keep])
        self.lumped_mass = mu

        p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
        # grad of hat j on K is perp(p_{j+2} - p_{j+1}) / (2 |K|)
        e = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
        perp = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        self.grads = perp / (2.0 * mesh.tri_area)[:, None, None]

        self.quad_bary, self.quad_w = triangle_rule(quadrature_degree)
        self.quad_xy = np.einsum("qj,tjx->tqx", self.quad_bary, p)
        self.centroids = p.mean(axis=1)

        self._grad_ops = None
        self._cell_load = None

    # -- derived sparse helpers, built lazily ---------------------------
    @property
    def grad_operators(self):
        """Sparse (nt, ndof) maps u -> per-element du/dx and du/dy."""
        if self._grad_ops is None:
            nt = self.mesh.num_triangles
            rows = np.repeat(np.arange(nt), 3)
            cols = self.tri_dof.ravel()
            keep = cols >= 0
            ops = []
            for comp in range(2):
                vals = self.grads[:, :, comp].ravel()
                ops.append(
                    sp.csr_matrix(
                        (vals[keep], (rows[keep], cols[keep])),
                        shape=(nt, self.ndof),
                    )
                )
            self._grad_ops = tuple(ops)
        return self._grad_ops

    @property
    def cell_load_matrix(self):
        """Sparse (ndof, nt): cell values c_K -> loads integral c * hat_i."""
        if self._cell_load is None:
            nt = self.mesh.num_triangles
            cols = np.repeat(np.arange(nt), 3)
            rows = self.tri_dof.ravel()
            keep = rows >= 0
            vals = np.repeat(self.mesh.tri_area / 3.0, 3)
            self._cell_load = sp.csr_matrix(
                (vals[keep], (rows[keep], cols[keep])),
                shape=(self.ndof, nt),
            )
        return self._cell_load


def build_fespace(mesh: Mesh, quadrature_degree: int = 6) -> FeSpace:
    return FeSpace(mesh, quadrature_degree)


# ----------------------------------------------------------------------
# stabilization


@dataclass(frozen=True)
class StabilizationTensor:
    """Per-element artificial diffusion D and combined tensor A = nu I + D."""

    nu: float
    weights: np.ndarray  # (ne,), zero on non-internal edges
    D: np.ndarray  # (nt, 2, 2)
    A: np.ndarray  # (nt, 2, 2)


def default_weights(mesh: Mesh, lipschitz: float, c_w: float = 1.0) -> np.ndarray:
    """Edge weights ``c_w * L_H * diam(E)`` on internal edges.

    The monotonicity proof needs ``omega_E > delta * L_H * diam(E) / 6`` in
    two dimensions (delta the shape-regularity constant), i.e. c_w > delta/6;
    weight factors at or below the threshold are rejected.  A zero Lipschitz
    constant disables stabilization entirely (no advection to dominate).
    """
    if lipschitz < 0:
        raise ValueError("lipschitz bound must be nonnegative")
    weights = np.zeros(mesh.num_edges)
    if lipschitz == 0.0:
        return weights
    delta = audit(mesh).shape_regularity_delta
    threshold = delta / 6.0
    if c_w <= threshold:
        raise ValueError(
            f"weight factor c_w={c_w:g} too small for the discrete maximum "
            f"principle: need c_w > delta/6 = {threshold:.6g}"
        )
    internal = mesh.internal_edge
    weights[internal] = c_w * lipschitz * mesh.edge_length[internal]
    return weights


def build_stabilization(mesh: Mesh, weights, nu: float = 1.0) -> StabilizationTensor:
    """Assemble D|_K = sum of omega_E t_E (x) t_E over internal edges of K."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (mesh.num_edges,):
        raise ValueError("need one weight per edge")
    if (weights < 0).any():
        raise ValueError("weights must be nonnegative")
    w_eff = np.where(mesh.internal_edge, weights, 0.0)
    t = mesh.edge_tangent
    outer = np.einsum("ei,ej->eij", t, t)
    D = np.einsum("te,teij->tij", w_eff[mesh.tri_edges], outer[mesh.tri_edges])
    A = D + nu * np.eye(2)
    return StabilizationTensor(nu=nu, weights=w_eff, D=D, A=A)


# ----------------------------------------------------------------------
# operator assembly


def _accumulate(fes: FeSpace, local, include_boundary: bool, symmetric: bool):
    """Assemble (nt, 3, 3) local matrices into CSR over dofs or vertices."""
    if include_boundary:
        idx = fes.mesh.triangles
        n = fes.mesh.num_vertices
    else:
        idx = fes.tri_dof
        n = fes.ndof
    rows = np.repeat(idx, 3, axis=1).ravel()
    cols = np.tile(idx, (1, 3)).ravel()
    vals = local.ravel()
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
    return SparseOperator(matrix=mat.tocsr(), symmetric=symmetric)


def assemble_stiffness(fes: FeSpace, tensor=None, include_boundary=False) -> SparseOperator:
    """Stiffness matrix ``integral (T grad hat_j) . grad hat_i`` (T = I if None)."""
    g = fes.grads
    if tensor is None:
        tg = g
    else:
        tg = np.einsum("txy,tjy->tjx", np.asarray(tensor), g)
    local = np.einsum("tix,tjx->tij", g, tg) * fes.mesh.tri_area[:, None, None]
    return _accumulate(fes, local, include_boundary, symmetric=True)


def assemble_diffusion(fes: FeSpace, stab: StabilizationTensor, include_boundary=False) -> SparseOperator:
    """Stiffness matrix of the full diffusion tensor A = nu I + D."""
    return assemble_stiffness(fes, stab.A, include_boundary)


def assemble_convection(fes: FeSpace, b_elem, include_boundary=False) -> SparseOperator:
    """Transport matrix ``C_ij = integral hat_j (b . grad hat_i)``.

    ``b_elem`` is a (nt, 2) array of per-element constant drifts; the
    integral is exact since ``integral_K hat_j = |K| / 3``.
    """
    b_elem = np.asarray(b_elem, dtype=float)
    bg = np.einsum("tx,tix->ti", b_elem, fes.grads) * (fes.mesh.tri_area / 3.0)[:, None]
    local = np.repeat(bg[:, :, None], 3, axis=2)  # independent of column j
    return _accumulate(fes, local, include_boundary, symmetric=False)


def assemble_consistent_mass(fes: FeSpace, include_boundary=False) -> SparseOperator:
    """Exact P1 mass matrix |K|/12 * (1 + delta_ij) per element."""
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = fes.mesh.tri_area[:, None, None] * base[None]
    return _accumulate(fes, local, include_boundary, symmetric=True)


# ----------------------------------------------------------------------
# loads, interpolation-type operators, norms


def _values_at_quad(fes: FeSpace, f):
    """Evaluate f on the quadrature grid; accepts callables f(x, y) or arrays."""
    if callable(f):
        vals = f(fes.quad_xy[..., 0], fes.quad_xy[..., 1])
        return np.broadcast_to(np.asarray(vals, dtype=float), fes.quad_xy.shape[:2])
    vals = np.asarray(f, dtype=float)
    if vals.shape != fes.quad_xy.shape[:2]:
        raise ValueError("value array must have shape (nt, nq)")
    return vals


def assemble_load(fes: FeSpace, f) -> np.ndarray:
    """Load vector ``integral f hat_i`` by element quadrature."""
    vals = _values_at_quad(fes, f)
    local = (vals * fes.quad_w) @ fes.quad_bary  # (nt, 3)
    local *= fes.mesh.tri_area[:, None]
    return _scatter_local_loads(fes, local)


def assemble_flux_load(fes: FeSpace, q) -> np.ndarray:
    """Load vector ``integral q . grad hat_i`` for a vector field q.

    ``q`` is a callable ``q(x, y) -> (..., 2)`` or an array of values at the
    quadrature points with shape (nt, nq, 2); the basis gradients are
    constant per element, so only the quadrature average of q enters.
    """
    if callable(q):
        vals = np.asarray(q(fes.quad_xy[..., 0], fes.quad_xy[..., 1]), dtype=float)
    else:
        vals = np.asarray(q, dtype=float)
    if vals.shape != fes.quad_xy.shape:
        raise ValueError("flux values must have shape (nt, nq, 2)")
    mean = np.einsum("tqx,q->tx", vals, fes.quad_w)
    local = np.einsum("tx,tjx->tj", mean, fes.grads) * fes.mesh.tri_area[:, None]
    return _scatter_local_loads(fes, local)


def _scatter_local_loads(fes: FeSpace, local) -> np.ndarray:
    out = np.zeros(fes.ndof)
    dofs = fes.tri_dof.ravel()
    keep = dofs >= 0
    np.add.at(out, dofs[keep], local.ravel()[keep])
    return out


def lumped_riesz(fes: FeSpace, f) -> np.ndarray:
    """Nodal projection ``(hat_i, f) / (hat_i, 1)`` onto interior nodes.

    Satisfies ``(v, R f)_lump = (v, f)_L2`` for every discrete v (up to the
    quadrature of the numerator).
    """
    return assemble_load(fes, f) / fes.lumped_mass


def point_values(fes: FeSpace, u: np.ndarray) -> np.ndarray:
    """Values of the P1 function with dof vector u at the quadrature points."""
    coeff = np.where(fes.tri_dof >= 0, u[np.clip(fes.tri_dof, 0, None)], 0.0)
    return coeff @ fes.quad_bary.T  # (nt, nq)


def element_gradients(fes: FeSpace, u: np.ndarray) -> np.ndarray:
    """Per-element constant gradient of the P1 function with dof vector u."""
    gx, gy = fes.grad_operators
    return np.column_stack([gx @ u, gy @ u])


def lumped_inner(fes: FeSpace, u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(fes.lumped_mass * u, v))


def lumped_norm(fes: FeSpace, v: np.ndarray) -> float:
    return float(np.sqrt(np.dot(fes.lumped_mass, v * v)))


def dual_norm(fes: FeSpace, stiffness_solver, w: np.ndarray) -> float:
    """Discrete dual norm ``sup_v (w, v)_lump / |v|_K`` via the Riesz solve.

    ``stiffness_solver`` solves the SPD system K z = r for the stiffness
    matrix defining the gradient norm ``|v|_K^2 = v' K v``; the supremum is
    attained at z with K z = M_lump w and equals sqrt(z' K z).
    """
    rhs = fes.lumped_mass * w
    z = stiffness_solver(rhs)
    return float(np.sqrt(max(np.dot(z, rhs), 0.0)))


def dump_operator(op: SparseOperator, path) -> None:
    """Write the matrix as ``i j value`` lines (debugging aid)."""
    coo = op.matrix.tocoo()
    with open(path, "w", encoding="ascii") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v!r}\n")

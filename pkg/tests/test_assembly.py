import math

import numpy as np
import pytest
import scipy.sparse as sp

from mfgfem import (
    assemble_consistent_mass,
    assemble_convection,
    assemble_diffusion,
    assemble_load,
    assemble_stiffness,
    build_fespace,
    build_stabilization,
    default_weights,
    dual_norm,
    element_gradients,
    factorize,
    generate_uniform_unit_square,
    lumped_inner,
    lumped_norm,
    lumped_riesz,
    point_values,
)

SQ2 = math.sqrt(2.0)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_lumped_mass_values(n):
    fes = build_fespace(generate_uniform_unit_square(n))
    # every interior vertex of the uniform family touches 6 triangles
    assert np.allclose(fes.lumped_mass, 1.0 / n**2, atol=1e-15)


def test_single_dof_mass():
    fes = build_fespace(generate_uniform_unit_square(2))
    assert fes.ndof == 1
    assert fes.lumped_mass[0] == pytest.approx(0.25, abs=1e-15)


def test_partition_of_unity_gradients():
    fes = build_fespace(generate_uniform_unit_square(4))
    assert np.abs(fes.grads.sum(axis=1)).max() <= 1e-14


def test_laplacian_five_point_structure():
    fes = build_fespace(generate_uniform_unit_square(2))
    k = assemble_stiffness(fes).toarray()
    assert k == pytest.approx(np.array([[4.0]]), abs=1e-13)
    fes = build_fespace(generate_uniform_unit_square(4))
    k = assemble_stiffness(fes).matrix
    assert np.allclose(k.diagonal(), 4.0, atol=1e-13)


def test_default_weights_threshold():
    mesh = generate_uniform_unit_square(4)
    w = default_weights(mesh, 1.0, 1.0)
    internal = mesh.internal_edge
    assert np.allclose(w[internal], mesh.edge_length[internal], atol=1e-15)
    assert (w[~internal] == 0).all()
    with pytest.raises(ValueError, match="0.8047"):
        default_weights(mesh, 1.0, 0.5)


def test_zero_lipschitz_means_no_stabilization():
    mesh = generate_uniform_unit_square(4)
    w = default_weights(mesh, 0.0, 1.0)
    assert (w == 0).all()
    stab = build_stabilization(mesh, w, nu=1.0)
    assert np.abs(stab.D).max() == 0.0


def test_stabilization_matches_edge_sum():
    mesh = generate_uniform_unit_square(4)
    w = default_weights(mesh, 1.0, 1.0)
    stab = build_stabilization(mesh, w, nu=2.0)
    for t in range(mesh.num_triangles):
        expected = np.zeros((2, 2))
        for e in mesh.tri_edges[t]:
            if mesh.internal_edge[e]:
                tang = mesh.edge_tangent[e]
                expected += w[e] * np.outer(tang, tang)
        assert np.allclose(stab.D[t], expected, atol=1e-15)
        assert np.allclose(stab.A[t], expected + 2.0 * np.eye(2), atol=1e-15)


def test_stabilization_positive_semidefinite():
    mesh = generate_uniform_unit_square(5)
    stab = build_stabilization(mesh, default_weights(mesh, 1.0, 1.0), nu=1.0)
    eigs = np.linalg.eigvalsh(stab.D)
    assert eigs.min() >= -1e-14


def test_no_internal_edges_means_zero_tensor():
    mesh = generate_uniform_unit_square(1)
    stab = build_stabilization(mesh, np.zeros(mesh.num_edges), nu=1.0)
    assert np.abs(stab.D).max() == 0.0


def test_stabilization_offdiagonal_identity():
    # assembled entries equal the closed formula -w_E |K_E| / diam(E)^2
    for n in (2, 4, 8):
        mesh = generate_uniform_unit_square(n)
        w = default_weights(mesh, 1.0, 1.0)
        fes = build_fespace(mesh, quadrature_degree=2)
        stab = build_stabilization(mesh, w, nu=0.0)
        full = assemble_stiffness(fes, stab.D, include_boundary=True).matrix.tocsr()
        for e in range(mesh.num_edges):
            i, j = mesh.edges[e]
            tris = mesh.edge_tris[e]
            area = mesh.tri_area[tris[tris >= 0]].sum()
            expected = -w[e] * area / mesh.edge_length[e] ** 2
            assert abs(full[i, j] - expected) <= 1e-12


def test_laplacian_row_sums_vanish():
    fes = build_fespace(generate_uniform_unit_square(4))
    full = assemble_stiffness(fes, include_boundary=True).matrix
    rows = np.asarray(full.sum(axis=1)).ravel()
    interior = fes.mesh.interior_vertices
    assert np.abs(rows[interior]).max() <= 1e-13


# ----------------------------------------------------------------------
# convection


def test_convection_zero_drift():
    fes = build_fespace(generate_uniform_unit_square(3))
    c = assemble_convection(fes, np.zeros((fes.mesh.num_triangles, 2)))
    assert c.matrix.nnz == 0 or np.abs(c.matrix.data).max() == 0.0


def test_convection_constant_drift_row_sums():
    fes = build_fespace(generate_uniform_unit_square(4))
    b = np.tile([0.3, -0.7], (fes.mesh.num_triangles, 1))
    full = assemble_convection(fes, b, include_boundary=True).matrix
    rows = np.asarray(full.sum(axis=1)).ravel()
    assert np.abs(rows[fes.mesh.interior_vertices]).max() <= 1e-13


def test_convection_single_element_value():
    # on the two-triangle unit square with b = (1, 0), the entry pairing the
    # origin's hat with the (1,0)-vertex hat comes only from the lower
    # triangle: |K|/3 * (b . grad hat_0) = 1/6 * (-1)
    mesh = generate_uniform_unit_square(1)
    fes = build_fespace(mesh)
    b = np.tile([1.0, 0.0], (2, 1))
    full = assemble_convection(fes, b, include_boundary=True).matrix.tocsr()
    i = int(np.flatnonzero((mesh.vertices == [0.0, 0.0]).all(axis=1))[0])
    j = int(np.flatnonzero((mesh.vertices == [1.0, 0.0]).all(axis=1))[0])
    assert full[i, j] == pytest.approx(-1.0 / 6.0, abs=1e-15)


# ----------------------------------------------------------------------
# lumped products, projections, dual norms


def test_lumped_riesz_constants():
    fes = build_fespace(generate_uniform_unit_square(4))
    assert np.allclose(lumped_riesz(fes, lambda x, y: np.ones_like(x)), 1.0, atol=1e-13)
    assert np.abs(lumped_riesz(fes, lambda x, y: np.zeros_like(x))).max() == 0.0


def test_riesz_identity_for_polynomial_data(rng):
    # (v, R w)_lump = (v, w)_L2 for discrete v; degree-6 rule integrates the
    # degree-4 product exactly
    fes = build_fespace(generate_uniform_unit_square(4))
    w = lambda x, y: x**2 * y + y**3
    rw = lumped_riesz(fes, w)
    v = rng.standard_normal(fes.ndof)
    lhs = lumped_inner(fes, v, rw)
    wvals = w(fes.quad_xy[..., 0], fes.quad_xy[..., 1])
    vvals = point_values(fes, v)
    rhs = float((((wvals * vvals) @ fes.quad_w) * fes.mesh.tri_area).sum())
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_lumped_norm_dominates_l2(rng):
    fes = build_fespace(generate_uniform_unit_square(5))
    mass = assemble_consistent_mass(fes).matrix
    for _ in range(100):
        v = rng.standard_normal(fes.ndof)
        l2 = math.sqrt(v @ (mass @ v))
        assert l2 <= lumped_norm(fes, v) + 1e-14


def test_lumped_norm_equivalence_monitored(rng):
    worst = 0.0
    for n in (2, 4, 8, 16):
        fes = build_fespace(generate_uniform_unit_square(n))
        mass = assemble_consistent_mass(fes).matrix
        for _ in range(20):
            v = rng.standard_normal(fes.ndof)
            ratio = lumped_norm(fes, v) / math.sqrt(v @ (mass @ v))
            worst = max(worst, ratio)
    # scaling theory for affine elements gives a dimension-only constant
    assert worst < 2.5


def test_basis_function_lumped_norm():
    fes = build_fespace(generate_uniform_unit_square(4))
    v = np.zeros(fes.ndof)
    v[3] = 1.0
    assert lumped_norm(fes, v) ** 2 == pytest.approx(fes.lumped_mass[3], rel=1e-14)


def test_dual_norm_single_dof():
    fes = build_fespace(generate_uniform_unit_square(2))
    stiff = assemble_stiffness(fes)
    solver = factorize(stiff)
    w = np.array([3.7])
    got = dual_norm(fes, lambda r: solver.solve(r)[0], w)
    mu, k11 = fes.lumped_mass[0], stiff.toarray()[0, 0]
    assert got == pytest.approx(mu * abs(w[0]) / math.sqrt(k11), rel=1e-12)


def test_dual_norm_zero():
    fes = build_fespace(generate_uniform_unit_square(2))
    solver = factorize(assemble_stiffness(fes))
    assert dual_norm(fes, lambda r: solver.solve(r)[0], np.zeros(1)) == 0.0


def test_dual_norm_supremum_attained(rng):
    fes = build_fespace(generate_uniform_unit_square(4))
    stiff = assemble_stiffness(fes)
    solver = factorize(stiff)
    w = rng.standard_normal(fes.ndof)
    got = dual_norm(fes, lambda r: solver.solve(r)[0], w)
    z, _ = solver.solve(fes.lumped_mass * w)
    ratio = lumped_inner(fes, w, z) / math.sqrt(z @ (stiff @ z))
    assert ratio == pytest.approx(got, rel=1e-12)


# ----------------------------------------------------------------------
# monotone sign structure


def _random_admissible_drift(rng, nt, lipschitz):
    ang = rng.uniform(0, 2 * np.pi, nt)
    mag = rng.uniform(0, lipschitz, nt)
    return np.column_stack([mag * np.cos(ang), mag * np.sin(ang)])


def test_offdiagonal_sign_structure(rng):
    mesh = generate_uniform_unit_square(6)
    fes = build_fespace(mesh)
    stab = build_stabilization(mesh, default_weights(mesh, 1.0, 1.0), nu=1.0)
    tau = 0.1
    for _ in range(5):
        b = _random_admissible_drift(rng, mesh.num_triangles, 1.0)
        ka = assemble_diffusion(fes, stab).matrix
        c = assemble_convection(fes, b).matrix
        step = sp.diags(fes.lumped_mass / tau) + ka + c
        offdiag = step - sp.diags(step.diagonal())
        assert offdiag.data.max(initial=0.0) <= 1e-13


def test_strict_negativity_of_stabilized_neighbours(rng):
    # the stabilization-plus-transport pairing of neighbouring hats is
    # strictly negative for any drift below the Lipschitz bound
    mesh = generate_uniform_unit_square(5)
    fes = build_fespace(mesh)
    stab = build_stabilization(mesh, default_weights(mesh, 1.0, 1.0), nu=0.0)
    kd = assemble_stiffness(fes, stab.D, include_boundary=True).matrix.tocsr()
    for _ in range(5):
        b = _random_admissible_drift(rng, mesh.num_triangles, 1.0)
        conv = assemble_convection(fes, b, include_boundary=True).matrix.tocsr()
        pair = kd + conv.T  # entry (i, j): (D grad hat_j, grad hat_i) + (b.grad hat_j, hat_i)
        for e in np.flatnonzero(mesh.internal_edge):
            i, j = mesh.edges[e]
            assert pair[i, j] < 0
            assert pair[j, i] < 0


def test_monotone_inverse_on_nonnegative_data(rng):
    mesh = generate_uniform_unit_square(6)
    fes = build_fespace(mesh)
    stab = build_stabilization(mesh, default_weights(mesh, 1.0, 1.0), nu=1.0)
    tau = 0.05
    b = _random_admissible_drift(rng, mesh.num_triangles, 1.0)
    step = (
        sp.diags(fes.lumped_mass / tau)
        + assemble_diffusion(fes, stab).matrix
        + assemble_convection(fes, b).matrix
    )
    solver = factorize(step)
    for _ in range(50):
        rhs = rng.uniform(0.0, 1.0, fes.ndof)
        x, _ = solver.solve(rhs)
        assert x.min() >= -1e-12


# ----------------------------------------------------------------------
# loads and gradients


def test_load_of_affine_function_matches_mass_action():
    # an affine f equals its nodal interpolant, so integral(f hat_i) is the
    # consistent mass matrix acting on the vertex values of f
    mesh = generate_uniform_unit_square(3)
    fes = build_fespace(mesh)
    f = lambda x, y: 2.0 * x - y + 1.0
    load = assemble_load(fes, f)
    mass_full = assemble_consistent_mass(fes, include_boundary=True).matrix
    expected = (mass_full @ f(mesh.vertices[:, 0], mesh.vertices[:, 1]))
    assert np.allclose(load, expected[fes.dof_vertex], atol=1e-14)


def test_element_gradients_of_interpolant():
    fes = build_fespace(generate_uniform_unit_square(4))
    nodes = fes.mesh.vertices[fes.dof_vertex]
    u = 3.0 * nodes[:, 0] - 2.0 * nodes[:, 1]
    grads = element_gradients(fes, u)
    # elements whose three vertices are all interior carry the exact gradient
    inner = (fes.tri_dof >= 0).all(axis=1)
    assert inner.any()
    assert np.allclose(grads[inner], [3.0, -2.0], atol=1e-12)

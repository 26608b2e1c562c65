import math

import numpy as np
import pytest

from mfgfem import (
    Mesh,
    MeshError,
    MeshIOError,
    audit,
    generate_uniform_unit_square,
    load_mesh,
    refine_uniform,
    save_mesh,
)


def test_smallest_grid():
    mesh = generate_uniform_unit_square(1)
    assert mesh.num_vertices == 4
    assert mesh.num_triangles == 2
    assert len(mesh.interior_vertices) == 0
    assert mesh.h == pytest.approx(math.sqrt(2.0), abs=1e-15)


def test_coarsest_study_mesh():
    mesh = generate_uniform_unit_square(2)
    assert mesh.num_vertices == 9
    assert mesh.num_triangles == 8
    assert len(mesh.interior_vertices) == 1
    # the coarsest abscissa of the convergence study
    assert mesh.h == pytest.approx(0.7071068, abs=1e-7)


def test_vertex_and_triangle_counts():
    mesh = generate_uniform_unit_square(4)
    assert mesh.num_vertices == 25
    assert mesh.num_triangles == 32
    assert len(mesh.interior_vertices) == 9


def test_zero_subdivisions_rejected():
    with pytest.raises(MeshError):
        generate_uniform_unit_square(0)


def test_positive_areas_and_coverage():
    mesh = generate_uniform_unit_square(5)
    assert (mesh.tri_area > 0).all()
    assert mesh.tri_area.sum() == pytest.approx(1.0, abs=1e-14)


def test_edge_triangle_counts():
    mesh = generate_uniform_unit_square(3)
    counts = (mesh.edge_tris >= 0).sum(axis=1)
    assert set(counts) <= {1, 2}
    assert ((counts == 1) == mesh.boundary_edge).all()


def test_refine_matches_next_uniform_mesh():
    fine = refine_uniform(generate_uniform_unit_square(1))
    ref = generate_uniform_unit_square(2)
    got = {tuple(v) for v in np.round(fine.vertices, 12)}
    want = {tuple(v) for v in np.round(ref.vertices, 12)}
    assert got == want
    assert fine.num_triangles == 8


def test_refine_quadruples_triangles():
    mesh = generate_uniform_unit_square(1)
    assert refine_uniform(mesh).num_triangles == 4 * mesh.num_triangles


def test_refined_mesh_keeps_audit():
    fine = refine_uniform(generate_uniform_unit_square(2))
    assert audit(fine).xz_pass


def test_refinement_nested_in_parent():
    mesh = generate_uniform_unit_square(2)
    fine = refine_uniform(mesh)
    assert fine.parent is not None
    for child, parent in zip(fine.triangles, fine.parent):
        tri = mesh.vertices[mesh.triangles[parent]]
        # barycentric coordinates of child vertices w.r.t. the parent
        a = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        for vertex in fine.vertices[child]:
            lam = np.linalg.solve(a, vertex - tri[0])
            assert lam.min() >= -1e-12 and lam.sum() <= 1 + 1e-12


def test_refinement_halves_h():
    mesh = generate_uniform_unit_square(3)
    assert refine_uniform(mesh).h == pytest.approx(mesh.h / 2, abs=1e-15)


def test_parent_vertices_preserved_exactly():
    mesh = generate_uniform_unit_square(2)
    fine = refine_uniform(mesh)
    assert (fine.vertices[: mesh.num_vertices] == mesh.vertices).all()


# ----------------------------------------------------------------------
# audit


def test_uniform_mesh_audit_values():
    rep = audit(generate_uniform_unit_square(4))
    assert rep.xz_pass
    # diagonal edges see two right angles: cot sum exactly zero
    assert rep.worst_edge_cot_sum == pytest.approx(0.0, abs=1e-12)
    # congruent right isoceles triangles with legs 1/4
    expected_delta = math.sqrt(2.0) / ((2.0 - math.sqrt(2.0)) / 2.0)
    assert rep.shape_regularity_delta == pytest.approx(expected_delta, rel=1e-12)
    assert expected_delta == pytest.approx(4.8284, abs=1e-4)
    assert rep.max_h == pytest.approx(math.sqrt(2.0) / 4, abs=1e-15)


def test_obtuse_pair_fails_audit():
    # both angles opposite the shared edge are 100 degrees
    apex = 0.5 / math.tan(math.radians(50.0))
    mesh = Mesh(
        [(0.0, 0.0), (1.0, 0.0), (0.5, apex), (0.5, -apex)],
        [(0, 1, 2), (0, 3, 1)],
    )
    rep = audit(mesh)
    assert not rep.xz_pass
    assert rep.worst_edge_cot_sum == pytest.approx(
        2.0 / math.tan(math.radians(100.0)), rel=1e-12
    )


def test_degenerate_triangle_rejected():
    with pytest.raises(MeshError):
        Mesh([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], [(0, 1, 2)])


def test_tangent_orientation_does_not_affect_stabilization():
    from mfgfem import build_stabilization, default_weights

    mesh = generate_uniform_unit_square(3)
    # relabel vertices: old vertex i becomes perm[i], flipping edge tangents
    perm = np.random.default_rng(5).permutation(mesh.num_vertices)
    relabeled = Mesh(mesh.vertices[np.argsort(perm)], perm[mesh.triangles])

    w = default_weights(mesh, 1.0, 1.0)
    w2 = default_weights(relabeled, 1.0, 1.0)
    stab = build_stabilization(mesh, w, 1.0)
    stab2 = build_stabilization(relabeled, w2, 1.0)
    # match elements through their centroids
    c1 = mesh.vertices[mesh.triangles].mean(axis=1)
    c2 = relabeled.vertices[relabeled.triangles].mean(axis=1)
    order1 = np.lexsort(c1.T)
    order2 = np.lexsort(c2.T)
    assert np.allclose(stab.D[order1], stab2.D[order2], atol=1e-14)
    for d in stab.D:
        assert abs(d[0, 1] - d[1, 0]) <= 1e-15


# ----------------------------------------------------------------------
# file format


def test_mesh_file_roundtrip(tmp_path):
    mesh = generate_uniform_unit_square(3)
    path = tmp_path / "square.mesh"
    save_mesh(mesh, path)
    back = load_mesh(path)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.vertices, mesh.vertices)
    assert (back.boundary_vertex == mesh.boundary_vertex).all()


def test_missing_mesh_file(tmp_path):
    with pytest.raises(MeshIOError):
        load_mesh(tmp_path / "nope.mesh")


def test_malformed_mesh_file(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("d=2 nv=zzz nt=1\n")
    with pytest.raises(MeshIOError):
        load_mesh(path)

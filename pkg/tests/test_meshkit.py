import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from bodykit import diffnet as dn
from bodykit.diffnet.gradcheck import check_gradients
from bodykit.meshkit import (LaplacianWeights, Mesh, MeshError, build_adjacency, chamfer, laplacian_loss, p2p,
                             read_obj, write_obj)

SQ3 = np.sqrt(3.0)


def two_equilateral():
    v = np.array([[0, 0, 0], [1, 0, 0], [0.5, SQ3 / 2, 0], [0.5, -SQ3 / 2, 0]])
    return Mesh(v, np.array([[0, 1, 2], [1, 0, 3]]))


def unit_square():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def test_cotangent_shared_edge():
    w = build_adjacency(two_equilateral())
    assert w.weight(0, 1) == pytest.approx(1 / SQ3, abs=1e-12)
    assert w.weight(0, 1) == pytest.approx(0.57735, abs=1e-5)


def test_cotangent_boundary_edge():
    v = np.array([[0, 0, 0], [1, 0, 0], [0.5, SQ3 / 2, 0]])
    w = build_adjacency(Mesh(v, np.array([[0, 1, 2]])))
    for a, b in [(0, 1), (1, 2), (0, 2)]:
        assert w.weight(a, b) == pytest.approx(1 / (2 * SQ3), abs=1e-12)


def test_square_diagonal_has_zero_weight():
    w = build_adjacency(unit_square())
    assert w.weight(0, 2) == pytest.approx(0.0, abs=1e-12)


def test_weights_symmetric_and_ring(template):
    w = build_adjacency(template.mesh)
    assert w.weight(3, 4) == w.weight(4, 3)
    f = template.mesh.faces
    for v in (0, 57, template.V - 1):
        expect = set()
        for face in f[(f == v).any(axis=1)]:
            expect |= set(face.tolist())
        expect.discard(v)
        assert set(w.ring[v].tolist()) == expect


def test_degenerate_triangle_rejected():
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])
    with pytest.raises(MeshError, match="face 0"):
        build_adjacency(Mesh(v, np.array([[0, 1, 2]])))


def test_mesh_invariants_checked():
    v = np.zeros((3, 3))
    with pytest.raises(MeshError):
        Mesh(v, np.array([[0, 1, 3]])).validate()
    with pytest.raises(MeshError):
        Mesh(v, np.array([[0, 1, 1]])).validate()
    fan = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    with pytest.raises(MeshError, match="more than 2"):
        Mesh(np.random.default_rng(0).normal(size=(5, 3)), fan).validate()


def test_laplacian_coincident_is_zero():
    m = two_equilateral()
    w = build_adjacency(m)
    assert float(laplacian_loss(np.zeros((4, 3)), w).data) == 0.0


def test_laplacian_zero_weight_diagonal_contributes_nothing(rng):
    m = unit_square()
    w = build_adjacency(m)
    keep = ~((w.edges[:, 0] == 0) & (w.edges[:, 1] == 2))
    no_diag = LaplacianWeights(w.edges[keep], w.weights[keep], w.ring)
    x = m.vertices + 0.2 * rng.standard_normal((4, 3))
    assert float(laplacian_loss(x, w).data) == pytest.approx(float(laplacian_loss(x, no_diag).data), abs=1e-15)


def test_laplacian_nonnegative(rng):
    w = build_adjacency(two_equilateral())
    for _ in range(20):
        assert float(laplacian_loss(rng.normal(size=(4, 3)), w).data) >= 0


def test_laplacian_matches_double_sum_definition(template, rng):
    w = build_adjacency(template.mesh)
    x = template.mesh.vertices + 0.01 * rng.standard_normal((template.V, 3))
    ref = 0.0
    for v in range(template.V):
        for n in w.ring[v]:
            ref += np.sum((w.weight(v, n) * (x[v] - x[n])) ** 2)
    assert float(laplacian_loss(x, w).data) == pytest.approx(ref, rel=1e-10)


def test_laplacian_gradient(rng):
    m = two_equilateral()
    w = build_adjacency(m)
    x = dn.Tensor(m.vertices + 0.1 * rng.standard_normal((4, 3)), requires_grad=True)
    assert check_gradients(lambda: laplacian_loss(x, w), [x]) < 1e-4


def test_chamfer_examples():
    assert float(chamfer(np.zeros((1, 3)), np.array([[3.0, 4.0, 0.0]])).data) == pytest.approx(5.0)
    a = np.array([[0, 0, 0], [1, 0, 0.0]])
    assert float(chamfer(a, np.zeros((1, 3))).data) == pytest.approx(0.25)


def test_chamfer_empty_raises():
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), np.zeros((2, 3)))


def test_chamfer_kdtree_matches_exhaustive(rng):
    # above the exhaustive-fallback size the spatial index must give the same value
    a = rng.normal(size=(300, 3))
    b = rng.normal(size=(200, 3))
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    ref = 0.5 * (d.min(1).mean() + d.min(0).mean())
    assert float(chamfer(a, b).data) == pytest.approx(ref, rel=1e-12)


def test_chamfer_gradient_through_vertices(rng):
    a = dn.Tensor(rng.normal(size=(20, 3)), requires_grad=True)
    b = rng.normal(size=(15, 3))
    assert check_gradients(lambda: chamfer(a, b), [a], h=1e-6) < 1e-4


points = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)),
                elements=st.floats(-2, 2, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(points, points)
def test_chamfer_symmetric_and_self_zero(a, b):
    ab = float(chamfer(a, b).data)
    assert ab == pytest.approx(float(chamfer(b, a).data), abs=1e-12)
    assert float(chamfer(a, a).data) == 0.0
    assert ab >= 0


@settings(max_examples=40, deadline=None)
@given(points, points, st.integers(0, 2 ** 31 - 1))
def test_chamfer_rigid_invariance(a, b, seed):
    r = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    t = r.uniform(-1, 1, 3)
    ref = float(chamfer(a, b).data)
    moved = float(chamfer(a @ R.T + t, b @ R.T + t).data)
    assert moved == pytest.approx(ref, abs=1e-6)


def test_p2p_examples():
    m = two_equilateral()
    assert p2p(m, m) == 0.0
    assert p2p(m, m.with_vertices(m.vertices + [0, 0, 0.01])) == pytest.approx(0.01)
    assert p2p(np.zeros((2, 3)), np.array([[0, 0, 0], [0, 0.02, 0]])) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        p2p(np.zeros((2, 3)), np.zeros((3, 3)))


def test_obj_round_trip(tmp_path, template):
    path = tmp_path / "t.obj"
    write_obj(template.mesh, path)
    back = read_obj(path)
    assert p2p(back, template.mesh) < 1e-6
    assert np.array_equal(back.faces, template.mesh.faces)


def test_obj_quad_rejected_with_line(tmp_path):
    path = tmp_path / "q.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshError, match=":5:"):
        read_obj(path)


def test_obj_empty_rejected(tmp_path):
    path = tmp_path / "e.obj"
    path.write_text("")
    with pytest.raises(MeshError, match="no vertices"):
        read_obj(path)


def test_obj_skips_other_records(tmp_path, caplog):
    path = tmp_path / "n.obj"
    path.write_text("# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n")
    m = read_obj(path)
    assert m.F == 1 and "vn" in caplog.text

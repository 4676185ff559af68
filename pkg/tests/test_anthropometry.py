import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from bodykit import diffnet as dn
from bodykit.anthropometry import AnthroVector, MeasurementDef, Registry, default_registry, measure, vertex_mask
from bodykit.diffnet.gradcheck import check_gradients
from bodykit.meshkit import Mesh
from bodykit.procgen import P, morph


@pytest.fixture(scope="module")
def registry(template):
    return default_registry(template)


def test_hexagon_circumference():
    ang = np.arange(6) * np.pi / 3
    v = np.stack([np.cos(ang), np.sin(ang), np.zeros(6)], 1)
    reg = Registry([MeasurementDef("hex", "circumference", tuple(range(6)), tuple(range(6)))], 6)
    assert reg.values(v)[0] == pytest.approx(6 * 2 * np.sin(np.pi / 6))


def test_height_pair():
    v = np.array([[0, 0, 0], [0, 1.75, 0.0]])
    reg = Registry([MeasurementDef("height", "height", (0, 1), (0, 1))], 2)
    assert reg.values(v)[0] == pytest.approx(1.75)


def test_definition_contracts():
    with pytest.raises(ValueError):
        MeasurementDef("x", "length", (3, 3), ())
    with pytest.raises(ValueError):
        MeasurementDef("x", "circumference", (0, 1), ())
    with pytest.raises(ValueError):
        MeasurementDef("x", "volume", (0, 1), ())


def test_registry_layout(registry):
    assert len(registry) == 36
    for name in ("waist circumference", "height", "head circumference"):
        assert name in registry.names
    assert sum(n.endswith(" left") for n in registry.names) == 12
    assert sum(n.endswith(" right") for n in registry.names) == 12


def test_loops_are_closed_edge_cycles(template, registry):
    edges = {tuple(sorted(e)) for f in template.mesh.faces for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0]))}
    for e in registry.entries:
        if e.kind == "circumference":
            for a, b in e.pairs():
                assert (min(a, b), max(a, b)) in edges, e.name


def test_left_right_agree_on_template(template, registry):
    A = measure(template.mesh, registry).A
    for i, name in enumerate(registry.names):
        if name.endswith(" left"):
            j = registry.names.index(name[:-5] + " right")
            assert A[i] == pytest.approx(A[j], abs=1e-6), name


def test_all_positive_and_plausible(template, registry):
    A = measure(template.mesh, registry).A
    assert np.all(A > 0)
    named = dict(zip(registry.names, A))
    assert 1.5 < named["height"] < 2.0
    assert 0.6 < named["waist circumference"] < 1.1


def test_topology_mismatch(registry):
    with pytest.raises(ValueError, match="vertices"):
        measure(Mesh(np.zeros((5, 3)), np.zeros((0, 3), int)), registry)


def test_anthro_vector_c_order():
    a = AnthroVector(np.arange(36.0) + 1, sex=1.0)
    assert a.c[0] == 1.0 and np.array_equal(a.c[1:], a.A)
    assert np.array_equal(AnthroVector.from_c(a.c).A, a.A)


def test_registry_json_round_trip(registry, template):
    back = Registry.from_json(registry.to_json())
    x = template.mesh.vertices
    assert np.array_equal(back.values(x), registry.values(x))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 2.0), st.lists(st.floats(0, 1), min_size=P, max_size=P))
def test_scale_equivariance(s, p):
    reg = default_registry()
    x = morph(np.array(p)).vertices
    assert np.allclose(reg.values(s * x), s * reg.values(x), rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_rigid_invariance(seed):
    reg = default_registry()
    x = morph(np.random.default_rng(seed).uniform(size=P)).vertices
    R = Rotation.random(random_state=seed).as_matrix()
    t = np.random.default_rng(seed + 1).uniform(-2, 2, 3)
    assert np.abs(reg.values(x @ R.T + t) - reg.values(x)).max() < 1e-6


def test_measurement_gradient(template, registry):
    x = dn.Tensor(template.mesh.vertices.copy(), requires_grad=True)
    for k in (0, 3, 20):
        assert check_gradients(lambda: registry.values(x)[k], [x]) < 1e-4


def test_tensor_values_match_numpy(template, registry):
    x = template.mesh.vertices
    assert np.allclose(registry.values(dn.Tensor(x)).data, registry.values(x))


def test_mask_examples(template, registry):
    e = registry["waist circumference"]
    soft = vertex_mask(e, template.mesh, "soft")
    assert np.all(soft[list(e.vertices)] == 1.0)
    assert np.all(vertex_mask(e, template.mesh, "none") == 1.0)
    # a vertex ln 2 away from a single anchor gets weight 0.5
    v = np.array([[0, 0, 0], [np.log(2), 0, 0], [0, 1, 0]])
    m = vertex_mask(MeasurementDef("x", "length", (0, 2), (0, 1, 2)), Mesh(v, np.zeros((0, 3), int)))
    assert m[1] == pytest.approx(0.5)


def test_mask_value_ranges(template, registry):
    for e in registry.entries:
        soft = vertex_mask(e, template.mesh, "soft")
        binary = vertex_mask(e, template.mesh, "binary")
        assert np.all((soft >= 0) & (soft <= 1))
        assert np.all(soft[soft > 0] > 0)
        assert set(np.unique(binary)) <= {0.0, 1.0}
        assert np.array_equal(binary, (soft > 0.5).astype(float))
        outside = np.setdiff1d(np.arange(template.V), e.segment)
        assert np.all(soft[outside] == 0)
        assert np.array_equal(soft, vertex_mask(e, template.mesh, "soft"))
    with pytest.raises(ValueError):
        vertex_mask(registry.entries[0], template.mesh, "fuzzy")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bodykit import diffnet as dn
from bodykit.meshkit import Mesh
from bodykit.procgen import P, binding_for, morph, oracle_pose, sample_rotations
from bodykit.skinner import (Skinner, SkinnerConfig, posed_p2p, skinning_targets, target_offsets,
                             train_skinner, translation_lbs)


def test_identity_pose_zero_offsets_is_bind(rng):
    bind = rng.normal(size=(10, 3))
    w = rng.uniform(size=(10, 3))
    w /= w.sum(1, keepdims=True)
    th = rng.normal(size=(3, 3))
    assert np.allclose(translation_lbs(bind, w, th, th, np.zeros_like(bind)), bind)


def test_single_joint_shift():
    bind = np.random.default_rng(0).normal(size=(6, 3))
    out = translation_lbs(bind, np.ones((6, 1)), np.zeros((1, 3)), np.array([[0, 1.0, 0]]), np.zeros((6, 3)))
    assert np.allclose(out - bind, [0, 1, 0])


def test_two_joint_convex_blend():
    bind = np.zeros((1, 3))
    d1, d2 = np.array([1.0, 0, 0]), np.array([0, 0, 3.0])
    out = translation_lbs(bind, np.array([[0.5, 0.5]]), np.zeros((2, 3)), np.stack([d1, d2]), bind)
    assert np.allclose(out[0], (d1 + d2) / 2)


def test_shape_errors():
    with pytest.raises(ValueError):
        translation_lbs(np.zeros((4, 3)), np.ones((4, 1)), np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        translation_lbs(np.zeros((4, 3)), np.ones((4, 2)), np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((4, 3)))


def test_offsets_invert_lbs(rng):
    bind = rng.normal(size=(8, 3))
    w = rng.uniform(size=(8, 4))
    w /= w.sum(1, keepdims=True)
    th, thb = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    delta = rng.normal(size=(8, 3))
    posed = translation_lbs(bind, w, th, thb, delta)
    assert np.allclose(target_offsets(bind, w, th, posed, thb), delta, atol=1e-12)


def test_identity_pose_offsets_vanish(template):
    posed, joints = oracle_pose(template.mesh, template.binding, np.zeros((17, 3)))
    d = target_offsets(template.mesh.vertices, template.binding.weights, template.binding.bind_joints,
                       posed.vertices, joints)
    assert np.abs(d).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 1.0))
def test_keystone_identity_random_subjects(seed, spread):
    from bodykit.procgen import build_template

    tpl = build_template()
    r = np.random.default_rng(seed)
    bind = morph(r.uniform(size=P), tpl)
    binding = binding_for(bind, tpl)
    posed, joints = oracle_pose(bind, binding, sample_rotations(r, spread))
    d = target_offsets(bind.vertices, binding.weights, binding.bind_joints, posed.vertices, joints)
    rebuilt = translation_lbs(bind.vertices, binding.weights, binding.bind_joints, joints, d)
    assert np.abs(rebuilt - posed.vertices).max() < 1e-6


def test_keystone_identity_on_stored_records(small_ds):
    idx = np.arange(len(small_ds))
    d = skinning_targets(small_ds, idx, small_ds.bind)
    bj = small_ds.bind_joints()
    rebuilt = translation_lbs(small_ds.bind, small_ds.template.binding.weights, bj, small_ds.joints, d)
    assert np.abs(rebuilt - small_ds.posed).max() < 1e-6


def test_tensor_path_matches_numpy(rng):
    bind = rng.normal(size=(2, 5, 3))
    w = rng.uniform(size=(5, 2))
    w /= w.sum(1, keepdims=True)
    th, thb, d = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 5, 3))
    ref = translation_lbs(bind, w, th, thb, d)
    out = translation_lbs(dn.Tensor(bind), w, th, thb, d)
    assert np.allclose(out.data, ref)


@pytest.fixture(scope="module")
def tiny_skinner(small_ds, tmp_path_factory):
    path = tmp_path_factory.mktemp("sk") / "ck"
    return train_skinner(small_ds, SkinnerConfig(epochs=2, batch_size=16), out=path), path


def test_untrained_zero_offsets_is_baseline(tiny_skinner, small_ds):
    sk, _ = tiny_skinner
    idx = small_ds.split("test")
    base = posed_p2p(sk, small_ds, idx, learned=False)
    bind = small_ds.bind[idx]
    bj = small_ds.bind_joints(idx)
    ref = translation_lbs(bind, small_ds.template.binding.weights, bj, small_ds.joints[idx], np.zeros_like(bind))
    assert base == pytest.approx(np.linalg.norm(ref - small_ds.posed[idx], axis=-1).mean())


def test_pose_mesh_contract(tiny_skinner, small_ds):
    sk, path = tiny_skinner
    bind = Mesh(small_ds.bind[0], small_ds.faces)
    a = sk.pose_mesh(bind, small_ds.joints[0])
    assert np.array_equal(a.vertices, sk.pose_mesh(bind, small_ds.joints[0]).vertices)
    assert np.array_equal(a.faces, bind.faces)
    with pytest.raises(ValueError):
        sk.pose_mesh(bind, small_ds.joints[0][:5])
    back = Skinner.load(path)
    assert np.array_equal(back.pose_mesh(bind, small_ds.joints[0]).vertices, a.vertices)


def test_overfit_small_set(small_ds):
    # lambda = 0, tiny train set: posed P2P below 1 mm on the training subjects.
    # Batch statistics over 4 samples are too noisy to overfit to sub-mm, so no BN here.
    cfg = SkinnerConfig(epochs=400, batch_size=4, lr=3e-3, max_train=8, lam=0.0, fourier_f=0, bn=False)
    sk = train_skinner(small_ds, cfg)
    train = small_ds.split("train")[:8]
    assert posed_p2p(sk, small_ds, train) < 1e-3


def test_near_identity_pose_is_near_bind(small_ds):
    # bind joints as the pose: output stays close to bind, below the posed baseline
    sk = train_skinner(small_ds, SkinnerConfig(epochs=30, batch_size=16, fourier_f=0))
    idx = small_ds.split("test")
    bind = small_ds.bind[idx]
    out = sk.pose_batch(bind, small_ds.bind_joints(idx))
    near = np.linalg.norm(out - bind, axis=-1).mean()
    assert near < posed_p2p(sk, small_ds, idx, learned=False)


def test_laplacian_regularizer_runs(small_ds):
    sk = train_skinner(small_ds, SkinnerConfig(epochs=1, batch_size=16, lam=1e-3))
    assert sk.curves.last("laplacian") > 0

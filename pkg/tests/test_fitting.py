import numpy as np
import pytest

from bodykit import diffnet as dn
from bodykit.fitting import FitConfig, body_sections, fit_staged, fit_to_target, resample, section_chamfer
from bodykit.generator import GeneratorConfig, train_generator
from bodykit.meshkit import Mesh
from bodykit.skinner import SkinnerConfig, train_skinner


@pytest.fixture(scope="module")
def models(small_ds):
    gen = train_generator(small_ds, GeneratorConfig(epochs=20, batch_size=16, seed=0))
    sk = train_skinner(small_ds, SkinnerConfig(epochs=20, batch_size=16, fourier_f=0, seed=0))
    return gen, sk


@pytest.fixture(scope="module")
def self_target(models, small_ds):
    """A target the frozen models reproduce exactly: sample(c) posed at known joints."""
    gen, sk = models
    i = small_ds.split("test")[0]
    c = small_ds.anthro[i]
    bind = gen.sample(c, np.zeros(10))
    pose = small_ds.joints[i]
    return c, pose, sk.pose_mesh(bind, pose)


def test_optimum_at_ground_truth_init(models, self_target):
    gen, sk = models
    c, pose, target = self_target
    res = fit_to_target(target, gen, sk, init_c=c, init_pose=pose, config=FitConfig(iterations=30))
    assert res.report["chamfer_mm"] < 0.1
    assert np.abs(res.c - c).max() < 1e-3
    assert res.report["chamfer_mm"] <= res.report["initial_chamfer_mm"] + 1e-9


def test_parameters_untouched(models, self_target):
    gen, sk = models
    before = {k: v.copy() for k, v in {**gen.net.state_dict(), **{f"s.{k}": v for k, v in sk.net.state_dict().items()}}.items()}
    flags = [p.requires_grad for p in gen.net.parameters()]
    fit_to_target(self_target[2], gen, sk, config=FitConfig(iterations=15))
    after = {**gen.net.state_dict(), **{f"s.{k}": v for k, v in sk.net.state_dict().items()}}
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert flags == [p.requires_grad for p in gen.net.parameters()]


def test_best_iterate_and_curves(models, small_ds):
    gen, sk = models
    i = small_ds.split("test")[1]
    target = Mesh(small_ds.posed[i], small_ds.faces)
    res = fit_to_target(target, gen, sk, config=FitConfig(iterations=40))
    curve = np.array(res.report["curves"]["stage2"])
    best = np.minimum.accumulate(curve)
    assert np.all(np.diff(best) <= 0)
    assert res.report["best_iterate_chamfer_mm"] <= 1000 * curve[0] + 1e-9
    assert res.c[0] in (0.0, 1.0)
    assert res.pose.shape == (17, 3)


def test_deterministic(models, small_ds):
    gen, sk = models
    target = small_ds.posed[small_ds.split("test")[2]]
    a = fit_to_target(target, gen, sk, config=FitConfig(iterations=20))
    b = fit_to_target(target, gen, sk, config=FitConfig(iterations=20))
    assert np.array_equal(a.mesh.vertices, b.mesh.vertices)
    assert np.array_equal(a.c, b.c)


def test_infinite_tau_equals_plain_fit(models, small_ds):
    gen, sk = models
    i = small_ds.split("test")[2]
    cfg = FitConfig(iterations=20, tau_joint=np.inf)
    staged = fit_staged(small_ds.posed[i], small_ds.joints[i], gen, sk, config=cfg)
    plain = fit_to_target(small_ds.posed[i], gen, sk, config=cfg)
    assert np.array_equal(staged.mesh.vertices, plain.mesh.vertices)
    assert staged.report["stage_boundary"] == 0


def test_staged_reaches_joint_threshold(models, small_ds):
    gen, sk = models
    i = small_ds.split("test")[0]
    res = fit_staged(small_ds.posed[i], small_ds.joints[i], gen, sk, config=FitConfig(iterations=20))
    r = res.report
    assert r["stage1_reached"] and r["stage1_joint_error_m"] < 0.02
    assert r["stage_boundary"] == len(r["curves"]["stage1"]) - 1
    s1 = np.array(r["curves"]["stage1"])
    assert np.all(np.diff(np.minimum.accumulate(s1)) <= 0)
    with pytest.raises(ValueError):
        fit_staged(small_ds.posed[i], small_ds.joints[i][:3], gen, sk)


def test_sections_report(models, small_ds, template):
    gen, sk = models
    i = small_ds.split("test")[0]
    sections = body_sections(template)
    assert set(sections) == {"full body", "chest", "waist", "hip", "thighs", "calves", "arms"}
    res = fit_to_target(small_ds.posed[i], gen, sk, config=FitConfig(iterations=5), sections=sections)
    assert set(res.report["sections_mm"]) == set(sections)
    assert res.report["sections_mm"]["full body"] == pytest.approx(res.report["chamfer_mm"])


def test_section_chamfer_on_point_cloud(template, rng):
    x = template.mesh.vertices
    cloud = resample(x + 0.001 * rng.standard_normal(x.shape), 2000)
    out = section_chamfer(x, cloud, body_sections(template))
    assert all(0 < v < 20 for v in out.values())


def test_target_validation(models):
    gen, sk = models
    with pytest.raises(ValueError, match="100"):
        fit_to_target(np.zeros((50, 3)), gen, sk)
    with pytest.raises(ValueError):
        fit_to_target(np.zeros((200, 2)), gen, sk)


def test_resample(rng):
    pts = rng.normal(size=(300, 3))
    assert resample(pts, 100).shape == (100, 3)
    assert resample(pts, 1000).shape == (1000, 3)
    assert np.array_equal(resample(pts, 100, seed=3), resample(pts, 100, seed=3))

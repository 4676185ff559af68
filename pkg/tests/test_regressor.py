from types import SimpleNamespace

import numpy as np
import pytest

from bodykit.meshkit import Mesh
from bodykit.regressor import (ExpertBank, ExpertConfig, P2AConfig, ParamsToAnthro, build_masks,
                               evaluate_experts, shape_to_anthro_pairs, train_experts, train_params_to_anthro)


@pytest.fixture(scope="module")
def overfit_bank(small_ds, tmp_path_factory):
    path = tmp_path_factory.mktemp("experts") / "ck"
    cfg = ExpertConfig(epochs=80, batch_size=16, lr=3e-3, seed=0)
    return train_experts(small_ds, cfg, out=path), path


def test_train_predictions_within_five_percent(overfit_bank, small_ds):
    bank, _ = overfit_bank
    train = small_ds.split("train")
    pred = bank.predict_c(small_ds.bind[train])
    rel = np.abs(pred[:, 1:] - small_ds.anthro[train, 1:]) / small_ds.anthro[train, 1:]
    assert rel.max() < 0.05


def test_regress_contract(overfit_bank, small_ds, tmp_path):
    bank, path = overfit_bank
    mesh = Mesh(small_ds.bind[0], small_ds.faces)
    a, b = bank.regress(mesh), bank.regress(mesh)
    assert len(a.A) == 36 and a.sex in (0.0, 1.0)
    assert np.array_equal(a.A, b.A)
    back = ExpertBank.load(path)
    assert np.array_equal(back.regress(mesh).A, a.A)
    with pytest.raises(ValueError, match="vertices"):
        bank.predict_c(np.zeros((1, 10, 3)))


def test_report_fields(overfit_bank):
    bank, _ = overfit_bank
    r = bank.report
    assert r["n_test"] > 0 and np.isfinite(r["test_mse"]) and 0 <= r["sex_accuracy"] <= 1
    assert len(r["per_measure_mse"]) == 36


def _perturb_outside(bank, k, x, rng):
    out = x.copy()
    zero = bank.masks[k] == 0
    out[:, zero] += rng.normal(scale=0.05, size=(len(x), int(zero.sum()), 3))
    return out


def test_expert_ignores_zero_masked_vertices(small_ds, rng):
    bank = train_experts(small_ds, ExpertConfig(mask_mode="binary", epochs=1, batch_size=16))
    x = small_ds.bind[:4]
    base = bank.predict_c(x)
    for k in (0, 7, 30):
        moved = bank.predict_c(_perturb_outside(bank, k, x, rng))
        assert np.array_equal(moved[:, 1 + k], base[:, 1 + k])


def test_soft_expert_bounded_by_mask_weight(small_ds, rng):
    bank = train_experts(small_ds, ExpertConfig(mask_mode="soft", epochs=1, batch_size=16))
    k = 0
    x = small_ds.bind[:4]
    feats = bank._features(x, k)
    moved = x.copy()
    moved += rng.normal(scale=0.01, size=x.shape)
    delta = np.abs(bank._features(moved, k) - feats).reshape(4, -1, 3)
    keep = np.nonzero(bank.masks[k])[0]
    bound = bank.masks[k][keep][None, :, None] * np.abs(moved - x)[:, keep] / bank.scale
    assert np.all(delta <= bound + 1e-6)


def test_masks_frozen_on_template(small_ds):
    a = build_masks(small_ds.registry, small_ds.template.mesh, "soft")
    b = build_masks(small_ds.registry, small_ds.template.mesh, "soft")
    assert np.array_equal(a, b) and a.shape == (36, small_ds.template.V)


def test_constant_measurements_are_learnable(small_ds):
    anthro = small_ds.anthro.copy()
    anthro[:, 1:] = anthro[0, 1:]
    fake = SimpleNamespace(split=small_ds.split, bind=small_ds.bind, anthro=anthro, registry=small_ds.registry,
                           template=small_ds.template, faces=small_ds.faces)
    bank = train_experts(fake, ExpertConfig(epochs=40, batch_size=16, one_model=True, lr=3e-3))
    assert bank.report["test_mse"] < 1e-5


def test_one_model_variant(small_ds, tmp_path):
    bank = train_experts(small_ds, ExpertConfig(epochs=1, one_model=True, mask_mode="none"), out=tmp_path / "c")
    assert len(bank.experts) == 2
    back = ExpertBank.load(tmp_path / "c")
    x = small_ds.bind[:2]
    assert np.array_equal(back.predict_c(x), bank.predict_c(x))


def test_expert_config_validation():
    with pytest.raises(ValueError):
        ExpertConfig(mask_mode="fuzzy")


def test_p2a_identity_dataset(rng):
    x = rng.uniform(size=(300, 5))
    y = np.concatenate([x, x], axis=1) + 1.0
    model = train_params_to_anthro(x[:240], y[:240], P2AConfig(epochs=150, lr=3e-3), test=(x[240:], y[240:]))
    assert model.report["test_loss"] < 1e-2  # standardized units: > 99% of variance explained


def test_p2a_needs_100_pairs(rng):
    with pytest.raises(ValueError, match="100"):
        train_params_to_anthro(rng.uniform(size=(99, 3)), rng.uniform(size=(99, 2)))


def test_p2a_round_trip_and_finite(rng, tmp_path):
    x = rng.uniform(size=(120, 4))
    y = np.sin(3 * x) + 2
    model = train_params_to_anthro(x, y, P2AConfig(fourier_f=8, epochs=5), test=(x[:10], y[:10]),
                                   out=tmp_path / "p2a")
    assert np.isfinite(model.report["test_loss"])
    back = ParamsToAnthro.load(tmp_path / "p2a")
    assert np.array_equal(back.predict(x[:3]), model.predict(x[:3]))
    assert back.encoder.hash == model.encoder.hash


def test_shape_pairs(small_ds):
    p, a = shape_to_anthro_pairs(small_ds, "test")
    assert p.shape == (len(small_ds.split("test")), 12) and a.shape[1] == 36

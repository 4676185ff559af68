"""Measurement regressors.

* Expert bank: one small MLP per measurement, fed only the vertices its mask
  keeps, each scaled by its mask weight. A 37th expert (whole body) predicts
  the sex flag. The "one model" variant regresses all 36 measurements jointly.
* Params-to-anthro: MLP from external shape parameters to the 36 measurements,
  optionally through a random Fourier encoding.

Inputs are centered on the train mean mesh and divided by one global scale;
there is deliberately no per-feature standardization, which would undo the
soft mask's weighting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet as dn
from .anthropometry import MASK_MODES, AnthroVector, Registry, vertex_mask
from .diffnet import tensor as T
from .diffnet.tensor import Tensor
from .encoding import FourierEncoder
from .meshkit import Mesh
from .training import Curves, TrainingDiverged, config_dict, cosine_lr, minibatches

log = logging.getLogger(__name__)


class MLP(dn.Module):
    """FC -> PReLU -> FC -> PReLU -> FC.

    The output layer starts at zero, so an untrained regressor predicts the
    train mean (targets are standardized) whatever its input.
    """

    def __init__(self, n_in: int, hidden: tuple[int, int], n_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        h1, h2 = hidden
        head = dn.Linear(h2, n_out, rng, dtype)
        head.weight.data[:] = 0.0
        self.body = dn.Sequential(dn.Linear(n_in, h1, rng, dtype), dn.PReLU(h1, dtype),
                                  dn.Linear(h1, h2, rng, dtype), dn.PReLU(h2, dtype), head)

    def forward(self, x: Tensor) -> Tensor:
        return self.body(x)


def _fit_mlp(net: MLP, X: np.ndarray, Y: np.ndarray, epochs: int, batch_size: int, lr: float,
             weight_decay: float, rng: np.random.Generator, noise: float = 0.0,
             curves: Curves | None = None, name: str = "mlp") -> None:
    """Mean-squared-error training in place; ``noise`` adds Gaussian input jitter."""
    opt = dn.Adam(net.parameters(), lr=lr, weight_decay=weight_decay)
    for epoch in range(epochs):
        opt.lr = cosine_lr(lr, epoch, epochs)
        total = 0.0
        for idx in minibatches(len(X), batch_size, rng):
            xb = X[idx]
            if noise:
                xb = xb + (noise * rng.standard_normal(xb.shape)).astype(xb.dtype)
            err = net(Tensor(xb)) - Tensor(Y[idx])
            loss = T.mean(T.square(err))
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"{name}: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            dn.backward(loss)
            try:
                opt.step()
            except dn.NonFiniteGradient as exc:
                raise TrainingDiverged(f"{name}: {exc}") from exc
            total += float(loss.data) * len(idx)
        if curves is not None:
            curves.add(epoch, loss=total / len(X))


def _predict(net: MLP, X: np.ndarray, batch: int = 512) -> np.ndarray:
    with dn.no_grad():
        return np.concatenate([net(Tensor(X[s:s + batch])).data for s in range(0, len(X), batch)]).astype(np.float64)


@dataclass
class ExpertConfig:
    mask_mode: str = "soft"
    hidden: tuple[int, int] = (256, 64)
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    noise: float = 0.0  # input jitter in normalized units
    seed: int = 0
    one_model: bool = False
    max_train: int | None = None

    def __post_init__(self):
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask mode must be one of {MASK_MODES}")
        self.hidden = tuple(self.hidden)


@dataclass
class ExpertBank:
    experts: list[MLP]  # 36 measurement experts + sex expert, or [one model, sex expert]
    masks: np.ndarray  # (36, V) per-measurement vertex weights
    mean_mesh: np.ndarray
    scale: float
    y_mean: np.ndarray  # (37,) sex first, registry order after
    y_std: np.ndarray
    faces: np.ndarray
    names: list[str]
    config: ExpertConfig = field(default_factory=ExpertConfig)
    report: dict = field(default_factory=dict)

    def _features(self, vertices: np.ndarray, k: int | None) -> np.ndarray:
        """Masked, normalized, flattened inputs of expert ``k`` (None: whole body)."""
        x = (np.asarray(vertices) - self.mean_mesh) / self.scale
        if k is None:
            return x.reshape(len(x), -1).astype(np.float32)
        m = self.masks[k]
        keep = np.nonzero(m)[0]
        return (x[:, keep, :] * m[keep, None]).reshape(len(x), -1).astype(np.float32)

    def predict_c(self, vertices: np.ndarray) -> np.ndarray:
        """(N, 37) predictions: sex then the 36 measurements, in meters."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.ndim == 2:
            vertices = vertices[None]
        if vertices.shape[1] != len(self.mean_mesh):
            raise ValueError(f"mesh has {vertices.shape[1]} vertices, the regressor expects {len(self.mean_mesh)}")
        for e in self.experts:
            e.eval()
        out = np.empty((len(vertices), 37))
        whole = self._features(vertices, None)
        out[:, 0] = _predict(self.experts[-1], whole)[:, 0]
        if self.config.one_model:
            out[:, 1:] = _predict(self.experts[0], whole)
        else:
            for k in range(36):
                out[:, 1 + k] = _predict(self.experts[k], self._features(vertices, k))[:, 0]
        out = out * self.y_std + self.y_mean
        out[:, 0] = (out[:, 0] > 0.5).astype(np.float64)
        return out

    def regress(self, mesh: Mesh) -> AnthroVector:
        return AnthroVector.from_c(self.predict_c(mesh.vertices)[0])

    def save(self, path: str | Path) -> Path:
        tensors = {}
        for i, e in enumerate(self.experts):
            tensors.update({f"expert{i:02d}.{k}": v for k, v in e.state_dict().items()})
        tensors.update({"masks": self.masks, "norm.mean_mesh": self.mean_mesh, "norm.y_mean": self.y_mean,
                        "norm.y_std": self.y_std, "faces": self.faces.astype(np.int64)})
        meta = {"kind": "experts", "config": config_dict(self.config), "names": self.names,
                "norm": {"scale": self.scale}, "report": self.report,
                "input_dims": [e.body.layers[0].n_in for e in self.experts]}
        return dn.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "ExpertBank":
        tensors, meta = dn.load_checkpoint(path)
        if meta.get("kind") != "experts":
            raise ValueError(f"{path} is not an expert-regressor checkpoint")
        cfg = ExpertConfig(**meta["config"])
        dims = meta["input_dims"]
        outs = [36 if (cfg.one_model and i == 0) else 1 for i in range(len(dims))]
        experts = []
        for i, (n_in, n_out) in enumerate(zip(dims, outs)):
            e = MLP(n_in, cfg.hidden, n_out, np.random.default_rng(0))
            e.load_state_dict({k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith(f"expert{i:02d}.")})
            experts.append(e)
        return cls(experts, tensors["masks"], tensors["norm.mean_mesh"], float(meta["norm"]["scale"]),
                   tensors["norm.y_mean"], tensors["norm.y_std"], tensors["faces"], meta["names"], cfg,
                   meta.get("report", {}))


def build_masks(registry: Registry, mesh: Mesh, mode: str) -> np.ndarray:
    """Masks are computed once on the canonical template and reused for every subject."""
    return np.stack([vertex_mask(e, mesh, mode) for e in registry.entries])


def train_experts(data, config: ExpertConfig | None = None, out: str | Path | None = None) -> ExpertBank:
    from .generator import _as_dataset

    cfg = config or ExpertConfig()
    ds = _as_dataset(data)
    train, test = ds.split("train"), ds.split("test")
    if cfg.max_train is not None:
        train = train[:cfg.max_train]
    rng = np.random.default_rng(cfg.seed)
    masks = build_masks(ds.registry, ds.template.mesh, cfg.mask_mode)
    mean_mesh = ds.bind[train].mean(axis=0)
    scale = float(np.sqrt(np.mean((ds.bind[train] - mean_mesh) ** 2)))
    y = ds.anthro[train]
    y_mean = y.mean(axis=0)
    y_std = np.where(y.std(axis=0) > 1e-12, y.std(axis=0), 1.0)
    Y = ((y - y_mean) / y_std).astype(np.float32)
    bank = ExpertBank([], masks, mean_mesh, scale, y_mean, y_std, ds.faces, ds.registry.names, cfg)

    kw = dict(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, weight_decay=cfg.weight_decay,
              rng=rng, noise=cfg.noise)
    whole = bank._features(ds.bind[train], None)
    if cfg.one_model:
        net = MLP(whole.shape[1], cfg.hidden, 36, rng)
        _fit_mlp(net, whole, Y[:, 1:], name="one-model", **kw)
        bank.experts.append(net)
    else:
        for k in range(36):
            Xk = bank._features(ds.bind[train], k)
            net = MLP(Xk.shape[1], cfg.hidden, 1, rng)
            _fit_mlp(net, Xk, Y[:, 1 + k:2 + k], name=ds.registry.names[k], **kw)
            bank.experts.append(net)
    sex = MLP(whole.shape[1], cfg.hidden, 1, rng)
    _fit_mlp(sex, whole, Y[:, :1], name="sex", **kw)
    bank.experts.append(sex)

    if len(test):
        bank.report = evaluate_experts(bank, ds, test)
    if out is not None:
        bank.save(out)
    return bank


def evaluate_experts(bank: ExpertBank, ds, idx: np.ndarray) -> dict:
    pred = bank.predict_c(ds.bind[idx])
    truth = ds.anthro[idx]
    sq = (pred[:, 1:] - truth[:, 1:]) ** 2
    rel = np.abs(pred[:, 1:] - truth[:, 1:]) / truth[:, 1:]
    return {
        "test_mse": float(sq.mean()),
        "per_measure_mse": dict(zip(bank.names, sq.mean(axis=0).tolist())),
        "median_rel_error": float(np.median(rel)),
        "sex_accuracy": float((pred[:, 0] == truth[:, 0]).mean()),
        "n_test": int(len(idx)),
    }


# ---------------------------------------------------------------------------
# external parameters -> measurements
# ---------------------------------------------------------------------------
@dataclass
class P2AConfig:
    fourier_f: int = 0
    sigma: float = 1.0
    encoder_seed: int = 0
    hidden: tuple[int, int] = (128, 64)
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)


@dataclass
class ParamsToAnthro:
    net: MLP
    encoder: FourierEncoder
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    config: P2AConfig = field(default_factory=P2AConfig)
    report: dict = field(default_factory=dict)

    def features(self, params: np.ndarray) -> np.ndarray:
        params = np.atleast_2d(np.asarray(params, dtype=np.float64))
        if params.shape[1] != len(self.x_mean):
            raise ValueError(f"expected {len(self.x_mean)} parameters, got {params.shape[1]}")
        return self.encoder((params - self.x_mean) / self.x_std).astype(np.float32)

    def predict(self, params: np.ndarray) -> np.ndarray:
        self.net.eval()
        return _predict(self.net, self.features(params)) * self.y_std + self.y_mean

    def loss(self, params: np.ndarray, targets: np.ndarray) -> float:
        """Mean squared error in standardized target units."""
        pred = (self.predict(params) - self.y_mean) / self.y_std
        return float(np.mean((pred - (targets - self.y_mean) / self.y_std) ** 2))

    def save(self, path: str | Path) -> Path:
        tensors = {f"net.{k}": v for k, v in self.net.state_dict().items()}
        tensors.update({"encoder.B": self.encoder.B, "norm.x_mean": self.x_mean, "norm.x_std": self.x_std,
                        "norm.y_mean": self.y_mean, "norm.y_std": self.y_std})
        meta = {"kind": "params_to_anthro", "config": config_dict(self.config),
                "encoder": self.encoder.to_meta(), "report": self.report}
        return dn.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "ParamsToAnthro":
        tensors, meta = dn.load_checkpoint(path)
        if meta.get("kind") != "params_to_anthro":
            raise ValueError(f"{path} is not a params-to-anthro checkpoint")
        cfg = P2AConfig(**meta["config"])
        enc = FourierEncoder.from_meta(meta["encoder"], tensors["encoder.B"])
        net = MLP(enc.out_dim, cfg.hidden, len(tensors["norm.y_mean"]), np.random.default_rng(0))
        net.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("net.")})
        return cls(net, enc, tensors["norm.x_mean"], tensors["norm.x_std"], tensors["norm.y_mean"],
                   tensors["norm.y_std"], cfg, meta.get("report", {}))


def train_params_to_anthro(params: np.ndarray, targets: np.ndarray, config: P2AConfig | None = None,
                           test: tuple[np.ndarray, np.ndarray] | None = None,
                           out: str | Path | None = None) -> ParamsToAnthro:
    cfg = config or P2AConfig()
    params = np.asarray(params, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(params) < 100:
        raise ValueError(f"params-to-anthro needs at least 100 training pairs, got {len(params)}")
    if len(params) != len(targets):
        raise ValueError("params and targets differ in length")
    rng = np.random.default_rng(cfg.seed)
    x_std = np.where(params.std(axis=0) > 1e-12, params.std(axis=0), 1.0)
    y_std = np.where(targets.std(axis=0) > 1e-12, targets.std(axis=0), 1.0)
    enc = FourierEncoder(params.shape[1], cfg.fourier_f, cfg.sigma, cfg.encoder_seed, "matrix")
    net = MLP(enc.out_dim, cfg.hidden, targets.shape[1], rng)
    model = ParamsToAnthro(net, enc, params.mean(axis=0), x_std, targets.mean(axis=0), y_std, cfg)
    curves = Curves("loss")
    Y = ((targets - model.y_mean) / model.y_std).astype(np.float32)
    _fit_mlp(net, model.features(params), Y, cfg.epochs, cfg.batch_size, cfg.lr, 0.0, rng,
             curves=curves, name="params-to-anthro")
    model.report = {"train_loss": model.loss(params, targets), "curves": curves.to_meta()}
    if test is not None:
        model.report["test_loss"] = model.loss(*test)
    if out is not None:
        model.save(out)
    return model


def shape_to_anthro_pairs(ds, split: str) -> tuple[np.ndarray, np.ndarray]:
    """(shape parameters, 36 measurements) for one dataset split."""
    idx = ds.split(split)
    return ds.p[idx], ds.anthro[idx, 1:]

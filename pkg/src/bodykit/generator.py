"""Conditional VAE: (bind mesh, encoded measurements) -> latent -> bind mesh.

Vertices enter the networks as (x - mean_mesh) / scale, with the train-split
mean mesh and the RMS of the centered coordinates as the scale; both travel
in the checkpoint and the inverse is applied on output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet as dn
from .diffnet import tensor as T
from .diffnet.tensor import Tensor
from .encoding import FourierEncoder
from .meshkit import Mesh, build_adjacency, laplacian_loss
from .training import Curves, TrainingDiverged, config_dict, cosine_lr, minibatches, snapshot

log = logging.getLogger(__name__)

COND_DIM = 37


@dataclass
class GeneratorConfig:
    latent: int = 10
    fourier_f: int = 8
    sigma: float = 1.0
    encoder_seed: int = 0
    alpha: float = 1.0
    beta: float = 1e-3
    gamma: float = 0.0
    batch_size: int = 32
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    epochs: int = 200
    seed: int = 0
    bn: bool = True
    max_train: int | None = None  # subsample the train split (smoke tests)

    def __post_init__(self):
        if self.alpha <= 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights need alpha > 0, beta >= 0, gamma >= 0")


def huber(a, b, delta: float = 1.0) -> Tensor:
    """Mean over every coordinate of the elementwise Huber penalty of a - b."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"huber needs matching shapes, got {a.shape} and {b.shape}")
    return T.mean(T.huber_elementwise(a - b, delta))


def kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, mean over the batch."""
    mu, logvar = T.as_tensor(mu), T.as_tensor(logvar)
    per = 0.5 * T.tsum(T.square(mu) + T.exp(logvar) - 1.0 - logvar, axis=-1)
    return T.mean(per)


def kl_gaussian(mu, sigma) -> float:
    """Closed-form KL to the standard normal for explicit standard deviations."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("standard deviations must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    return float(0.5 * np.sum(mu ** 2 + sigma ** 2 - 1.0 - np.log(sigma ** 2)))


class GeneratorNet(dn.Module):
    def __init__(self, n_vertices: int, cond_dim: int, latent: int, rng: np.random.Generator,
                 bn: bool = True, dtype=np.float32):
        n = 3 * n_vertices
        self.mesh_enc = dn.CoreBlock(n, 128, rng, bn, dtype)
        self.cond_enc = dn.CoreBlock(cond_dim, 128, rng, bn, dtype)
        self.fuse = dn.Sequential(dn.CoreBlock(256, 128, rng, bn, dtype),
                                  dn.CoreBlock(128, 64, rng, bn, dtype))
        self.mu = dn.Linear(64, latent, rng, dtype)
        self.logvar = dn.Linear(64, latent, rng, dtype)
        self.dec = dn.Sequential(dn.CoreBlock(latent + 128, 64, rng, bn, dtype),
                                 dn.CoreBlock(64, 128, rng, bn, dtype),
                                 dn.CoreBlock(128, 256, rng, bn, dtype),
                                 dn.Linear(256, n, rng, dtype))

    def encode(self, x: Tensor, h_a: Tensor) -> tuple[Tensor, Tensor]:
        h = self.fuse(T.concat([self.mesh_enc(x), h_a], axis=-1))
        return self.mu(h), self.logvar(h)

    def decode(self, z: Tensor, h_a: Tensor) -> Tensor:
        return self.dec(T.concat([z, h_a], axis=-1))

    def forward(self, x: Tensor, cond: Tensor, eps: np.ndarray):
        h_a = self.cond_enc(cond)
        mu, logvar = self.encode(x, h_a)
        z = mu + T.exp(0.5 * logvar) * eps  # reparameterization
        return self.decode(z, h_a), mu, logvar


@dataclass
class Generator:
    net: GeneratorNet
    encoder: FourierEncoder
    mean_mesh: np.ndarray  # (V, 3)
    scale: float
    faces: np.ndarray
    cond_mean: np.ndarray  # (37,) train-split statistics applied before encoding
    cond_std: np.ndarray
    config: GeneratorConfig = field(default_factory=GeneratorConfig)
    curves: Curves | None = None
    meta: dict = field(default_factory=dict)

    @property
    def V(self) -> int:
        return len(self.mean_mesh)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return ((np.asarray(x) - self.mean_mesh) / self.scale).reshape(len(x), -1)

    def condition(self, c):
        """Standardize then Fourier-encode conditioning vectors (numpy or Tensor)."""
        if isinstance(c, Tensor):
            return self.encoder((c - self.cond_mean.astype(c.dtype)) * (1.0 / self.cond_std).astype(c.dtype))
        return self.encoder((np.asarray(c) - self.cond_mean) / self.cond_std)

    def decode_tensor(self, c, z) -> Tensor:
        """Decoder-only path, differentiable in ``c`` (and ``z``): (N, V, 3) meters."""
        c = T.as_tensor(c)
        h_a = self.net.cond_enc(self.condition(c))
        out = self.net.decode(T.as_tensor(z, dtype=c.dtype), h_a)
        out = T.reshape(out, (len(c), self.V, 3)) * self.scale
        return out + self.mean_mesh.astype(c.dtype)

    def sample_batch(self, c: np.ndarray, z: np.ndarray | None = None,
                     rng: np.random.Generator | None = None) -> np.ndarray:
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        if c.shape[1] != COND_DIM:
            raise ValueError(f"conditioning vectors must have {COND_DIM} entries, got {c.shape[1]}")
        if z is None:
            rng = rng or np.random.default_rng()
            z = rng.standard_normal((len(c), self.config.latent))
        z = np.broadcast_to(np.asarray(z, dtype=np.float64), (len(c), self.config.latent))
        self.net.eval()
        with dn.no_grad():
            dtype = self.net.mu.weight.dtype
            out = self.decode_tensor(Tensor(c.astype(dtype)), Tensor(z.astype(dtype)))
        return out.data.astype(np.float64)

    def sample(self, c, z=None, rng: np.random.Generator | None = None) -> Mesh:
        """Decode one conditioning vector (sex + 36 measurements) to a bind mesh."""
        return Mesh(self.sample_batch(c, z, rng)[0], self.faces)

    def interpolate(self, c1, c2, steps: int, z=None) -> list[Mesh]:
        if steps < 2:
            raise ValueError("interpolation needs at least 2 steps")
        if z is None:
            z = np.zeros(self.config.latent)
        t = np.linspace(0.0, 1.0, steps)[:, None]
        cs = (1 - t) * np.asarray(c1, dtype=np.float64) + t * np.asarray(c2, dtype=np.float64)
        return [Mesh(v, self.faces) for v in self.sample_batch(cs, z)]

    # -- persistence ---------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        tensors = {f"net.{k}": v for k, v in self.net.state_dict().items()}
        tensors["encoder.B"] = self.encoder.B
        tensors["norm.mean_mesh"] = self.mean_mesh
        tensors["norm.cond_mean"] = self.cond_mean
        tensors["norm.cond_std"] = self.cond_std
        tensors["faces"] = self.faces.astype(np.int64)
        meta = {
            "kind": "generator",
            "config": config_dict(self.config),
            "encoder": self.encoder.to_meta(),
            "norm": {"scale": self.scale, "convention": "(x - mean_mesh) / scale",
                     "conditioning": "(c - cond_mean) / cond_std, then Fourier encoding"},
            "huber_reduction": "mean over coordinates and batch",
            "kl_reduction": "sum over latent dims, mean over batch",
            "curves": self.curves.to_meta() if self.curves else {},
            "bn_eps": dn.layers.BN_EPS, "bn_momentum": dn.layers.BN_MOMENTUM,
            "prelu_init": dn.layers.PRELU_INIT, "init": "kaiming-uniform",
            **self.meta,
        }
        return dn.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Generator":
        tensors, meta = dn.load_checkpoint(path)
        if meta.get("kind") != "generator":
            raise ValueError(f"{path} is not a generator checkpoint (kind={meta.get('kind')})")
        cfg = GeneratorConfig(**meta["config"])
        enc = FourierEncoder.from_meta(meta["encoder"], tensors["encoder.B"])
        mean_mesh = tensors["norm.mean_mesh"]
        net = GeneratorNet(len(mean_mesh), enc.out_dim, cfg.latent, np.random.default_rng(0), cfg.bn)
        net.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("net.")})
        net.eval()
        extra = {k: v for k, v in meta.items() if k in ("template_hash", "dataset", "baseline_p2p",
                                                          "heldout_p2p")}
        gen = cls(net, enc, mean_mesh, float(meta["norm"]["scale"]), tensors["faces"],
                  tensors["norm.cond_mean"], tensors["norm.cond_std"], cfg, None, extra)
        return gen


def _as_dataset(data):
    from .procgen import Dataset

    # anything exposing the Dataset attributes (split, bind, anthro, ...) is used as is
    return data if isinstance(data, Dataset) or hasattr(data, "split") else Dataset(data)


def train_generator(data, config: GeneratorConfig | None = None, out: str | Path | None = None,
                    progress: bool = False) -> Generator:
    """Minimize alpha*Huber + beta*KL + gamma*Laplacian on the train split."""
    cfg = config or GeneratorConfig()
    ds = _as_dataset(data)
    train = ds.split("train")
    if cfg.max_train is not None:
        train = train[:cfg.max_train]
    if len(train) < 2:
        raise ValueError("generator training needs at least 2 training subjects")
    rng = np.random.default_rng(cfg.seed)
    dtype = np.float32

    mean_mesh = ds.bind[train].mean(axis=0)
    scale = float(np.sqrt(np.mean((ds.bind[train] - mean_mesh) ** 2)))
    enc = FourierEncoder(COND_DIM, cfg.fourier_f, cfg.sigma, cfg.encoder_seed, "per_coordinate")
    net = GeneratorNet(ds.template.V, enc.out_dim, cfg.latent, rng, cfg.bn, dtype)
    cond_mean = ds.anthro[train].mean(axis=0)
    cond_std = ds.anthro[train].std(axis=0)
    cond_std = np.where(cond_std > 1e-9, cond_std, 1.0)
    gen = Generator(net, enc, mean_mesh, scale, ds.faces, cond_mean, cond_std, cfg,
                    meta={"template_hash": ds.template.hash, "dataset": str(ds.path)})

    X = gen.normalize(ds.bind[train]).astype(dtype)
    C = gen.condition(ds.anthro[train]).astype(dtype)
    lap = build_adjacency(ds.template.mesh) if cfg.gamma > 0 else None
    opt = dn.Adam(net.parameters(), lr=cfg.lr, names=[n for n, _ in net.named_parameters()])
    curves = Curves("loss", "huber", "kl", "laplacian", "val_p2p")
    val = ds.split("val")
    good = snapshot(net)

    for epoch in range(cfg.epochs):
        net.train()
        opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.lr_schedule)
        sums = np.zeros(4)
        count = 0
        for idx in minibatches(len(X), cfg.batch_size, rng):
            eps = rng.standard_normal((len(idx), cfg.latent)).astype(dtype)
            recon, mu, logvar = net(Tensor(X[idx]), Tensor(C[idx]), eps)
            rec = huber(recon, Tensor(X[idx]))
            div = kl(mu, logvar)
            loss = cfg.alpha * rec + cfg.beta * div
            lap_v = 0.0
            if lap is not None:
                verts = T.reshape(recon, (len(idx), gen.V, 3)) * scale + mean_mesh.astype(dtype)
                lap_term = laplacian_loss(verts, lap) * (1.0 / len(idx))
                loss = loss + cfg.gamma * lap_term
                lap_v = float(lap_term.data)
            if not np.isfinite(loss.data):
                net.load_state_dict(good)
                _save_partial(gen, curves, out)
                raise TrainingDiverged(f"non-finite generator loss at epoch {epoch}")
            opt.zero_grad()
            dn.backward(loss)
            try:
                opt.step()
            except dn.NonFiniteGradient as exc:
                net.load_state_dict(good)
                _save_partial(gen, curves, out)
                raise TrainingDiverged(str(exc)) from exc
            n = len(idx)
            sums += n * np.array([float(loss.data), float(rec.data), float(div.data), lap_v])
            count += n
        good = snapshot(net)
        val_p2p = heldout_p2p(gen, ds, val) if len(val) and (epoch % 10 == 9 or epoch == cfg.epochs - 1) else np.nan
        sums /= count
        curves.add(epoch, loss=sums[0], huber=sums[1], kl=sums[2], laplacian=sums[3], val_p2p=val_p2p)
        if progress:
            log.info("epoch %d loss %.5f huber %.5f kl %.3f val_p2p %s", epoch, *sums[:3], val_p2p)

    gen.curves = curves
    net.eval()
    if out is not None:
        gen.save(out)
    return gen


def _save_partial(gen: Generator, curves: Curves, out) -> None:
    if out is not None:
        gen.curves = curves
        gen.save(out)


def heldout_p2p(gen: Generator, ds, idx: np.ndarray) -> float:
    """Mean P2P (meters) between decoded meshes at z = 0 and the true bind meshes."""
    if len(idx) == 0:
        raise ValueError("empty evaluation split")
    pred = gen.sample_batch(ds.anthro[idx], np.zeros(gen.config.latent))
    return float(np.linalg.norm(pred - ds.bind[idx], axis=-1).mean())

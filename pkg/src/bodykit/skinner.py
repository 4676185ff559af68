"""Translation-only linear blend skinning with learned corrective offsets.

Posing moves every vertex by the skin-weighted blend of joint translations
(posed joint minus bind joint). Whatever that cannot express (rotation of a
limb about its joint, for instance) is carried by per-vertex offsets added
to the bind mesh first; a network predicts them from the bind mesh and the
encoded pose.
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
from .generator import huber
from .meshkit import Mesh, build_adjacency, laplacian_loss
from .training import Curves, TrainingDiverged, config_dict, cosine_lr, minibatches, snapshot

log = logging.getLogger(__name__)


def translation_lbs(bind, weights, bind_joints, posed_joints, offsets):
    """x_v = sum_j w_vj [(bind_v + offset_v) + (posed_j - bind_j)].

    Shapes: bind/offsets (..., V, 3), weights (V, J), joints (..., J, 3).
    numpy in gives numpy out; any Tensor argument gives a Tensor.
    """
    args = (bind, bind_joints, posed_joints, offsets)
    w = np.asarray(weights)
    if any(isinstance(a, Tensor) for a in args):
        bind, bind_joints, posed_joints, offsets = (T.as_tensor(a) for a in args)
        dtype = bind.dtype
        shift = Tensor(w.astype(dtype)) @ (posed_joints - bind_joints)
        return (bind + offsets) * Tensor(w.sum(axis=1, keepdims=True).astype(dtype)) + shift
    bind, bind_joints, posed_joints, offsets = (np.asarray(a, dtype=np.float64) for a in args)
    if bind.shape != offsets.shape:
        raise ValueError(f"offsets {offsets.shape} do not match bind vertices {bind.shape}")
    if bind_joints.shape != posed_joints.shape or bind_joints.shape[-2] != w.shape[1]:
        raise ValueError(f"joint arrays {bind_joints.shape}/{posed_joints.shape} do not match "
                         f"{w.shape[1]} skinned joints")
    if bind.shape[-2] != w.shape[0]:
        raise ValueError(f"{bind.shape[-2]} vertices but {w.shape[0]} weight rows")
    return (bind + offsets) * w.sum(axis=1, keepdims=True) + w @ (posed_joints - bind_joints)


def target_offsets(bind, weights, bind_joints, posed, posed_joints) -> np.ndarray:
    """The unique offsets for which ``translation_lbs`` reproduces ``posed`` exactly."""
    w = np.asarray(weights, dtype=np.float64)
    shift = w @ (np.asarray(posed_joints, dtype=np.float64) - np.asarray(bind_joints, dtype=np.float64))
    return (np.asarray(posed, dtype=np.float64) - shift) / w.sum(axis=1, keepdims=True) \
        - np.asarray(bind, dtype=np.float64)


@dataclass
class SkinnerConfig:
    fourier_f: int = 0  # pose passthrough; matrix encoding of 51 joint coords generalizes worse than no offsets
    sigma: float = 1.0
    encoder_seed: int = 0
    enc_blocks: int = 1
    dec_layers: int = 2
    hidden: int = 128
    bn: bool = True
    rho: float = 1.0
    eta: float = 1.0
    lam: float = 0.0
    batch_size: int = 32
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    epochs: int = 200
    seed: int = 0
    bind_source: str = "ground_truth"  # or "generator" (end-to-end mode)
    max_train: int | None = None


class SkinnerNet(dn.Module):
    """[bind vertices | encoded pose] -> core blocks -> FC (+PReLU) ... -> FC -> offsets."""

    def __init__(self, n_vertices: int, pose_dim: int, cfg: SkinnerConfig, rng: np.random.Generator,
                 dtype=np.float32):
        n = 3 * n_vertices
        blocks = [dn.CoreBlock(n + pose_dim, cfg.hidden, rng, cfg.bn, dtype)]
        blocks += [dn.CoreBlock(cfg.hidden, cfg.hidden, rng, cfg.bn, dtype) for _ in range(cfg.enc_blocks - 1)]
        self.enc = dn.Sequential(*blocks)
        dec: list[dn.Module] = []
        for _ in range(cfg.dec_layers - 1):
            dec += [dn.Linear(cfg.hidden, cfg.hidden, rng, dtype), dn.PReLU(cfg.hidden, dtype)]
        dec.append(dn.Linear(cfg.hidden, n, rng, dtype))
        self.dec = dn.Sequential(*dec)

    def forward(self, x: Tensor, pose: Tensor) -> Tensor:
        return self.dec(self.enc(T.concat([x, pose], axis=-1)))


@dataclass
class Skinner:
    net: SkinnerNet
    encoder: FourierEncoder
    weights: np.ndarray  # (V, J) skinning weights
    regressor: np.ndarray  # (J, V) bind joints = regressor @ bind vertices
    mean_mesh: np.ndarray
    x_scale: float
    pose_mean: np.ndarray  # (J*3,)
    pose_std: np.ndarray
    delta_scale: float
    faces: np.ndarray
    config: SkinnerConfig = field(default_factory=SkinnerConfig)
    curves: Curves | None = None
    meta: dict = field(default_factory=dict)

    @property
    def V(self) -> int:
        return len(self.mean_mesh)

    def _inputs(self, bind, posed_joints):
        n = len(bind)
        if isinstance(bind, Tensor) or isinstance(posed_joints, Tensor):
            bind, posed_joints = T.as_tensor(bind), T.as_tensor(posed_joints, dtype=T.as_tensor(bind).dtype)
            dt = bind.dtype
            x = T.reshape((bind - self.mean_mesh.astype(dt)) * (1.0 / self.x_scale), (n, -1))
            q = (T.reshape(posed_joints, (n, -1)) - self.pose_mean.astype(dt)) * (1.0 / self.pose_std).astype(dt)
            return x, self.encoder(q)
        x = ((np.asarray(bind) - self.mean_mesh) / self.x_scale).reshape(n, -1)
        q = (np.asarray(posed_joints).reshape(n, -1) - self.pose_mean) / self.pose_std
        return x, self.encoder(q)

    def offsets_tensor(self, bind, posed_joints) -> Tensor:
        """Predicted offsets in meters, (N, V, 3); differentiable in both inputs."""
        x, q = self._inputs(bind, posed_joints)
        if not isinstance(x, Tensor):
            dtype = self.net.enc.layers[0].fc.weight.dtype
            x, q = Tensor(x.astype(dtype)), Tensor(q.astype(dtype))
        out = self.net(x, q)
        return T.reshape(out, (len(x), self.V, 3)) * self.delta_scale

    def pose_tensor(self, bind, posed_joints) -> Tensor:
        bind = T.as_tensor(bind)
        bind_joints = Tensor(self.regressor.astype(bind.dtype)) @ bind
        delta = self.offsets_tensor(bind, posed_joints)
        return translation_lbs(bind, self.weights, bind_joints, T.as_tensor(posed_joints, dtype=bind.dtype), delta)

    def pose_batch(self, bind: np.ndarray, posed_joints: np.ndarray, learned: bool = True) -> np.ndarray:
        bind = np.asarray(bind, dtype=np.float64)
        posed_joints = np.asarray(posed_joints, dtype=np.float64)
        if bind.ndim == 2:
            return self.pose_batch(bind[None], posed_joints[None], learned)[0]
        bind_joints = np.einsum("jv,nva->nja", self.regressor, bind)
        if learned:
            self.net.eval()
            with dn.no_grad():
                delta = self.offsets_tensor(bind, posed_joints).data.astype(np.float64)
        else:
            delta = np.zeros_like(bind)
        return translation_lbs(bind, self.weights, bind_joints, posed_joints, delta)

    def pose_mesh(self, bind: Mesh, posed_joints) -> Mesh:
        posed_joints = np.asarray(posed_joints, dtype=np.float64)
        if posed_joints.shape != (self.weights.shape[1], 3):
            raise ValueError(f"pose must be ({self.weights.shape[1]}, 3) joint locations, got {posed_joints.shape}")
        if bind.V != self.V:
            raise ValueError(f"bind mesh has {bind.V} vertices, the skinner expects {self.V}")
        return Mesh(self.pose_batch(bind.vertices, posed_joints), bind.faces)

    # -- persistence ---------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        tensors = {f"net.{k}": v for k, v in self.net.state_dict().items()}
        tensors.update({
            "encoder.B": self.encoder.B, "skin.weights": self.weights, "skin.regressor": self.regressor,
            "norm.mean_mesh": self.mean_mesh, "norm.pose_mean": self.pose_mean,
            "norm.pose_std": self.pose_std, "faces": self.faces.astype(np.int64),
        })
        meta = {
            "kind": "skinner",
            "config": config_dict(self.config),
            "encoder": self.encoder.to_meta(),
            "norm": {"x_scale": self.x_scale, "delta_scale": self.delta_scale},
            "huber_reduction": "mean over coordinates and batch, offsets in units of delta_scale",
            "curves": self.curves.to_meta() if self.curves else {},
            **self.meta,
        }
        return dn.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Skinner":
        tensors, meta = dn.load_checkpoint(path)
        if meta.get("kind") != "skinner":
            raise ValueError(f"{path} is not a skinner checkpoint (kind={meta.get('kind')})")
        cfg = SkinnerConfig(**meta["config"])
        enc = FourierEncoder.from_meta(meta["encoder"], tensors["encoder.B"])
        mean_mesh = tensors["norm.mean_mesh"]
        net = SkinnerNet(len(mean_mesh), enc.out_dim, cfg, np.random.default_rng(0))
        net.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("net.")})
        net.eval()
        extra = {k: meta[k] for k in ("template_hash", "dataset") if k in meta}
        return cls(net, enc, tensors["skin.weights"], tensors["skin.regressor"], mean_mesh,
                   float(meta["norm"]["x_scale"]), tensors["norm.pose_mean"], tensors["norm.pose_std"],
                   float(meta["norm"]["delta_scale"]), tensors["faces"], cfg, None, extra)


def _bind_meshes(ds, idx, cfg: SkinnerConfig, generator=None) -> np.ndarray:
    if cfg.bind_source == "ground_truth":
        return ds.bind[idx]
    if cfg.bind_source == "generator":
        if generator is None:
            raise ValueError("bind_source='generator' needs a trained generator")
        return generator.sample_batch(ds.anthro[idx], np.zeros(generator.config.latent))
    raise ValueError(f"unknown bind source {cfg.bind_source!r}")


def skinning_targets(ds, idx, bind: np.ndarray) -> np.ndarray:
    bind_joints = np.einsum("jv,nva->nja", ds.template.joint_regressor, bind)
    return target_offsets(bind, ds.template.binding.weights, bind_joints, ds.posed[idx], ds.joints[idx])


def train_skinner(data, config: SkinnerConfig | None = None, out: str | Path | None = None,
                  generator=None, progress: bool = False) -> Skinner:
    """Minimize rho*Huber(offsets) + eta*Huber(posed) + lam*Laplacian(posed)."""
    from .generator import _as_dataset

    cfg = config or SkinnerConfig()
    ds = _as_dataset(data)
    train = ds.split("train")
    if cfg.max_train is not None:
        train = train[:cfg.max_train]
    if len(train) < 2:
        raise ValueError("skinner training needs at least 2 training subjects")
    rng = np.random.default_rng(cfg.seed)
    dtype = np.float32
    tpl = ds.template

    bind = _bind_meshes(ds, train, cfg, generator)
    delta = skinning_targets(ds, train, bind)
    mean_mesh = bind.mean(axis=0)
    x_scale = float(np.sqrt(np.mean((bind - mean_mesh) ** 2)))
    q = ds.joints[train].reshape(len(train), -1)
    pose_mean = q.mean(axis=0)
    pose_std = q.std(axis=0)
    pose_std = np.where(pose_std > 1e-9, pose_std, 1.0)
    delta_scale = float(np.sqrt(np.mean(delta ** 2))) or 1.0

    enc = FourierEncoder(q.shape[1], cfg.fourier_f, cfg.sigma, cfg.encoder_seed, "matrix")
    net = SkinnerNet(tpl.V, enc.out_dim, cfg, rng, dtype)
    sk = Skinner(net, enc, tpl.binding.weights, tpl.joint_regressor, mean_mesh, x_scale, pose_mean,
                 pose_std, delta_scale, ds.faces, cfg,
                 meta={"template_hash": tpl.hash, "dataset": str(ds.path)})

    X, Q = sk._inputs(bind, ds.joints[train])
    X, Q = X.astype(dtype), Q.astype(dtype)
    D = (delta / delta_scale).reshape(len(train), -1).astype(dtype)
    W = tpl.binding.weights
    bind_joints = np.einsum("jv,nva->nja", tpl.joint_regressor, bind)
    shift = (np.einsum("vj,nja->nva", W, ds.joints[train] - bind_joints)).astype(dtype)
    lap = build_adjacency(tpl.mesh) if cfg.lam > 0 else None
    bind32 = bind.astype(dtype)
    posed32 = ds.posed[train].astype(dtype)

    opt = dn.Adam(net.parameters(), lr=cfg.lr, names=[n for n, _ in net.named_parameters()])
    curves = Curves("loss", "huber_offsets", "huber_posed", "laplacian", "val_p2p")
    val = ds.split("val")
    good = snapshot(net)
    inv = np.float32(1.0 / delta_scale)
    for epoch in range(cfg.epochs):
        net.train()
        opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.lr_schedule)
        sums = np.zeros(4)
        count = 0
        for idx in minibatches(len(X), cfg.batch_size, rng):
            n = len(idx)
            pred = net(Tensor(X[idx]), Tensor(Q[idx]))
            h_off = huber(pred, Tensor(D[idx]))
            pred_m = T.reshape(pred, (n, tpl.V, 3)) * np.float32(delta_scale)
            # translation LBS, written through the blend so gradients see it
            posed_pred = translation_lbs(Tensor(bind32[idx]), W, Tensor(np.zeros((n, W.shape[1], 3), dtype)),
                                         Tensor(np.zeros((n, W.shape[1], 3), dtype)), pred_m) + shift[idx]
            h_pos = huber(posed_pred * inv, Tensor(posed32[idx] * inv))
            loss = cfg.rho * h_off + cfg.eta * h_pos
            lap_v = 0.0
            if lap is not None:
                lap_term = laplacian_loss(posed_pred, lap) * (1.0 / n)
                loss = loss + cfg.lam * lap_term
                lap_v = float(lap_term.data)
            if not np.isfinite(loss.data):
                net.load_state_dict(good)
                raise TrainingDiverged(f"non-finite skinner loss at epoch {epoch}")
            opt.zero_grad()
            dn.backward(loss)
            try:
                opt.step()
            except dn.NonFiniteGradient as exc:
                net.load_state_dict(good)
                raise TrainingDiverged(str(exc)) from exc
            sums += n * np.array([float(loss.data), float(h_off.data), float(h_pos.data), lap_v])
            count += n
        good = snapshot(net)
        sums /= count
        val_p2p = np.nan
        if len(val) and (epoch % 10 == 9 or epoch == cfg.epochs - 1):
            val_p2p = posed_p2p(sk, ds, val, generator=generator)
        curves.add(epoch, loss=sums[0], huber_offsets=sums[1], huber_posed=sums[2], laplacian=sums[3],
                   val_p2p=val_p2p)
        if progress:
            log.info("epoch %d loss %.5f val_p2p %s", epoch, sums[0], val_p2p)
    sk.curves = curves
    net.eval()
    if out is not None:
        sk.save(out)
    return sk


def posed_p2p(sk: Skinner, ds, idx: np.ndarray, learned: bool = True, generator=None) -> float:
    """Mean P2P (meters) between skinned meshes and the oracle posed meshes."""
    bind = _bind_meshes(ds, idx, sk.config, generator)
    out = np.concatenate([sk.pose_batch(bind[s:s + 256], ds.joints[idx][s:s + 256], learned)
                          for s in range(0, len(idx), 256)])
    return float(np.linalg.norm(out - ds.posed[idx], axis=-1).mean())

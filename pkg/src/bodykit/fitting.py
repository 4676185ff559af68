"""Registration of the frozen generator + skinner onto a target mesh.

The free variables are the conditioning vector c (sex + 36 measurements) and
the posed joint locations. c is optimized in standardized units (the
generator's own conditioning statistics) so one learning rate suits every
measurement; the sex entry is kept in [0, 1] and rounded at the end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import diffnet as dn
from .diffnet import tensor as T
from .diffnet.tensor import Tensor
from .generator import Generator
from .meshkit import Mesh, chamfer
from .skinner import Skinner

log = logging.getLogger(__name__)

SECTIONS = ("full body", "chest", "waist", "hip", "thighs", "calves", "arms")


@dataclass
class FitConfig:
    lr: float = 1e-2
    iterations: int = 500
    plateau: float = 1e-6
    patience: int = 50
    tau_joint: float = 0.02  # meters
    stage1_iterations: int = 300
    pose_box_std: float = 4.0  # joints stay within mean +- this many train stds
    max_restarts: int = 3
    seed: int = 0


@dataclass
class FitResult:
    c: np.ndarray  # (37,)
    pose: np.ndarray  # (J, 3) posed joint locations
    mesh: Mesh  # fitted posed mesh
    bind: Mesh  # generated bind mesh at c
    report: dict = field(default_factory=dict)


def body_sections(template) -> dict[str, np.ndarray]:
    """Vertex sets for the per-section Chamfer report, from ring names and part labels."""
    loops, regions = template.loops, template.regions

    def rings(*names):
        return np.concatenate([loops[f"torso:{n}"] for n in names])

    def parts(*names):
        return np.nonzero(np.isin(regions, names))[0]

    return {
        "full body": np.arange(template.V),
        "chest": rings("chest_hi", "chest", "upper_chest"),
        "waist": rings("spine_hi", "waist", "belly"),
        "hip": rings("crotch", "hip", "root_lo", "root_hi"),
        "thighs": parts("l_thigh", "r_thigh"),
        "calves": parts("l_calf", "r_calf"),
        "arms": parts("l_upperarm", "l_forearm", "r_upperarm", "r_forearm"),
    }


def section_chamfer(fitted: np.ndarray, target: np.ndarray, sections: dict[str, np.ndarray]) -> dict[str, float]:
    """Chamfer per section in millimeters. Same-topology targets are cut with the
    same vertex sets; other targets compare a fitted section against the target
    points nearest to it."""
    out = {}
    same = target.shape == fitted.shape
    tree = None if same else cKDTree(target)
    for name, idx in sections.items():
        a = fitted[idx]
        if same:
            b = target[idx]
        else:
            b = target[np.unique(tree.query(a)[1])]
        with dn.no_grad():
            out[name] = 1000.0 * float(chamfer(a, b).data)
    return out


class _Model:
    """c (standardized) and joints -> posed vertices through the frozen networks."""

    def __init__(self, gen: Generator, sk: Skinner):
        self.gen, self.sk = gen, sk
        gen.net.eval()
        sk.net.eval()
        self.latent = np.zeros((1, gen.config.latent), dtype=np.float32)
        self.c_mean = gen.cond_mean.astype(np.float32)
        self.c_std = gen.cond_std.astype(np.float32)

    def c_of(self, u: Tensor) -> Tensor:
        return u * self.c_std + self.c_mean

    def forward(self, u: Tensor, pose: Tensor) -> tuple[Tensor, Tensor]:
        c = T.reshape(self.c_of(u), (1, -1))
        bind = self.gen.decode_tensor(c, self.latent)
        posed = self.sk.pose_tensor(bind, T.reshape(pose, (1, *pose.shape)))
        return T.reshape(bind, bind.shape[1:]), T.reshape(posed, posed.shape[1:])


def _sex_bounds(model: _Model) -> tuple[float, float]:
    # u-range that keeps the sex entry of c inside [0, 1]
    lo = (0.0 - model.c_mean[0]) / model.c_std[0]
    hi = (1.0 - model.c_mean[0]) / model.c_std[0]
    return float(lo), float(hi)


def _run(model: _Model, target: np.ndarray, u0: np.ndarray, pose0: np.ndarray, cfg: FitConfig,
         joints_target: np.ndarray | None, tau: float | None) -> dict:
    """Adam over (u, pose); returns best iterate per stage plus curves."""
    u = Tensor(u0.astype(np.float32).copy(), requires_grad=True)
    pose = Tensor(pose0.astype(np.float32).copy(), requires_grad=True)
    opt = dn.Adam([u, pose], lr=cfg.lr)
    tree = cKDTree(target)
    target_t = Tensor(target.astype(np.float32))
    sex_lo, sex_hi = _sex_bounds(model)
    box_lo = (model.sk.pose_mean - cfg.pose_box_std * model.sk.pose_std).reshape(pose0.shape)
    box_hi = (model.sk.pose_mean + cfg.pose_box_std * model.sk.pose_std).reshape(pose0.shape)
    reg = model.sk.regressor.astype(np.float32)

    stage = 1 if joints_target is not None and tau is not None and np.isfinite(tau) else 2
    curves = {"stage1": [], "stage2": []}
    boundary = 0 if stage == 2 else None
    stage1_reached = stage == 2 and joints_target is None
    best = {"loss": np.inf, "u": u.data.copy(), "pose": pose.data.copy()}
    since = 0
    it = 0
    budget = cfg.iterations + (cfg.stage1_iterations if stage == 1 else 0)
    joint_err = np.nan
    while it < budget:
        bind, posed = model.forward(u, pose)
        if stage == 1:
            jt = Tensor(reg) @ posed
            loss = T.mean(T.norm(jt - Tensor(joints_target.astype(np.float32)), axis=-1))
        else:
            loss = chamfer(posed, target_t, tree)
        val = float(loss.data)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite fitting loss at iteration {it}")
        curves[f"stage{stage}"].append(val)
        if stage == 1:
            joint_err = val
            if val < tau:
                stage1_reached = True
            if val < tau or len(curves["stage1"]) >= cfg.stage1_iterations:
                if not stage1_reached:
                    log.warning("stage 1 stopped at joint error %.4f m (tau %.4f m)", val, tau)
                stage, boundary, since = 2, it, 0
                opt = dn.Adam([u, pose], lr=cfg.lr)
                it += 1
                continue
        else:
            if val < best["loss"] - cfg.plateau:
                since = 0
            else:
                since += 1
            if val < best["loss"]:
                best = {"loss": val, "u": u.data.copy(), "pose": pose.data.copy()}
            if since >= cfg.patience:
                break
        opt.zero_grad()
        dn.backward(loss)
        opt.step()
        u.data[0] = np.clip(u.data[0], sex_lo, sex_hi)
        np.clip(pose.data, box_lo, box_hi, out=pose.data)
        it += 1
    return {"best": best, "curves": curves, "stage_boundary": boundary, "stage1_reached": bool(stage1_reached),
            "stage1_joint_error": float(joint_err), "iterations": it}


def _fit(target, gen: Generator, sk: Skinner, init_c, init_pose, cfg: FitConfig,
         joints_target=None, tau=None, sections=None) -> FitResult:
    pts = target.vertices if isinstance(target, Mesh) else np.asarray(target, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"target must be an (N, 3) point set, got {pts.shape}")
    if len(pts) < 100:
        raise ValueError(f"target needs at least 100 points, got {len(pts)}")
    model = _Model(gen, sk)
    frozen = {k: v.copy() for k, v in gen.net.state_dict().items()}
    frozen.update({f"sk.{k}": v.copy() for k, v in sk.net.state_dict().items()})
    params = gen.net.parameters() + sk.net.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False

    c0 = gen.cond_mean.copy() if init_c is None else np.asarray(init_c, dtype=np.float64)
    pose0 = (sk.pose_mean.reshape(-1, 3) if init_pose is None else np.asarray(init_pose, dtype=np.float64))
    u0 = (c0 - gen.cond_mean) / gen.cond_std
    rng = np.random.default_rng(cfg.seed)
    try:
        for attempt in range(cfg.max_restarts + 1):
            try:
                run = _run(model, pts, u0, pose0, cfg, joints_target, tau)
                break
            except (FloatingPointError, dn.NonFiniteGradient) as exc:
                if attempt == cfg.max_restarts:
                    raise
                log.warning("fit restart %d after %s", attempt + 1, exc)
                u0 = u0 + 0.1 * rng.standard_normal(u0.shape)
                pose0 = pose0 + 0.005 * rng.standard_normal(pose0.shape)
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f

    best = run["best"]
    c = best["u"].astype(np.float64) * gen.cond_std + gen.cond_mean
    c[0] = float(np.round(np.clip(c[0], 0.0, 1.0)))
    pose = best["pose"].astype(np.float64)
    bind = gen.sample(c, np.zeros(gen.config.latent))
    posed = sk.pose_mesh(bind, pose)
    with dn.no_grad():
        initial = run["curves"]["stage2"][0] if run["curves"]["stage2"] else np.nan
        final = float(chamfer(posed.vertices, pts).data)
    report = {
        "chamfer_mm": 1000.0 * final,
        "initial_chamfer_mm": 1000.0 * initial,
        "best_iterate_chamfer_mm": 1000.0 * best["loss"],
        "iterations": run["iterations"],
        "stage_boundary": run["stage_boundary"],
        "stage1_reached": run["stage1_reached"],
        "stage1_joint_error_m": run["stage1_joint_error"],
        "curves": run["curves"],
        "c": c.tolist(),
        "pose": pose.tolist(),
    }
    if sections is not None:
        report["sections_mm"] = section_chamfer(posed.vertices, pts, sections)
    for k, v in gen.net.state_dict().items():
        assert np.array_equal(v, frozen[k]), "fitting modified generator parameters"
    for k, v in sk.net.state_dict().items():
        assert np.array_equal(v, frozen[f"sk.{k}"]), "fitting modified skinner parameters"
    return FitResult(c, pose, posed, bind, report)


def fit_to_target(target, generator: Generator, skinner: Skinner, init_c=None, init_pose=None,
                  config: FitConfig | None = None, sections=None) -> FitResult:
    """Minimize Chamfer(posed model, target) over c and the joint locations."""
    return _fit(target, generator, skinner, init_c, init_pose, config or FitConfig(), sections=sections)


def fit_staged(target, joints, generator: Generator, skinner: Skinner, init_c=None, init_pose=None,
               config: FitConfig | None = None, sections=None) -> FitResult:
    """Stage 1 matches regressed joints to ``joints`` until below tau, stage 2 minimizes Chamfer."""
    cfg = config or FitConfig()
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (skinner.weights.shape[1], 3):
        raise ValueError(f"joints must be ({skinner.weights.shape[1]}, 3), got {joints.shape}")
    return _fit(target, generator, skinner, init_c, init_pose, cfg, joints, cfg.tau_joint, sections)


def resample(points: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Subsample (or repeat) a point cloud to exactly ``n`` points."""
    points = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(points), size=n, replace=len(points) < n)
    return points[np.sort(idx)]

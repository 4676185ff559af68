"""Procedural humanoid: template, shape morphing, oracle posing, datasets.

The body is a union of capped generalized cylinders (ring cross-sections
along a polyline axis). Topology never changes; only ring centers and
radii move. Every skinning joint sits midway between two rings, so bind
joint locations are a fixed linear function of the vertices.

Coordinates: y up, z forward, +x is the body's left. Bind pose is a T-pose
with the hip (root) joint at the origin.
"""

from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .meshkit import Mesh, write_obj

JOINT_NAMES = (
    "hips", "spine", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle",
)
JOINT_PARENTS = (-1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15)
J = len(JOINT_NAMES)
JIDX = {n: i for i, n in enumerate(JOINT_NAMES)}

SHAPE_PARAMS = (
    "sex", "height", "weight", "arm_length", "leg_length",
    "upperarm_girth", "forearm_girth", "thigh_girth", "calf_girth",
    "torso_taper", "shoulder_width", "head_scale",
)
P = len(SHAPE_PARAMS)

# multiplier reached at p = 0 and p = 1 (p = 0.5 is 1.0 for every axis)
_RANGES = {
    "height": (0.88, 1.12),
    "weight": (0.75, 1.40),
    "arm_length": (0.88, 1.12),
    "leg_length": (0.90, 1.10),
    "upperarm_girth": (0.85, 1.20),
    "forearm_girth": (0.85, 1.20),
    "thigh_girth": (0.85, 1.20),
    "calf_girth": (0.85, 1.20),
    "torso_taper": (1.12, 0.88),
    "shoulder_width": (0.90, 1.10),
    "head_scale": (0.93, 1.07),
}

# sex = 0 (male) and sex = 1 (female) extremes, as multipliers
_SEX = {
    0.0: dict(stature=1.03, hip=0.96, waist=1.04, chest_depth=1.0, shoulder=1.06, neck=1.08, limb=1.03),
    1.0: dict(stature=0.96, hip=1.08, waist=0.92, chest_depth=1.06, shoulder=0.93, neck=0.90, limb=0.95),
}

DEG = np.pi / 180.0
# per-joint rotation limits about the bind-frame x, y, z axes (radians).
# Single-child joints only swing (axes normal to the bone), hinges have one
# axis, leaves are fixed: that keeps every pose recoverable from joint locations.
_LIMITS_DEG = {
    "hips": (45, 45, 45), "spine": (45, 0, 45), "chest": (45, 45, 45),
    "neck": (45, 0, 45), "head": (0, 0, 0),
    "l_shoulder": (0, 45, 45), "l_elbow": (0, 90, 0), "l_wrist": (0, 0, 0),
    "r_shoulder": (0, 45, 45), "r_elbow": (0, 90, 0), "r_wrist": (0, 0, 0),
    "l_hip": (45, 0, 45), "l_knee": (90, 0, 0), "l_ankle": (0, 0, 0),
    "r_hip": (45, 0, 45), "r_knee": (90, 0, 0), "r_ankle": (0, 0, 0),
}
ROTATION_LIMITS = np.array([_LIMITS_DEG[n] for n in JOINT_NAMES], dtype=np.float64) * DEG


class ShapeError(ValueError):
    pass


class PoseLimitError(ValueError):
    pass


@dataclass(frozen=True)
class TemplateConfig:
    torso_k: int = 16
    neck_head_k: int = 12
    arm_k: int = 12
    leg_k: int = 12
    foot_k: int = 8


# ---------------------------------------------------------------------------
# tube layout (canonical units, meters). Each ring: (level, {joint: weight}, region, name)
# ---------------------------------------------------------------------------
def _w(*pairs):
    return dict(pairs)


_TORSO_RINGS = [
    (-0.090, _w(("hips", 1.0)), "torso", "crotch"),
    (-0.030, _w(("hips", 1.0)), "torso", "hip"),
    (-0.012, _w(("hips", 1.0)), "torso", "root_lo"),
    (0.012, _w(("hips", 1.0)), "torso", "root_hi"),
    (0.085, _w(("hips", 2 / 3), ("spine", 1 / 3)), "torso", "spine_lo"),
    (0.115, _w(("hips", 1 / 3), ("spine", 2 / 3)), "torso", "spine_hi"),
    (0.140, _w(("spine", 1.0)), "torso", "waist"),
    (0.190, _w(("spine", 1.0)), "torso", "belly"),
    (0.235, _w(("spine", 1.0)), "torso", "ribs"),
    (0.265, _w(("spine", 2 / 3), ("chest", 1 / 3)), "torso", "chest_lo"),
    (0.295, _w(("spine", 1 / 3), ("chest", 2 / 3)), "torso", "chest_hi"),
    (0.330, _w(("chest", 1.0)), "torso", "chest"),
    (0.420, _w(("chest", 1.0)), "torso", "upper_chest"),
    (0.450, _w(("chest", 1.0)), "torso", "shoulder_line"),
    (0.480, _w(("chest", 1.0)), "torso", "top"),
]
_TORSO_CAPS = (-0.100, 0.500)
# (level, rx, rz) keyframes of the torso cross-section
_TORSO_PROFILE = np.array([
    (-0.10, 0.140, 0.100), (-0.03, 0.170, 0.125), (0.05, 0.155, 0.115),
    (0.14, 0.140, 0.105), (0.23, 0.155, 0.115), (0.33, 0.170, 0.125),
    (0.42, 0.175, 0.110), (0.50, 0.120, 0.085),
])

_NECK_HEAD_RINGS = [
    (0.460, _w(("chest", 1.0)), "neckhead", "neck_root"),
    (0.490, _w(("chest", 2 / 3), ("neck", 1 / 3)), "neckhead", "neck_base"),
    (0.510, _w(("chest", 1 / 3), ("neck", 2 / 3)), "neckhead", "neck_base_hi"),
    (0.535, _w(("neck", 1.0)), "neckhead", "neck"),
    (0.560, _w(("neck", 1.0)), "neckhead", "neck_upper"),
    (0.575, _w(("neck", 2 / 3), ("head", 1 / 3)), "neckhead", "neck_top"),
    (0.595, _w(("neck", 1 / 3), ("head", 2 / 3)), "neckhead", "skull_base"),
    (0.620, _w(("head", 1.0)), "neckhead", "chin"),
    (0.700, _w(("head", 1.0)), "neckhead", "head"),
    (0.765, _w(("head", 1.0)), "neckhead", "crown"),
    (0.785, _w(("head", 1.0)), "neckhead", "crown_top"),
]
_NECK_HEAD_CAPS = (0.440, 0.800)
_NECK_HEAD_PROFILE = np.array([
    (0.44, 0.065, 0.062), (0.50, 0.060, 0.058), (0.575, 0.058, 0.056),
    (0.62, 0.075, 0.085), (0.70, 0.078, 0.095), (0.765, 0.060, 0.070),
    (0.80, 0.030, 0.035),
])
HEAD_JOINT_LEVEL = 0.585

_ARM_RINGS = [  # levels are distances along +x from the body midline
    (0.130, _w(("chest", 1.0)), "upperarm", "arm_root"),
    (0.175, _w(("chest", 2 / 3), ("shoulder", 1 / 3)), "upperarm", "shoulder_in"),
    (0.205, _w(("chest", 1 / 3), ("shoulder", 2 / 3)), "upperarm", "shoulder"),
    (0.260, _w(("shoulder", 1.0)), "upperarm", "deltoid"),
    (0.330, _w(("shoulder", 1.0)), "upperarm", "biceps"),
    (0.400, _w(("shoulder", 1.0)), "upperarm", "upperarm_low"),
    (0.465, _w(("shoulder", 2 / 3), ("elbow", 1 / 3)), "upperarm", "elbow_in"),
    (0.495, _w(("shoulder", 1 / 3), ("elbow", 2 / 3)), "forearm", "elbow"),
    (0.600, _w(("elbow", 1.0)), "forearm", "forearm"),
    (0.715, _w(("elbow", 2 / 3), ("wrist", 1 / 3)), "forearm", "wrist_in"),
    (0.745, _w(("elbow", 1 / 3), ("wrist", 2 / 3)), "hand", "wrist"),
    (0.800, _w(("wrist", 1.0)), "hand", "palm"),
    (0.870, _w(("wrist", 1.0)), "hand", "fingers"),
]
_ARM_CAPS = (0.120, 0.910)
ARM_Y = 0.43
SHOULDER_X = 0.19
_ARM_PROFILE = np.array([  # (level, r_vertical, r_forward)
    (0.12, 0.050, 0.050), (0.19, 0.055, 0.055), (0.33, 0.048, 0.048),
    (0.48, 0.040, 0.040), (0.60, 0.042, 0.042), (0.73, 0.030, 0.032),
    (0.80, 0.016, 0.045), (0.87, 0.014, 0.040), (0.91, 0.010, 0.025),
])

_LEG_RINGS = [  # levels are y
    (-0.010, _w(("hips", 1.0)), "thigh", "leg_root"),
    (-0.055, _w(("hips", 2 / 3), ("hip", 1 / 3)), "thigh", "hip_in"),
    (-0.085, _w(("hips", 1 / 3), ("hip", 2 / 3)), "thigh", "groin"),
    (-0.150, _w(("hip", 1.0)), "thigh", "thigh"),
    (-0.300, _w(("hip", 1.0)), "thigh", "mid_thigh"),
    (-0.380, _w(("hip", 1.0)), "thigh", "low_thigh"),
    (-0.475, _w(("hip", 2 / 3), ("knee", 1 / 3)), "thigh", "knee_in"),
    (-0.505, _w(("hip", 1 / 3), ("knee", 2 / 3)), "calf", "knee"),
    (-0.570, _w(("knee", 1.0)), "calf", "upper_calf"),
    (-0.640, _w(("knee", 1.0)), "calf", "calf"),
    (-0.800, _w(("knee", 1.0)), "calf", "shin"),
    (-0.875, _w(("knee", 2 / 3), ("ankle", 1 / 3)), "calf", "ankle_in"),
    (-0.905, _w(("knee", 1 / 3), ("ankle", 2 / 3)), "calf", "ankle"),
]
_LEG_CAPS = (0.000, -0.920)
HIP_X = 0.09
HIP_Y = -0.07
_LEG_PROFILE = np.array([  # (level, rx, rz), level decreasing
    (0.00, 0.085, 0.085), (-0.15, 0.088, 0.088), (-0.30, 0.075, 0.075),
    (-0.49, 0.055, 0.055), (-0.64, 0.057, 0.057), (-0.80, 0.040, 0.040),
    (-0.92, 0.035, 0.035),
])

_FOOT_RINGS = [  # levels are z
    (-0.045, _w(("ankle", 1.0)), "foot", "heel"),
    (-0.010, _w(("ankle", 1.0)), "foot", "arch_back"),
    (0.040, _w(("ankle", 1.0)), "foot", "arch"),
    (0.090, _w(("ankle", 1.0)), "foot", "instep"),
    (0.125, _w(("ankle", 1.0)), "foot", "ball"),
    (0.165, _w(("ankle", 1.0)), "foot", "toes"),
]
_FOOT_CAPS = (-0.060, 0.200)
_FOOT_PROFILE = np.array([  # (level, r_lateral, r_vertical)
    (-0.06, 0.028, 0.028), (-0.01, 0.040, 0.030), (0.09, 0.047, 0.024),
    (0.125, 0.049, 0.020), (0.20, 0.030, 0.010),
])
FOOT_Y = (-0.920, -0.935)  # axis height at heel and toe


def _interp(profile: np.ndarray, level: float) -> tuple[float, float]:
    order = np.argsort(profile[:, 0])
    p = profile[order]
    return float(np.interp(level, p[:, 0], p[:, 1])), float(np.interp(level, p[:, 0], p[:, 2]))


def _hat(x: float, center: float, width: float) -> float:
    return max(0.0, 1.0 - abs(x - center) / width)


@dataclass
class _Tube:
    name: str  # e.g. "torso", "l_arm"
    k: int
    rings: list  # entries of the ring tables above
    caps: tuple[float, float]
    mirrored: bool = False
    first: int = 0  # index of the first vertex

    @property
    def n_vertices(self) -> int:
        return len(self.rings) * self.k + 2


def _layout(cfg: TemplateConfig) -> list[_Tube]:
    tubes = [
        _Tube("torso", cfg.torso_k, _TORSO_RINGS, _TORSO_CAPS),
        _Tube("neckhead", cfg.neck_head_k, _NECK_HEAD_RINGS, _NECK_HEAD_CAPS),
    ]
    for side, mirrored in (("l", False), ("r", True)):
        tubes.append(_Tube(f"{side}_arm", cfg.arm_k, _ARM_RINGS, _ARM_CAPS, mirrored))
        tubes.append(_Tube(f"{side}_leg", cfg.leg_k, _LEG_RINGS, _LEG_CAPS, mirrored))
        tubes.append(_Tube(f"{side}_foot", cfg.foot_k, _FOOT_RINGS, _FOOT_CAPS, mirrored))
    start = 0
    for t in tubes:
        t.first = start
        start += t.n_vertices
    return tubes


# ---------------------------------------------------------------------------
# geometry for a given set of body multipliers
# ---------------------------------------------------------------------------
def _dims(p: np.ndarray) -> dict[str, float]:
    """Multipliers for shape vector ``p`` where every axis is at an extreme
    (0 or 1) or exactly 0.5; intermediate values come from blending."""
    d = {}
    for i, name in enumerate(SHAPE_PARAMS[1:], start=1):
        lo, hi = _RANGES[name]
        d[name] = lo if p[i] == 0.0 else hi if p[i] == 1.0 else 1.0
    sex = {k: 1.0 for k in _SEX[0.0]}
    if p[0] in _SEX:
        sex = _SEX[float(p[0])]
    d.update({f"sex_{k}": v for k, v in sex.items()})
    return d


def _ring_frame(tube: _Tube, level: float, d: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    """Center, two in-plane axes and the two radii of one ring."""
    girth = d["weight"]
    limb = d["sex_limb"]
    if tube.name == "torso":
        rx, rz = _interp(_TORSO_PROFILE, level)
        f_w = 1.0 + (d["torso_taper"] * d["sex_waist"] - 1.0) * _hat(level, 0.14, 0.12)
        f_h = 1.0 + (d["sex_hip"] - 1.0) * _hat(level, -0.03, 0.12)
        f_c = 1.0 + (d["sex_chest_depth"] - 1.0) * _hat(level, 0.33, 0.10)
        f_s = 1.0 + (d["shoulder_width"] * d["sex_shoulder"] - 1.0) * _hat(level, 0.45, 0.10)
        scale = girth * f_w * f_h
        return (np.array([0.0, level, 0.0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]),
                rx * scale * f_s, rz * scale * f_c)
    if tube.name == "neckhead":
        rx, rz = _interp(_NECK_HEAD_PROFILE, level)
        if level > 0.6:
            s = d["head_scale"]
            y = HEAD_JOINT_LEVEL + (level - HEAD_JOINT_LEVEL) * s
            return np.array([0.0, y, 0.0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), rx * s, rz * s
        f = girth ** 0.5 * d["sex_neck"]
        return np.array([0.0, level, 0.0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), rx * f, rz * f
    if tube.name.endswith("arm"):
        rv, rf = _interp(_ARM_PROFILE, level)
        sx = SHOULDER_X * d["shoulder_width"] * d["sex_shoulder"]
        x = sx + (level - SHOULDER_X) * d["arm_length"]
        if level < 0.48:
            g = d["upperarm_girth"] * girth * limb
        elif level < 0.74:
            g = d["forearm_girth"] * girth ** 0.7 * limb
        else:
            g = 1.0
        return np.array([x, ARM_Y, 0.0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), rv * g, rf * g
    if tube.name.endswith("leg"):
        rx, rz = _interp(_LEG_PROFILE, level)
        y = HIP_Y + (level - HIP_Y) * d["leg_length"]
        if level > -0.49:
            g = d["thigh_girth"] * girth * limb
        else:
            g = d["calf_girth"] * girth ** 0.7 * limb
        return np.array([HIP_X, y, 0.0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), rx * g, rz * g
    # foot: follows the ankle when legs lengthen
    rl, rv = _interp(_FOOT_PROFILE, level)
    t = (level - _FOOT_CAPS[0]) / (_FOOT_CAPS[1] - _FOOT_CAPS[0])
    y0 = FOOT_Y[0] + t * (FOOT_Y[1] - FOOT_Y[0])
    dy = (-0.89 - HIP_Y) * (d["leg_length"] - 1.0)
    return np.array([HIP_X, y0 + dy, level]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), rl, rv


def _tube_vertices(tube: _Tube, d: dict) -> np.ndarray:
    phi = 2 * np.pi * np.arange(tube.k) / tube.k
    out = np.empty((tube.n_vertices, 3))
    for i, (level, *_rest) in enumerate(tube.rings):
        c, u, w, ru, rw = _ring_frame(tube, level, d)
        out[i * tube.k:(i + 1) * tube.k] = c + np.outer(ru * np.cos(phi), u) + np.outer(rw * np.sin(phi), w)
    for j, level in enumerate(tube.caps):
        c, *_ = _ring_frame(tube, level, d)
        out[len(tube.rings) * tube.k + j] = c
    if tube.mirrored:
        out[:, 0] *= -1.0
    return out


def _tube_faces(tube: _Tube) -> np.ndarray:
    k, n = tube.k, len(tube.rings)
    faces = []
    for i in range(n - 1):
        for a in range(k):
            b = (a + 1) % k
            v00, v01 = tube.first + i * k + a, tube.first + i * k + b
            v10, v11 = v00 + k, v01 + k
            faces += [(v00, v01, v11), (v00, v11, v10)]
    c0 = tube.first + n * k
    c1 = c0 + 1
    last = tube.first + (n - 1) * k
    for a in range(k):
        b = (a + 1) % k
        faces.append((c0, tube.first + b, tube.first + a))
        faces.append((c1, last + a, last + b))
    f = np.array(faces, dtype=np.int64)
    if tube.mirrored:
        f = f[:, ::-1]
    return f


@dataclass(frozen=True)
class SkinBinding:
    parents: np.ndarray  # (J,)
    bind_joints: np.ndarray  # (J, 3) meters
    weights: np.ndarray  # (V, J) row-stochastic
    joint_names: tuple[str, ...] = JOINT_NAMES

    @property
    def J(self) -> int:
        return len(self.parents)


@dataclass(frozen=True)
class Template:
    """Canonical body plus everything derived from its fixed topology."""

    mesh: Mesh
    binding: SkinBinding
    loops: dict  # ring name -> vertex indices (closed loop order)
    points: dict  # landmark name -> vertex index
    regions: np.ndarray  # (V,) region label per vertex, e.g. "l_forearm"
    joint_regressor: np.ndarray  # (J, V): joints = regressor @ vertices
    blend_lo: np.ndarray  # (P, V, 3) displacement at p_i = 0
    blend_hi: np.ndarray  # (P, V, 3) displacement at p_i = 1
    lipschitz: np.ndarray  # (P,) max vertex displacement per unit of p_i
    config: TemplateConfig = field(default_factory=TemplateConfig)

    def __iter__(self):
        return iter((self.mesh, self.binding, self.loops))

    @property
    def V(self) -> int:
        return self.mesh.V

    def joints(self, vertices: np.ndarray) -> np.ndarray:
        return self.joint_regressor @ np.asarray(vertices)

    @property
    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.round(self.mesh.vertices, 9).tobytes())
        h.update(self.mesh.faces.tobytes())
        h.update(np.round(self.binding.weights, 9).tobytes())
        return h.hexdigest()[:16]


def _raw_body(p: np.ndarray, tubes: list[_Tube], regressor: np.ndarray) -> np.ndarray:
    d = _dims(p)
    x = np.concatenate([_tube_vertices(t, d) for t in tubes])
    x *= d["height"] * d["sex_stature"]
    return x - regressor[0] @ x  # hip joint at the origin


@functools.lru_cache(maxsize=4)
def build_template(config: TemplateConfig = TemplateConfig()) -> Template:
    tubes = _layout(config)
    V = sum(t.n_vertices for t in tubes)
    faces = np.concatenate([_tube_faces(t) for t in tubes])

    weights = np.zeros((V, J))
    regions = np.empty(V, dtype=object)
    loops: dict[str, np.ndarray] = {}
    points: dict[str, int] = {}
    ring_of: dict[tuple[str, str], np.ndarray] = {}
    for t in tubes:
        side = t.name[:2] if t.name[1] == "_" else ""
        for i, (_, wts, region, rname) in enumerate(t.rings):
            idx = np.arange(t.first + i * t.k, t.first + (i + 1) * t.k)
            for jn, wv in wts.items():
                full = jn if jn in JIDX else side + jn
                weights[idx, JIDX[full]] = wv
            regions[idx] = side + region
            loops[f"{t.name}:{rname}"] = idx
            ring_of[(t.name, rname)] = idx
        n = len(t.rings)
        for j, ring_i in ((0, 0), (1, n - 1)):
            c = t.first + n * t.k + j
            weights[c] = weights[t.first + ring_i * t.k]
            regions[c] = regions[t.first + ring_i * t.k]
        points[f"{t.name}:cap_start"] = t.first + n * t.k
        points[f"{t.name}:cap_end"] = t.first + n * t.k + 1

    def straddle(tube: str, a: str, b: str) -> np.ndarray:
        row = np.zeros(V)
        for r in (a, b):
            idx = ring_of[(tube, r)]
            row[idx] += 0.5 / len(idx)
        return row

    reg = np.zeros((J, V))
    reg[JIDX["hips"]] = straddle("torso", "root_lo", "root_hi")
    reg[JIDX["spine"]] = straddle("torso", "spine_lo", "spine_hi")
    reg[JIDX["chest"]] = straddle("torso", "chest_lo", "chest_hi")
    reg[JIDX["neck"]] = straddle("neckhead", "neck_base", "neck_base_hi")
    reg[JIDX["head"]] = straddle("neckhead", "neck_top", "skull_base")
    for s in ("l", "r"):
        reg[JIDX[f"{s}_shoulder"]] = straddle(f"{s}_arm", "shoulder_in", "shoulder")
        reg[JIDX[f"{s}_elbow"]] = straddle(f"{s}_arm", "elbow_in", "elbow")
        reg[JIDX[f"{s}_wrist"]] = straddle(f"{s}_arm", "wrist_in", "wrist")
        reg[JIDX[f"{s}_hip"]] = straddle(f"{s}_leg", "hip_in", "groin")
        reg[JIDX[f"{s}_knee"]] = straddle(f"{s}_leg", "knee_in", "knee")
        reg[JIDX[f"{s}_ankle"]] = straddle(f"{s}_leg", "ankle_in", "ankle")

    half = np.full(P, 0.5)
    canon = _raw_body(half, tubes, reg)
    blend_lo = np.zeros((P, V, 3))
    blend_hi = np.zeros((P, V, 3))
    for i in range(P):
        for val, dst in ((0.0, blend_lo), (1.0, blend_hi)):
            q = half.copy()
            q[i] = val
            dst[i] = _raw_body(q, tubes, reg) - canon
    lipschitz = 2.0 * np.maximum(np.linalg.norm(blend_lo, axis=2).max(1),
                                 np.linalg.norm(blend_hi, axis=2).max(1))

    mesh = Mesh(canon, faces).validate()
    binding = SkinBinding(np.array(JOINT_PARENTS), reg @ canon, weights)
    return Template(mesh, binding, loops, points, regions, reg, blend_lo, blend_hi,
                    lipschitz, config)


# ---------------------------------------------------------------------------
# morphing and posing
# ---------------------------------------------------------------------------
def morph(p, template: Template | None = None) -> Mesh:
    """Bind-pose mesh for shape vector ``p`` in [0, 1]^P (additive blend shapes)."""
    tpl = template or build_template()
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (P,):
        raise ShapeError(f"shape vector must have {P} entries, got {p.shape}")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        bad = [SHAPE_PARAMS[i] for i in np.nonzero((p < 0) | (p > 1) | ~np.isfinite(p))[0]]
        raise ShapeError(f"shape parameters outside [0, 1]: {bad}")
    lo = np.clip(1.0 - 2.0 * p, 0.0, None)
    hi = np.clip(2.0 * p - 1.0, 0.0, None)
    x = tpl.mesh.vertices + np.tensordot(lo, tpl.blend_lo, 1) + np.tensordot(hi, tpl.blend_hi, 1)
    return Mesh(x, tpl.mesh.faces)


def binding_for(bind: Mesh, template: Template | None = None) -> SkinBinding:
    """Skin binding with joints recomputed from a (morphed) bind mesh."""
    tpl = template or build_template()
    return SkinBinding(tpl.binding.parents, tpl.joints(bind.vertices), tpl.binding.weights)


def check_rotations(rotations: np.ndarray, limits: np.ndarray = ROTATION_LIMITS) -> None:
    r = np.asarray(rotations)
    if r.shape != limits.shape:
        raise PoseLimitError(f"rotations must be {limits.shape}, got {r.shape}")
    over = np.abs(r) > limits + 1e-12
    if over.any():
        j, a = np.argwhere(over)[0]
        raise PoseLimitError(f"joint {JOINT_NAMES[j]} axis {'xyz'[a]}: {np.degrees(r[j, a]):.1f} deg "
                             f"exceeds limit {np.degrees(limits[j, a]):.1f} deg")


def global_transforms(binding: SkinBinding, rotations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World rotation matrices (J, 3, 3) and posed joint locations (J, 3)."""
    local = Rotation.from_rotvec(np.asarray(rotations, dtype=np.float64)).as_matrix()
    theta = binding.bind_joints
    R = np.empty((binding.J, 3, 3))
    posed = np.empty((binding.J, 3))
    for j, par in enumerate(binding.parents):
        if par < 0:
            R[j] = local[j]
            posed[j] = theta[j]
        else:
            R[j] = R[par] @ local[j]
            posed[j] = posed[par] + R[par] @ (theta[j] - theta[par])
    return R, posed


def oracle_pose(bind: Mesh, binding: SkinBinding, rotations,
                limits: np.ndarray = ROTATION_LIMITS) -> tuple[Mesh, np.ndarray]:
    """Ground-truth posing by rotational linear blend skinning.

    Returns the posed mesh and the posed global joint locations (J, 3).
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    check_rotations(rotations, limits)
    R, posed_joints = global_transforms(binding, rotations)
    x = bind.vertices
    # per-joint rigid images of every vertex, blended by the skinning weights
    local = x[None, :, :] - binding.bind_joints[:, None, :]
    moved = np.einsum("jab,jvb->jva", R, local) + posed_joints[:, None, :]
    posed = np.einsum("vj,jva->va", binding.weights, moved)
    return Mesh(posed, bind.faces), posed_joints


def sample_rotations(rng: np.random.Generator, spread: float = 0.5,
                     limits: np.ndarray = ROTATION_LIMITS) -> np.ndarray:
    """Uniform rotation-vector components within ``spread`` x the joint limits."""
    return rng.uniform(-1.0, 1.0, limits.shape) * limits * spread


def sample_shape(rng: np.random.Generator) -> np.ndarray:
    """Uniform over every axis; sex is drawn from {0, 1}."""
    p = rng.uniform(0.0, 1.0, P)
    p[0] = float(rng.integers(0, 2))
    return p


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------
@dataclass
class DatasetConfig:
    n: int = 2000
    seed: int = 0
    pose_spread: float = 0.5
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)


def record_layout(V: int, n_measure: int) -> dict[str, tuple[int, int]]:
    sizes = [("p", P), ("anthro", n_measure + 1), ("bind", 3 * V), ("posed", 3 * V), ("joints", 3 * J)]
    layout, off = {}, 0
    for name, size in sizes:
        layout[name] = (off, size)
        off += size
    layout["_stride"] = (off, 0)
    return layout


def _split_indices(n: int, fractions: Sequence[float], rng: np.random.Generator) -> dict[str, list[int]]:
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n >= 3:
        n_train = max(1, min(n_train, n - 2))
        n_val = max(1, min(n_val, n - n_train - 1))
    return {"train": sorted(perm[:n_train].tolist()),
            "val": sorted(perm[n_train:n_train + n_val].tolist()),
            "test": sorted(perm[n_train + n_val:].tolist())}


def make_record(p: np.ndarray, rotations: np.ndarray, template: Template, registry) -> dict:
    from .anthropometry import measure

    bind = morph(p, template)
    binding = binding_for(bind, template)
    posed, joints = oracle_pose(bind, binding, rotations)
    anthro = measure(bind, registry).with_sex(p[0])
    return {"p": p, "anthro": anthro.c, "bind": bind.vertices, "posed": posed.vertices,
            "joints": joints, "bind_joints": binding.bind_joints}


def gen_dataset(n: int, seed: int, out_path: str | Path, pose_spread: float = 0.5,
                template: Template | None = None) -> Path:
    """Write ``dataset.json`` + ``records.bin`` (+ ``template.obj``) to ``out_path``."""
    from .anthropometry import default_registry

    if n < 1:
        raise ValueError(f"dataset needs at least one record, got n={n}")
    tpl = template or build_template()
    registry = default_registry(tpl)
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    layout = record_layout(tpl.V, len(registry))
    stride = layout["_stride"][0]

    rng = np.random.default_rng(seed)
    shapes = np.stack([sample_shape(rng) for _ in range(n)])
    rots = np.stack([sample_rotations(rng, pose_spread) for _ in range(n)])
    splits = _split_indices(n, DatasetConfig.split, rng)

    with open(out / "records.bin", "wb") as fh:
        for i in range(n):
            rec = make_record(shapes[i], rots[i], tpl, registry)
            row = np.concatenate([np.ravel(rec[k]) for k in ("p", "anthro", "bind", "posed", "joints")])
            assert row.size == stride
            fh.write(row.astype("<f4").tobytes())

    manifest = {
        "format": "bodykit-dataset/1",
        "count": n,
        "seed": seed,
        "pose_spread": pose_spread,
        "template_hash": tpl.hash,
        "template_config": asdict(tpl.config),
        "V": tpl.V,
        "J": J,
        "P": P,
        "dtype": "<f4",
        "stride": stride,
        "fields": {k: {"offset": o, "size": s} for k, (o, s) in layout.items() if not k.startswith("_")},
        "shape_params": list(SHAPE_PARAMS),
        "joint_names": list(JOINT_NAMES),
        "joint_parents": list(JOINT_PARENTS),
        "splits": splits,
        "registry": registry.to_json(),
    }
    (out / "dataset.json").write_text(json.dumps(manifest, indent=1))
    write_obj(tpl.mesh, out / "template.obj")
    return out


class Dataset:
    """Read-only view of a generated dataset directory."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.manifest = json.loads((self.path / "dataset.json").read_text())
        m = self.manifest
        self.template = build_template(TemplateConfig(**m["template_config"]))
        if self.template.hash != m["template_hash"]:
            raise ValueError(f"{path}: template hash {m['template_hash']} does not match "
                             f"the current template {self.template.hash}")
        raw = np.fromfile(self.path / "records.bin", dtype=m["dtype"])
        if raw.size != m["count"] * m["stride"]:
            raise ValueError(f"{path}: records.bin holds {raw.size} floats, expected "
                             f"{m['count']} x {m['stride']}")
        table = raw.reshape(m["count"], m["stride"]).astype(np.float64)
        f = m["fields"]

        def col(name):
            o, s = f[name]["offset"], f[name]["size"]
            return table[:, o:o + s]

        V = m["V"]
        self.p = col("p")
        self.anthro = col("anthro")
        self.bind = col("bind").reshape(-1, V, 3)
        self.posed = col("posed").reshape(-1, V, 3)
        self.joints = col("joints").reshape(-1, J, 3)
        self.splits = {k: np.array(v, dtype=np.int64) for k, v in m["splits"].items()}
        from .anthropometry import Registry

        self.registry = Registry.from_json(m["registry"])

    def __len__(self) -> int:
        return len(self.p)

    @property
    def faces(self) -> np.ndarray:
        return self.template.mesh.faces

    def bind_joints(self, idx=slice(None)) -> np.ndarray:
        return np.einsum("jv,nva->nja", self.template.joint_regressor, self.bind[idx])

    def split(self, name: str) -> np.ndarray:
        return self.splits[name]

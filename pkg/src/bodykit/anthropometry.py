"""Tape-measure engine over the template topology.

Every measurement is a sum of Euclidean segment lengths: a circumference
sums the edges of a closed ring, a length is a single landmark pair. The
whole registry therefore reduces to one (36, S) selection matrix applied to
segment norms, which works for numpy arrays and autodiff tensors alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .diffnet import tensor as T
from .meshkit import Mesh

KINDS = ("circumference", "length", "height")
MASK_MODES = ("soft", "binary", "none")
BILATERAL_ASSUMPTION = (
    "the 12 limb measures (hand size, arm/forearm/thigh/calf circumference and length, "
    "foot width, heel-to-ball, heel-to-toe) are instantiated left and right"
)


@dataclass(frozen=True)
class MeasurementDef:
    name: str
    kind: str
    vertices: tuple[int, ...]  # closed loop order, or a landmark pair
    segment: tuple[int, ...]  # vertices of the body part the mask may cover

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "circumference" and len(self.vertices) < 3:
            raise ValueError(f"{self.name}: a loop needs at least 3 vertices")
        if self.kind != "circumference" and (len(self.vertices) != 2 or self.vertices[0] == self.vertices[1]):
            raise ValueError(f"{self.name}: needs two distinct landmark vertices")

    def pairs(self) -> np.ndarray:
        v = np.asarray(self.vertices)
        if self.kind == "circumference":
            return np.stack([v, np.roll(v, -1)], axis=1)
        return v[None, :]


@dataclass(frozen=True)
class AnthroVector:
    A: np.ndarray  # (36,) meters, registry order
    sex: float = 0.0  # 0 male, 1 female

    @property
    def c(self) -> np.ndarray:
        """Conditioning vector: sex followed by the measurements."""
        return np.concatenate([[self.sex], self.A])

    def with_sex(self, sex: float) -> "AnthroVector":
        return AnthroVector(self.A, float(sex))

    @classmethod
    def from_c(cls, c) -> "AnthroVector":
        c = np.asarray(c, dtype=np.float64)
        return cls(c[1:], float(c[0]))


class Registry:
    def __init__(self, entries: Iterable[MeasurementDef], n_vertices: int):
        self.entries = tuple(entries)
        self.n_vertices = n_vertices
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate measurement names")
        pairs, rows = [], []
        for i, e in enumerate(self.entries):
            pr = e.pairs()
            if pr.max() >= n_vertices:
                raise ValueError(f"{e.name}: vertex index out of range for V={n_vertices}")
            pairs.append(pr)
            rows += [i] * len(pr)
        self._pairs = np.concatenate(pairs)
        self._select = np.zeros((len(self.entries), len(self._pairs)))
        self._select[rows, np.arange(len(rows))] = 1.0

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key) -> MeasurementDef:
        if isinstance(key, str):
            return self.entries[self.names.index(key)]
        return self.entries[key]

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def values(self, x):
        """Measurements of vertices ``x`` (V, 3) or (B, V, 3); numpy in, numpy out,
        Tensor in, Tensor out."""
        if isinstance(x, T.Tensor):
            axis = x.ndim - 2
            d = T.take(x, self._pairs[:, 0], axis=axis) - T.take(x, self._pairs[:, 1], axis=axis)
            seg = T.norm(d, axis=-1)
            return seg @ T.Tensor(self._select.T.astype(x.dtype))
        x = np.asarray(x, dtype=np.float64)
        seg = np.linalg.norm(x[..., self._pairs[:, 0], :] - x[..., self._pairs[:, 1], :], axis=-1)
        return seg @ self._select.T

    def to_json(self) -> dict:
        return {
            "assumptions": [BILATERAL_ASSUMPTION, "height is the Euclidean head-top to heel distance"],
            "n_vertices": self.n_vertices,
            "entries": [{"name": e.name, "kind": e.kind, "vertices": list(map(int, e.vertices)),
                         "segment": list(map(int, e.segment))} for e in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Registry":
        return cls([MeasurementDef(d["name"], d["kind"], tuple(d["vertices"]), tuple(d["segment"]))
                    for d in obj["entries"]], obj["n_vertices"])


def measure(mesh: Mesh, registry: Registry | None = None) -> AnthroVector:
    reg = registry or default_registry()
    if mesh.V != reg.n_vertices:
        raise ValueError(f"mesh has {mesh.V} vertices, the registry expects {reg.n_vertices}")
    return AnthroVector(reg.values(mesh.vertices))


UNILATERAL = (
    "waist circumference", "chest circumference", "hip circumference", "height",
    "shoulder width", "torso height from back", "torso height from front",
    "head circumference", "neck circumference", "head height",
    "mid-line neck length", "lateral neck length",
)
BILATERAL = (
    "hand size", "arm circumference", "arm length", "forearm circumference", "forearm length",
    "thigh circumference", "thigh length", "calf circumference", "calf length",
    "foot width", "heel to ball length", "heel to toe length",
)


def default_registry(template=None) -> Registry:
    from .procgen import build_template

    tpl = template or build_template()
    loops, points, regions = tpl.loops, tpl.points, tpl.regions
    K = {name: len(idx) for name, idx in loops.items()}

    def at(loop: str, where: str) -> int:
        # ring vertex k sits at angle 2*pi*k/K from the first in-plane axis
        k = K[loop]
        q = {"lateral": 0, "top": 0, "front": k // 4, "medial": k // 2, "bottom": 3 * k // 4,
             "back": 3 * k // 4}[where]
        if loop.split(":")[0].endswith("foot"):
            q = {"lateral": 0, "top": k // 4, "medial": k // 2, "bottom": 3 * k // 4}[where]
        return int(loops[loop][q])

    def seg(*names: str) -> tuple[int, ...]:
        return tuple(int(i) for i in np.nonzero(np.isin(regions, names))[0])

    every = tuple(range(tpl.V))
    e = [
        MeasurementDef("waist circumference", "circumference", tuple(loops["torso:waist"]), seg("torso")),
        MeasurementDef("chest circumference", "circumference", tuple(loops["torso:chest"]), seg("torso")),
        MeasurementDef("hip circumference", "circumference", tuple(loops["torso:hip"]), seg("torso")),
        MeasurementDef("height", "height", (points["neckhead:cap_end"], at("l_foot:heel", "bottom")), every),
        MeasurementDef("shoulder width", "length",
                       (at("l_arm:shoulder_in", "top"), at("r_arm:shoulder_in", "top")),
                       seg("torso", "l_upperarm", "r_upperarm")),
        MeasurementDef("torso height from back", "length",
                       (at("torso:top", "back"), at("torso:waist", "back")), seg("torso")),
        MeasurementDef("torso height from front", "length",
                       (at("torso:top", "front"), at("torso:waist", "front")), seg("torso")),
        MeasurementDef("head circumference", "circumference", tuple(loops["neckhead:head"]), seg("neckhead")),
        MeasurementDef("neck circumference", "circumference", tuple(loops["neckhead:neck"]), seg("neckhead")),
        MeasurementDef("head height", "length",
                       (points["neckhead:cap_end"], at("neckhead:chin", "front")), seg("neckhead")),
        MeasurementDef("mid-line neck length", "length",
                       (at("neckhead:neck_top", "front"), at("neckhead:neck_base", "front")), seg("neckhead")),
        MeasurementDef("lateral neck length", "length",
                       (at("neckhead:neck_top", "lateral"), at("neckhead:neck_base", "lateral")),
                       seg("neckhead")),
    ]
    for s, side in (("l", "left"), ("r", "right")):
        arm, leg, foot = f"{s}_arm", f"{s}_leg", f"{s}_foot"
        e += [
            MeasurementDef(f"hand size {side}", "length",
                           (at(f"{arm}:wrist", "top"), points[f"{arm}:cap_end"]), seg(f"{s}_hand", f"{s}_forearm")),
            MeasurementDef(f"arm circumference {side}", "circumference", tuple(loops[f"{arm}:biceps"]),
                           seg(f"{s}_upperarm")),
            MeasurementDef(f"arm length {side}", "length",
                           (at(f"{arm}:shoulder", "top"), at(f"{arm}:elbow", "top")), seg(f"{s}_upperarm")),
            MeasurementDef(f"forearm circumference {side}", "circumference", tuple(loops[f"{arm}:forearm"]),
                           seg(f"{s}_forearm")),
            MeasurementDef(f"forearm length {side}", "length",
                           (at(f"{arm}:elbow", "top"), at(f"{arm}:wrist", "top")), seg(f"{s}_forearm")),
            MeasurementDef(f"thigh circumference {side}", "circumference", tuple(loops[f"{leg}:thigh"]),
                           seg(f"{s}_thigh")),
            MeasurementDef(f"thigh length {side}", "length",
                           (at(f"{leg}:groin", "front"), at(f"{leg}:knee_in", "front")), seg(f"{s}_thigh")),
            MeasurementDef(f"calf circumference {side}", "circumference", tuple(loops[f"{leg}:calf"]),
                           seg(f"{s}_calf")),
            MeasurementDef(f"calf length {side}", "length",
                           (at(f"{leg}:knee", "front"), at(f"{leg}:ankle", "front")), seg(f"{s}_calf")),
            MeasurementDef(f"foot width {side}", "length",
                           (at(f"{foot}:ball", "lateral"), at(f"{foot}:ball", "medial")), seg(f"{s}_foot")),
            MeasurementDef(f"heel to ball length {side}", "length",
                           (points[f"{foot}:cap_start"], at(f"{foot}:ball", "medial")), seg(f"{s}_foot")),
            MeasurementDef(f"heel to toe length {side}", "length",
                           (points[f"{foot}:cap_start"], points[f"{foot}:cap_end"]), seg(f"{s}_foot")),
        ]
    return Registry(e, tpl.V)


def vertex_mask(entry: MeasurementDef, mesh: Mesh, mode: str = "soft") -> np.ndarray:
    """Per-vertex input weights for the expert regressor of ``entry``.

    soft: exp(-d_min) inside the entry's body part, d_min being the distance in
    meters to the nearest defining vertex; binary: soft weight > 0.5; none: ones.
    Vertices outside the body part get 0 in both masked modes.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"mask mode must be one of {MASK_MODES}, got {mode!r}")
    if mode == "none":
        return np.ones(mesh.V)
    x = mesh.vertices
    anchors = x[list(entry.vertices)]
    d = np.linalg.norm(x[:, None, :] - anchors[None, :, :], axis=-1).min(axis=1)
    w = np.exp(-d)
    if mode == "binary":
        w = (w > 0.5).astype(np.float64)
    inside = np.zeros(mesh.V, dtype=bool)
    inside[list(entry.segment)] = True
    return np.where(inside, w, 0.0)

"""Ablation runners: Fourier conditioning, skinner architecture, masks, params-to-anthro."""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from .generator import GeneratorConfig, heldout_p2p, train_generator
from .regressor import ExpertConfig, P2AConfig, shape_to_anthro_pairs, train_experts, train_params_to_anthro
from .skinner import SkinnerConfig, posed_p2p, train_skinner


def fourier_ablation(ds, base: GeneratorConfig | None = None, freqs=(0, 8)) -> list[dict]:
    base = base or GeneratorConfig()
    rows = []
    test = ds.split("test")
    for f in freqs:
        t0 = time.time()
        gen = train_generator(ds, dataclasses.replace(base, fourier_f=f))
        rows.append({"fourier_f": f, "heldout_p2p_mm": 1000 * heldout_p2p(gen, ds, test),
                     "seconds": time.time() - t0})
    return rows


def skinner_ablation(ds, base: SkinnerConfig | None = None, variants=None) -> list[dict]:
    base = base or SkinnerConfig()
    variants = variants or [{"enc_blocks": 1, "dec_layers": 2, "bn": True},
                            {"enc_blocks": 1, "dec_layers": 2, "bn": False}]
    rows = []
    test = ds.split("test")
    for v in variants:
        sk = train_skinner(ds, dataclasses.replace(base, **v))
        rows.append({**v, "fourier_f": sk.config.fourier_f,
                     "heldout_p2p_mm": 1000 * posed_p2p(sk, ds, test),
                     "zero_offset_p2p_mm": 1000 * posed_p2p(sk, ds, test, learned=False)})
    return rows


def mask_ablation(ds, base: ExpertConfig | None = None, modes=("soft", "binary", "none"),
                  one_model: bool = True) -> list[dict]:
    base = base or ExpertConfig()
    rows = []
    runs = [(m, False) for m in modes] + ([("none", True)] if one_model else [])
    for mode, joint in runs:
        t0 = time.time()
        bank = train_experts(ds, dataclasses.replace(base, mask_mode=mode, one_model=joint))
        rows.append({"model": "one model" if joint else f"{mode} mask",
                     "test_mse": bank.report["test_mse"],
                     "median_rel_error": bank.report["median_rel_error"],
                     "seconds": time.time() - t0})
    return rows


def p2a_ablation(ds, base: P2AConfig | None = None, freqs=(0, 8, 32)) -> list[dict]:
    base = base or P2AConfig()
    train = shape_to_anthro_pairs(ds, "train")
    test = shape_to_anthro_pairs(ds, "test")
    rows = []
    for f in freqs:
        model = train_params_to_anthro(*train, dataclasses.replace(base, fourier_f=f), test=test)
        rows.append({"fourier_f": f, "train_loss": model.report["train_loss"],
                     "test_loss": model.report["test_loss"]})
    return rows


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    cells = [[k for k in keys]] + [[_fmt(r[k]) for k in keys] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(keys))]
    return "\n".join("  ".join(c[i].ljust(widths[i]) for i in range(len(keys))) for c in cells)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def ordered(rows: list[dict], key: str) -> bool:
    """True when ``key`` strictly increases down the rows."""
    vals = [r[key] for r in rows]
    return all(a < b for a, b in zip(vals, vals[1:])) and bool(np.all(np.isfinite(vals)))

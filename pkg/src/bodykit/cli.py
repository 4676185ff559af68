"""Command-line entry point: ``bodykit <subcommand> ...`` (or ``python3 -m bodykit``).

Failures print one JSON line ``{"error": ..., "message": ...}`` to stderr and
exit with status 1 (2 for bad arguments). Every run writes ``run.json`` next
to its main output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

DATA_ENV = "BODYKIT_DATA"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def _default_data() -> str:
    return os.environ.get(DATA_ENV, "data")


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None


def _make_config(cls, path: str | None, **overrides):
    cfg = _load_json(path)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(cfg) - names
    if unknown:
        raise CliError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**cfg)


def _write_run(out_dir: Path, args: argparse.Namespace, config=None, checkpoints=(), extra=None) -> None:
    from .diffnet import checkpoint_hash
    from .training import config_dict, config_hash

    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "version": __version__,
        "seed": getattr(config, "seed", getattr(args, "seed", None)),
        "config": config_dict(config) if config is not None else None,
        "config_hash": config_hash(config) if config is not None else None,
        "checkpoint_hashes": {str(c): checkpoint_hash(c) for c in checkpoints},
        **(extra or {}),
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, default=str))


def _emit(obj: dict, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    print(text)


def _dataset(path: str):
    from .procgen import Dataset

    if not (Path(path) / "dataset.json").exists():
        raise CliError(f"no dataset at {path} (run gen-data first or set {DATA_ENV})")
    return Dataset(path)


# -- subcommands --------------------------------------------------------------
def cmd_gen_data(args):
    from .procgen import gen_dataset

    out = gen_dataset(args.n, args.seed, args.out, pose_spread=args.pose_spread)
    _write_run(out, args)
    print(json.dumps({"dataset": str(out), "count": args.n}))


def cmd_train_generator(args):
    from .generator import GeneratorConfig, heldout_p2p, train_generator

    cfg = _make_config(GeneratorConfig, args.config, epochs=args.epochs, seed=args.seed, fourier_f=args.fourier_f)
    ds = _dataset(args.data)
    gen = train_generator(ds, cfg, args.out)
    out = Path(args.out)
    gen.curves.write_csv(out / "curves.csv")
    p2p = heldout_p2p(gen, ds, ds.split("test"))
    _write_run(out, args, cfg, [out], {"heldout_p2p_m": p2p})
    print(json.dumps({"checkpoint": str(out), "heldout_p2p_mm": 1000 * p2p}))


def cmd_train_skinner(args):
    from .generator import Generator
    from .skinner import SkinnerConfig, posed_p2p, train_skinner

    cfg = _make_config(SkinnerConfig, args.config, epochs=args.epochs, seed=args.seed, fourier_f=args.fourier_f)
    ds = _dataset(args.data)
    gen = Generator.load(args.generator) if args.generator else None
    if gen is not None and cfg.bind_source == "ground_truth":
        cfg = dataclasses.replace(cfg, bind_source="generator")
    sk = train_skinner(ds, cfg, args.out, generator=gen)
    out = Path(args.out)
    sk.curves.write_csv(out / "curves.csv")
    test = ds.split("test")
    learned = posed_p2p(sk, ds, test, generator=gen)
    base = posed_p2p(sk, ds, test, learned=False, generator=gen)
    ckpts = [out] + ([Path(args.generator)] if args.generator else [])
    _write_run(out, args, cfg, ckpts, {"heldout_p2p_m": learned, "zero_offset_p2p_m": base})
    print(json.dumps({"checkpoint": str(out), "heldout_p2p_mm": 1000 * learned,
                      "zero_offset_p2p_mm": 1000 * base}))


def cmd_train_experts(args):
    from .regressor import ExpertConfig, train_experts

    cfg = _make_config(ExpertConfig, args.config, epochs=args.epochs, seed=args.seed, mask_mode=args.mask,
                       one_model=True if args.one_model else None)
    bank = train_experts(_dataset(args.data), cfg, args.out)
    out = Path(args.out)
    _write_run(out, args, cfg, [out], {"report": bank.report})
    print(json.dumps({"checkpoint": str(out), "test_mse": bank.report.get("test_mse")}))


def cmd_train_p2a(args):
    from .regressor import P2AConfig, shape_to_anthro_pairs, train_params_to_anthro
    from .training import Curves

    cfg = _make_config(P2AConfig, args.config, epochs=args.epochs, seed=args.seed, fourier_f=args.fourier_f)
    ds = _dataset(args.data)
    model = train_params_to_anthro(*shape_to_anthro_pairs(ds, "train"), cfg,
                                   test=shape_to_anthro_pairs(ds, "test"), out=args.out)
    out = Path(args.out)
    curves = Curves("loss")
    for e, v in enumerate(model.report["curves"]["loss"]):
        curves.add(e, loss=v)
    curves.write_csv(out / "curves.csv")
    _write_run(out, args, cfg, [out], {"test_loss": model.report["test_loss"]})
    print(json.dumps({"checkpoint": str(out), "test_loss": model.report["test_loss"]}))


def _conditioning(path: str, registry) -> np.ndarray:
    """Accepts {"c": [37 numbers]} or {"sex": 0|1, "measurements": {name: meters}}."""
    obj = _load_json(path)
    if "c" in obj:
        c = np.asarray(obj["c"], dtype=np.float64)
        if c.shape != (37,):
            raise CliError(f"{path}: 'c' must have 37 entries, got {c.size}")
        return c
    if "measurements" not in obj or "sex" not in obj:
        raise CliError(f"{path}: expected keys 'sex' and 'measurements' (or 'c')")
    m = obj["measurements"]
    missing = [n for n in registry.names if n not in m]
    if missing:
        raise CliError(f"{path}: missing measurements {missing[:3]}{'...' if len(missing) > 3 else ''}")
    return np.array([float(obj["sex"])] + [float(m[n]) for n in registry.names])


def _latent(path: str | None, dim: int) -> np.ndarray:
    if not path:
        return np.zeros(dim)
    obj = _load_json(path)
    z = np.asarray(obj["z"] if isinstance(obj, dict) else obj, dtype=np.float64)
    if z.shape != (dim,):
        raise CliError(f"{path}: latent must have {dim} entries, got {z.size}")
    return z


def _measurement_report(requested: np.ndarray, mesh, registry) -> dict:
    from .anthropometry import measure

    achieved = measure(mesh, registry).A
    rel = np.abs(achieved - requested[1:]) / requested[1:]
    return {
        "sex": requested[0],
        "requested": dict(zip(registry.names, requested[1:].tolist())),
        "achieved": dict(zip(registry.names, achieved.tolist())),
        "relative_error": dict(zip(registry.names, rel.tolist())),
        "median_relative_error": float(np.median(rel)),
    }


def cmd_generate(args):
    from .anthropometry import default_registry
    from .generator import Generator
    from .meshkit import write_obj

    gen = Generator.load(args.generator)
    reg = default_registry()
    c = _conditioning(args.measurements, reg)
    mesh = gen.sample(c, _latent(args.z, gen.config.latent))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_obj(mesh, out)
    report = _measurement_report(c, mesh, reg)
    _write_run(out.parent, args, checkpoints=[Path(args.generator)])
    _emit(report, args.report or str(out.with_suffix(".json")))


def cmd_interpolate(args):
    from .anthropometry import default_registry, measure
    from .generator import Generator
    from .meshkit import write_obj

    gen = Generator.load(args.generator)
    reg = default_registry()
    c1, c2 = _conditioning(args.a1, reg), _conditioning(args.a2, reg)
    meshes = gen.interpolate(c1, c2, args.steps, _latent(args.z, gen.config.latent))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, m in enumerate(meshes):
        write_obj(m, out / f"step_{i:03d}.obj")
        rows.append(dict(zip(reg.names, measure(m, reg).A.tolist())))
    _write_run(out, args, checkpoints=[Path(args.generator)])
    _emit({"steps": args.steps, "files": [f"step_{i:03d}.obj" for i in range(args.steps)], "measurements": rows},
          str(out / "interpolation.json"))


def _read_mesh(path: str):
    from .meshkit import read_obj

    if not Path(path).exists():
        raise CliError(f"no such file: {path}")
    return read_obj(path)


def _joints(path: str, J: int) -> np.ndarray:
    obj = _load_json(path)
    arr = np.asarray(obj["joints"] if isinstance(obj, dict) else obj, dtype=np.float64)
    if arr.shape != (J, 3):
        raise CliError(f"{path}: expected {J}x3 joint locations, got shape {list(arr.shape)}")
    return arr


def cmd_pose(args):
    from .meshkit import write_obj
    from .skinner import Skinner

    sk = Skinner.load(args.skinner)
    bind = _read_mesh(args.bind)
    posed = sk.pose_mesh(bind, _joints(args.pose, sk.weights.shape[1]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_obj(posed, out)
    _write_run(out.parent, args, checkpoints=[Path(args.skinner)])
    print(json.dumps({"posed": str(out)}))


def cmd_fit(args):
    from .fitting import FitConfig, body_sections, fit_staged, fit_to_target
    from .generator import Generator
    from .meshkit import write_obj
    from .procgen import build_template
    from .skinner import Skinner

    gen, sk = Generator.load(args.generator), Skinner.load(args.skinner)
    cfg = _make_config(FitConfig, args.config, seed=args.seed)
    target = _read_mesh(args.target)
    tpl = build_template()
    sections = body_sections(tpl) if target.V == tpl.V else {"full body": np.arange(gen.V)}
    if args.staged:
        if not args.joints:
            raise CliError("--staged needs --joints")
        res = fit_staged(target, _joints(args.joints, sk.weights.shape[1]), gen, sk, config=cfg, sections=sections)
    else:
        res = fit_to_target(target, gen, sk, config=cfg, sections=sections)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_obj(res.mesh, out)
    write_obj(res.bind, out.with_name(out.stem + "_bind.obj"))
    _write_run(out.parent, args, cfg, [Path(args.generator), Path(args.skinner)])
    report = dict(res.report)
    _emit(report, args.report or str(out.with_name("report.json")))


def cmd_measure(args):
    from .anthropometry import default_registry, measure

    mesh = _read_mesh(args.mesh)
    reg = default_registry()
    geo = measure(mesh, reg)
    result = {"tape": dict(zip(reg.names, geo.A.tolist()))}
    ckpts = []
    if args.learned:
        from .regressor import ExpertBank

        if not args.experts:
            raise CliError("--learned needs --experts <checkpoint>")
        bank = ExpertBank.load(args.experts)
        learned = bank.regress(mesh)
        result["learned"] = dict(zip(reg.names, learned.A.tolist()))
        result["learned_sex"] = learned.sex
        ckpts.append(Path(args.experts))
    if args.out:
        _write_run(Path(args.out).parent, args, checkpoints=ckpts)
    _emit(result, args.out)


def cmd_ablate(args):
    from . import ablation
    from .generator import GeneratorConfig
    from .regressor import ExpertConfig, P2AConfig

    ds = _dataset(args.data)
    if args.which == "fourier":
        cfg = _make_config(GeneratorConfig, args.config, epochs=args.epochs, seed=args.seed)
        rows = ablation.fourier_ablation(ds, cfg)
        # rows come in (f=0, f=8) order; the encoded variant should have the lower P2P
        ok = rows[-1]["heldout_p2p_mm"] < rows[0]["heldout_p2p_mm"]
        claim = "fourier_f=8 beats raw conditionals"
    elif args.which == "masks":
        cfg = _make_config(ExpertConfig, args.config, epochs=args.epochs, seed=args.seed)
        rows = ablation.mask_ablation(ds, cfg)
        ok = ablation.ordered(rows[:3], "test_mse")
        claim = "soft < binary < none (test MSE)"
    else:
        cfg = _make_config(P2AConfig, args.config, epochs=args.epochs, seed=args.seed)
        rows = ablation.p2a_ablation(ds, cfg)
        ok = rows[0]["test_loss"] < rows[-1]["test_loss"]
        claim = "fourier_f=0 beats fourier_f=32 (test loss)"
    print(ablation.format_table(rows))
    print(f"ordering {claim}: {'holds' if ok else 'does not hold'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablate_{args.which}.json").write_text(json.dumps({"rows": rows, "ordering_holds": ok}, indent=2))
        _write_run(out, args, cfg)


# -- parser -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bodykit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="generate a procedural dataset")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pose-spread", type=float, default=0.5)
    s.add_argument("--out", default=_default_data())
    s.set_defaults(func=cmd_gen_data)

    trainers = (("train-generator", cmd_train_generator, "train the conditional mesh generator"),
                ("train-skinner", cmd_train_skinner, "train the corrective-offset skinner"),
                ("train-experts", cmd_train_experts, "train the masked measurement regressors"),
                ("train-p2a", cmd_train_p2a, "train the shape-parameter to measurement regressor"))
    for name, func, text in trainers:
        s = sub.add_parser(name, help=text)
        s.add_argument("--data", default=_default_data())
        s.add_argument("--config", help="JSON file of config overrides")
        s.add_argument("--out", required=True)
        s.add_argument("--epochs", type=int)
        s.add_argument("--seed", type=int)
        if name != "train-experts":
            s.add_argument("--fourier-f", type=int)
        if name == "train-skinner":
            s.add_argument("--generator", help="train on generated bind meshes (end-to-end mode)")
        if name == "train-experts":
            s.add_argument("--mask", choices=("soft", "binary", "none"))
            s.add_argument("--one-model", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("generate", help="decode a mesh from measurements")
    s.add_argument("--generator", required=True)
    s.add_argument("--measurements", required=True)
    s.add_argument("--z")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("interpolate", help="decode along a line between two measurement vectors")
    s.add_argument("--generator", required=True)
    s.add_argument("--a1", required=True)
    s.add_argument("--a2", required=True)
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--z")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("pose", help="pose a bind mesh with the learned skinner")
    s.add_argument("--skinner", required=True)
    s.add_argument("--bind", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pose)

    s = sub.add_parser("fit", help="register the frozen model onto a target mesh")
    s.add_argument("--generator", required=True)
    s.add_argument("--skinner", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--joints")
    s.add_argument("--staged", action="store_true")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("measure", help="tape-measure a mesh (optionally with the learned regressor)")
    s.add_argument("--mesh", required=True)
    s.add_argument("--learned", action="store_true")
    s.add_argument("--experts")
    s.add_argument("--out")
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("ablate", help="reproduce an ablation ordering")
    s.add_argument("which", choices=("fourier", "masks", "p2a-fourier"))
    s.add_argument("--data", default=_default_data())
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one machine-parsable line, whatever went wrong
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

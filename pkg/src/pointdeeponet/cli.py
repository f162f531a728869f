"""Command line front end: generate, sdf, train, eval, predict, inspect.

Exit status is 0 on success, 2 on usage errors (bad flags, unknown config
keys) and 1 when the command itself fails.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import data as D
from . import geometry as G
from . import training as T
from .models import REFERENCE_PARAMETER_COUNTS, LoadCondition, ModelSpec, count_parameters

log = logging.getLogger("pointdeeponet")

_TRAIN_KEYS = ("iterations", "batch_size", "lr", "weight_decay", "n_points", "seed",
               "eval_interval", "val_batches", "fixed_batch")


def default_config():
    spec = ModelSpec("point_deeponet").to_dict()
    synth = asdict(D.SyntheticConfig())
    train = {f.name: f.default for f in fields(T.TrainConfig) if f.name in _TRAIN_KEYS}
    return {
        "model": spec,
        "data": {"root": "data", "seed": 0, **synth},
        "train": train,
    }


class UsageError(Exception):
    pass


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, dotted, value):
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise UsageError(f"unknown config key {dotted!r}")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise UsageError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def _merge(base, extra, path=""):
    for k, v in extra.items():
        if k not in base:
            raise UsageError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v


def load_config(path=None, overrides=(), seed=None):
    cfg = default_config()
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {path}: {e}") from e
        if user.get("model", {}).get("architecture") not in (None, cfg["model"]["architecture"]):
            # widths default per architecture, so start from that architecture's defaults
            cfg["model"] = ModelSpec(user["model"]["architecture"]).to_dict()
        _merge(cfg, user)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        apply_override(cfg, key.strip(), _parse_value(value))
    if seed is not None:
        cfg["data"]["seed"] = seed
        cfg["train"]["seed"] = seed
    return cfg


def _spec(cfg):
    try:
        return ModelSpec.from_dict(cfg["model"])
    except TypeError as e:
        raise UsageError(f"bad model section: {e}") from e


def _synthetic(cfg):
    d = {k: v for k, v in cfg["data"].items() if k not in ("root", "seed")}
    for k in ("shapes", "mass_range", "force_range", "size_range"):
        d[k] = tuple(d[k])
    return D.SyntheticConfig(**d)


def _echo(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _write_fields(path, coords, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", *G.FIELD_NAMES])
        for c, v in zip(coords, values):
            w.writerow([repr(float(x)) for x in (*c, *v)])


# --------------------------------------------------------------------------
# verbs


def cmd_generate(args, cfg):
    root = Path(args.out or cfg["data"]["root"])
    cfg["data"]["root"] = str(root)
    manifest = D.generate_synthetic(root, _synthetic(cfg), seed=int(cfg["data"]["seed"]))
    _echo(cfg, root)
    print(f"wrote {len(manifest.samples)} samples to {root} "
          f"({len(manifest.ids('train'))} train / {len(manifest.ids('val'))} val)")


def _read_points(args):
    if args.probe:
        return np.array([[float(x) for x in p.split(",")] for p in args.probe])
    with open(args.points) as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([[float(x) for x in r[:3]] for r in rows])


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_sdf(args, cfg):
    shape = G.load_obj(args.obj)
    pts = _read_points(args)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise UsageError("points must have three coordinates each")
    phi = G.sdf(shape, pts)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["x", "y", "z", "sdf"])
        for p, s in zip(pts, phi):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(s))])
    finally:
        if args.out:
            out.close()


def cmd_train(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_root = args.data or cfg["data"]["root"]
    cfg["data"]["root"] = str(data_root)
    tcfg = T.TrainConfig(_spec(cfg), str(data_root), checkpoint=str(out / "checkpoint.pdnc"),
                         **{k: cfg["train"][k] for k in _TRAIN_KEYS})
    _echo(cfg, out)
    ckpt, history = T.train(tcfg)
    T.save_checkpoint(ckpt, out / "checkpoint.pdnc")
    T.write_history(history, out / "history.csv")
    last = history[-1]
    print(f"trained {ckpt.spec.architecture} for {ckpt.iteration} iterations: "
          f"train {last['train_loss']:.6g} val {last['val_loss']:.6g}")


def cmd_eval(args, cfg):
    ckpt = T.load_checkpoint(args.checkpoint)
    data_root = args.data or ckpt.config.get("data")
    modes = tuple(args.modes.split(","))
    if ckpt.spec.architecture == "pointnet" and args.modes == "sampled,full":
        modes = ("sampled",)
    report = T.evaluate(ckpt, data_root, split=args.split, modes=modes, n_points=args.n_points)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    for mode in modes:
        print(f"{mode}: mean R2 {report.mean_r2(mode):.4f}")


def cmd_predict(args, cfg):
    ckpt = T.load_checkpoint(args.checkpoint)
    if args.sample:
        rec = D.read_sample(args.sample)
        pred = T.predict(ckpt, rec, chunk_size=args.chunk_size)
        coords = rec.coords
    else:
        if not args.condition:
            raise UsageError("predict from an OBJ needs --condition m,f,dx,dy,dz")
        vals = [float(x) for x in args.condition.split(",")]
        if len(vals) != 5:
            raise UsageError("--condition takes five numbers: m,f,dx,dy,dz")
        cond = LoadCondition(vals[0], vals[1], tuple(vals[2:]))
        shape = G.load_obj(args.obj)
        pts = G.sample_volume(shape, args.n_nodes, seed=args.seed if args.seed is not None else 0)
        pred = T.predict(ckpt, pts, cond, chunk_size=args.chunk_size)
        coords = pts.coords
    _write_fields(args.out, coords, pred.values)
    print(f"wrote {len(coords)} predictions to {args.out}")


def cmd_inspect(args, cfg):
    path = Path(args.path)
    if path.is_dir() or path.name == "manifest.json":
        m = D.load_manifest(path if path.is_dir() else path.parent)
        labels = {lab: sum(1 for s in m.samples if s["label"] == lab) for lab in D.LABELS}
        print(f"manifest {m.root}")
        print(f"  samples {len(m.samples)} (train {len(m.ids('train'))}, val {len(m.ids('val'))})")
        print(f"  labels  {labels}")
        print(f"  seed {m.seed}  config {m.config_hash}")
        for name, (lo, hi) in m.stats.fields.items():
            print(f"  {name:10s} [{lo:.6g}, {hi:.6g}]")
        return
    ckpt = T.load_checkpoint(path)
    spec = ckpt.spec
    n = count_parameters(ckpt.model)
    print(f"checkpoint {path}")
    print(f"  architecture {spec.architecture}  latent {spec.latent}  head {spec.head}")
    print(f"  parameters {n} (reference {REFERENCE_PARAMETER_COUNTS[spec.architecture]})")
    print(f"  iteration {ckpt.iteration}  seed {ckpt.seed}")
    if ckpt.history:
        last = ckpt.history[-1]
        print(f"  last train loss {last['train_loss']:.6g}  val loss {last['val_loss']:.6g}")


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="pointdeeponet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    def common(sp):
        sp.add_argument("--config", help="JSON config with model/data/train sections")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry by dot path, e.g. train.lr=5e-4")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("generate", help="write a synthetic dataset")
    common(sp)
    sp.add_argument("--out", help="dataset directory (default data.root)")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("sdf", help="signed distance of points to an OBJ surface")
    sp.add_argument("obj")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--points", help="CSV of x,y,z rows")
    g.add_argument("--probe", action="append", metavar="X,Y,Z")
    sp.add_argument("--out", help="output CSV (default stdout)")
    sp.set_defaults(func=cmd_sdf)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--data", help="dataset directory (default data.root)")
    sp.add_argument("--out", required=True, help="run directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="metrics report as CSV")
    sp.add_argument("checkpoint")
    sp.add_argument("--data")
    sp.add_argument("--split", default="val", choices=("train", "val"))
    sp.add_argument("--modes", default="sampled,full")
    sp.add_argument("--n-points", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="field prediction as CSV")
    sp.add_argument("checkpoint")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--sample", help="a .pdn sample file")
    g.add_argument("--obj", help="closed triangle mesh")
    sp.add_argument("--condition", help="m,f,dx,dy,dz (with --obj)")
    sp.add_argument("--n-nodes", type=int, default=2048)
    sp.add_argument("--chunk-size", type=int, default=8192)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("inspect", help="summarise a manifest or checkpoint")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = {}
        if hasattr(args, "config"):
            cfg = load_config(args.config, args.set, args.seed)
        args.func(args, copy.deepcopy(cfg) if cfg else cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - any failure is a runtime error
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

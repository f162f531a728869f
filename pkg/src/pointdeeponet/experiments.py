"""Benchmark and sweep drivers built on the train/evaluate API.

These are the runs behind the acceptance suite and the scripts in
``demos/``: a fixed synthetic benchmark, a single-batch capacity check,
and sweeps over resampling size, training-set size and input features.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import data as D
from . import geometry as G
from . import training as T
from .models import ModelSpec

log = logging.getLogger(__name__)

# 256 train / 64 held-out samples at M = 2048 nodes
BENCHMARK_DATA = D.SyntheticConfig(n_samples=320, n_nodes=2048, split_ratio=0.8)


@dataclass
class RunResult:
    architecture: str
    checkpoint: T.Checkpoint
    history: list
    report: T.MetricsReport | None
    seconds: float

    def summary(self):
        out = {"architecture": self.architecture, "seconds": round(self.seconds, 1),
               "final_train_loss": self.history[-1]["train_loss"], "final_val_loss": self.history[-1]["val_loss"]}
        if self.report is not None:
            out.update({f"r2_{mode}": self.report.mean_r2(mode) for mode in self.report.overall})
        return out


def ensure_dataset(root, cfg=BENCHMARK_DATA, seed=0):
    """Load the dataset at ``root``, generating it first if it is missing
    or was written from a different config or seed."""
    root = Path(root)
    if (root / "manifest.json").exists():
        m = D.load_manifest(root)
        if m.config_hash == cfg.digest() and m.seed == seed:
            return m
        log.info("dataset at %s has a different config; regenerating", root)
    return D.generate_synthetic(root, cfg, seed)


def run(manifest, spec, iterations=10_000, seed=0, n_points=256, batch_size=16, lr=1e-3,
        modes=("sampled", "full"), eval_interval=500, checkpoint=None):
    """Train one model and evaluate it on the held-out split."""
    if isinstance(spec, str):
        spec = ModelSpec(spec)
    if spec.architecture == "pointnet":
        modes = tuple(m for m in modes if m != "full")
    cfg = T.TrainConfig(spec, str(manifest.root), iterations=iterations, batch_size=batch_size, lr=lr,
                        n_points=n_points, seed=seed, eval_interval=eval_interval, checkpoint=checkpoint)
    t0 = time.perf_counter()
    ckpt, history = T.train(cfg, manifest)
    report = T.evaluate(ckpt, manifest, modes=modes) if manifest.ids("val") else None
    return RunResult(spec.architecture, ckpt, history, report, time.perf_counter() - t0)


def capacity_check(spec, manifest, iterations=2000, n_points=64, batch_size=2, seed=0, tol=1e-4):
    """Fit one fixed batch; return (first iteration with loss < tol or None, history)."""
    if isinstance(spec, str):
        spec = ModelSpec(spec)
    cfg = T.TrainConfig(spec, str(manifest.root), iterations=iterations, batch_size=batch_size,
                        n_points=n_points, seed=seed, eval_interval=1, val_batches=0, fixed_batch=True)
    _, history = T.train(cfg, manifest)
    first = next((r["iteration"] for r in history if r["train_loss"] < tol), None)
    return first, history


def subset(manifest, n_train):
    """Copy of ``manifest`` keeping the first ``n_train`` training samples
    (validation untouched), with scaling refitted on that subset."""
    train = manifest.ids("train")[:n_train]
    keep = set(train)
    entries = [e for e in manifest.samples if e["split"] == "val" or e["id"] in keep]
    stats = G.fit_stats(manifest.load(i) for i in train)
    return D.Manifest(manifest.root, entries, stats, manifest.seed, manifest.config_hash, manifest.split_ratio)


def sweep(manifest, spec, key, values, **run_kw):
    """One run per value of ``key``.

    ``key`` is ``n_points`` (resampling size), ``n_train`` (training-set
    size) or a ModelSpec field such as ``use_mass``/``use_sdf``.
    """
    if isinstance(spec, str):
        spec = ModelSpec(spec)
    rows = []
    for v in values:
        kw = dict(run_kw)
        m, s = manifest, spec
        if key == "n_points":
            kw["n_points"] = v
        elif key == "n_train":
            m = subset(manifest, v)
        else:
            s = replace(spec, **{key: v})
        res = run(m, s, **kw)
        rows.append({key: v, **res.summary()})
        log.info("%s=%s -> %s", key, v, json.dumps(rows[-1]))
    return rows

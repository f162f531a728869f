"""Training loop, checkpoints, metrics, evaluation and full-resolution inference."""
from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as G
from . import kernel as K
from .data import LABELS, SampleRecord, load_manifest, make_batch
from .models import LoadCondition, ModelSpec, UnsupportedResolutionError, build_model

log = logging.getLogger(__name__)

CKPT_MAGIC = b"PDNC"
CKPT_VERSION = 1
HISTORY_COLUMNS = ("iteration", "train_loss", "val_loss")
REPORT_COLUMNS = ("mode", "label", "field", "n", "mae", "rmse", "r2")


class TrainingDiverged(FloatingPointError):
    pass


class ZeroVarianceError(ValueError):
    pass


@dataclass
class TrainConfig:
    spec: ModelSpec
    data: str
    iterations: int = 5000
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-2
    n_points: int = 256
    seed: int = 0
    eval_interval: int = 100
    val_batches: int = 2
    checkpoint: str | None = None
    # train on one fixed batch (capacity checks)
    fixed_batch: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["spec"] = self.spec.to_dict()
        return d


# --------------------------------------------------------------------------
# checkpoint


@dataclass
class Checkpoint:
    model: K.Module
    stats: G.FieldStats
    optimizer: K.AdamW | None = None
    iteration: int = 0
    seed: int = 0
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def spec(self):
        return self.model.spec


def save_checkpoint(ckpt, path):
    """Single-file checkpoint: magic, u32 version, u64 header length, JSON
    header, then float64 little-endian arrays in header order."""
    arrays = []
    for name, p in ckpt.model.named_parameters():
        arrays.append(("param/" + name, p.data))
    for name, b in ckpt.model.named_buffers():
        arrays.append(("buffer/" + name, np.asarray(b, dtype=np.float64)))
    opt = None
    if ckpt.optimizer is not None:
        st = ckpt.optimizer.state
        opt = {"lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
               "weight_decay": st.weight_decay, "step": st.step}
        for name, m, v in zip(ckpt.optimizer.names, st.m, st.v):
            arrays.append(("adam_m/" + name, m))
            arrays.append(("adam_v/" + name, v))
    header = {
        "spec": ckpt.spec.to_dict(),
        "stats": ckpt.stats.to_dict(),
        "optimizer": opt,
        "iteration": ckpt.iteration,
        "seed": ckpt.seed,
        "history": ckpt.history,
        "config": ckpt.config,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)
    return path


def load_checkpoint(path):
    from .data import FormatError

    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:4]!r} at byte offset 0")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen])
    offset = 16 + hlen
    arrays = {}
    for item in header["arrays"]:
        count = int(np.prod(item["shape"], dtype=np.int64))
        if offset + 8 * count > len(raw):
            raise FormatError(f"{path}: truncated array {item['name']} at byte offset {offset}")
        arrays[item["name"]] = np.frombuffer(raw, "<f8", count, offset).astype(np.float64).reshape(item["shape"])
        offset += 8 * count

    spec = ModelSpec.from_dict(header["spec"])
    model = build_model(spec, header["seed"])
    for name, p in model.named_parameters():
        p.data = arrays["param/" + name].copy()
    _set_buffers(model, arrays)
    opt = None
    if header["optimizer"] is not None:
        h = header["optimizer"]
        opt = K.AdamW(list(model.named_parameters()), h["lr"], (h["beta1"], h["beta2"]), h["eps"], h["weight_decay"])
        opt.state.step = h["step"]
        opt.state.m = [arrays["adam_m/" + n].copy() for n in opt.names]
        opt.state.v = [arrays["adam_v/" + n].copy() for n in opt.names]
    return Checkpoint(model, G.FieldStats.from_dict(header["stats"]), opt, header["iteration"],
                      header["seed"], header["history"], header.get("config", {}))


def _set_buffers(module, arrays, prefix=""):
    for name in getattr(module, "_buffers", ()):
        setattr(module, name, arrays["buffer/" + prefix + name].copy())
    for name, child in module.children():
        _set_buffers(child, arrays, f"{prefix}{name}.")


# --------------------------------------------------------------------------
# training


def _batch_forward(model, batch):
    return model.forward_batch(batch.coords, batch.sdf, batch.condition)


def _id_stream(ids, batch_size, rng):
    """Endless sequence of batches, reshuffling ``ids`` every pass."""
    pool = []
    while True:
        while len(pool) < batch_size:
            pool.extend(ids[i] for i in rng.permutation(len(ids)))
        yield pool[:batch_size]
        pool = pool[batch_size:]


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["iteration"], repr(row["train_loss"]), repr(row["val_loss"])])


def train(config, manifest=None, callback=None):
    """Minimise MSE on head-space targets with AdamW.

    Returns ``(checkpoint, history)``; history rows are recorded every
    ``eval_interval`` iterations and at the last one.
    """
    manifest = manifest or load_manifest(config.data)
    spec = config.spec
    if spec.architecture == "pointnet":
        spec = spec.with_points(config.n_points)
    model = build_model(spec, config.seed)
    opt = K.AdamW(list(model.named_parameters()), lr=config.lr, weight_decay=config.weight_decay)
    head = spec.head
    train_ids = manifest.ids("train")
    if not train_ids:
        raise ValueError("the manifest has no training samples")
    rng = np.random.default_rng([config.seed, 1])
    stream = _id_stream(train_ids, config.batch_size, rng)
    cache = {}

    val_ids = manifest.ids("val")
    val_sets = []
    for k in range(config.val_batches if val_ids else 0):
        ids = val_ids[k * config.batch_size:(k + 1) * config.batch_size]
        if ids:
            val_sets.append(make_batch(manifest, ids, config.n_points, seed=config.seed + 10_000 + k,
                                       head=head, cache=cache))

    fixed = None
    if config.fixed_batch:
        fixed = make_batch(manifest, next(stream), config.n_points, seed=config.seed, head=head, cache=cache)

    ckpt = Checkpoint(model, manifest.stats, opt, 0, config.seed, [], config.to_dict())
    history = ckpt.history
    running, count = 0.0, 0
    saved = False
    for it in range(1, config.iterations + 1):
        batch = fixed or make_batch(manifest, next(stream), config.n_points, seed=config.seed * 1_000_003 + it,
                                    head=head, cache=cache)
        model.train()
        loss = K.mse_loss(_batch_forward(model, batch), batch.targets)
        value = float(loss.data)
        if not math.isfinite(value):
            where = f"; last good checkpoint at {config.checkpoint}" if saved else ""
            raise TrainingDiverged(f"non-finite training loss at iteration {it}{where}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        running += value
        count += 1
        ckpt.iteration = it
        if it % config.eval_interval == 0 or it == config.iterations:
            val = _validation_loss(model, val_sets)
            history.append({"iteration": it, "train_loss": running / count, "val_loss": val})
            log.info("iter %d train %.6g val %.6g", it, running / count, val)
            running, count = 0.0, 0
            if config.checkpoint:
                save_checkpoint(ckpt, config.checkpoint)
                saved = True
            if callback is not None:
                callback(ckpt)
    model.eval()
    return ckpt, history


def _validation_loss(model, val_sets):
    if not val_sets:
        return float("nan")
    model.eval()
    total = sum(float(K.mse_loss(_batch_forward(model, b), b.targets).data) for b in val_sets)
    model.train()
    return total / len(val_sets)


# --------------------------------------------------------------------------
# metrics


def compute_metrics(y, y_hat):
    """MAE, RMSE and R^2 of predictions ``y_hat`` against truth ``y``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    if y.size < 2:
        raise ValueError("need at least 2 values")
    err = y - y_hat
    sse = float(np.dot(err, err))
    dev = y - y.mean()
    sst = float(np.dot(dev, dev))
    mae = float(np.mean(np.abs(err)))
    rmse = math.sqrt(sse / y.size)
    if sst == 0.0:
        raise ZeroVarianceError("R^2 is undefined: the targets have zero variance")
    return {"mae": mae, "rmse": rmse, "r2": 1.0 - sse / sst}


@dataclass
class MetricsReport:
    rows: list                  # dicts keyed by REPORT_COLUMNS
    overall: dict               # mode -> field -> metrics, pooled over labels

    def mean_r2(self, mode="sampled"):
        return float(np.mean([m["r2"] for m in self.overall[mode].values()]))

    def cell(self, mode, label, field_name):
        for r in self.rows:
            if (r["mode"], r["label"], r["field"]) == (mode, label, field_name):
                return r
        raise KeyError((mode, label, field_name))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, REPORT_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def _cells(mode, groups):
    rows, overall = [], {}
    pooled = {f: ([], []) for f in G.FIELD_NAMES}
    for label in LABELS:
        if label not in groups:
            continue
        ys, ps = groups[label]
        y, p = np.concatenate(ys), np.concatenate(ps)
        for j, name in enumerate(G.FIELD_NAMES):
            m = compute_metrics(y[:, j], p[:, j])
            if m["rmse"] < m["mae"]:
                raise AssertionError(f"RMSE < MAE for {mode}/{label}/{name}")
            rows.append({"mode": mode, "label": label, "field": name, "n": len(y), **m})
            pooled[name][0].append(y[:, j])
            pooled[name][1].append(p[:, j])
    for name, (ys, ps) in pooled.items():
        overall[name] = compute_metrics(np.concatenate(ys), np.concatenate(ps))
    return rows, overall


def evaluate(ckpt, manifest, split="val", modes=("sampled", "full"), n_points=None, predict_fn=None):
    """Per-field, per-label metrics in physical units.

    ``sampled`` mode predicts on ``n_points`` resampled nodes per sample,
    ``full`` on every node, with the branch cloud taken from the sampled
    nodes.  ``predict_fn(record, idx)`` replaces the model (test hook).
    """
    if isinstance(manifest, (str, Path)):
        manifest = load_manifest(manifest)
    n_points = n_points or ckpt.config.get("n_points") or ckpt.spec.n_points or 256
    if "full" in modes and ckpt.spec.architecture == "pointnet" and predict_fn is None:
        raise UnsupportedResolutionError("PointNet cannot predict at full resolution (fixed input size)")
    groups = {mode: {} for mode in modes}
    for k, sid in enumerate(manifest.ids(split)):
        rec = manifest.load(sid)
        idx = G.resample_fixed(rec.n_nodes, n_points, seed=[ckpt.seed, 20_000 + k])
        for mode in modes:
            query = idx if mode == "sampled" else np.arange(rec.n_nodes)
            if predict_fn is not None:
                pred = predict_fn(rec, query)
            else:
                pred = predict(ckpt, rec, query_idx=query, cloud_idx=idx).values
            ys, ps = groups[mode].setdefault(rec.label, ([], []))
            ys.append(rec.targets[query].astype(np.float64))
            ps.append(pred)
    rows, overall = [], {}
    for mode in modes:
        r, o = _cells(mode, groups[mode])
        rows += r
        overall[mode] = o
    return MetricsReport(rows, overall)


# --------------------------------------------------------------------------
# inference


@dataclass
class FieldPrediction:
    values: np.ndarray      # (N, 4)
    normalized: bool


def predict(ckpt, sample, condition=None, chunk_size=8192, query_idx=None, cloud_idx=None, physical=True):
    """Eval-mode prediction for one geometry.

    ``sample`` is a SampleRecord, or a PointSet with ``condition`` given as
    a LoadCondition.  The branch cloud is ``cloud_idx`` of the sample's
    nodes (default: a seeded resample to the training resolution); queries
    (default: every node) go through the pointwise stage in chunks.
    """
    model, spec, stats = ckpt.model, ckpt.spec, ckpt.stats
    if isinstance(sample, SampleRecord):
        coords, sdf, cond5 = sample.coords, sample.sdf, sample.condition
    else:
        if condition is None:
            raise ValueError("predict on a raw point set needs a LoadCondition")
        missing = [n for n in ("coords", "sdf") if getattr(sample, n, None) is None]
        if missing:
            raise ValueError(f"input schema mismatch: missing {', '.join(missing)}")
        if not isinstance(condition, LoadCondition):
            condition = LoadCondition(*condition)
        coords, sdf, cond5 = sample.coords, sample.sdf, condition.as_vector()
    coords = np.asarray(coords, dtype=np.float64)
    sdf = np.asarray(sdf, dtype=np.float64)
    m = len(coords)
    c, s, cond = G.normalize_inputs(coords, sdf, cond5, stats)
    n_train = ckpt.config.get("n_points") or spec.n_points or m
    if cloud_idx is None:
        cloud_idx = G.resample_fixed(m, n_train, seed=[ckpt.seed, 30_000])
    if query_idx is None:
        query_idx = np.arange(m)
    model.eval()
    if spec.architecture == "pointnet":
        if len(query_idx) != spec.n_points:
            raise UnsupportedResolutionError(
                f"PointNet was trained on N={spec.n_points} points and cannot predict on N={len(query_idx)}")
        out = model.forward(c[None, query_idx], cond[None, spec.condition_columns]).data[0]
    else:
        state = model.encode(c[None, cloud_idx], cond[None])
        parts = []
        for start in range(0, len(query_idx), chunk_size):
            q = query_idx[start:start + chunk_size]
            parts.append(model.decode(state, c[None, q], s[None, q]).data[0])
        out = np.concatenate(parts) if parts else np.zeros((0, spec.n_fields))
    if physical:
        return FieldPrediction(G.denormalize(out, stats, spec.head), False)
    return FieldPrediction(out, True)

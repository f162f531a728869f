"""Sample files, dataset manifests, the synthetic field generator and batching.

Dataset directory layout::

    <root>/manifest.json
    <root>/samples/<id>.pdn

Sample files are little-endian::

    b"PDN1" | u32 M | f32 coords[3M] | f32 sdf[M] | f32 condition[5]
          | f32 targets[4M] | u8 label

``condition`` is ``(m, f, d_x, d_y, d_z)``; targets are
``(u_x, u_y, u_z, von_mises)`` per node.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as G

MAGIC = b"PDN1"
FORMAT_VERSION = 1
LABELS = ("vertical", "horizontal", "diagonal")
NOMINAL_DIRECTIONS = {
    "vertical": np.array([0.0, 0.0, 1.0]),
    "horizontal": np.array([1.0, 0.0, 0.0]),
    "diagonal": np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0),
}


class FormatError(ValueError):
    pass


@dataclass
class SampleRecord:
    coords: np.ndarray      # (M, 3) float32
    sdf: np.ndarray         # (M,)
    condition: np.ndarray   # (5,)
    targets: np.ndarray     # (M, 4)
    label: str

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float32).reshape(-1, 3)
        m = len(self.coords)
        self.sdf = np.asarray(self.sdf, dtype=np.float32).reshape(m)
        self.condition = np.asarray(self.condition, dtype=np.float32).reshape(5)
        self.targets = np.asarray(self.targets, dtype=np.float32).reshape(m, 4)
        if m < 1:
            raise ValueError("a sample needs at least one node")
        if self.label not in LABELS:
            raise ValueError(f"unknown load label {self.label!r}")
        for name in ("coords", "sdf", "condition", "targets"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"sample {name} contains non-finite values")
        if abs(float(np.linalg.norm(self.condition[2:].astype(np.float64))) - 1.0) > 1e-6:
            raise ValueError("load direction is not a unit vector")

    @property
    def n_nodes(self):
        return len(self.coords)


def write_sample(record, path):
    m = record.n_nodes
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", m))
        for arr in (record.coords, record.sdf, record.condition, record.targets):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        fh.write(struct.pack("<B", LABELS.index(record.label)))


def read_sample(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)} (need 8 bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0, expected {MAGIC!r}")
    (m,) = struct.unpack_from("<I", raw, 4)
    offset = 8
    arrays = []
    for name, count in (("coords", 3 * m), ("sdf", m), ("condition", 5), ("targets", 4 * m)):
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise FormatError(
                f"{path}: truncated {name} array at byte offset {offset}: "
                f"expected {nbytes} bytes, found {len(raw) - offset}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float32)
        if not np.all(np.isfinite(arr)):
            bad = int(np.argmin(np.isfinite(arr)))
            raise FormatError(f"{path}: non-finite value in {name} at byte offset {offset + 4 * bad}")
        arrays.append(arr)
        offset += nbytes
    if offset + 1 != len(raw):
        raise FormatError(f"{path}: expected {offset + 1} bytes in total, found {len(raw)} "
                          f"(label byte at offset {offset})")
    code = raw[offset]
    if code >= len(LABELS):
        raise FormatError(f"{path}: unknown label code {code} at byte offset {offset}")
    coords, sdf, cond, targets = arrays
    return SampleRecord(coords.reshape(m, 3), sdf, cond, targets.reshape(m, 4), LABELS[code])


# --------------------------------------------------------------------------
# manifest


@dataclass
class Manifest:
    root: Path
    samples: list               # dicts: id, file, n_nodes, label, split
    stats: G.FieldStats | None
    seed: int
    config_hash: str = ""
    split_ratio: float = 0.8
    version: int = FORMAT_VERSION

    def ids(self, split=None):
        return [s["id"] for s in self.samples if split is None or s["split"] == split]

    def entry(self, sample_id):
        for s in self.samples:
            if s["id"] == sample_id:
                return s
        raise KeyError(f"sample {sample_id!r} is not in the manifest at {self.root}")

    def path(self, sample_id):
        return Path(self.root) / self.entry(sample_id)["file"]

    def load(self, sample_id):
        return read_sample(self.path(sample_id))

    def to_dict(self):
        return {
            "format_version": self.version,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "split_ratio": self.split_ratio,
            "stats": None if self.stats is None else self.stats.to_dict(),
            "samples": self.samples,
        }

    def save(self):
        path = Path(self.root) / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1))
        os.replace(tmp, path)
        return path


def load_manifest(root):
    root = Path(root)
    if root.is_file():
        root = root.parent
    d = json.loads((root / "manifest.json").read_text())
    if d.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{root}/manifest.json: unsupported format version {d.get('format_version')}")
    stats = None if d.get("stats") is None else G.FieldStats.from_dict(d["stats"])
    return Manifest(root, d["samples"], stats, d["seed"], d.get("config_hash", ""), d.get("split_ratio", 0.8))


def split_dataset(manifest, ratio=0.8, seed=0):
    """Shuffle sample ids with ``seed`` and mark the first ``round(ratio*n)``
    as train; refits the field statistics on the new train split."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(manifest.samples)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = set(order[:n_train].tolist())
    samples = [dict(s, split="train" if i in train else "val") for i, s in enumerate(manifest.samples)]
    out = Manifest(manifest.root, samples, None, manifest.seed, manifest.config_hash, ratio)
    out.stats = G.fit_stats(out.load(i) for i in out.ids("train"))
    return out


# --------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticConfig:
    n_samples: int = 64
    n_nodes: int = 2048
    shapes: tuple = ("sphere", "box", "capsule")
    mass_range: tuple = (0.5, 2.5)
    force_range: tuple = (1.0, 10.0)
    size_range: tuple = (0.5, 1.5)
    center_range: float = 0.5
    direction_jitter: float = 0.15
    split_ratio: float = 0.8

    def __post_init__(self):
        self.shapes = tuple(self.shapes)
        if self.mass_range[0] <= 0 or self.mass_range[1] < self.mass_range[0]:
            raise ValueError(f"mass range must be positive and ordered, got {self.mass_range}")
        if self.force_range[0] < 0 or self.force_range[1] < self.force_range[0]:
            raise ValueError(f"force range must be non-negative and ordered, got {self.force_range}")
        if self.n_samples < 1 or self.n_nodes < 1:
            raise ValueError("n_samples and n_nodes must be >= 1")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def analytic_fields(coords, sdf, shape, condition):
    """Closed-form displacement and stress stand-ins, ``(M, 4)``.

    With L the bounding-box diagonal, c the shape centre, a = e_x and
    psi = 1 - exp(phi / L)::

        u_k  = (f/m) d_k psi (1 + (x - c).a / L)
        s_vm = (f/m) (|phi| / L) (1 + |d.(x - c)| / L)
    """
    x = np.asarray(coords, dtype=np.float64)
    phi = np.asarray(sdf, dtype=np.float64)
    m, f = float(condition[0]), float(condition[1])
    d = np.asarray(condition[2:], dtype=np.float64)
    L = shape.diagonal()
    rel = x - shape.center
    scale = f / m
    psi = 1.0 - np.exp(phi / L)
    u = scale * d[None, :] * (psi * (1.0 + rel[:, 0] / L))[:, None]
    vm = scale * (np.abs(phi) / L) * (1.0 + np.abs(rel @ d) / L)
    return np.column_stack([u, vm])


def _random_shape(kind, cfg, rng):
    center = rng.uniform(-cfg.center_range, cfg.center_range, 3)
    lo, hi = cfg.size_range
    if kind == "sphere":
        return G.Shape.sphere(center, rng.uniform(lo, hi))
    if kind == "box":
        return G.Shape.box(center, rng.uniform(lo, hi, 3))
    if kind == "capsule":
        radius = rng.uniform(0.4 * lo, 0.6 * hi)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        half = rng.uniform(lo, hi)
        return G.Shape.capsule(center - half * axis, center + half * axis, radius)
    raise ValueError(f"unknown synthetic shape family {kind!r}")


def _direction(label, jitter, rng):
    d = NOMINAL_DIRECTIONS[label] + jitter * rng.normal(size=3)
    return d / np.linalg.norm(d)


def synthesize_sample(cfg, seed):
    """One synthetic sample plus the shape that produced it."""
    rng = np.random.default_rng(seed)
    label = LABELS[int(rng.integers(len(LABELS)))]
    kind = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
    shape = _random_shape(kind, cfg, rng)
    pts = G.sample_volume(shape, cfg.n_nodes, seed=int(rng.integers(2**63)))
    cond = np.array([rng.uniform(*cfg.mass_range), rng.uniform(*cfg.force_range),
                     *_direction(label, cfg.direction_jitter, rng)])
    targets = analytic_fields(pts.coords, pts.sdf, shape, cond)
    return SampleRecord(pts.coords, pts.sdf, cond, targets, label), shape


def generate_synthetic(root, cfg=None, seed=0):
    """Write ``cfg.n_samples`` synthetic samples and a split manifest under ``root``."""
    cfg = cfg or SyntheticConfig()
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(cfg.n_samples, dtype=np.uint64)
    entries = []
    for i, s in enumerate(seeds):
        rec, shape = synthesize_sample(cfg, int(s))
        sid = f"{i:06d}"
        write_sample(rec, root / "samples" / f"{sid}.pdn")
        entries.append({"id": sid, "file": f"samples/{sid}.pdn", "n_nodes": rec.n_nodes,
                        "label": rec.label, "split": "train", "shape": _shape_dict(shape)})
    manifest = Manifest(root, entries, None, seed, cfg.digest(), cfg.split_ratio)
    if cfg.n_samples >= 2:
        manifest = split_dataset(manifest, cfg.split_ratio, seed)
    else:
        manifest.stats = G.fit_stats([manifest.load(entries[0]["id"])])
    manifest.save()
    return manifest


def _shape_dict(shape):
    return {"kind": shape.kind, **{k: np.asarray(v).tolist() for k, v in shape.params.items()}}


def shape_from_dict(d):
    d = dict(d)
    return G.Shape(d.pop("kind"), d)


# --------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: list
    coords: np.ndarray      # (B, N, 3) scaled
    sdf: np.ndarray         # (B, N) scaled
    condition: np.ndarray   # (B, 5) mass/force scaled, direction raw
    targets: np.ndarray     # (B, N, 4) head space
    labels: list = field(default_factory=list)


def make_batch(manifest, sample_ids, n_points, seed, head="tanh", cache=None):
    """Resample each sample to ``n_points`` nodes and scale it.

    Sample ``j`` of the batch is resampled with seed ``(seed, j)``.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    coords, sdfs, conds, targets, labels = [], [], [], [], []
    for j, sid in enumerate(sample_ids):
        rec = cache[sid] if cache is not None and sid in cache else manifest.load(sid)
        if cache is not None:
            cache[sid] = rec
        idx = G.resample_fixed(rec.n_nodes, n_points, seed=[seed, j])
        c, s, cond = G.normalize_inputs(rec.coords[idx], rec.sdf[idx], rec.condition, manifest.stats)
        coords.append(c)
        sdfs.append(s)
        conds.append(cond)
        targets.append(G.normalize_fields(rec.targets[idx], manifest.stats, head))
        labels.append(rec.label)
    return Batch(list(sample_ids), np.stack(coords), np.stack(sdfs), np.stack(conds), np.stack(targets), labels)

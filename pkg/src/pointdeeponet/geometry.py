"""Signed distances, interior sampling, fixed-size resampling and field scaling.

Sign convention throughout: negative inside, zero on the boundary,
positive outside.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

FIELD_NAMES = ("u_x", "u_y", "u_z", "von_mises")
INPUT_NAMES = ("x", "y", "z", "sdf", "mass", "force")
HEAD_RANGES = {"tanh": (-0.95, 0.95), "sigmoid": (0.025, 0.975)}


class TopologyError(ValueError):
    pass


class DegenerateShapeError(RuntimeError):
    pass


class ConstantFieldError(ValueError):
    pass


@dataclass
class Shape:
    """Solid described analytically or by a closed triangle mesh.

    ``params`` by kind:
      sphere  -- center, radius
      box     -- center, half_extents
      capsule -- a, b (segment endpoints), radius
      mesh    -- unused; ``vertices``/``faces`` carry the surface
    """

    kind: str
    params: dict = field(default_factory=dict)
    vertices: np.ndarray | None = None
    faces: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "capsule", "mesh"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        self.params = {k: (np.asarray(v, dtype=np.float64) if np.ndim(v) else float(v))
                       for k, v in self.params.items()}
        if self.kind == "mesh":
            self.vertices = np.asarray(self.vertices, dtype=np.float64)
            self.faces = np.asarray(self.faces, dtype=np.int64)
            check_closed(self.vertices, self.faces)

    @classmethod
    def sphere(cls, center=(0.0, 0.0, 0.0), radius=1.0):
        return cls("sphere", {"center": center, "radius": radius})

    @classmethod
    def box(cls, center=(0.0, 0.0, 0.0), half_extents=(1.0, 1.0, 1.0)):
        return cls("box", {"center": center, "half_extents": half_extents})

    @classmethod
    def capsule(cls, a, b, radius):
        return cls("capsule", {"a": a, "b": b, "radius": radius})

    @classmethod
    def mesh(cls, vertices, faces):
        return cls("mesh", vertices=vertices, faces=faces)

    @property
    def center(self):
        if self.kind in ("sphere", "box"):
            return self.params["center"]
        if self.kind == "capsule":
            return 0.5 * (self.params["a"] + self.params["b"])
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    def bounds(self):
        p = self.params
        if self.kind == "sphere":
            return p["center"] - p["radius"], p["center"] + p["radius"]
        if self.kind == "box":
            return p["center"] - p["half_extents"], p["center"] + p["half_extents"]
        if self.kind == "capsule":
            lo = np.minimum(p["a"], p["b"]) - p["radius"]
            hi = np.maximum(p["a"], p["b"]) + p["radius"]
            return lo, hi
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self):
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))


class PointSet(NamedTuple):
    coords: np.ndarray  # (N, 3)
    sdf: np.ndarray     # (N,)


# --------------------------------------------------------------------------
# signed distance


def sdf_analytic(shape, points):
    """Exact signed distance to a sphere, box or capsule."""
    p = np.asarray(points, dtype=np.float64)
    prm = shape.params
    if shape.kind == "sphere":
        return np.linalg.norm(p - prm["center"], axis=-1) - prm["radius"]
    if shape.kind == "box":
        q = np.abs(p - prm["center"]) - prm["half_extents"]
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside
    if shape.kind == "capsule":
        a, b = prm["a"], prm["b"]
        ab = b - a
        t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1) - prm["radius"]
    raise ValueError("sdf_analytic does not handle meshes; use sdf_mesh")


def check_closed(vertices, faces):
    """Raise TopologyError unless every edge is shared by exactly two
    consistently oriented triangles."""
    faces = np.asarray(faces)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise TopologyError(f"faces must be triangles, got array of shape {faces.shape}")
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise TopologyError("face indices reference missing vertices")
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    _, counts = np.unique(undirected, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise TopologyError(f"mesh is not closed: {int(np.sum(counts != 2))} edges not shared by exactly 2 faces")
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if np.any(dcounts != 1):
        raise TopologyError("mesh is not consistently oriented")


def _closest_sq_dist(p, a, b, c):
    """Squared distance from points ``p`` (K, 1, 3) to triangles (F, 3) each,
    minimised over triangles.  Closest-point regions after Ericson,
    Real-Time Collision Detection, 5.1.5."""
    ab, ac = b - a, c - a
    ap = p - a
    d1 = np.einsum("kfi,fi->kf", ap, ab)
    d2 = np.einsum("kfi,fi->kf", ap, ac)
    bp = p - b
    d3 = np.einsum("kfi,fi->kf", bp, ab)
    d4 = np.einsum("kfi,fi->kf", bp, ac)
    cp = p - c
    d5 = np.einsum("kfi,fi->kf", cp, ab)
    d6 = np.einsum("kfi,fi->kf", cp, ac)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        # interior by default, then override region by region (last wins)
        s, t = v, w
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        s, t = np.where(m, 1.0 - w_bc, s), np.where(m, w_bc, t)
        w_ac = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        s, t = np.where(m, 0.0, s), np.where(m, w_ac, t)
        m = (d6 >= 0) & (d5 <= d6)
        s, t = np.where(m, 0.0, s), np.where(m, 1.0, t)
        v_ab = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        s, t = np.where(m, v_ab, s), np.where(m, 0.0, t)
        m = (d3 >= 0) & (d4 <= d3)
        s, t = np.where(m, 1.0, s), np.where(m, 0.0, t)
        m = (d1 <= 0) & (d2 <= 0)
        s, t = np.where(m, 0.0, s), np.where(m, 0.0, t)
    closest = a + s[..., None] * ab + t[..., None] * ac
    diff = p - closest
    return np.einsum("kfi,kfi->kf", diff, diff).min(axis=1)


def winding_number(vertices, faces, points):
    """Generalised winding number (solid angle sum / 4 pi) of each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = vertices[faces]
    out = np.empty(len(pts))
    chunk = max(1, 2_000_000 // max(len(faces), 1))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        a, b, c = tri[None, :, 0] - p, tri[None, :, 1] - p, tri[None, :, 2] - p
        la, lb, lc = (np.linalg.norm(v, axis=-1) for v in (a, b, c))
        numer = np.einsum("kfi,kfi->kf", a, np.cross(b, c))
        denom = (la * lb * lc + np.einsum("kfi,kfi->kf", a, b) * lc
                 + np.einsum("kfi,kfi->kf", b, c) * la + np.einsum("kfi,kfi->kf", c, a) * lb)
        out[s:s + chunk] = np.arctan2(numer, denom).sum(axis=1) / (2.0 * np.pi)
    return out


def sdf_mesh(shape, points):
    """Signed distance to a closed triangle mesh.

    Magnitude is the exact point-triangle distance; the sign comes from the
    generalised winding number (inside iff w >= 0.5).
    """
    if shape.kind != "mesh":
        raise ValueError("sdf_mesh needs a mesh shape")
    check_closed(shape.vertices, shape.faces)
    pts = np.asarray(points, dtype=np.float64)
    flat = pts.reshape(-1, 3)
    dist = _mesh_distance(shape, flat)
    inside = winding_number(shape.vertices, shape.faces, flat) >= 0.5
    return np.where(inside, -dist, dist).reshape(pts.shape[:-1])


def _mesh_distance(shape, flat):
    tri = shape.vertices[shape.faces]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    dist = np.empty(len(flat))
    chunk = max(1, 1_000_000 // max(len(tri), 1))
    for s in range(0, len(flat), chunk):
        dist[s:s + chunk] = np.sqrt(_closest_sq_dist(flat[s:s + chunk, None, :], a, b, c))
    return dist


def sdf(shape, points):
    if shape.kind == "mesh":
        return sdf_mesh(shape, points)
    return sdf_analytic(shape, points)


# --------------------------------------------------------------------------
# meshes


def icosphere(subdivisions=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Outward-oriented icosphere; returns (vertices, faces)."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return v, np.array(faces, dtype=np.int64)


def box_mesh(center=(0.0, 0.0, 0.0), half_extents=(1.0, 1.0, 1.0)):
    """Outward-oriented 12-triangle box; returns (vertices, faces)."""
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    v = corners * np.asarray(half_extents, dtype=np.float64) + np.asarray(center, dtype=np.float64)
    # corner index = 4*ix + 2*iy + iz
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # x = -1
        [4, 6, 7], [4, 7, 5],  # x = +1
        [0, 4, 5], [0, 5, 1],  # y = -1
        [2, 3, 7], [2, 7, 6],  # y = +1
        [0, 2, 6], [0, 6, 4],  # z = -1
        [1, 5, 7], [1, 7, 3],  # z = +1
    ], dtype=np.int64)
    return v, faces


def load_obj(path):
    """Read the ``v``/``f`` records of an ASCII OBJ file (triangles only)."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise TopologyError(f"{path}:{lineno}: only triangular faces are supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return Shape.mesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, vertices, faces):
    with open(path, "w") as fh:
        for v in vertices:
            fh.write("v {!r} {!r} {!r}\n".format(*(float(c) for c in v[:3])))
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# --------------------------------------------------------------------------
# sampling


def sample_volume(shape, n, seed, batch=None, max_proposals=1_000_000, min_rate=1e-4):
    """Rejection-sample ``n`` points with sdf <= 0 from the bounding box."""
    if n < 1:
        raise ValueError("sample_volume needs n >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = shape.bounds()
    batch = batch or max(2 * n, 1024)
    pts, vals = [], []
    accepted = proposed = 0
    mesh = shape.kind == "mesh"
    while accepted < n:
        cand = rng.uniform(lo, hi, size=(batch, 3))
        if mesh:
            # the winding number decides inside; distances only for the keepers
            keep = winding_number(shape.vertices, shape.faces, cand) >= 0.5
        else:
            d = sdf_analytic(shape, cand)
            keep = d <= 0
            vals.append(d[keep])
        pts.append(cand[keep])
        accepted += int(keep.sum())
        proposed += batch
        if proposed >= max_proposals and accepted / proposed < min_rate:
            raise DegenerateShapeError(
                f"acceptance rate {accepted / proposed:.2e} after {proposed} proposals; shape has ~zero volume")
    coords = np.concatenate(pts)[:n]
    if mesh:
        return PointSet(coords, -_mesh_distance(shape, coords))
    return PointSet(coords, np.concatenate(vals)[:n])


def resample_fixed(m, n, seed):
    """Indices mapping a cloud of ``m`` nodes onto exactly ``n`` slots.

    ``m >= n``: ``n`` distinct indices drawn uniformly.  ``m < n``: every
    index once, the remaining ``n - m`` drawn uniformly with replacement,
    then shuffled.
    """
    if m < 1 or n < 1:
        raise ValueError(f"resample_fixed needs m >= 1 and n >= 1, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    if m >= n:
        return rng.choice(m, size=n, replace=False)
    idx = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    return rng.permutation(idx)


# --------------------------------------------------------------------------
# scaling


@dataclass
class FieldStats:
    """Per-channel min/max fitted on the training split."""

    fields: dict  # name -> (min, max)
    inputs: dict

    def to_dict(self):
        return {"fields": {k: list(map(float, v)) for k, v in self.fields.items()},
                "inputs": {k: list(map(float, v)) for k, v in self.inputs.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls({k: tuple(v) for k, v in d["fields"].items()},
                   {k: tuple(v) for k, v in d["inputs"].items()})

    def field_bounds(self):
        lo = np.array([self.fields[k][0] for k in FIELD_NAMES])
        hi = np.array([self.fields[k][1] for k in FIELD_NAMES])
        return lo, hi


def fit_stats(samples):
    """Min/max of every target field and scaled input over ``samples``.

    Each sample needs ``coords``, ``sdf``, ``condition`` (m, f, d) and
    ``targets``.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("fit_stats needs at least one sample")
    targets = np.concatenate([np.asarray(s.targets, dtype=np.float64) for s in samples])
    coords = np.concatenate([np.asarray(s.coords, dtype=np.float64) for s in samples])
    sdfs = np.concatenate([np.asarray(s.sdf, dtype=np.float64) for s in samples])
    cond = np.array([np.asarray(s.condition, dtype=np.float64) for s in samples])
    fields = {name: (float(targets[:, i].min()), float(targets[:, i].max())) for i, name in enumerate(FIELD_NAMES)}
    inputs = {
        "x": (float(coords[:, 0].min()), float(coords[:, 0].max())),
        "y": (float(coords[:, 1].min()), float(coords[:, 1].max())),
        "z": (float(coords[:, 2].min()), float(coords[:, 2].max())),
        "sdf": (float(sdfs.min()), float(sdfs.max())),
        "mass": (float(cond[:, 0].min()), float(cond[:, 0].max())),
        "force": (float(cond[:, 1].min()), float(cond[:, 1].max())),
    }
    stats = FieldStats(fields, inputs)
    _check_ranges(stats.fields)
    return stats


def _check_ranges(ranges, names=None):
    for name in names or ranges:
        lo, hi = ranges[name]
        if not hi > lo:
            raise ConstantFieldError(f"field {name!r} is constant over the training split (min = max = {lo})")


def _affine(ranges, names, lo_out, hi_out):
    _check_ranges(ranges, names)
    lo = np.array([ranges[k][0] for k in names])
    hi = np.array([ranges[k][1] for k in names])
    scale = (hi_out - lo_out) / (hi - lo)
    return lo, scale


def normalize_fields(values, stats, head="tanh"):
    lo_out, hi_out = HEAD_RANGES[head]
    lo, scale = _affine(stats.fields, FIELD_NAMES, lo_out, hi_out)
    return (np.asarray(values, dtype=np.float64) - lo) * scale + lo_out


def denormalize(values, stats, head="tanh"):
    """Map head-space predictions ``(..., 4)`` back to physical units."""
    lo_out, hi_out = HEAD_RANGES[head]
    lo, scale = _affine(stats.fields, FIELD_NAMES, lo_out, hi_out)
    return (np.asarray(values, dtype=np.float64) - lo_out) / scale + lo


def normalize_inputs(coords, sdf_values, condition, stats):
    """Scale coordinates, sdf, mass and force onto [-1, 1]; the direction
    vector is left as is."""
    lo, scale = _affine(stats.inputs, ("x", "y", "z"), -1.0, 1.0)
    c = (np.asarray(coords, dtype=np.float64) - lo) * scale - 1.0
    lo, scale = _affine(stats.inputs, ("sdf",), -1.0, 1.0)
    s = (np.asarray(sdf_values, dtype=np.float64) - lo[0]) * scale[0] - 1.0
    cond = np.array(condition, dtype=np.float64)
    lo, scale = _affine(stats.inputs, ("mass", "force"), -1.0, 1.0)
    cond[..., :2] = (cond[..., :2] - lo) * scale - 1.0
    return c, s, cond


class NormalizedSample(NamedTuple):
    coords: np.ndarray
    sdf: np.ndarray
    condition: np.ndarray
    targets: np.ndarray | None


def normalize(sample, stats, head="tanh"):
    """Scale a sample's inputs onto [-1, 1] and its targets onto the head range."""
    c, s, cond = normalize_inputs(sample.coords, sample.sdf, sample.condition, stats)
    targets = getattr(sample, "targets", None)
    t = None if targets is None else normalize_fields(targets, stats, head)
    return NormalizedSample(c, s, cond, t)

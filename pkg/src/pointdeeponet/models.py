"""PointNet, DeepONet and Point-DeepONet field surrogates.

All three map a load condition and a point cloud to four per-node fields
``(u_x, u_y, u_z, von_mises)`` in head space (sigmoid range for PointNet,
tanh range for the operator models).  Inputs are expected already scaled
by :func:`pointdeeponet.geometry.normalize_inputs`.

The condition vector handed to the models is always the full
``(m, f, d_x, d_y, d_z)``; :meth:`ModelSpec.condition_columns` drops mass
when ``use_mass`` is off.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernel as K
from .kernel import Dense, Module, Tensor, mlp

ARCHITECTURES = ("pointnet", "deeponet", "point_deeponet")

# widths from the PointNet reference ladder, before the model scale factor
POINTNET_LOCAL = (64, 64)
POINTNET_GLOBAL = (64, 128, 1024)
POINTNET_HEAD = (512, 256, 128)

# reference totals for full-size versions; reported next to ours, never asserted
REFERENCE_PARAMETER_COUNTS = {"pointnet": 250_927, "deeponet": 264_931, "point_deeponet": 251_936}


class SchemaError(ValueError):
    pass


class UnsupportedResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class LoadCondition:
    mass: float
    force: float
    direction: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,):
            raise ValueError(f"direction must be a 3-vector, got {self.direction!r}")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError(f"direction {tuple(d)} is not a unit vector (norm {np.linalg.norm(d):.12f})")
        if self.force < 0:
            raise ValueError(f"force magnitude must be >= 0, got {self.force}")
        if self.mass <= 0:
            raise ValueError(f"mass must be > 0, got {self.mass}")
        object.__setattr__(self, "direction", tuple(float(x) for x in d))

    def as_vector(self):
        return np.array([self.mass, self.force, *self.direction], dtype=np.float64)


_DEFAULT_WIDTHS = {
    "pointnet": {},
    "deeponet": {"branch_hidden": (128, 128), "trunk_hidden": (128, 128, 128, 128)},
    "point_deeponet": {"branch_hidden": (64,), "trunk_hidden": (128,), "cloud_hidden": (64,),
                       "fusion_hidden": (128,)},
}


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    latent: int = 128
    n_fields: int = 4
    use_mass: bool = True
    use_sdf: bool = True
    omega: float = 30.0
    activation: str = "silu"
    branch_hidden: tuple = ()
    trunk_hidden: tuple = ()
    cloud_hidden: tuple = ()
    fusion_hidden: tuple = ()
    pointnet_scale: float = 0.53
    pointnet_local: tuple = POINTNET_LOCAL
    pointnet_global: tuple = POINTNET_GLOBAL
    pointnet_head: tuple = POINTNET_HEAD
    n_points: int | None = field(default=None)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.latent < 1:
            raise ValueError("latent size must be >= 1")
        for key, default in _DEFAULT_WIDTHS[self.architecture].items():
            if not getattr(self, key):
                object.__setattr__(self, key, tuple(default))
        for key in ("branch_hidden", "trunk_hidden", "cloud_hidden", "fusion_hidden",
                    "pointnet_local", "pointnet_global", "pointnet_head"):
            object.__setattr__(self, key, tuple(int(w) for w in getattr(self, key)))
        if self.architecture == "pointnet":
            # no trunk, so SDF is never a PointNet input
            object.__setattr__(self, "use_sdf", False)
        if self.architecture != "pointnet":
            for key in _DEFAULT_WIDTHS[self.architecture]:
                if not getattr(self, key):
                    raise ValueError(f"{key} must be non-empty")

    @property
    def head(self):
        return "sigmoid" if self.architecture == "pointnet" else "tanh"

    @property
    def condition_columns(self):
        return [0, 1, 2, 3, 4] if self.use_mass else [1, 2, 3, 4]

    def scaled(self, widths):
        return tuple(max(1, int(round(w * self.pointnet_scale))) for w in widths)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("branch_hidden", "trunk_hidden", "cloud_hidden", "fusion_hidden",
                    "pointnet_local", "pointnet_global", "pointnet_head"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_points(self, n):
        return replace(self, n_points=int(n))


def _validate_direction(condition):
    d = np.asarray(condition)[..., -3:]
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError(f"load direction must be a unit vector; got norms {np.round(norms, 9).tolist()}")


class FieldModel(Module):
    """Shared plumbing: every model can split its forward pass into a
    per-sample branch state and a pointwise query stage."""

    spec: ModelSpec

    def select_condition(self, condition5):
        return np.asarray(condition5, dtype=np.float64)[..., self.spec.condition_columns]

    def query_features(self, coords, sdf):
        if self.spec.use_sdf:
            return np.concatenate([coords, np.asarray(sdf)[..., None]], axis=-1)
        return np.asarray(coords)

    def forward_batch(self, coords, sdf, condition5, cloud=None):
        """Head-space prediction ``(B, N, 4)`` from scaled batch arrays."""
        state = self.encode(coords if cloud is None else cloud, condition5)
        return self.decode(state, coords, sdf)


class PointNet(FieldModel):
    """Segmentation-style PointNet with the load condition tiled onto every
    point; only runs at the resolution it was trained on."""

    def __init__(self, spec, rng):
        self.spec = spec
        c_in = 3 + (1 if spec.use_mass else 0) + 1 + 3
        local = spec.scaled(spec.pointnet_local)
        glob = spec.scaled(spec.pointnet_global)
        head = spec.scaled(spec.pointnet_head)
        self.local = mlp([c_in, *local], rng, "relu", "relu", batchnorm=True)
        self.global_ = mlp([local[-1], *glob], rng, "relu", "relu", batchnorm=True)
        self.decoder = mlp([local[-1] + glob[-1], *head], rng, "relu", "relu", batchnorm=True)
        self.out = Dense(head[-1], spec.n_fields, rng)

    def forward(self, points, condition):
        points = K.tensor.as_tensor(points)
        b, n, _ = points.shape
        trained = self.spec.n_points
        if trained is not None and n != trained:
            raise UnsupportedResolutionError(
                f"PointNet was trained on N={trained} points and cannot predict on N={n}")
        cond = K.tensor.as_tensor(condition)
        cond = K.broadcast_to(K.reshape(cond, (b, 1, cond.shape[-1])), (b, n, cond.shape[-1]))
        x = K.concat([points, cond], axis=-1)
        local = self.local(x)
        g = K.maxpool_points(self.global_(local))
        g = K.broadcast_to(K.reshape(g, (b, 1, g.shape[-1])), (b, n, g.shape[-1]))
        h = self.decoder(K.concat([local, g], axis=-1))
        return K.activation(self.out(h), "sigmoid")

    # PointNet mixes every point into every output, so there is no
    # separable branch state: encode just stores the inputs.
    def encode(self, cloud, condition5):
        return cloud, self.select_condition(condition5)

    def decode(self, state, coords, sdf):
        return self.forward(coords, state[1])


class DeepONet(FieldModel):
    """Condition branch and coordinate(+SDF) trunk joined by a latent dot
    product per field, then tanh."""

    def __init__(self, spec, rng):
        self.spec = spec
        h, k = spec.latent, len(spec.condition_columns)
        t_in = 3 + (1 if spec.use_sdf else 0)
        self.branch = mlp([k, *spec.branch_hidden, h], rng, spec.activation)
        self.trunk = mlp([t_in, *spec.trunk_hidden, h * spec.n_fields], rng, spec.activation)

    def _check_queries(self, queries):
        want = 3 + (1 if self.spec.use_sdf else 0)
        if queries.shape[-1] != want:
            missing = "SDF column" if self.spec.use_sdf else "nothing (extra columns given)"
            raise SchemaError(f"queries have {queries.shape[-1]} features, expected {want}: missing {missing}")

    def forward(self, condition, queries, hooks=None):
        hooks = hooks or {}
        queries = K.tensor.as_tensor(queries)
        self._check_queries(queries)
        bvec = Tensor(hooks["branch"]) if "branch" in hooks else self.branch(condition)
        return self._head(bvec, queries, hooks)

    def _head(self, bvec, queries, hooks):
        if "trunk" in hooks:
            t = Tensor(hooks["trunk"])
        else:
            b, n, _ = queries.shape
            t = K.reshape(self.trunk(queries), (b, n, self.spec.latent, self.spec.n_fields))
        return K.activation(K.latent_dot(bvec, t), "tanh")

    def encode(self, cloud, condition5):
        return self.branch(Tensor(self.select_condition(condition5)))

    def decode(self, state, coords, sdf):
        q = Tensor(self.query_features(coords, sdf))
        self._check_queries(q)
        return self._head(state, q, {})


class PointDeepONet(FieldModel):
    """DeepONet whose branch adds a max-pooled PointNet embedding of the
    cloud to the condition embedding, with a SIREN trunk, element-wise
    fusion and a final per-field latent dot product."""

    def __init__(self, spec, rng):
        self.spec = spec
        h, k = spec.latent, len(spec.condition_columns)
        t_in = 3 + (1 if spec.use_sdf else 0)
        self.cond_net = mlp([k, *spec.branch_hidden, h], rng, spec.activation)
        self.cloud_net = mlp([3, *spec.cloud_hidden, h], rng, "relu", "relu", batchnorm=True)
        self.trunk = mlp([t_in, *spec.trunk_hidden, h], rng, "sine", "sine", omega=spec.omega)
        # bias-free after the fusion so a zero fused feature gives a zero field
        self.fusion = mlp([h, *spec.fusion_hidden], rng, spec.activation, spec.activation, bias=False)
        f = spec.fusion_hidden[-1]
        self.head_b = Dense(f, h, rng, bias=False)
        self.head_t = Dense(f, h * spec.n_fields, rng, bias=False)

    def branch_alpha(self, condition, cloud):
        return K.add(self.cond_net(condition), K.maxpool_points(self.cloud_net(cloud)))

    def forward(self, condition, cloud, queries, hooks=None, validate=True):
        hooks = hooks or {}
        if validate:
            _validate_direction(K.tensor.as_tensor(condition).data)
        if "branch_alpha" in hooks:
            alpha = Tensor(hooks["branch_alpha"])
        else:
            alpha = self.branch_alpha(condition, cloud)
        return self._head(alpha, K.tensor.as_tensor(queries), hooks)

    def _check_queries(self, queries):
        want = 3 + (1 if self.spec.use_sdf else 0)
        if queries.shape[-1] != want:
            raise SchemaError(f"queries have {queries.shape[-1]} features, expected {want} "
                              f"({'x, y, z, sdf' if self.spec.use_sdf else 'x, y, z'})")

    def _head(self, alpha, queries, hooks):
        self._check_queries(queries)
        b, n, _ = queries.shape
        h, m = self.spec.latent, self.spec.n_fields
        if "branch_beta" in hooks and "trunk_beta" in hooks:
            bb, tb = Tensor(hooks["branch_beta"]), Tensor(hooks["trunk_beta"])
        else:
            t_alpha = self.trunk(queries)
            fused = K.mul(K.reshape(alpha, (alpha.shape[0], 1, h)), t_alpha)
            z = self.fusion(fused)
            bb = Tensor(hooks["branch_beta"]) if "branch_beta" in hooks else self.head_b(z)
            tb = Tensor(hooks["trunk_beta"]) if "trunk_beta" in hooks else K.reshape(self.head_t(z), (b, n, h, m))
        return K.activation(K.latent_dot(bb, tb), "tanh")

    def encode(self, cloud, condition5):
        _validate_direction(condition5)
        return self.branch_alpha(Tensor(self.select_condition(condition5)), Tensor(cloud))

    def decode(self, state, coords, sdf):
        return self._head(state, Tensor(self.query_features(coords, sdf)), {})


_CLASSES = {"pointnet": PointNet, "deeponet": DeepONet, "point_deeponet": PointDeepONet}


def build_model(spec, seed=0):
    return _CLASSES[spec.architecture](spec, np.random.default_rng(seed))


def count_parameters(spec_or_model):
    """Trainable scalars: weights, biases and batchnorm scale/shift."""
    model = spec_or_model if isinstance(spec_or_model, Module) else build_model(spec_or_model)
    return int(sum(p.data.size for p in model.parameters()))

"""Small model specs and gradient-check drivers shared by the test modules."""
import numpy as np

from pointdeeponet import kernel as K
from pointdeeponet.models import ModelSpec, build_model


def small_spec(arch, h=8, **kw):
    if arch == "pointnet":
        base = dict(pointnet_scale=1.0, pointnet_local=(8, 8), pointnet_global=(8, 8, 8), pointnet_head=(8, 8))
    elif arch == "deeponet":
        base = dict(latent=h, branch_hidden=(8,), trunk_hidden=(8, 8))
    else:
        base = dict(latent=h, branch_hidden=(8,), trunk_hidden=(8,), cloud_hidden=(8,), fusion_hidden=(8,))
    base.update(kw)
    return ModelSpec(arch, **base)


def random_inputs(b, n, seed=0, use_sdf=True):
    rng = np.random.default_rng(seed)
    coords = rng.uniform(-1, 1, (b, n, 3))
    sdf = -rng.uniform(0, 1, (b, n))
    d = rng.normal(size=(b, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cond = np.concatenate([rng.uniform(-1, 1, (b, 2)), d], axis=1)
    return coords, sdf, cond


def forward_fn(model, coords, sdf, cond):
    """Closure that runs the model's native forward on Tensors built from
    the arrays, returning (fn, input tensors)."""
    spec = model.spec
    c = K.Tensor(cond[:, spec.condition_columns].copy())
    if spec.architecture == "pointnet":
        x = K.Tensor(coords.copy())
        return (lambda: model(x, c)), [x, c]
    q = K.Tensor(model.query_features(coords, sdf))
    if spec.architecture == "deeponet":
        return (lambda: model(c, q)), [c, q]
    cloud = K.Tensor(coords.copy())
    return (lambda: model(c, cloud, q, validate=False)), [c, cloud, q]


def model_grad_error(arch, b=2, n=8, h=8, seed=0, step=1e-5, **kw):
    model = build_model(small_spec(arch, h=h, **kw), seed=seed)
    fn, inputs = forward_fn(model, *random_inputs(b, n, seed))
    return K.grad_check(lambda: K.projected(fn(), seed=seed), model.parameters() + inputs, step=step)

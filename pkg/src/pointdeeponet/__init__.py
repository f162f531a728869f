"""Point-cloud operator-learning surrogates (PointNet, DeepONet, Point-DeepONet)
for per-node displacement and von Mises stress fields."""
import os as _os

# thread count is the only knob read from the environment
if "PDN_NUM_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["PDN_NUM_THREADS"])

from .geometry import FieldStats, PointSet, Shape, resample_fixed, sample_volume, sdf  # noqa: E402
from .models import LoadCondition, ModelSpec, build_model, count_parameters  # noqa: E402

__version__ = "0.1.0"

__all__ = ["FieldStats", "LoadCondition", "ModelSpec", "PointSet", "Shape", "build_model",
           "count_parameters", "resample_fixed", "sample_volume", "sdf"]

"""
A small synthetic dataset
=========================

Random spheres, boxes and capsules with closed-form displacement and stress
stand-ins, written as binary samples plus a manifest.
"""
import sys
import tempfile

import numpy as np

from pointdeeponet import data as D
from pointdeeponet import geometry as G

root = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp()
cfg = D.SyntheticConfig(n_samples=20, n_nodes=1024)
manifest = D.generate_synthetic(root, cfg, seed=0)
print(f"{len(manifest.ids('train'))} train / {len(manifest.ids('val'))} val samples in {root}")

rec = manifest.load(manifest.ids()[0])
print("label", rec.label, "condition (m, f, d):", np.round(rec.condition, 3))
for j, name in enumerate(G.FIELD_NAMES):
    print(f"  {name:10s} min {rec.targets[:, j].min(): .4f}  max {rec.targets[:, j].max(): .4f}")

# scaling is fitted on the training split only
z = G.normalize_fields(rec.targets, manifest.stats, "tanh")
print("tanh-space range:", z.min().round(3), z.max().round(3))

batch = D.make_batch(manifest, manifest.ids("train")[:4], n_points=256, seed=0)
print("batch:", batch.coords.shape, batch.condition.shape, batch.targets.shape)

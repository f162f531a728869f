"""
Training-set size sweep
=======================

Same validation set, growing training subsets; scaling is refitted on
each subset.
"""
import logging
import sys
import tempfile

from pointdeeponet import experiments as E

logging.basicConfig(level=logging.INFO, format="%(message)s")
iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
manifest = E.ensure_dataset(tempfile.mkdtemp(), E.BENCHMARK_DATA, seed=0)

for arch in ("deeponet", "point_deeponet"):
    rows = E.sweep(manifest, arch, "n_train", [32, 64, 128, 256], iterations=iterations, eval_interval=iterations)
    for r in rows:
        print(f"{arch:15s} train={r['n_train']:4d}  R2 sampled {r['r2_sampled']:.4f}  full {r['r2_full']:.4f}")

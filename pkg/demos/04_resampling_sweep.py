"""
Resampling size sweep
=====================

Train on N resampled points per sample for several N and compare
sampled and full-resolution accuracy.
"""
import logging
import sys
import tempfile

from pointdeeponet import experiments as E

logging.basicConfig(level=logging.INFO, format="%(message)s")
iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
manifest = E.ensure_dataset(tempfile.mkdtemp(), E.BENCHMARK_DATA, seed=0)

rows = E.sweep(manifest, "point_deeponet", "n_points", [64, 128, 256, 512],
               iterations=iterations, eval_interval=iterations)
for r in rows:
    print(f"N={r['n_points']:4d}  R2 sampled {r['r2_sampled']:.4f}  full {r['r2_full']:.4f}  {r['seconds']:.0f} s")

"""
Input ablation
==============

Drop the mass from the branch or the SDF from the trunk.
"""
import logging
import sys
import tempfile
from dataclasses import replace

from pointdeeponet import experiments as E
from pointdeeponet.models import ModelSpec

logging.basicConfig(level=logging.INFO, format="%(message)s")
iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
manifest = E.ensure_dataset(tempfile.mkdtemp(), E.BENCHMARK_DATA, seed=0)

base = ModelSpec("point_deeponet")
for name, spec in [("all inputs", base), ("no mass", replace(base, use_mass=False)),
                   ("no sdf", replace(base, use_sdf=False)),
                   ("neither", replace(base, use_mass=False, use_sdf=False))]:
    r = E.run(manifest, spec, iterations=iterations, eval_interval=iterations)
    print(f"{name:11s} R2 sampled {r.report.mean_r2('sampled'):.4f}  full {r.report.mean_r2('full'):.4f}")

"""
Signed distances and interior sampling
======================================

Negative inside, zero on the surface, positive outside.
"""
import numpy as np

from pointdeeponet import geometry as G

sphere = G.Shape.sphere()
print("sphere at origin, surface, outside:", G.sdf(sphere, np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])))

box = G.Shape.box(center=(1, 0, 0), half_extents=(1, 2, 3))
print("box probes:", G.sdf(box, np.array([[1, 0, 0], [4, 0, 0], [3, 3, 0.0]])))

# a closed triangle mesh: sign comes from the winding number
verts, faces = G.icosphere(3)
mesh = G.Shape.mesh(verts, faces)
probe = np.random.default_rng(0).uniform(-2, 2, (1000, 3))
err = np.abs(G.sdf(mesh, probe) - G.sdf(sphere, probe))
print(f"icosphere vs exact sphere: max error {err.max():.4f} over {len(probe)} probes")

# an open mesh is refused
try:
    G.Shape.mesh(verts, faces[:-1])
except G.TopologyError as e:
    print("open mesh:", e)

# uniform interior points
capsule = G.Shape.capsule((0, 0, -1), (0, 0, 1), 0.5)
pts = G.sample_volume(capsule, 5000, seed=1)
print("capsule sample:", pts.coords.shape, "max sdf", pts.sdf.max())

# fixed-size resampling: without replacement when there are enough nodes
print(G.resample_fixed(10, 4, seed=0), G.resample_fixed(3, 6, seed=0))

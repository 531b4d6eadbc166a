"""Overfit a spectral basis to the vertices of an icosphere.

The mesh is used twice: not at all during training (only the 642 vertex
positions are seen), and afterwards as the ground truth through its
cotangent Laplacian.  Spherical harmonics come in degenerate groups of
size 1, 3, 5, 7, so within a group the learned columns may be any rotation
of the reference ones.  The cluster diagnostic measures that subspace
agreement, which is the fairer number for k > 1.

Run:  python demos/sphere_overfit.py [steps]   (about 0.4 s per step)
"""

import sys
import time

import numpy as np

from specbasis import synth_manifold, train
from specbasis.oracle import (
    aligned_cosine_similarity,
    cotan_laplacian,
    degenerate_cluster_diagnostic,
    generalized_eigens,
)
from specbasis.spectral import unnormalized_basis
from specbasis.train import preset_config

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

pc, mesh = synth_manifold("sphere", {"level": 3}, meshed=True)
print(f"icosphere: {pc.n} vertices, {mesh.n_faces} faces")

_, ref = generalized_eigens(cotan_laplacian(mesh), 20)
print("reference eigenvalues:", np.round(ref.values[:16], 2))

cfg = preset_config("sphere3d", steps=steps, eval_probes=None)
t0 = time.perf_counter()
res = train(pc, cfg)
print(f"trained {steps} steps in {time.perf_counter() - t0:.0f}s")

V = unnormalized_basis(res.basis)
sims = aligned_cosine_similarity(V, ref.vectors, 10)
print("\nper-index |cos|:", np.round(sims.per_index, 3))
print(f"mean over k <= 10: {sims.mean:.3f}")

print("\ndegenerate groups (subspace agreement):")
for group in degenerate_cluster_diagnostic(V, ref.vectors, ref.values, 10):
    print(f"  indices {group['indices']}: {group['mean_cosine']:.3f}")

"""Learn the first five Neumann harmonics of the unit interval.

A small ReLU network maps each grid point to five numbers.  After QR the
columns become an orthonormal basis, and training asks every prefix of that
basis to reconstruct random smooth signals as well as possible.  Nothing in
the loss mentions a Laplacian, yet the columns that come out look like
cos(k pi x), ordered by frequency.

Run:  python demos/interval_harmonics.py [seed]
"""

import sys
import time

import numpy as np

from specbasis import synth_manifold, train
from specbasis.oracle import aligned_cosine_similarity, calibrate_scale, segment_analytic_eigens
from specbasis.spectral import unnormalized_basis
from specbasis.train import preset_config

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

# 100 evenly spaced points on [0, 1]
pc = synth_manifold("segment", {"n": 100})
cfg = preset_config("seg1d", seed=seed)
print(f"training {cfg.widths} for {cfg.steps} steps (seed {seed})")

t0 = time.perf_counter()
res = train(pc, cfg)
losses = [row["loss"] for row in res.history]
print(f"done in {time.perf_counter() - t0:.1f}s, loss {losses[0]:.4f} -> {np.mean(losses[-50:]):.4f}")

# undo the mass normalization so columns can be compared with cos(k pi x)
V = unnormalized_basis(res.basis)
ref = segment_analytic_eigens(pc.n, 5)
sims = aligned_cosine_similarity(V, ref.vectors, 5).per_index

x = pc.points[:, 0]
print("\n k   |cos| vs cos((k-1) pi x)")
for k, s in enumerate(sims, 1):
    print(f"{k:2d}   {s:.4f}")
# v1 = q1 / sqrt(q1^2) is flat by construction; the learned mass lives in q1
q1 = res.basis.Q[:, 0]
print(f"q1 spread (std/mean): {q1.std() / abs(q1.mean()):.2e}")

# eigenvalues fall out of the worst-case reconstruction errors
lam = res.basis.lambdas
scale = calibrate_scale(lam, ref.values, (2, 5), "l1")
print("\n k   estimated   exact (pi^2 (k-1)^2)")
for k in range(5):
    print(f"{k + 1:2d}   {lam[k] * scale:9.3f}   {ref.values[k]:9.3f}")

# a coarse text plot of the first three learned functions
print()
for k in range(3):
    col = V[:, k] * np.sign(V[np.argmax(np.abs(V[:, k])), k])
    lo, hi = col.min(), col.max()
    rows = np.round((col - lo) / (hi - lo + 1e-12) * 8).astype(int) if hi > lo else np.full(pc.n, 4)
    print(f"v{k + 1}")
    for level in range(8, -1, -1):
        print("  " + "".join("*" if r == level else " " for r in rows[::2]))

"""Why worst-case reconstruction error recovers eigenvalues.

Take a small graph Laplacian L and the set of signals with f^T L f <= 1.
Reconstructing such signals with the first k Laplacian eigenvectors leaves
an error of at most 1 / lambda_{k+1}, and no other k-dimensional basis does
better.  This script checks both halves numerically, then runs the full
theorem suite the package ships with.

Run:  python demos/worst_case_probes.py
"""

import numpy as np

from specbasis.oracle import run_theorem_suite

rng = np.random.default_rng(7)
n, k = 10, 3

# random connected weighted graph
W = np.triu(rng.uniform(0.1, 1.0, (n, n)), 1)
W = W + W.T
L = np.diag(W.sum(1)) - W
vals, vecs = np.linalg.eigh(L)
print("spectrum:", np.round(vals, 3))


def worst_error(B):
    # max ||f - P_B f||^2 over f^T L f <= 1, f orthogonal to constants
    U = vecs[:, 1:] / np.sqrt(vals[1:])
    R = U - B @ (B.T @ U)
    return np.linalg.eigvalsh(R.T @ R).max()


# the eigenvector basis (constant plus k-1 lowest modes) attains 1/lambda_k
B = vecs[:, :k]
print(f"\nworst error, eigenbasis:  {worst_error(B):.6f}")
print(f"1 / lambda_{k + 1}:             {1 / vals[k]:.6f}")

# random orthonormal bases containing the constant do worse
worse = []
for _ in range(1000):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, k - 1))])
    Q, _ = np.linalg.qr(X)
    worse.append(worst_error(Q))
print(f"best of 1000 random bases: {min(worse):.6f}")

report = run_theorem_suite(range(5), n=8, k=3, samples=20_000)
print(f"\ntheorem suite: {'all passed' if report['passed'] else 'FAILED'}")
for r in report["reports"]:
    print(f"  {r['name']:20s} seed {r['seed']}  {'ok' if r['passed'] else 'FAIL'}")

"""Reference operators, eigensolvers, comparison metrics and theorem checks.

Everything here is deterministic dense or sparse linear algebra; it is what
the learned bases are judged against.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import ContractError, DegenerateGeometryError, DimensionError, SpecbasisError
from .geometry import KnnGraph, TriangleMesh

__all__ = [
    "DiscreteOperator",
    "EigenPairs",
    "ConvergenceError",
    "cotan_laplacian",
    "graph_laplacian",
    "path_operator",
    "segment_analytic_eigens",
    "sym_eigendecomposition",
    "jacobi_eigh",
    "generalized_eigens",
    "SimilarityReport",
    "aligned_cosine_similarity",
    "degenerate_cluster_diagnostic",
    "eigenvalue_discrepancy",
    "calibrate_scale",
    "CheckReport",
    "verify_minmax_theorem",
    "verify_pca_equivalence",
    "verify_normalized_relation",
    "pca_expected_error",
    "run_theorem_suite",
]


class ConvergenceError(SpecbasisError, ArithmeticError):
    """An iterative eigensolver hit its sweep cap."""


# ---------------------------------------------------------------- operators


@dataclass
class DiscreteOperator:
    """Stiffness ``S`` (sparse, symmetric) and diagonal mass ``M``.

    ``nullvec`` is the vector ``S`` annihilates: ones for the plain
    Laplacians, ``sqrt(deg)`` for the symmetric-normalized graph variant.
    """

    S: sparse.csr_matrix
    mass: np.ndarray
    kind: str
    n_components: int = 1
    nullvec: np.ndarray | None = None

    def __post_init__(self):
        self.S = sparse.csr_matrix(self.S, dtype=np.float64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        n = self.S.shape[0]
        if self.S.shape != (n, n) or self.mass.shape != (n,):
            raise DimensionError("S must be n x n and mass length n")
        if np.any(self.mass <= 0):
            raise ContractError("mass must be strictly positive")
        if self.nullvec is None:
            self.nullvec = np.ones(n)

    @property
    def n(self) -> int:
        return self.S.shape[0]

    @property
    def disconnected(self) -> bool:
        return self.n_components > 1

    def dense(self) -> np.ndarray:
        return self.S.toarray()

    def normalized(self) -> np.ndarray:
        """Dense ``M^{-1/2} S M^{-1/2}``."""
        s = 1.0 / np.sqrt(self.mass)
        A = self.dense() * s[:, None] * s[None, :]
        return 0.5 * (A + A.T)

    def symmetry_error(self) -> float:
        diff = self.S - self.S.T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def nullspace_residual(self) -> float:
        return float(np.abs(self.S @ self.nullvec).max())


def _components(W: sparse.spmatrix) -> int:
    ncomp, _ = connected_components(W, directed=False)
    return int(ncomp)


def cotan_laplacian(mesh: TriangleMesh) -> DiscreteOperator:
    """Cotangent stiffness with barycentric (lumped) vertex areas.

    ``S_ij = -(cot a_ij + cot b_ij) / 2`` for the two angles opposite edge
    ``ij``; boundary edges get a single term.
    """
    V, F = mesh.vertices, mesh.faces
    n = len(V)
    if len(F) == 0:
        raise ContractError("mesh has no faces")
    p0, p1, p2 = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    if cross.ndim == 1:  # 2D vertices
        dbl = np.abs(cross)
    else:
        dbl = np.linalg.norm(cross, axis=1)
    scale = max(1.0, float(np.abs(V).max())) ** 2
    bad = np.flatnonzero(dbl <= 1e-14 * scale)
    if bad.size:
        raise DegenerateGeometryError(f"face {bad[0]} has zero area", index=int(bad[0]))
    area = 0.5 * dbl

    rows, cols, vals = [], [], []
    for c in range(3):
        # corner c, opposite edge (a, b)
        a, b = (c + 1) % 3, (c + 2) % 3
        u = V[F[:, a]] - V[F[:, c]]
        w = V[F[:, b]] - V[F[:, c]]
        cot = np.einsum("ij,ij->i", u, w) / dbl
        rows += [F[:, a], F[:, b]]
        cols += [F[:, b], F[:, a]]
        vals += [-0.5 * cot, -0.5 * cot]
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    off = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    S = (off + sparse.diags(diag)).tocsr()
    S = 0.5 * (S + S.T)

    mass = np.zeros(n)
    for c in range(3):
        np.add.at(mass, F[:, c], area / 3.0)
    if np.any(mass <= 0):
        raise DegenerateGeometryError("isolated vertex with no incident faces", index=int(np.argmin(mass)))
    return DiscreteOperator(S, mass, "cotangent", _components(abs(off)))


def graph_laplacian(
    graph: KnnGraph,
    weights: str = "binary",
    sigma: float | None = None,
    normalization: str = "none",
) -> DiscreteOperator:
    """Graph Laplacian ``S = D - W`` of the union-symmetrized kNN graph.

    ``normalization="none"`` returns ``M = D`` (random-walk view);
    ``"symmetric"`` returns ``S = D^{-1/2} (D - W) D^{-1/2}`` with ``M = I``.
    A disconnected graph is flagged with a warning rather than rejected.
    """
    src, dst, dist = graph.directed_edges()
    keep = src != dst
    src, dst, dist = src[keep], dst[keep], dist[keep]
    if weights == "binary":
        w = np.ones_like(dist)
    elif weights == "gaussian":
        if sigma is None or sigma <= 0:
            raise ContractError("gaussian weights need sigma > 0")
        w = np.exp(-(dist**2) / (2.0 * sigma**2))
    else:
        raise ContractError(f"unknown weight scheme {weights!r}")
    n = graph.n
    Wd = sparse.coo_matrix((w, (src, dst)), shape=(n, n)).tocsr()
    W = Wd.maximum(Wd.T).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise ContractError("graph has an isolated vertex")
    ncomp = _components(W)
    if ncomp > 1:
        warnings.warn(f"graph has {ncomp} connected components; nullspace dimension > 1", RuntimeWarning)
    L = (sparse.diags(deg) - W).tocsr()
    if normalization == "none":
        return DiscreteOperator(L, deg, "graph", ncomp)
    if normalization == "symmetric":
        s = sparse.diags(1.0 / np.sqrt(deg))
        Ln = (s @ L @ s).tocsr()
        return DiscreteOperator(0.5 * (Ln + Ln.T), np.ones(n), "graph", ncomp, np.sqrt(deg))
    raise ContractError(f"unknown normalization {normalization!r}")


def path_operator(n: int) -> DiscreteOperator:
    """Binary path-graph Laplacian with unit mass; spectrum ``2 - 2 cos(k pi / n)``."""
    if n < 2:
        raise ContractError("path needs n >= 2")
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    S = sparse.diags([main, -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1])
    return DiscreteOperator(S, np.ones(n), "path_1d")


# -------------------------------------------------------------- eigenpairs


@dataclass
class EigenPairs:
    """Ascending ``values`` with column ``vectors``.

    ``inner`` says which inner product the columns are orthonormal in:
    ``"euclidean"`` or ``"mass"`` (then ``mass`` holds the diagonal).
    """

    values: np.ndarray
    vectors: np.ndarray
    inner: str = "euclidean"
    mass: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.values)

    def gram(self) -> np.ndarray:
        V = self.vectors
        return V.T @ (V * self.mass[:, None]) if self.inner == "mass" else V.T @ V

    def orthonormality_error(self) -> float:
        return float(np.abs(self.gram() - np.eye(self.count)).max())


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column positive, for reproducible output
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def segment_analytic_eigens(n: int, count: int) -> EigenPairs:
    """Neumann modes ``cos((k-1) pi x)`` on an ``n``-point grid of [0, 1].

    Columns are Gram-Schmidt orthonormalized under uniform mass ``1/n``,
    which only perturbs them at ``O(1/n)``; values are exact, ``((k-1) pi)^2``.
    """
    if count > n or count < 1:
        raise ContractError(f"need 1 <= count <= n, got count={count}, n={n}")
    x = np.linspace(0.0, 1.0, n)
    k = np.arange(count)
    phi = np.cos(np.pi * np.outer(x, k))
    mass = np.full(n, 1.0 / n)
    Qn, R = np.linalg.qr(phi * np.sqrt(mass)[:, None])
    Qn = Qn * np.sign(np.diag(R))
    return EigenPairs((k * np.pi) ** 2, Qn / np.sqrt(mass)[:, None], "mass", mass)


def _check_symmetric(A: np.ndarray, tol: float = 1e-8) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    asym = float(np.abs(A - A.T).max())
    if asym > tol * scale:
        raise ContractError(f"matrix is not symmetric (max |A - A^T| = {asym:.3g})")


def jacobi_eigh(A, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations; ascending values, orthonormal columns.

    Slow (``O(n^3)`` per sweep in Python) and meant as an independent
    cross-check of the LAPACK path for small matrices.
    """
    A = np.array(A, dtype=np.float64)
    _check_symmetric(A)
    n = len(A)
    V = np.eye(n)
    norm = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * max(norm, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * ap - s * aq, s * ap + c * aq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def sym_eigendecomposition(A, count: int | None = None, method: str = "lapack") -> EigenPairs:
    """Smallest ``count`` eigenpairs of a dense symmetric matrix.

    Every returned pair satisfies ``||A v - lambda v|| <= 1e-8 ||A||``;
    a violation raises ``ConvergenceError``.
    """
    A = np.asarray(A, dtype=np.float64)
    _check_symmetric(A)
    n = len(A)
    if n > 3000:
        raise ContractError(f"dense eigensolver limited to n <= 3000, got {n}")
    count = n if count is None else int(count)
    if not 1 <= count <= n:
        raise ContractError(f"count must be in 1..{n}")
    A = 0.5 * (A + A.T)
    if method == "lapack":
        try:
            w, V = sla.eigh(A, subset_by_index=[0, count - 1])
        except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
            raise ConvergenceError(str(exc)) from exc
    elif method == "jacobi":
        w, V = jacobi_eigh(A)
        w, V = w[:count], V[:, :count]
    else:
        raise ContractError(f"unknown method {method!r}")
    V = _fix_signs(V)
    resid = np.linalg.norm(A @ V - V * w, axis=0)
    bound = 1e-8 * max(np.linalg.norm(A, 2), 1e-300)
    if np.any(resid > bound):
        raise ConvergenceError(f"eigen residual {resid.max():.3g} exceeds {bound:.3g}")
    return EigenPairs(w, V, "euclidean")


def generalized_eigens(op: DiscreteOperator, count: int) -> tuple[EigenPairs, EigenPairs]:
    """Eigenpairs of ``S v = lambda M v`` in both views.

    Returns ``(q, v)``: ``q`` Euclidean-orthonormal eigenvectors of
    ``M^{-1/2} S M^{-1/2}`` and ``v = M^{-1/2} q``, M-orthonormal.  The
    first ``q`` is oriented positive, so the first ``v`` is ``+const``.
    """
    q = sym_eigendecomposition(op.normalized(), count)
    Q = q.vectors
    if Q[:, 0].sum() < 0:
        Q[:, 0] = -Q[:, 0]
    V = Q / np.sqrt(op.mass)[:, None]
    return EigenPairs(q.values, Q, "euclidean"), EigenPairs(q.values.copy(), V, "mass", op.mass.copy())


# ----------------------------------------------------------------- metrics


@dataclass
class SimilarityReport:
    per_index: np.ndarray
    mean: float
    upto: int
    flipped: np.ndarray


def aligned_cosine_similarity(predicted, reference, upto: int | None = None) -> SimilarityReport:
    """Index-by-index ``|cos|`` after flipping predicted columns to match sign."""
    P = np.asarray(predicted, dtype=np.float64)
    R = np.asarray(reference, dtype=np.float64)
    if P.ndim == 1:
        P, R = P[:, None], R[:, None] if R.ndim == 1 else R
    if P.shape[0] != R.shape[0]:
        raise DimensionError("predicted and reference must have the same number of points")
    k = min(P.shape[1], R.shape[1]) if upto is None else int(upto)
    if not 1 <= k <= min(P.shape[1], R.shape[1]):
        raise ContractError(f"upto={k} exceeds available columns")
    P, R = P[:, :k], R[:, :k]
    pn, rn = np.linalg.norm(P, axis=0), np.linalg.norm(R, axis=0)
    if np.any(pn == 0) or np.any(rn == 0):
        raise ContractError("zero-norm column in cosine similarity")
    dots = np.einsum("ij,ij->j", P, R)
    flipped = dots < 0
    sims = np.abs(dots) / (pn * rn)
    return SimilarityReport(sims, float(sims.mean()), k, flipped)


def _eigen_clusters(values: np.ndarray, rtol: float) -> list[list[int]]:
    clusters = [[0]]
    for i in range(1, len(values)):
        prev = values[clusters[-1][-1]]
        scale = max(abs(prev), abs(values[i]), 1e-12)
        if abs(values[i] - prev) <= rtol * scale:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


def degenerate_cluster_diagnostic(predicted, reference, ref_values, upto: int, rtol: float = 0.05) -> list[dict]:
    """Principal-angle cosines between predicted and reference spans, per eigenvalue cluster.

    Reference indices whose eigenvalues lie within ``rtol`` of each other
    form one cluster.  A predicted column that mixes directions inside a
    cluster scores low index-by-index but high here.
    """
    P = np.asarray(predicted, dtype=np.float64)[:, :upto]
    R = np.asarray(reference, dtype=np.float64)[:, :upto]
    out = []
    for idx in _eigen_clusters(np.asarray(ref_values, dtype=np.float64)[:upto], rtol):
        angles = sla.subspace_angles(P[:, idx], R[:, idx])
        cos = np.sort(np.cos(angles))[::-1]
        out.append({"indices": [i + 1 for i in idx], "cosines": cos.tolist(), "mean_cosine": float(cos.mean())})
    return out


def _k_slice(n: int, k_range) -> slice:
    lo, hi = (2, n) if k_range is None else k_range
    lo = max(int(lo), 2)  # index 1 is the zero eigenvalue and is always skipped
    hi = min(int(hi), n)
    if lo > hi:
        raise ContractError(f"empty eigenvalue range {k_range}")
    return slice(lo - 1, hi)


def eigenvalue_discrepancy(predicted, reference, k_range=None) -> tuple[float, float, np.ndarray]:
    """Mean and std of ``|hat - ref| / ref`` over 1-based ``k_range`` (inclusive).

    Index 1 (the zero eigenvalue) is always skipped.
    """
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    sl = _k_slice(min(len(p), len(r)), k_range)
    p, r = p[sl], r[sl]
    if np.any(r == 0):
        raise ContractError("reference eigenvalue is zero inside the comparison range")
    rel = np.abs(p - r) / np.abs(r)
    return float(rel.mean()), float(rel.std()), rel


def calibrate_scale(predicted, reference, k_range=None, method: str = "l1") -> float:
    """Single factor ``s`` so that ``s * predicted`` best matches ``reference``.

    ``"l1"`` minimizes the mean relative discrepancy itself (a weighted
    median), ``"lsq"`` the squared relative error, ``"first"`` matches the
    first compared index exactly.
    """
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    sl = _k_slice(min(len(p), len(r)), k_range)
    p, r = p[sl], r[sl]
    if np.any(r == 0) or np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise ContractError("calibration needs positive finite values")
    a = p / r
    if method == "first":
        return float(1.0 / a[0])
    if method == "lsq":
        return float(a.sum() / (a**2).sum())
    if method == "l1":
        # minimize sum_k a_k |s - 1/a_k|: weighted median of 1/a_k
        order = np.argsort(1.0 / a)
        cum = np.cumsum(a[order])
        j = int(np.searchsorted(cum, 0.5 * cum[-1]))
        return float(1.0 / a[order][j])
    raise ContractError(f"unknown calibration {method!r}")


# ------------------------------------------------------------ theorem suite


@dataclass
class CheckReport:
    name: str
    passed: bool
    seed: int | None
    params: dict
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add(self, what: str, value: float, tol: float, ok: bool) -> None:
        self.checks.append({"check": what, "value": float(value), "tol": float(tol), "passed": bool(ok)})
        self.passed = self.passed and bool(ok)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _random_spd(n: int, rng, lo: float = 0.5, hi: float = 10.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.sort(rng.uniform(lo, hi, n))
    return (U * lam) @ U.T, lam, U


def _random_orthonormal(n: int, k: int, rng) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return Q


def _worst_case(B: np.ndarray, L_inv_half: np.ndarray) -> float:
    # max over f^T L f <= 1 of ||(I - B B^T) f||^2
    n = len(L_inv_half)
    P = np.eye(n) - B @ B.T
    A = L_inv_half @ P @ L_inv_half
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])


def verify_minmax_theorem(
    n: int,
    k: int,
    seed: int = 0,
    samples: int = 10_000,
    draws: int = 100,
    tol: float = 1e-9,
    L=None,
) -> CheckReport:
    """Worst-case Euclidean residual over ``{f : f^T L f <= 1}`` is ``1/lambda_{k+1}``
    for the first ``k`` eigenvectors, and no orthonormal basis beats it.

    The worst case is sampled on the ellipsoid boundary and also evaluated
    at the analytic maximizer ``e_{k+1} / sqrt(lambda_{k+1})``.
    """
    if not 2 <= n <= 12 and L is None:
        raise ContractError("n must be in 2..12")
    rng = np.random.default_rng([seed, 1])
    if L is None:
        L, _, _ = _random_spd(n, rng)
    L = np.asarray(L, dtype=np.float64)
    n = len(L)
    if not 1 <= k < n:
        raise ContractError(f"need 1 <= k < n, got k={k}, n={n}")
    rep = CheckReport("minmax", True, seed, {"n": n, "k": k, "samples": samples, "draws": draws})
    lam, E = np.linalg.eigh(L)
    target = 1.0 / lam[k]
    B = E[:, :k]
    P = np.eye(n) - B @ B.T

    Lih = (E / np.sqrt(lam)) @ E.T
    u = rng.standard_normal((samples, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    f = u @ Lih  # rows on the boundary f^T L f = 1
    sampled = float(np.max(np.einsum("ij,ij->i", f @ P, f)))
    f_star = E[:, k] / np.sqrt(lam[k])
    analytic = float(f_star @ P @ f_star)
    worst = max(sampled, analytic)
    scale = max(1.0, target)
    rep.add("worst_case_equals_inverse_lambda", abs(worst - target), tol * scale, abs(worst - target) <= tol * scale)
    rep.add("samples_bounded_by_inverse_lambda", sampled - target, tol * scale, sampled <= target + tol * scale)

    degenerate = abs(lam[k] - lam[k - 1]) <= 1e-9 * max(1.0, lam[k])
    if degenerate:
        rep.notes.append("degenerate spectrum at k: other bases can tie the eigenbasis")
    best_other = math.inf
    for _ in range(draws):
        best_other = min(best_other, _worst_case(_random_orthonormal(n, k, rng), Lih))
    rep.add("no_basis_beats_eigenbasis", target - best_other, tol * scale, best_other >= target - tol * scale)
    return rep


def pca_expected_error(B, C) -> float:
    """``E ||f - B B^T f||^2 = tr(C) - sum_i b_i^T C b_i`` for orthonormal ``B``."""
    B = np.asarray(B, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    return float(np.trace(C) - np.einsum("ij,ik,kj->", B, C, B))


def _uniform_in_ellipsoid(L_inv_half: np.ndarray, samples: int, rng) -> np.ndarray:
    n = len(L_inv_half)
    g = rng.standard_normal((samples, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.uniform(0.0, 1.0, samples) ** (1.0 / n)
    return (g * r[:, None]) @ L_inv_half


def verify_pca_equivalence(n: int, k: int, samples: int = 100_000, seed: int = 0, draws: int = 100) -> CheckReport:
    """Monte-Carlo check of the expected-error identity on the uniform ``L``-ball.

    For ``f`` uniform in ``{f^T L f <= 1}`` the covariance is
    ``L^{-1} / (n + 2)``; the identity must hold within 3 standard errors
    for the eigenbasis and for a random basis, and the eigenbasis must
    have the smallest analytic expected error among ``draws`` random bases.
    """
    if not 2 <= n <= 10 or not 1 <= k < n:
        raise ContractError("need n <= 10 and 1 <= k < n")
    rng = np.random.default_rng([seed, 2])
    L, lam, U = _random_spd(n, rng)
    Lih = (U / np.sqrt(lam)) @ U.T
    C = np.linalg.inv(L) / (n + 2)
    f = _uniform_in_ellipsoid(Lih, samples, rng)
    rep = CheckReport("pca", True, seed, {"n": n, "k": k, "samples": samples, "draws": draws})

    B_eig = U[:, :k]  # smallest lambda = largest variance
    for label, B in (("eigenbasis", B_eig), ("random_basis", _random_orthonormal(n, k, rng))):
        resid = f - (f @ B) @ B.T
        err = np.einsum("ij,ij->i", resid, resid)
        mc, se = float(err.mean()), float(err.std(ddof=1) / math.sqrt(samples))
        expected = pca_expected_error(B, C)
        rep.add(f"identity_within_3se_{label}", abs(mc - expected), 3.0 * se, abs(mc - expected) <= 3.0 * se)

    best = pca_expected_error(B_eig, C)
    others = min(pca_expected_error(_random_orthonormal(n, k, rng), C) for _ in range(draws))
    rep.add("eigenbasis_minimal", best - others, 1e-12, best <= others + 1e-12)
    return rep


def verify_normalized_relation(n: int, seed: int = 0, tol: float = 1e-8, N=None) -> CheckReport:
    """Eigenpairs of ``N^-1 Sigma N^-1`` map to those of ``N^-2 Sigma`` via ``e = N^-1 e_norm``.

    ``Sigma`` is a random weighted graph Laplacian (so ``Sigma 1 = 0``) and
    ``N`` a positive diagonal; also checks that ``N 1`` spans the nullspace
    of the normalized operator.
    """
    if not 2 <= n <= 50:
        raise ContractError("n must be in 2..50")
    rng = np.random.default_rng([seed, 3])
    W = rng.uniform(0.1, 1.0, (n, n))
    W = np.triu(W, 1)
    W = W + W.T
    Sigma = np.diag(W.sum(axis=1)) - W
    d = rng.uniform(0.5, 2.0, n) if N is None else np.broadcast_to(np.asarray(N, dtype=np.float64), (n,)).copy()
    rep = CheckReport("normalized_relation", True, seed, {"n": n, "tol": tol})

    A_norm = Sigma / np.outer(d, d)
    lam, E_norm = np.linalg.eigh(0.5 * (A_norm + A_norm.T))
    A = Sigma / (d**2)[:, None]
    E = E_norm / d[:, None]
    scale = max(1.0, float(np.abs(lam).max()))
    # residuals are reported relative to the spectral radius
    resid = float((np.linalg.norm(A @ E - E * lam, axis=0) / np.linalg.norm(E, axis=0)).max()) / scale
    rep.add("mapped_vectors_are_eigenvectors", resid, tol, resid <= tol)

    direct = np.sort(np.linalg.eigvals(A).real)
    gap = float(np.abs(direct - lam).max()) / scale
    rep.add("eigenvalues_match_direct_solve", gap, tol, gap <= tol)

    null = d / np.linalg.norm(d)
    cos = abs(float(null @ E_norm[:, 0]))
    rep.add("N1_spans_nullspace", 1.0 - cos, tol, 1.0 - cos <= tol)
    return rep


def run_theorem_suite(
    seeds=range(20),
    n: int = 8,
    k: int = 3,
    samples: int = 100_000,
    minmax_samples: int = 10_000,
) -> dict:
    """All three theorem checks over ``seeds``; returns a JSON-ready dict."""
    reports = []
    for s in seeds:
        reports.append(verify_minmax_theorem(n, k, int(s), samples=minmax_samples))
    reports.append(verify_pca_equivalence(min(n, 10), min(k, min(n, 10) - 1), samples, int(next(iter(seeds), 0))))
    reports.append(verify_normalized_relation(max(n, 20), int(next(iter(seeds), 0))))
    return {
        "passed": all(r.passed for r in reports),
        "params": {"n": n, "k": k, "samples": samples, "seeds": [int(s) for s in seeds]},
        "reports": [r.to_dict() for r in reports],
    }

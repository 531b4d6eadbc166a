"""Low-dimensional embeddings, k-means and clustering-agreement metrics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components
from sklearn import metrics as skm

from .errors import ContractError, DimensionError
from .geometry import PointCloud, build_knn
from .oracle import generalized_eigens, graph_laplacian
from .spectral import SpectralBasis, unnormalized_basis

__all__ = [
    "Embedding",
    "ClusterReport",
    "KMeansResult",
    "oa_eigenmaps",
    "laplacian_eigenmaps",
    "pca_embed",
    "kmeans",
    "kmeans_fit",
    "clustering_metrics",
    "class_weighted_subsample",
    "aggregate_table",
    "write_aggregate_table",
    "write_embedding_csv",
    "scatter_svg",
]

METRIC_NAMES = ("nmi", "ari", "homogeneity", "completeness", "v_measure", "fmi")


@dataclass
class Embedding:
    """``index`` lists which input points the rows correspond to (all by default)."""

    coords: np.ndarray
    method: str
    source: str = ""
    index: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] < 1:
            raise DimensionError(f"embedding must be n x k with k >= 1, got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ContractError("embedding has non-finite coordinates")
        if self.index is None:
            self.index = np.arange(len(self.coords))

    @property
    def k(self) -> int:
        return self.coords.shape[1]


@dataclass
class ClusterReport:
    labels: np.ndarray
    nmi: float
    ari: float
    homogeneity: float
    completeness: float
    v_measure: float
    fmi: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


# ------------------------------------------------------------------ embeddings


def oa_eigenmaps(basis: SpectralBasis, k: int, source: str = "") -> Embedding:
    """Columns ``2..k+1`` of the unnormalized basis ``V = M^{-1/2} Q``."""
    if basis.K < 2:
        raise ContractError("basis has no non-trivial columns (K < 2)")
    if not 1 <= k <= basis.K - 1:
        raise ContractError(f"k={k} must be in 1..{basis.K - 1}")
    V = unnormalized_basis(basis)
    return Embedding(V[:, 1 : k + 1], "oa_eigenmaps", source)


def laplacian_eigenmaps(
    pc,
    knn_k: int,
    k: int,
    metric: str = "euclidean",
    min_component_fraction: float = 0.5,
    on_disconnected: str = "restrict",
) -> Embedding:
    """Bottom non-trivial generalized eigenvectors of the kNN graph Laplacian.

    A disconnected graph is restricted to its largest component (with a
    warning); ``Embedding.index`` then lists the retained points, and a
    component smaller than ``min_component_fraction`` of the cloud is an
    error.  ``on_disconnected="keep"`` embeds every point instead: the
    extra zero-eigenvalue vectors are then component indicators.
    """
    if on_disconnected not in ("restrict", "keep"):
        raise ContractError(f"unknown on_disconnected mode {on_disconnected!r}")
    pc = pc if isinstance(pc, PointCloud) else PointCloud(pc)
    graph = build_knn(pc, knn_k, metric)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        op = graph_laplacian(graph)
    index = np.arange(pc.n)
    if op.disconnected and on_disconnected == "restrict":
        _, comp = connected_components(op.S, directed=False)
        big = np.bincount(comp).argmax()
        index = np.flatnonzero(comp == big)
        if len(index) < min_component_fraction * pc.n:
            raise ContractError(
                f"kNN graph too fragmented: largest component has {len(index)} of {pc.n} points"
            )
        warnings.warn(f"kNN graph disconnected; embedding the largest component ({len(index)} points)", RuntimeWarning)
        op = graph_laplacian(build_knn(pc.subset(index), min(knn_k, len(index) - 1), metric))
    if k + 1 > op.n:
        raise ContractError(f"k={k} too large for {op.n} points")
    count = min(k + 2, op.n)
    _, v = generalized_eigens(op, count)
    lam = v.values
    degenerate = count > k + 1 and abs(lam[k + 1] - lam[k]) <= 1e-8 * max(1.0, abs(lam[k]))
    meta = {"eigenvalues": lam[: k + 1].tolist(), "degenerate": bool(degenerate), "components": op.n_components}
    return Embedding(v.vectors[:, 1 : k + 1], "laplacian_eigenmaps", f"knn={knn_k}", index, meta)


def pca_embed(pc, k: int) -> Embedding:
    """Top-``k`` principal components of the centered coordinates."""
    X = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    if not 1 <= k <= X.shape[1]:
        raise ContractError(f"k={k} must be in 1..{X.shape[1]}")
    Xc = X - X.mean(axis=0)
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    signs = np.sign(Vt[np.arange(len(Vt)), np.argmax(np.abs(Vt), axis=1)])
    U, Vt = U * signs, Vt * signs[:, None]
    var = s**2
    ratio = var / var.sum() if var.sum() > 0 else np.zeros_like(var)
    return Embedding(U[:, :k] * s[:k], "pca", meta={"explained_variance_ratio": ratio[:k].tolist()})


# --------------------------------------------------------------------- k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    reseeded: int = 0


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X**2).sum(1)[:, None] - 2.0 * X @ C.T + (C**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X: np.ndarray, c: int, rng) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, centers[0][None])[:, 0]
    for _ in range(1, c):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform(0.0, total)))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int, tol: float) -> KMeansResult:
    c = len(centers)
    prev = math.inf
    reseeded = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, centers)
        labels = np.argmin(d, axis=1)
        inertia = float(d[np.arange(len(X)), labels].sum())
        # the assignment step can only lower inertia for fixed centres
        if inertia > prev * (1.0 + 1e-12) + 1e-12:
            raise RuntimeError(f"k-means inertia increased at iteration {it}: {prev} -> {inertia}")
        new = np.zeros_like(centers)
        counts = np.bincount(labels, minlength=c)
        np.add.at(new, labels, X)
        for j in np.flatnonzero(counts == 0):
            # empty cluster: move its centre onto the worst-fit point
            far = int(np.argmax(d[np.arange(len(X)), labels]))
            new[j] = X[far]
            counts[j] = 1
            labels[far] = j
            reseeded += 1
        new[counts > 0] /= counts[counts > 0, None]
        shift = float(np.abs(new - centers).max())
        centers = new
        if prev - inertia <= tol * max(inertia, 1e-300) and shift <= 1e-12:
            break
        prev = inertia
    d = _sq_dists(X, centers)
    labels = np.argmin(d, axis=1)
    return KMeansResult(labels, centers, float(d[np.arange(len(X)), labels].sum()), it, reseeded)


def kmeans_fit(X, c: int, restarts: int = 10, seed: int = 0, max_iter: int = 300, tol: float = 1e-10) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; keeps the lowest-inertia restart.

    An empty cluster has its centre moved to the point currently farthest
    from its own centre.
    """
    X = X.coords if isinstance(X, Embedding) else np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if not 1 <= c <= n:
        raise ContractError(f"need 1 <= c <= n, got c={c}, n={n}")
    best = None
    for r in range(max(1, restarts)):
        rng = np.random.default_rng([seed, r])
        res = _lloyd(X, _kmeans_pp(X, c, rng), max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def kmeans(X, c: int, restarts: int = 10, seed: int = 0) -> np.ndarray:
    return kmeans_fit(X, c, restarts, seed).labels


# --------------------------------------------------------------------- metrics


def clustering_metrics(pred, true) -> ClusterReport:
    """NMI (arithmetic), ARI, homogeneity, completeness, V-measure and FMI."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise DimensionError(f"label arrays differ: {pred.shape} vs {true.shape}")
    h, c, v = skm.homogeneity_completeness_v_measure(true, pred)
    return ClusterReport(
        pred.copy(),
        float(skm.normalized_mutual_info_score(true, pred, average_method="arithmetic")),
        float(skm.adjusted_rand_score(true, pred)),
        float(h),
        float(c),
        float(v),
        float(skm.fowlkes_mallows_score(true, pred)),
    )


# ------------------------------------------------------------------ sampling


def _normalized_entropy(w: np.ndarray) -> float:
    p = w[w > 0]
    return float(-(p * np.log(p)).sum() / math.log(len(w))) if len(w) > 1 else 0.0


def class_weighted_subsample(
    labels,
    size: int,
    seed: int = 0,
    entropy_range: tuple = (0.01, 0.1),
    concentration: float = 0.05,
    max_tries: int = 10_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Imbalanced subsample: random class weights, then weighted draws without replacement.

    Class weights come from a symmetric Dirichlet and are redrawn until
    ``1 - H(w) / log(C)`` falls inside ``entropy_range``, i.e. the range
    bounds the distance from a balanced split.  Returns ``(indices, weights)``.
    """
    labels = np.asarray(labels)
    classes, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if size > len(labels):
        raise ContractError(f"cannot draw {size} of {len(labels)} points without replacement")
    rng = np.random.default_rng([seed, 7])
    lo, hi = entropy_range
    for _ in range(max_tries):
        w = rng.dirichlet(np.full(len(classes), 1.0 / concentration))
        gap = 1.0 - _normalized_entropy(w)
        if lo <= gap <= hi:
            break
    else:
        raise ContractError(f"no class weights with entropy gap in {entropy_range} after {max_tries} tries")
    p = w[inv] / counts[inv]
    p = p / p.sum()
    if np.count_nonzero(p) < size:
        raise ContractError("not enough points with non-zero weight")
    idx = np.sort(rng.choice(len(labels), size=size, replace=False, p=p))
    return idx, w


# ---------------------------------------------------------------------- output


def write_embedding_csv(emb: Embedding, path, labels=None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"x{j}" for j in range(emb.k)] + (["label"] if labels is not None else []))
        for r, i in enumerate(emb.index):
            row = [int(i)] + [format(float(x), ".17g") for x in emb.coords[r]]
            if labels is not None:
                row.append(int(labels[r]))
            w.writerow(row)
    return path


def aggregate_table(runs: dict) -> dict:
    """``{method: [ {metric: value}, ... ]}`` -> ``{method: {metric: (mean, std)}}``."""
    out = {}
    for method, rows in runs.items():
        out[method] = {}
        for name in METRIC_NAMES:
            vals = np.array([r[name] for r in rows], dtype=np.float64)
            out[method][name] = (float(vals.mean()), float(vals.std()))
    return out


def write_aggregate_table(runs: dict, path, digits: int = 3) -> Path:
    """One row per method, one ``mean ± std`` column per metric."""
    table = aggregate_table(runs)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "runs"] + list(METRIC_NAMES))
        for method, stats in table.items():
            cells = [f"{m:.{digits}f} ± {s:.{digits}f}" for m, s in (stats[k] for k in METRIC_NAMES)]
            w.writerow([method, len(runs[method])] + cells)
    return path


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def scatter_svg(coords, labels=None, path=None, size: int = 480, radius: float = 2.5, title: str = "") -> str:
    """Plain-text SVG scatter of the first two columns (1D data plotted against index)."""
    X = np.asarray(coords, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] == 1:
        X = np.column_stack([np.arange(len(X)), X[:, 0]])
    X = X[:, :2]
    pad = 20.0
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    P = pad + (X - lo) / span * (size - 2 * pad)
    P[:, 1] = size - P[:, 1]
    labels = np.zeros(len(X), dtype=int) if labels is None else np.asarray(labels)
    _, lab = np.unique(labels, return_inverse=True)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<path d="M{pad} {size - pad} H{size - pad} M{pad} {size - pad} V{pad}" stroke="black" fill="none"/>',
    ]
    if title:
        parts.append(f'<text x="{size / 2}" y="14" text-anchor="middle" font-size="12">{title}</text>')
    for (x, y), l in zip(P, lab):
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" fill="{_PALETTE[l % len(_PALETTE)]}"/>')
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(svg)
    return svg

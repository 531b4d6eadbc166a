"""Random smooth probe functions on a point cloud.

Probes are uniform noise on ``[-1, 1]`` pushed through ``T`` rounds of
row-stochastic Gaussian averaging over a kNN graph.  The distribution of the
result is what implicitly picks the operator whose eigenbasis gets learned.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ContractError, SmoothingUnderflowError
from .geometry import KnnGraph, PointCloud, build_knn

__all__ = [
    "ProbeConfig",
    "ProbeBatch",
    "Smoother",
    "sample_raw_signals",
    "build_smoother",
    "generate_probes",
    "PRESETS",
]


@dataclass(frozen=True)
class ProbeConfig:
    """``sigma`` is a float, or a ``(lo, hi)`` pair drawn uniformly per probe."""

    m: int = 256
    smoothing_iterations: int = 10
    sigma: float | tuple = 0.1
    knn_k: int = 16
    metric: str = "euclidean"
    self_loops: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ContractError("probe count m must be >= 1")
        if self.smoothing_iterations < 0:
            raise ContractError("smoothing_iterations must be >= 0")
        if self.knn_k < 1:
            raise ContractError("knn_k must be >= 1")
        lo, hi = self.sigma_range
        if lo <= 0 or lo > hi:
            raise ContractError(f"invalid sigma {self.sigma!r}")

    @property
    def sigma_range(self) -> tuple[float, float]:
        if isinstance(self.sigma, (tuple, list)):
            lo, hi = self.sigma
            return float(lo), float(hi)
        return float(self.sigma), float(self.sigma)

    @property
    def ranged(self) -> bool:
        return isinstance(self.sigma, (tuple, list))

    def replace(self, **kw) -> "ProbeConfig":
        d = asdict(self)
        d.update(kw)
        if isinstance(d["sigma"], list):
            d["sigma"] = tuple(d["sigma"])
        return ProbeConfig(**d)


# Presets.  seg1d: 1D toy (k=16, paper); sphere3d: overfit setting
# (k=10, 40 rounds, sigma in [0.01, 0.2], no self loops); eig_infer: the
# fixed inference-time probes (k=70, 48 rounds, sigma=0.101).
PRESETS = {
    "seg1d": ProbeConfig(m=256, smoothing_iterations=10, sigma=0.1, knn_k=16, self_loops=True),
    "sphere3d": ProbeConfig(m=256, smoothing_iterations=40, sigma=(0.01, 0.2), knn_k=10, self_loops=False),
    "eig_infer": ProbeConfig(m=2048, smoothing_iterations=48, sigma=0.101, knn_k=70, self_loops=True),
}


@dataclass
class ProbeBatch:
    signals: np.ndarray
    config: ProbeConfig
    sigmas: np.ndarray = field(default=None)

    @property
    def m(self) -> int:
        return self.signals.shape[0]

    @property
    def n(self) -> int:
        return self.signals.shape[1]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe", "sigma"] + [f"p{i}" for i in range(self.n)])
            for i, row in enumerate(self.signals):
                w.writerow([i, repr(float(self.sigmas[i]))] + [repr(float(x)) for x in row])
        return path


@dataclass
class Smoother:
    """Row-stochastic averaging operator stored by neighbour lists.

    Row ``i`` mixes ``ids[i, :]`` with ``weights[i, :]`` (summing to 1).
    """

    ids: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def to_sparse(self) -> sparse.csr_matrix:
        rows = np.repeat(np.arange(self.n), self.ids.shape[1])
        return sparse.csr_matrix((self.weights.ravel(), (rows, self.ids.ravel())), shape=(self.n, self.n))

    def dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def apply(self, signals: np.ndarray, iterations: int = 1) -> np.ndarray:
        """Apply ``iterations`` rounds to each row of ``signals`` (m x n)."""
        return _smooth(np.atleast_2d(signals), self.ids, self.weights, iterations)


def _smooth(f: np.ndarray, ids: np.ndarray, weights: np.ndarray, iterations: int) -> np.ndarray:
    # weights is (n, kk) shared by all probes, or (m, n, kk) per probe
    if weights.ndim == 3 and iterations > 0:
        return _smooth_per_probe(f, ids, weights, iterations)
    for _ in range(iterations):
        f = (f[:, ids] * weights).sum(axis=-1)
    return f


def _smooth_per_probe(f: np.ndarray, ids: np.ndarray, weights: np.ndarray, iterations: int) -> np.ndarray:
    # one block-diagonal sparse operator over all probes; far cheaper than
    # gathering an (m, n, kk) array every round
    m, n = f.shape
    kk = ids.shape[1]
    offset = (np.arange(m) * n)[:, None, None]
    rows = np.broadcast_to(np.arange(m * n).reshape(m, n, 1), (m, n, kk))
    cols = ids[None, :, :] + offset
    S = sparse.csr_matrix((weights.ravel(), (rows.ravel(), cols.ravel())), shape=(m * n, m * n))
    x = f.ravel()
    for _ in range(iterations):
        x = S @ x
    return x.reshape(m, n)


def _kernel_rows(dist: np.ndarray, sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    w = np.exp(-(dist**2) / (2.0 * sigma**2))
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise SmoothingUnderflowError("all Gaussian weights underflowed in some row; increase sigma")
    return w / total


def _stream_key(seed, stream, tag: int) -> list:
    return [int(seed), *(int(s) for s in np.atleast_1d(stream)), tag]


def sample_raw_signals(n: int, m: int, seed: int, stream=0) -> np.ndarray:
    """I.i.d. uniform ``[-1, 1]`` noise, shape ``(m, n)``, keyed by (seed, stream).

    ``stream`` is an int or a tuple of ints (e.g. ``(purpose, step)``).
    """
    if n < 1 or m < 1:
        raise ContractError("n and m must be >= 1")
    return np.random.default_rng(_stream_key(seed, stream, 0)).uniform(-1.0, 1.0, size=(m, n))


def build_smoother(graph: KnnGraph, sigma: float) -> Smoother:
    """Gaussian weights ``exp(-d^2 / 2 sigma^2)`` over each neighbour list, rows normalised."""
    if sigma <= 0:
        raise ContractError("sigma must be > 0")
    return Smoother(graph.neighbor_ids, _kernel_rows(graph.distances, sigma))


def generate_probes(
    pc: PointCloud,
    cfg: ProbeConfig,
    stream=0,
    graph: KnnGraph | None = None,
) -> ProbeBatch:
    """Draw ``cfg.m`` smoothed probes for stream ``stream`` of ``cfg.seed``.

    Pass ``graph`` to reuse a kNN graph across calls; it must match
    ``cfg.knn_k``, ``cfg.metric`` and ``cfg.self_loops``.
    """
    if cfg.knn_k >= pc.n:
        raise ContractError(f"knn_k={cfg.knn_k} must be < n={pc.n}")
    if graph is None:
        graph = build_knn(pc, cfg.knn_k, cfg.metric, cfg.self_loops)
    raw = sample_raw_signals(pc.n, cfg.m, cfg.seed, stream)
    lo, hi = cfg.sigma_range
    if hi > lo:
        sig_rng = np.random.default_rng(_stream_key(cfg.seed, stream, 1))
        sigmas = sig_rng.uniform(lo, hi, size=cfg.m)
        weights = _kernel_rows(graph.distances[None], sigmas[:, None, None])
    else:
        sigmas = np.full(cfg.m, lo)
        weights = _kernel_rows(graph.distances, lo)
    signals = _smooth(raw, graph.neighbor_ids, weights, cfg.smoothing_iterations)
    return ProbeBatch(signals, cfg, sigmas)

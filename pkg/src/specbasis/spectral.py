"""Orthonormal bases, mass extraction and progressive M-orthogonal projection.

A basis ``Q`` (n x K, Euclidean-orthonormal) is read as the leading
eigenvectors of a symmetric normalized operator.  Its first column gives the
diagonal metric, ``mass = q1 * q1``, and probes are projected onto the
nested spans ``Q[:, :k]`` orthogonally in the ``mass``-weighted inner
product.  Errors are measured with the plain 2-norm; that mismatch is
intentional (it is what lets the metric be learned without supervision).

Worst-case errors over a probe batch give eigenvalue estimates through
``lambda_{k+1} = 1 / max_i e_k^(i)``.  Note this uses the Euclidean error,
whereas the min-max optimality result it comes from is stated in the
operator norm; the estimator follows the Euclidean form on purpose.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from . import ndiff as nd
from .errors import ContractError, DimensionError
from .ndiff import Tensor

__all__ = [
    "EPS_MASS",
    "SpectralBasis",
    "ReconstructionReport",
    "LazyProjections",
    "orthonormalize",
    "extract_mass",
    "progressive_project",
    "progressive_project_tensor",
    "reconstruction_loss",
    "estimate_eigenvalues",
    "isotonic_nondecreasing",
    "unnormalized_basis",
    "reconstruct_operator",
    "spectral_filter",
    "basis_from_features",
    "save_basis",
    "load_basis",
]

EPS_MASS = 1e-8


@dataclass
class SpectralBasis:
    Q: np.ndarray
    mass: np.ndarray
    lambdas: np.ndarray | None = None
    clamped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.Q.shape[1]

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def orthonormality_error(self) -> float:
        return float(np.abs(self.Q.T @ self.Q - np.eye(self.K)).max())


@dataclass
class ReconstructionReport:
    """Per-k statistics of ``e_k^(i) = ||f_i - proj_k f_i||^2`` over probes."""

    mean_error: np.ndarray
    max_error: np.ndarray
    worst_probe: np.ndarray
    errors: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.mean_error)

    @classmethod
    def from_errors(cls, errors: np.ndarray, keep: bool = True) -> "ReconstructionReport":
        errors = np.asarray(errors, dtype=np.float64)
        worst = np.argmax(errors, axis=1)
        return cls(
            errors.mean(axis=1),
            errors[np.arange(len(errors)), worst],
            worst,
            errors if keep else None,
        )


class LazyProjections:
    """``proj[k]`` is the (m x n) projection of every probe onto ``Q[:, :k]``."""

    def __init__(self, Q, mass, probes):
        self._Q, self._mass, self._F = Q, mass, probes

    def __len__(self):
        return self._Q.shape[1]

    def __getitem__(self, k: int) -> np.ndarray:
        if not 1 <= k <= len(self):
            raise IndexError(k)
        return _project_k(self._Q, self._mass, self._F, k)


# -------------------------------------------------------------- basis pieces


def orthonormalize(features):
    """QR of the raw per-point features (tensor or array), ``diag(R) > 0``."""
    t = features if isinstance(features, Tensor) else nd.tensor(features)
    n, K = t.shape
    if n <= K:
        raise DimensionError(f"need more points than basis vectors, got n={n}, K={K}")
    return nd.qr_reduced(t)


def extract_mass(Q, eps: float = EPS_MASS):
    """``max(Q[:, 0]**2, eps)`` and the number of clamped entries.

    Accepts an array or a :class:`Tensor`; a tensor input yields a tensor
    mass that stays on the tape.
    """
    if isinstance(Q, Tensor):
        q1 = nd.columns(Q, 0, 1)
        sq = nd.mul(q1, q1)
        clamped = int(np.count_nonzero(sq.value < eps))
        m = nd.clamp_min(sq, eps)
        return nd.reshape(m, (Q.shape[0],)), clamped
    Q = np.asarray(Q)
    sq = Q[:, 0] ** 2
    return np.maximum(sq, eps), int(np.count_nonzero(sq < eps))


# ---------------------------------------------------------------- projection


def _check_inputs(Q, mass, probes):
    Q = np.asarray(Q, dtype=np.float64)
    mass = np.asarray(mass, dtype=np.float64)
    F = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if Q.ndim != 2 or mass.shape != (Q.shape[0],) or F.shape[1] != Q.shape[0]:
        raise DimensionError(f"shapes Q{Q.shape}, mass{mass.shape}, probes{F.shape} disagree")
    if np.any(mass <= 0):
        raise ContractError("mass must be positive")
    return Q, mass, F


def _chol(G):
    return nd._cholesky_with_jitter(G)[0]


def _project_k(Q, mass, F, k):
    Qk = Q[:, :k]
    MQk = Qk * mass[:, None]
    G = Qk.T @ MQk
    c = sla.cho_solve(_chol(G), MQk.T @ F.T)
    return (Qk @ c).T


def progressive_project(Q, mass, probes, method: str = "reference", keep_errors: bool = True):
    """Project every probe onto ``Q[:, :k]`` for k = 1..K.

    ``method="reference"`` solves the k x k Gram system separately for each
    k.  ``method="prefix"`` factors ``G^(K)`` once: with ``G = L L^T`` the
    columns of ``W = Q L^{-T}`` are M-orthonormal and nested, so every
    projection is a running sum over the coefficients ``W^T M f``.

    Returns ``(LazyProjections, ReconstructionReport)``.
    """
    Q, mass, F = _check_inputs(Q, mass, probes)
    K = Q.shape[1]
    errors = np.empty((K, F.shape[0]))
    if method == "reference":
        for k in range(1, K + 1):
            r = F - _project_k(Q, mass, F, k)
            errors[k - 1] = np.einsum("ij,ij->i", r, r)
    elif method == "prefix":
        G = Q.T @ (Q * mass[:, None])
        L = _chol(G)[0]
        L = np.tril(L)
        W = sla.solve_triangular(L, Q.T, lower=True).T
        C = (W * mass[:, None]).T @ F.T
        r = F.T.copy()
        for k in range(K):
            r -= np.outer(W[:, k], C[k])
            errors[k] = np.einsum("ij,ij->j", r, r)
    else:
        raise ContractError(f"unknown projection method {method!r}")
    return LazyProjections(Q, mass, F), ReconstructionReport.from_errors(errors, keep_errors)


def progressive_project_tensor(Q: Tensor, mass: Tensor, probes: np.ndarray) -> list:
    """Differentiable per-k projection errors; element k-1 has shape (m,)."""
    F = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    n, K = Q.shape
    if F.shape[1] != n or mass.shape != (n,):
        raise DimensionError(f"shapes Q{Q.shape}, mass{mass.shape}, probes{F.shape} disagree")
    # ||f - Q_k c||^2 = ||f||^2 - 2 (Q_k^T f) . c + c^T (Q_k^T Q_k) c holds for any
    # Q, so the expansion is exact and never forms the n x m residuals
    MQ = nd.scale_rows(Q, mass)
    Bt = nd.matmul(F, MQ)  # (m, K): row i holds q_j^T M f_i
    Pt = nd.matmul(F, Q)  # (m, K): row i holds q_j^T f_i
    H = nd.matmul(nd.transpose(Q), Q)
    f_sq = nd.tensor(np.einsum("ij,ij->i", F, F))
    out = []
    for k in range(1, K + 1):
        Qk = nd.columns(Q, 0, k)
        G = nd.matmul(nd.transpose(Qk), nd.columns(MQ, 0, k))
        b = nd.transpose(nd.columns(Bt, 0, k))
        c = nd.spd_solve(G, b)
        Hk = nd.columns(nd.transpose(nd.columns(H, 0, k)), 0, k)
        cross = nd.reduce("sum", nd.mul(nd.transpose(nd.columns(Pt, 0, k)), c), axis=0)
        quad = nd.reduce("sum", nd.mul(c, nd.matmul(Hk, c)), axis=0)
        out.append(nd.add(nd.sub(f_sq, nd.scale(cross, 2.0)), quad))
    return out


def reconstruction_loss(errors) -> Tensor:
    """Mean of ``e_k^(i)`` over all k and probes.

    ``errors`` may be a list of per-k tensors (the training path), a
    ``(K, m)`` array, or a :class:`ReconstructionReport` with errors kept.
    """
    if isinstance(errors, ReconstructionReport):
        if errors.errors is None:
            return nd.tensor(errors.mean_error.mean())
        errors = errors.errors
    if isinstance(errors, (list, tuple)) and errors and isinstance(errors[0], Tensor):
        K, m = len(errors), errors[0].shape[0]
        total = nd.reduce("sum", errors[0])
        for e in errors[1:]:
            total = nd.add(total, nd.reduce("sum", e))
        return nd.scale(total, 1.0 / (m * K))
    arr = np.asarray(errors, dtype=np.float64)
    return nd.tensor(arr.sum() / arr.size)


# ---------------------------------------------------------------- eigenvalues


def isotonic_nondecreasing(y) -> np.ndarray:
    """Least-squares non-decreasing fit (pool adjacent violators)."""
    vals, weights, sizes = [], [], []
    for v in np.asarray(y, dtype=np.float64):
        vals.append(v)
        weights.append(1.0)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            w = weights[-2] + weights[-1]
            v = (vals[-2] * weights[-2] + vals[-1] * weights[-1]) / w
            s = sizes[-2] + sizes[-1]
            del vals[-1], weights[-1], sizes[-1]
            vals[-1], weights[-1], sizes[-1] = v, w, s
    return np.repeat(vals, sizes)


def estimate_eigenvalues(report, monotonic: bool = False, extra: bool = False) -> np.ndarray:
    """``lambda_1 = 0`` and ``lambda_{k+1} = 1 / e_max[k]``.

    With ``K`` worst-case errors this yields ``K`` values; ``extra=True``
    also converts the last error, giving ``K + 1``.  Zero errors map to
    ``inf`` rather than raising.
    """
    e_max = report.max_error if isinstance(report, ReconstructionReport) else np.asarray(report, float)
    used = e_max if extra else e_max[:-1]
    with np.errstate(divide="ignore"):
        inv = np.where(used > 0, 1.0 / np.where(used > 0, used, 1.0), np.inf)
    lam = np.concatenate([[0.0], inv])
    if monotonic:
        finite = np.isfinite(lam)
        lam[finite] = isotonic_nondecreasing(lam[finite])
    return lam


# -------------------------------------------------------------- post-processing


def unnormalized_basis(basis: SpectralBasis) -> np.ndarray:
    """``V = M^{-1/2} Q``; columns are M-orthonormal."""
    return basis.Q / np.sqrt(basis.mass)[:, None]


def reconstruct_operator(basis: SpectralBasis, which: str = "normalized") -> np.ndarray:
    """``Q diag(lambda) Q^T`` or its similarity transform ``M^{-1/2} (.) M^{1/2}``."""
    if basis.lambdas is None:
        raise ContractError("basis has no eigenvalue estimates")
    lam = np.asarray(basis.lambdas, dtype=np.float64)[: basis.K]
    if len(lam) != basis.K or not np.all(np.isfinite(lam)):
        raise ContractError("need K finite eigenvalues")
    A = (basis.Q * lam) @ basis.Q.T
    A = 0.5 * (A + A.T)
    if which == "normalized":
        return A
    if which == "unnormalized":
        s = np.sqrt(basis.mass)
        return A * (s[None, :] / s[:, None])
    raise ContractError(f"unknown operator view {which!r}")


def spectral_filter(basis: SpectralBasis, signal, k: int) -> np.ndarray:
    """M-orthogonal projection of each column of ``signal`` onto ``Q[:, :k]``."""
    if not 1 <= k <= basis.K:
        raise ContractError(f"k={k} outside 1..{basis.K}")
    sig = np.asarray(signal, dtype=np.float64)
    flat = sig.ndim == 1
    sig2 = sig[:, None] if flat else sig
    if sig2.shape[0] != basis.n:
        raise DimensionError("signal rows must match basis points")
    out = _project_k(basis.Q, basis.mass, sig2.T, k).T
    return out[:, 0] if flat else out


def basis_from_features(features, lambdas=None, **meta) -> SpectralBasis:
    with nd.no_grad():
        Q, _ = orthonormalize(np.asarray(features, dtype=np.float64))
    mass, clamped = extract_mass(Q.value)
    return SpectralBasis(Q.value, mass, lambdas, clamped, dict(meta))


# --------------------------------------------------------------------- storage


def _write_matrix(path: Path, arr) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    with open(path, "w") as fh:
        for row in arr:
            fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    return np.array(rows, dtype=np.float64)


def save_basis(basis: SpectralBasis, directory, config_hash: str = "") -> Path:
    """Write ``Q.csv``, ``mass.csv``, ``lambdas.csv`` and ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_matrix(d / "Q.csv", basis.Q)
    _write_matrix(d / "mass.csv", basis.mass[:, None])
    if basis.lambdas is not None:
        _write_matrix(d / "lambdas.csv", np.asarray(basis.lambdas)[:, None])
    digest = hashlib.sha256((d / "Q.csv").read_bytes()).hexdigest()
    manifest = {
        "n": basis.n,
        "K": basis.K,
        "clamped": int(basis.clamped),
        "config_hash": config_hash,
        "q_sha256": digest,
        "meta": basis.meta,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return d


def load_basis(directory) -> SpectralBasis:
    d = Path(directory)
    Q = _read_matrix(d / "Q.csv")
    mass = _read_matrix(d / "mass.csv")[:, 0]
    lam = _read_matrix(d / "lambdas.csv")[:, 0] if (d / "lambdas.csv").exists() else None
    manifest = json.loads((d / "manifest.json").read_text()) if (d / "manifest.json").exists() else {}
    return SpectralBasis(Q, mass, lam, int(manifest.get("clamped", 0)), manifest.get("meta", {}))

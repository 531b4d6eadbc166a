"""Point clouds, meshes, neighbourhood graphs and synthetic manifolds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ContractError, DegenerateGeometryError, DimensionError, ParseError

__all__ = [
    "PointCloud",
    "TriangleMesh",
    "KnnGraph",
    "load_pointcloud",
    "save_pointcloud",
    "load_off_mesh",
    "save_off_mesh",
    "normalize_unit_sphere",
    "fps_indices",
    "fps_sample",
    "build_knn",
    "synth_manifold",
    "icosphere",
    "euler_characteristic",
]


@dataclass
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None
    name: str = "cloud"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
            raise ContractError(f"a point cloud needs n >= 2 points in d >= 1 dims, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ContractError("point coordinates must be finite")
        self.points = pts
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (pts.shape[0],):
                raise DimensionError("labels must have one entry per point")
            self.labels = labels.astype(np.int64)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], labels, self.name)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        nv = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= nv):
            raise ContractError("face index out of range")
        f = self.faces
        bad = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
        if bad.size:
            raise DegenerateGeometryError(f"face {bad[0]} repeats a vertex", index=int(bad[0]))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted (i < j)."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


@dataclass
class KnnGraph:
    """Exact k-nearest-neighbour lists.

    ``neighbor_ids`` has ``k`` columns, or ``k + 1`` when ``self_loops`` is
    set, in which case column 0 is the point itself at distance 0.
    """

    k: int
    neighbor_ids: np.ndarray
    distances: np.ndarray
    metric: str = "euclidean"
    self_loops: bool = False

    @property
    def n(self) -> int:
        return self.neighbor_ids.shape[0]

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row, column and distance arrays of all non-self edges."""
        ids, dist = self.neighbor_ids, self.distances
        if self.self_loops:
            ids, dist = ids[:, 1:], dist[:, 1:]
        rows = np.repeat(np.arange(self.n), ids.shape[1])
        return rows, ids.reshape(-1), dist.reshape(-1)


# --------------------------------------------------------------------------- I/O


def load_pointcloud(path, fmt: str | None = None, name: str | None = None) -> PointCloud:
    """Read whitespace XYZ or CSV.

    A CSV header is detected when the first row does not parse as numbers; a
    final header column named ``label`` is read as integer class ids.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "xyz"
    if fmt not in ("xyz", "csv"):
        raise ContractError(f"unknown point format {fmt!r}")
    if not path.exists():
        raise FileNotFoundError(path)
    rows, labels, width = [], [], None
    has_label = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",") if fmt == "csv" else line.split()
            parts = [p.strip() for p in parts]
            if fmt == "csv" and not rows and width is None and not _is_numeric(parts[0]):
                header = [p.lower() for p in parts]
                has_label = header[-1] == "label"
                width = len(parts)
                continue
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(f"expected {width} columns, found {len(parts)}", line=lineno)
            try:
                if has_label:
                    rows.append([float(p) for p in parts[:-1]])
                    labels.append(int(float(parts[-1])))
                else:
                    rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"cannot parse number ({exc})", line=lineno) from None
    if len(rows) < 2:
        raise ParseError(f"{path} holds {len(rows)} points; at least 2 needed")
    return PointCloud(np.array(rows), np.array(labels) if has_label else None, name or path.stem)


def _is_numeric(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def save_pointcloud(pc: PointCloud, path, fmt: str | None = None) -> Path:
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "xyz"
    with open(path, "w") as fh:
        if fmt == "xyz":
            for p in pc.points:
                fh.write(" ".join(repr(float(x)) for x in p) + "\n")
        else:
            cols = [f"x{i}" for i in range(pc.d)] if pc.d != 3 else ["x", "y", "z"]
            if pc.labels is not None:
                cols.append("label")
            fh.write(",".join(cols) + "\n")
            for i, p in enumerate(pc.points):
                vals = [repr(float(x)) for x in p]
                if pc.labels is not None:
                    vals.append(str(int(pc.labels[i])))
                fh.write(",".join(vals) + "\n")
    return path


def load_off_mesh(path) -> TriangleMesh:
    """Parse an OFF file; polygons with more than three corners are fan-split."""
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                tokens.append((lineno, line))
    if not tokens or not tokens[0][1].startswith("OFF"):
        raise ParseError("missing OFF header", line=tokens[0][0] if tokens else 1)
    head = tokens[0][1][3:].split()
    pos = 1
    if not head:
        if len(tokens) < 2:
            raise ParseError("missing element counts")
        head = tokens[1][1].split()
        pos = 2
    try:
        nv, nf = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise ParseError("malformed element counts", line=tokens[pos - 1][0]) from None
    if len(tokens) < pos + nv + nf:
        raise ParseError(f"expected {nv} vertices and {nf} faces, file is short")
    verts = []
    for lineno, line in tokens[pos : pos + nv]:
        parts = line.split()
        try:
            verts.append([float(x) for x in parts[:3]])
        except ValueError:
            raise ParseError("bad vertex", line=lineno) from None
        if len(parts) < 3:
            raise ParseError("vertex needs 3 coordinates", line=lineno)
    faces = []
    for lineno, line in tokens[pos + nv : pos + nv + nf]:
        try:
            parts = [int(x) for x in line.split()]
        except ValueError:
            raise ParseError("bad face", line=lineno) from None
        cnt = parts[0]
        idx = parts[1 : 1 + cnt]
        if cnt < 3 or len(idx) != cnt:
            raise ParseError("face vertex count mismatch", line=lineno)
        for j in range(1, cnt - 1):
            faces.append([idx[0], idx[j], idx[j + 1]])
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def save_off_mesh(mesh: TriangleMesh, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    return path


def euler_characteristic(mesh: TriangleMesh) -> int:
    return mesh.n_vertices - len(mesh.edges()) + mesh.n_faces


# ----------------------------------------------------------------- preprocessing


def normalize_unit_sphere(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1."""
    centered = pc.points - pc.points.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius == 0:
        raise DegenerateGeometryError("all points coincide")
    return PointCloud(centered / radius, pc.labels, pc.name)


def fps_indices(points: np.ndarray, target_n: int, seed: int | None = 0) -> np.ndarray:
    """Greedy farthest-point order; the first index is drawn from ``seed``."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if target_n > n:
        raise ContractError(f"cannot sample {target_n} of {n} points")
    if target_n <= 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    out = np.empty(target_n, dtype=np.int64)
    out[0] = rng.integers(n)
    best = np.sum((points - points[out[0]]) ** 2, axis=1)
    for i in range(1, target_n):
        nxt = int(np.argmax(best))
        out[i] = nxt
        np.minimum(best, np.sum((points - points[nxt]) ** 2, axis=1), out=best)
    return out


def fps_sample(pc: PointCloud, target_n: int, seed: int | None = 0) -> PointCloud:
    return pc.subset(fps_indices(pc.points, target_n, seed))


def build_knn(pc, k: int, metric: str = "euclidean", self_loops: bool = False, chunk: int = 512) -> KnnGraph:
    """Exact brute-force kNN; ties break toward the lower index."""
    points = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    n = len(points)
    if metric not in ("euclidean", "cosine"):
        raise ContractError(f"unknown metric {metric!r}")
    if not 1 <= k < n:
        raise ContractError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    if metric == "cosine":
        zero = np.flatnonzero(np.linalg.norm(points, axis=1) == 0)
        if zero.size:
            raise DegenerateGeometryError(f"zero vector at index {zero[0]} under cosine metric", index=int(zero[0]))
    ids = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for s in range(0, n, chunk):
        rows = np.arange(s, min(s + chunk, n))
        d = cdist(points[rows], points, metric=metric)
        d[np.arange(len(rows)), rows] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        ids[rows] = order
        dist[rows] = np.maximum(np.take_along_axis(d, order, axis=1), 0.0)
    if self_loops:
        ids = np.hstack([np.arange(n)[:, None], ids])
        dist = np.hstack([np.zeros((n, 1)), dist])
    return KnnGraph(k, ids, dist, metric, self_loops)


# -------------------------------------------------------------------- synthetics


def icosphere(level: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron: ``10 * 4**level + 2`` vertices."""
    if level < 0:
        raise ContractError("icosphere level must be >= 0")
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(radius * np.array(verts), np.array(faces, dtype=np.int64))


def _torus_mesh(n_major: int, n_minor: int, R: float, r: float) -> TriangleMesh:
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([(R + r * np.cos(vv)) * np.cos(uu), (R + r * np.cos(vv)) * np.sin(uu), r * np.sin(vv)], -1)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b = idx[i, j], idx[(i + 1) % n_major, j]
            c, d = idx[(i + 1) % n_major, (j + 1) % n_minor], idx[i, (j + 1) % n_minor]
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(pts.reshape(-1, 3), np.array(faces))


def synth_manifold(kind: str, params: dict | None = None, seed: int = 0, meshed: bool = False):
    """Deterministic synthetic samples.

    Returns a :class:`PointCloud`, or ``(PointCloud, TriangleMesh)`` for
    ``sphere``/``torus`` when ``meshed`` is true.

    kinds and params:
      segment     n (100), jitter (0), left_fraction (None: uniform grid)
      circle      n (100), radius (1), jitter (0)
      sphere      level (3) for an icosphere, or n for a Fibonacci lattice; radius (1)
      torus       n_major (32), n_minor (16), R (1), r (0.4)
      swiss_roll  n (800), noise (0)
      blobs       c (3), n (600), d (20), sigma (0.05), separation (1)
    """
    p = dict(params or {})
    rng = np.random.default_rng(seed)

    def need(cond, msg):
        if not cond:
            raise ContractError(f"{kind}: {msg}")

    if kind == "segment":
        n = int(p.get("n", 100))
        need(n >= 4, "n must be >= 4")
        frac = p.get("left_fraction")
        if frac is None:
            x = np.arange(n) / (n - 1)
        else:
            frac = float(frac)
            need(0 < frac < 1, "left_fraction must lie in (0, 1)")
            n_left = int(round(frac * n))
            need(2 <= n_left <= n - 2, "split leaves too few points on one side")
            n_right = n - n_left
            left = 0.5 * np.arange(n_left) / n_left
            right = 0.5 + 0.5 * np.arange(n_right) / (n_right - 1)
            x = np.concatenate([left, right])
        jitter = float(p.get("jitter", 0.0))
        if jitter:
            x = np.clip(x + jitter * rng.uniform(-0.5, 0.5, n) / (n - 1), 0.0, 1.0)
            x.sort()
        return PointCloud(x[:, None], name="segment")

    if kind == "circle":
        n, radius = int(p.get("n", 100)), float(p.get("radius", 1.0))
        need(n >= 4 and radius > 0, "need n >= 4 and radius > 0")
        th = 2 * np.pi * np.arange(n) / n
        jitter = float(p.get("jitter", 0.0))
        if jitter:
            th = th + jitter * rng.uniform(-0.5, 0.5, n) * 2 * np.pi / n
        return PointCloud(radius * np.stack([np.cos(th), np.sin(th)], 1), name="circle")

    if kind == "sphere":
        radius = float(p.get("radius", 1.0))
        need(radius > 0, "radius must be > 0")
        if "n" in p and not meshed:
            n = int(p["n"])
            need(n >= 4, "n must be >= 4")
            i = np.arange(n) + 0.5
            phi = np.arccos(1 - 2 * i / n)
            th = np.pi * (1 + 5**0.5) * i
            pts = radius * np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], 1)
            return PointCloud(pts, name="sphere")
        level = int(p.get("level", 3))
        need(level >= 0, "level must be >= 0")
        mesh = icosphere(level, radius)
        pc = PointCloud(mesh.vertices.copy(), name="sphere")
        return (pc, mesh) if meshed else pc

    if kind == "torus":
        nu, nv = int(p.get("n_major", 32)), int(p.get("n_minor", 16))
        R, r = float(p.get("R", 1.0)), float(p.get("r", 0.4))
        need(nu >= 4 and nv >= 4 and R > 0 and r > 0 and r < R, "need counts >= 4 and 0 < r < R")
        mesh = _torus_mesh(nu, nv, R, r)
        pc = PointCloud(mesh.vertices.copy(), name="torus")
        return (pc, mesh) if meshed else pc

    if kind == "swiss_roll":
        n = int(p.get("n", 800))
        need(n >= 4, "n must be >= 4")
        t = 1.5 * np.pi * (1 + 2 * rng.uniform(size=n))
        h = 21 * rng.uniform(size=n)
        pts = np.stack([t * np.cos(t), h, t * np.sin(t)], 1)
        noise = float(p.get("noise", 0.0))
        if noise:
            pts = pts + noise * rng.standard_normal(pts.shape)
        return PointCloud(pts, labels=None, name="swiss_roll")

    if kind == "blobs":
        c, n, d = int(p.get("c", 3)), int(p.get("n", 600)), int(p.get("d", 20))
        sigma, sep = float(p.get("sigma", 0.05)), float(p.get("separation", 1.0))
        need(c >= 1 and n >= max(c, 4) and d >= 1 and sigma > 0 and sep > 0, "invalid blob parameters")
        if c <= d:
            frame, _ = np.linalg.qr(rng.standard_normal((d, c)))
            centers = frame.T * (sep / math.sqrt(2.0))
        else:
            centers = rng.standard_normal((c, d))
            for _ in range(10_000):
                diff = np.linalg.norm(centers[:, None] - centers[None], axis=2) + np.eye(c) * 1e9
                if diff.min() >= sep:
                    break
                centers *= 1.1
        labels = np.arange(n) * c // n
        pts = centers[labels] + sigma * rng.standard_normal((n, d))
        return PointCloud(pts, labels=labels, name="blobs")

    raise ContractError(f"unknown manifold kind {kind!r}")

"""End-to-end fitting of a spectral basis to one point cloud.

Each step draws fresh probes, runs extractor -> QR -> mass -> progressive
projection, backpropagates the mean reconstruction error and applies one
Adam/AdamW update.  All randomness comes from fixed streams of the master
seed, so a run is reproducible bit for bit and can be resumed from a
checkpoint without changing its trajectory.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ndiff as nd
from .errors import ContractError, DegenerateBasisError, NonFiniteError, ParseError
from .geometry import PointCloud, build_knn
from .model import MlpExtractor, extractor_forward, init_extractor
from .probes import ProbeConfig, generate_probes
from .spectral import (
    ReconstructionReport,
    SpectralBasis,
    estimate_eigenvalues,
    extract_mass,
    orthonormalize,
    progressive_project,
    progressive_project_tensor,
    reconstruction_loss,
)

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "Checkpoint",
    "TrainResult",
    "TrainingAborted",
    "STREAM_INIT",
    "STREAM_FPS",
    "STREAM_PROBES",
    "STREAM_EVAL",
    "config_hash",
    "adam_step",
    "clip_gradients",
    "global_norm",
    "lr_schedule",
    "train",
    "evaluate_basis",
    "save_checkpoint",
    "load_checkpoint",
    "write_history_csv",
    "preset_config",
]

STREAM_INIT, STREAM_FPS, STREAM_PROBES, STREAM_EVAL = 0, 1, 2, 3
MAGIC = b"OAE1"


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a run.

    ``widths`` is the full MLP layout ``[d, hidden..., K]``.  ``schedule`` is
    ``"step"`` (multiply by ``gamma`` at each fraction in ``milestones``),
    ``"cosine"`` (anneal to ``lr_min``) or ``"constant"``.  Set
    ``grad_clip_norm`` to ``None`` to disable clipping.
    """

    steps: int = 2000
    widths: tuple = (1, 64, 64, 64, 5)
    activation: str = "relu"
    probes: ProbeConfig = field(default_factory=ProbeConfig)
    eval_probes: ProbeConfig | None = None
    optimizer: str = "adam"
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    schedule: str = "step"
    gamma: float = 0.1
    milestones: tuple = (0.3, 0.7)
    lr_min: float = 1e-5
    grad_clip_norm: float | None = None
    seed: int = 0
    eval_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError("lr must be > 0")
        if not 0 <= self.gamma <= 1:
            raise ContractError("gamma must lie in [0, 1]")
        ms = tuple(self.milestones)
        if any(not 0 < x < 1 for x in ms) or list(ms) != sorted(ms):
            raise ContractError("milestones must be sorted fractions in (0, 1)")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ContractError("grad_clip_norm must be > 0 or None")
        if self.optimizer not in ("adam", "adamw"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("step", "cosine", "constant"):
            raise ContractError(f"unknown schedule {self.schedule!r}")
        if self.steps < 0:
            raise ContractError("steps must be >= 0")

    @property
    def K(self) -> int:
        return int(self.widths[-1])

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("widths", "betas", "milestones"):
            d[key] = list(d[key])
        for key in ("probes", "eval_probes"):
            if d[key] is not None and isinstance(d[key]["sigma"], tuple):
                d[key]["sigma"] = list(d[key]["sigma"])
        return d

    def replace(self, **kw) -> "TrainConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return TrainConfig(**d)


def config_hash(cfg) -> bytes:
    """SHA-256 of the canonical JSON form (key order independent)."""
    d = cfg.to_dict() if hasattr(cfg, "to_dict") else cfg
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def preset_config(name: str, **overrides) -> TrainConfig:
    """``seg1d`` reproduces the unit-interval toy; ``sphere3d`` is the desk-scale 3D overfit."""
    if name == "seg1d":
        cfg = TrainConfig(
            steps=1500,
            widths=(1, 64, 64, 64, 5),
            activation="relu",
            probes=ProbeConfig(m=256, smoothing_iterations=10, sigma=0.1, knn_k=16, self_loops=True),
            eval_probes=ProbeConfig(m=2048, smoothing_iterations=6, sigma=0.2, knn_k=16, self_loops=True),
            optimizer="adam",
            lr=1e-2,
            schedule="step",
            gamma=0.1,
            milestones=(0.3, 0.7),
        )
    elif name == "sphere3d":
        cfg = TrainConfig(
            steps=3000,
            widths=(3, 128, 128, 128, 20),
            activation="gelu",
            probes=ProbeConfig(m=256, smoothing_iterations=40, sigma=(0.01, 0.2), knn_k=10, self_loops=False),
            eval_probes=ProbeConfig(m=2048, smoothing_iterations=48, sigma=0.101, knn_k=70, self_loops=True),
            optimizer="adamw",
            lr=1e-3,
            schedule="cosine",
            lr_min=1e-5,
            grad_clip_norm=0.01,
        )
    else:
        raise ContractError(f"unknown preset {name!r}")
    return cfg.replace(**overrides) if overrides else cfg


# -------------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: OptimizerState, cfg, lr: float | None = None):
    """One bias-corrected Adam update; AdamW decays ``lr * wd * theta`` first.

    ``params`` and ``grads`` are lists of arrays.  Returns the new parameter
    list; ``state`` is updated in place.
    """
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.betas
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ContractError(f"gradient {i} has shape {g.shape}, parameter has {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {i} at optimizer step {state.step + 1}")
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if cfg.optimizer == "adamw" and cfg.weight_decay:
            p = p - lr * cfg.weight_decay * p
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - lr * mhat / (np.sqrt(vhat) + cfg.eps))
    return out


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_gradients(grads, max_norm: float):
    """Scale all gradients by ``min(1, max_norm / ||g||)`` (global L2 norm)."""
    if max_norm <= 0:
        raise ContractError("max_norm must be > 0")
    norm = global_norm(grads)
    if norm <= max_norm:
        return [g.copy() for g in grads]
    s = max_norm / norm
    return [g * s for g in grads]


def lr_schedule(cfg, step: int, total: int) -> float:
    if not 0 <= step <= max(total, 0):
        raise ContractError(f"step {step} outside [0, {total}]")
    if cfg.schedule == "constant" or total == 0:
        return cfg.lr
    if cfg.schedule == "step":
        drops = sum(1 for ms in cfg.milestones if step >= ms * total)
        return cfg.lr * cfg.gamma**drops
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * step / total))


# -------------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    params: list
    opt: OptimizerState
    step: int
    config_hash: bytes
    rng_positions: tuple = ()

    def to_bytes(self) -> bytes:
        out = [MAGIC, self.config_hash.ljust(32, b"\0")[:32], struct.pack("<Q", self.step)]
        for group in (self.params, self.opt.m, self.opt.v):
            out.append(struct.pack("<Q", len(group)))
            for arr in group:
                flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
                out.append(struct.pack("<Q", flat.size))
                out.append(flat.tobytes())
        out.append(struct.pack("<Q", self.opt.step))
        out.append(struct.pack("<Q", len(self.rng_positions)))
        out.append(struct.pack(f"<{len(self.rng_positions)}Q", *self.rng_positions))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes, shapes=None) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise ParseError("not a checkpoint (bad magic)")
        pos = 4
        digest = blob[pos : pos + 32]
        pos += 32
        (step,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        groups = []
        for _ in range(3):
            (count,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            arrays = []
            for j in range(count):
                (size,) = struct.unpack_from("<Q", blob, pos)
                pos += 8
                arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).astype(np.float64)
                pos += 8 * size
                if shapes is not None:
                    arr = arr.reshape(shapes[j])
                arrays.append(arr)
            groups.append(arrays)
        (opt_step,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        (nrng,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        rng = struct.unpack_from(f"<{nrng}Q", blob, pos)
        return cls(groups[0], OptimizerState(groups[1], groups[2], opt_step), step, digest, tuple(rng))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_bytes(ckpt.to_bytes())
    return path


def load_checkpoint(path, cfg: TrainConfig | None = None) -> Checkpoint:
    shapes = None
    if cfg is not None:
        shapes = []
        for a, b in zip(cfg.widths[:-1], cfg.widths[1:]):
            shapes += [(a, b), (b,)]
    ckpt = Checkpoint.from_bytes(Path(path).read_bytes(), shapes)
    if cfg is not None and ckpt.config_hash != config_hash(cfg):
        raise ContractError("checkpoint was written for a different configuration")
    return ckpt


# -------------------------------------------------------------------- training


class TrainingAborted(RuntimeError):
    def __init__(self, message, step, last_checkpoint=None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    basis: SpectralBasis
    history: list
    checkpoints: list
    model: MlpExtractor
    final_checkpoint: Checkpoint
    report: ReconstructionReport | None = None


def _forward_loss(model, pc, probes):
    feats = extractor_forward(model, pc)
    Q, _ = orthonormalize(feats)
    mass, _ = extract_mass(Q)
    errors = progressive_project_tensor(Q, mass, probes)
    return reconstruction_loss(errors), errors


def evaluate_basis(basis_or_q, pc: PointCloud, probe_cfg: ProbeConfig, stream=(STREAM_EVAL, 0), graph=None):
    """Worst-case/mean error report of a basis on a fresh probe batch."""
    if isinstance(basis_or_q, SpectralBasis):
        Q, mass = basis_or_q.Q, basis_or_q.mass
    else:
        Q = np.asarray(basis_or_q)
        mass, _ = extract_mass(Q)
    batch = generate_probes(pc, probe_cfg, stream=stream, graph=graph)
    _, report = progressive_project(Q, mass, batch.signals, keep_errors=False)
    return report


def _final_basis(model, pc):
    with nd.no_grad():
        feats = extractor_forward(model, pc)
        Q, _ = orthonormalize(feats)
    mass, clamped = extract_mass(Q.value)
    return SpectralBasis(Q.value, mass, None, clamped)


def train(
    pc: PointCloud,
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
    stop_after: int | None = None,
    callback=None,
    checkpoint_dir=None,
) -> TrainResult:
    """Fit the extractor to ``pc``.

    ``resume`` continues a run from a checkpoint written with the same
    config.  ``stop_after`` halts once that many total steps are done
    (the schedule still spans ``cfg.steps``).  ``callback(step, row)`` runs
    after every step.
    """
    if pc.d != cfg.widths[0]:
        raise ContractError(f"config expects {cfg.widths[0]}-dim points, cloud has d={pc.d}")
    if cfg.K >= pc.n:
        raise ContractError(f"K={cfg.K} must be < n={pc.n}")
    digest = config_hash(cfg)
    model = init_extractor(cfg.widths, cfg.activation, seed=[cfg.seed, STREAM_INIT])
    params = [p.value.copy() for p in model.parameters()]
    opt = OptimizerState.zeros_like(params)
    start = 0
    if resume is not None:
        if resume.config_hash != digest:
            raise ContractError("checkpoint config hash does not match")
        params = [np.array(p, dtype=np.float64).reshape(q.shape) for p, q in zip(resume.params, params)]
        opt = OptimizerState(
            [np.array(a).reshape(p.shape) for a, p in zip(resume.opt.m, params)],
            [np.array(a).reshape(p.shape) for a, p in zip(resume.opt.v, params)],
            resume.opt.step,
        )
        start = resume.step
    model.set_parameters(params)

    pcfg = cfg.probes.replace(seed=cfg.seed)
    graph = build_knn(pc, pcfg.knn_k, pcfg.metric, pcfg.self_loops)
    ecfg = cfg.eval_probes.replace(seed=cfg.seed) if cfg.eval_probes is not None else None
    egraph = build_knn(pc, ecfg.knn_k, ecfg.metric, ecfg.self_loops) if ecfg is not None else None

    def snapshot(step):
        return Checkpoint(
            [p.copy() for p in params],
            OptimizerState([a.copy() for a in opt.m], [a.copy() for a in opt.v], opt.step),
            step,
            digest,
            (step, step // cfg.eval_every if cfg.eval_every else 0),
        )

    history, checkpoints = [], []
    last_ckpt = snapshot(start)
    end = cfg.steps if stop_after is None else min(stop_after, cfg.steps)
    for step in range(start, end):
        lr = lr_schedule(cfg, step, cfg.steps)
        batch = generate_probes(pc, pcfg, stream=(STREAM_PROBES, step), graph=graph)
        try:
            loss, _ = _forward_loss(model, pc, batch.signals)
            nd.backward(loss)
            grads = [p.grad for p in model.parameters()]
            if cfg.grad_clip_norm is not None:
                grads = clip_gradients(grads, cfg.grad_clip_norm)
            params = adam_step(params, grads, opt, cfg, lr)
        except DegenerateBasisError as exc:
            exc.step = step
            raise
        except NonFiniteError as exc:
            raise TrainingAborted(str(exc), step, last_ckpt) from exc
        model.set_parameters(params)
        row = {"step": step, "lr": lr, "loss": loss.item(), "e_max": None}
        done = step + 1
        if ecfg is not None and cfg.eval_every and done % cfg.eval_every == 0:
            basis = _final_basis(model, pc)
            rep = evaluate_basis(basis, pc, ecfg, (STREAM_EVAL, done // cfg.eval_every), egraph)
            row["e_max"] = rep.max_error.tolist()
        history.append(row)
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            last_ckpt = snapshot(done)
            checkpoints.append(last_ckpt)
            if checkpoint_dir is not None:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(last_ckpt, Path(checkpoint_dir) / f"step{done:07d}.oae")
        if callback is not None:
            callback(step, row)

    final = snapshot(end)
    basis = _final_basis(model, pc)
    report = None
    if ecfg is not None:
        report = evaluate_basis(basis, pc, ecfg, (STREAM_EVAL, 0), egraph)
        basis.lambdas = estimate_eigenvalues(report)
    basis.meta = {"config_hash": digest.hex(), "steps": end}
    return TrainResult(basis, history, checkpoints, model, final, report)


def write_history_csv(history, path, K: int) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "loss"] + [f"e_max_{k}" for k in range(1, K + 1)])
        for row in history:
            em = row.get("e_max")
            tail = [format(x, ".17g") for x in em] if em else [""] * K
            w.writerow([row["step"], format(row["lr"], ".17g"), format(row["loss"], ".17g")] + tail)
    return path

"""Command-line front end: ``python -m specbasis <command>``.

Commands: ``synth``, ``train``, ``eval``, ``check`` and ``embed``.  Runs are
described by an INI file with sections ``[data]``, ``[probes]``,
``[model]``, ``[train]``, ``[eval]`` and ``[embed]``; any key left out takes
its value from the chosen preset.  Every command writes ``manifest.json``
next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import hashlib
import json
import os
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .embed import (
    Embedding,
    class_weighted_subsample,
    clustering_metrics,
    kmeans,
    laplacian_eigenmaps,
    oa_eigenmaps,
    pca_embed,
    scatter_svg,
    write_aggregate_table,
    write_embedding_csv,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateBasisError,
    DimensionError,
    NonFiniteError,
    ParseError,
    SingularGramError,
    SmoothingUnderflowError,
)
from .geometry import (
    PointCloud,
    TriangleMesh,
    fps_sample,
    load_pointcloud,
    normalize_unit_sphere,
    save_off_mesh,
    save_pointcloud,
    synth_manifold,
)
from .oracle import (
    ConvergenceError,
    aligned_cosine_similarity,
    calibrate_scale,
    cotan_laplacian,
    degenerate_cluster_diagnostic,
    eigenvalue_discrepancy,
    generalized_eigens,
    run_theorem_suite,
    segment_analytic_eigens,
)
from .probes import ProbeConfig
from .spectral import estimate_eigenvalues, load_basis, save_basis, unnormalized_basis
from .train import (
    TrainConfig,
    TrainingAborted,
    evaluate_basis,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)

__all__ = ["main", "RunConfig", "load_run_config", "PRESET_NAMES"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# ------------------------------------------------------------------ schema

_PROBE_KEYS = {
    "m": int,
    "smoothing_iterations": int,
    "sigma": "sigma",
    "knn_k": int,
    "metric": str,
    "self_loops": bool,
}

SCHEMA = {
    "data": {
        "kind": str,
        "path": str,
        "n": int,
        "level": int,
        "radius": float,
        "c": int,
        "d": int,
        "sigma": float,
        "separation": float,
        "jitter": float,
        "left_fraction": float,
        "normalize": bool,
        "fps": int,
    },
    "probes": dict(_PROBE_KEYS),
    "model": {"widths": "ints", "activation": str},
    "train": {
        "steps": int,
        "optimizer": str,
        "lr": float,
        "beta1": float,
        "beta2": float,
        "eps": float,
        "weight_decay": float,
        "schedule": str,
        "gamma": float,
        "milestones": "floats",
        "lr_min": float,
        "grad_clip_norm": "optfloat",
        "eval_every": int,
        "checkpoint_every": int,
        "seed": int,
    },
    "eval": dict(_PROBE_KEYS, oracle=str, upto=int, calibration=str, cluster_rtol=float),
    "embed": {
        "method": str,
        "k": int,
        "clusters": int,
        "runs": int,
        "knn_k": int,
        "restarts": int,
        "subsample": int,
        "entropy_lo": float,
        "entropy_hi": float,
    },
}

_COMMON_TRAIN = {
    "optimizer": "adam",
    "lr": 1e-2,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "weight_decay": 0.0,
    "schedule": "step",
    "gamma": 0.1,
    "milestones": [0.3, 0.7],
    "lr_min": 1e-5,
    "grad_clip_norm": None,
    "eval_every": 0,
    "checkpoint_every": 0,
    "seed": 0,
}

_COMMON_EMBED = {
    "method": "oa",
    "k": 2,
    "clusters": 3,
    "runs": 1,
    "knn_k": 10,
    "restarts": 10,
    "subsample": 0,
    "entropy_lo": 0.01,
    "entropy_hi": 0.1,
}

PRESETS = {
    "seg1d": {
        "data": {"kind": "segment", "n": 100, "normalize": False, "fps": 0},
        "probes": {"m": 256, "smoothing_iterations": 10, "sigma": 0.1, "knn_k": 16, "metric": "euclidean", "self_loops": True},
        "model": {"widths": [1, 64, 64, 64, 5], "activation": "relu"},
        "train": dict(_COMMON_TRAIN, steps=1500),
        "eval": {
            "m": 2048,
            "smoothing_iterations": 6,
            "sigma": 0.2,
            "knn_k": 16,
            "metric": "euclidean",
            "self_loops": True,
            "oracle": "segment",
            "upto": 5,
            "calibration": "l1",
            "cluster_rtol": 0.05,
        },
        "embed": dict(_COMMON_EMBED, k=1, clusters=2),
    },
    "sphere3d": {
        "data": {"kind": "sphere", "level": 3, "radius": 1.0, "normalize": False, "fps": 0},
        "probes": {
            "m": 256,
            "smoothing_iterations": 40,
            "sigma": [0.01, 0.2],
            "knn_k": 10,
            "metric": "euclidean",
            "self_loops": False,
        },
        "model": {"widths": [3, 128, 128, 128, 20], "activation": "gelu"},
        "train": dict(
            _COMMON_TRAIN,
            steps=3000,
            optimizer="adamw",
            lr=1e-3,
            schedule="cosine",
            grad_clip_norm=0.01,
        ),
        "eval": {
            "m": 2048,
            "smoothing_iterations": 48,
            "sigma": 0.101,
            "knn_k": 70,
            "metric": "euclidean",
            "self_loops": True,
            "oracle": "cotangent",
            "upto": 10,
            "calibration": "l1",
            "cluster_rtol": 0.05,
        },
        "embed": dict(_COMMON_EMBED),
    },
    "blobs": {
        "data": {"kind": "blobs", "n": 600, "c": 3, "d": 20, "sigma": 0.05, "separation": 1.0, "normalize": False, "fps": 0},
        "probes": {"m": 128, "smoothing_iterations": 2, "sigma": 0.3, "knn_k": 10, "metric": "euclidean", "self_loops": True},
        "model": {"widths": [20, 64, 64, 4], "activation": "relu"},
        "train": dict(_COMMON_TRAIN, steps=150),
        "eval": {
            "m": 512,
            "smoothing_iterations": 10,
            "sigma": 0.3,
            "knn_k": 10,
            "metric": "euclidean",
            "self_loops": True,
            "oracle": "none",
            "upto": 3,
            "calibration": "l1",
            "cluster_rtol": 0.05,
        },
        "embed": dict(_COMMON_EMBED, runs=32),
    },
}
PRESET_NAMES = tuple(PRESETS)


def _parse_value(kind, raw: str, where: str, line: int | None):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return [int(x) for x in raw.replace(" ", "").split(",") if x]
        if kind == "floats":
            return [float(x) for x in raw.replace(" ", "").split(",") if x]
        if kind == "optfloat":
            return None if raw.lower() in ("", "none", "off") else float(raw)
        if kind == "sigma":
            parts = [float(x) for x in raw.replace(" ", "").split(",") if x]
            if len(parts) == 1:
                return parts[0]
            if len(parts) == 2:
                return parts
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}", line) from None
    raise AssertionError(kind)


def _line_numbers(text: str) -> dict:
    """``(section, key) -> line`` for every assignment, plus ``(section, None)``."""
    out, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:]+)[=:]", s)
        if m and section is not None:
            out.setdefault((section, m.group(1).strip().lower()), i)
    return out


class RunConfig:
    """Fully resolved run description (preset defaults + file overrides)."""

    def __init__(self, values: dict, preset: str):
        self.values = values
        self.preset = preset

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def canonical(self) -> str:
        return json.dumps({"preset": self.preset, **self.values}, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        v = copy.deepcopy(self.values)
        v["train"]["seed"] = int(seed)
        return RunConfig(v, self.preset)

    def probe_config(self, section: str = "probes") -> ProbeConfig:
        p = self.values[section]
        sigma = p["sigma"]
        return ProbeConfig(
            m=p["m"],
            smoothing_iterations=p["smoothing_iterations"],
            sigma=tuple(sigma) if isinstance(sigma, list) else sigma,
            knn_k=p["knn_k"],
            metric=p["metric"],
            self_loops=p["self_loops"],
        )

    def train_config(self) -> TrainConfig:
        t, m = self.values["train"], self.values["model"]
        return TrainConfig(
            steps=t["steps"],
            widths=tuple(m["widths"]),
            activation=m["activation"],
            probes=self.probe_config("probes"),
            eval_probes=self.probe_config("eval"),
            optimizer=t["optimizer"],
            lr=t["lr"],
            betas=(t["beta1"], t["beta2"]),
            eps=t["eps"],
            weight_decay=t["weight_decay"],
            schedule=t["schedule"],
            gamma=t["gamma"],
            milestones=tuple(t["milestones"]),
            lr_min=t["lr_min"],
            grad_clip_norm=t["grad_clip_norm"],
            seed=t["seed"],
            eval_every=t["eval_every"],
            checkpoint_every=t["checkpoint_every"],
        )


def parse_run_config(text: str, preset: str = "seg1d") -> RunConfig:
    """Parse INI text over a preset; unknown sections/keys are errors with line numbers."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESET_NAMES)}")
    lines = _line_numbers(text)
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line) from None
    if parser.has_section("run") and parser.has_option("run", "preset"):
        preset = parser.get("run", "preset").strip()
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}", lines.get(("run", "preset")))
    values = copy.deepcopy(PRESETS[preset])
    for section in parser.sections():
        if section == "run":
            extra = [k for k in parser.options("run") if k != "preset"]
            if extra:
                raise ConfigError(f"unknown key [run] {extra[0]!r}", lines.get(("run", extra[0])))
            continue
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            values[section][key] = _parse_value(SCHEMA[section][key], raw, f"[{section}] {key}", line)
    cfg = RunConfig(values, preset)
    try:
        cfg.train_config()
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_run_config(path=None, preset: str = "seg1d") -> RunConfig:
    if path is None:
        return parse_run_config("", preset)
    return parse_run_config(Path(path).read_text(), preset)


# ------------------------------------------------------------------ helpers


def _write_manifest(out: Path, command: str, cfg_hash: str, files, extra=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": cfg_hash,
        "version": __version__,
        "files": sorted(str(f) for f in files),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _data_params(d: dict) -> dict:
    return {k: v for k, v in d.items() if k not in ("kind", "path", "normalize", "fps")}


def build_data(cfg: RunConfig, seed: int, meshed: bool = False):
    """Point cloud described by ``[data]``, optionally with its mesh."""
    d = cfg["data"]
    mesh = None
    if d["kind"] == "file":
        if not d.get("path"):
            raise ConfigError("[data] kind = file needs a path")
        pc = load_pointcloud(d["path"])
    else:
        out = synth_manifold(d["kind"], _data_params(d), seed=seed, meshed=meshed)
        if isinstance(out, tuple):
            pc, mesh = out
        else:
            pc = out
    if d.get("normalize"):
        pc = normalize_unit_sphere(pc)
        if mesh is not None:
            mesh = TriangleMesh(pc.points, mesh.faces)
    if d.get("fps"):
        if mesh is not None:
            raise ConfigError("[data] fps cannot be combined with a mesh oracle")
        pc = fps_sample(pc, d["fps"], seed=seed)
    return pc, mesh


def _workers() -> int:
    raw = os.environ.get("OAE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"OAE_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    params = {}
    for key in ("n", "level", "c", "d", "sigma", "separation", "jitter", "radius"):
        val = getattr(args, key)
        if val is not None:
            params[key] = val
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = synth_manifold(args.kind, params, seed=args.seed, meshed=args.meshed)
    pc, mesh = res if isinstance(res, tuple) else (res, None)
    fmt = "csv" if pc.labels is not None else "xyz"
    files = [save_pointcloud(pc, out / f"{args.kind}.{fmt}", fmt)]
    if mesh is not None:
        files.append(save_off_mesh(mesh, out / f"{args.kind}.off"))
    digest = hashlib.sha256(json.dumps({"kind": args.kind, "params": params, "seed": args.seed, "meshed": args.meshed}, sort_keys=True).encode()).hexdigest()
    _write_manifest(out, "synth", digest, [f.name for f in files], {"kind": args.kind, "params": params, "seed": args.seed})
    summary = f"{args.kind}: {pc.n} points in R^{pc.d}"
    if mesh is not None:
        summary += f", {mesh.n_faces} faces"
    print(f"{summary} -> {files[0]}")
    return EXIT_OK


def _resolve(args) -> RunConfig:
    cfg = load_run_config(args.config, args.preset)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _resolve(args)
    tcfg = cfg.train_config()
    if args.steps is not None:
        tcfg = tcfg.replace(steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pc, _ = build_data(cfg, tcfg.seed)
    resume = load_checkpoint(args.resume, tcfg) if args.resume else None
    t0 = time.perf_counter()
    try:
        res = train(pc, tcfg, resume=resume, checkpoint_dir=out / "checkpoints" if tcfg.checkpoint_every else None)
    except TrainingAborted as exc:
        if exc.last_checkpoint is not None:
            save_checkpoint(exc.last_checkpoint, out / "aborted.oae")
        raise
    elapsed = time.perf_counter() - t0
    save_basis(res.basis, out / "basis", cfg.hash())
    save_pointcloud(pc, out / "points.xyz", "xyz")
    write_history_csv(res.history, out / "history.csv", tcfg.K)
    save_checkpoint(res.final_checkpoint, out / "final.oae")
    (out / "config.json").write_text(json.dumps({"preset": cfg.preset, **cfg.values}, indent=2, sort_keys=True) + "\n")
    files = ["basis", "points.xyz", "history.csv", "final.oae", "config.json"]
    if tcfg.checkpoint_every:
        files.append("checkpoints")
    _write_manifest(out, "train", cfg.hash(), files, {"seconds": round(elapsed, 3), "steps": res.final_checkpoint.step})
    first = res.history[0]["loss"] if res.history else float("nan")
    last = res.history[-1]["loss"] if res.history else float("nan")
    print(f"trained {res.final_checkpoint.step} steps in {elapsed:.1f}s, loss {first:.6g} -> {last:.6g}; basis in {out / 'basis'}")
    return EXIT_OK


def _oracle_pairs(cfg: RunConfig, kind: str, pc: PointCloud, K: int, seed: int):
    """Reference values and M-orthonormal vectors for the eval oracle."""
    if kind == "segment":
        ref = segment_analytic_eigens(pc.n, K)
        # the grid oracle is defined on sorted positions
        order = np.argsort(pc.points[:, 0], kind="stable")
        vec = np.empty_like(ref.vectors)
        vec[order] = ref.vectors
        return ref.values, vec
    if kind == "cotangent":
        _, mesh = build_data(cfg, seed, meshed=True)
        if mesh is None:
            raise ConfigError("cotangent oracle needs a meshed [data] kind")
        _, v = generalized_eigens(cotan_laplacian(mesh), K)
        return v.values, v.vectors
    raise ConfigError(f"unknown oracle {kind!r}")


def evaluate_against_oracle(basis, cfg: RunConfig, pc: PointCloud, seed: int, oracle: str | None = None, reference=None) -> dict:
    """Cosine-similarity table, eigenvalue curve and discrepancy statistics."""
    e = cfg["eval"]
    kind = oracle or e["oracle"]
    upto = min(e["upto"], basis.K)
    V = unnormalized_basis(basis)
    if reference is not None:
        ref_vals = reference.lambdas if reference.lambdas is not None else np.full(reference.K, np.nan)
        ref_vecs = unnormalized_basis(reference)
    elif kind == "self":
        ref_vals, ref_vecs = basis.lambdas, V
    else:
        ref_vals, ref_vecs = _oracle_pairs(cfg, kind, pc, basis.K, seed)
    sims = aligned_cosine_similarity(V, ref_vecs, upto)
    lam = basis.lambdas
    if lam is None:
        report = evaluate_basis(basis, pc, cfg.probe_config("eval").replace(seed=seed))
        lam = estimate_eigenvalues(report)
    result = {"oracle": kind, "upto": upto, "cos_sim": sims.per_index.tolist(), "cos_sim_mean": sims.mean}
    kk = min(len(lam), len(ref_vals), upto)
    scale, stats = None, None
    finite = np.all(np.isfinite(lam[1:kk])) and np.all(np.isfinite(ref_vals[1:kk])) and np.all(lam[1:kk] > 0)
    if kk >= 2 and finite and np.all(np.asarray(ref_vals[1:kk]) != 0):
        scale = calibrate_scale(lam[:kk], ref_vals[:kk], (2, kk), e["calibration"])
        mean, std, _ = eigenvalue_discrepancy(np.asarray(lam[:kk]) * scale, ref_vals[:kk], (2, kk))
        stats = {"mean": mean, "std": std, "scale": scale, "calibration": e["calibration"]}
    result["lambda_pred"] = [float(x) for x in lam[:kk]]
    result["lambda_ref"] = [float(x) for x in ref_vals[:kk]]
    result["discrepancy"] = stats
    if kind == "cotangent":
        result["clusters"] = degenerate_cluster_diagnostic(V, ref_vecs, ref_vals, upto, e["cluster_rtol"])
    return result


def write_eval_csv(result: dict, path) -> Path:
    path = Path(path)
    scale = result["discrepancy"]["scale"] if result["discrepancy"] else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "cos_sim", "lambda_pred", "lambda_calibrated", "lambda_ref", "rel_discrepancy"])
        for i in range(result["upto"]):
            row = [i + 1, format(result["cos_sim"][i], ".10g")]
            if i < len(result["lambda_pred"]):
                p, r = result["lambda_pred"][i], result["lambda_ref"][i]
                cal = p * scale if scale is not None else float("nan")
                rel = abs(cal - r) / abs(r) if (scale is not None and r != 0) else float("nan")
                row += [format(p, ".10g"), format(cal, ".10g"), format(r, ".10g"), format(rel, ".6g")]
            else:
                row += ["", "", "", ""]
            w.writerow(row)
    return path


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    seed = cfg["train"]["seed"]
    basis_dir = Path(args.basis)
    if (basis_dir / "basis").is_dir():
        basis_dir = basis_dir / "basis"
    basis = load_basis(basis_dir)
    pts = basis_dir.parent / "points.xyz"
    pc = load_pointcloud(pts) if pts.exists() else build_data(cfg, seed)[0]
    reference = None
    oracle = args.oracle
    if oracle not in (None, "segment", "cotangent", "self"):
        reference = load_basis(Path(oracle) / "basis" if (Path(oracle) / "basis").is_dir() else oracle)
    result = evaluate_against_oracle(basis, cfg, pc, seed, oracle if reference is None else "basis", reference)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eval_csv(result, out / "eval.csv")
    (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "eval", cfg.hash(), ["eval.csv", "eval.json"], {"basis": str(basis_dir)})
    disc = result["discrepancy"]
    tail = f", eigenvalue discrepancy {disc['mean']:.3f} ± {disc['std']:.3f}" if disc else ""
    print(f"mean |cos| over k <= {result['upto']}: {result['cos_sim_mean']:.4f}{tail}")
    return EXIT_OK


def cmd_check(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    t0 = time.perf_counter()
    report = run_theorem_suite(seeds, n=args.n, k=args.k, samples=args.samples)
    report["seconds"] = round(time.perf_counter() - t0, 3)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "check.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    digest = hashlib.sha256(json.dumps(report["params"], sort_keys=True).encode()).hexdigest()
    _write_manifest(out, "check", digest, ["check.json"])
    for rep in report["reports"]:
        status = "PASS" if rep["passed"] else "FAIL"
        print(f"{status} {rep['name']} seed={rep['seed']}")
    print(f"theorem suite {'passed' if report['passed'] else 'FAILED'} in {report['seconds']:.2f}s")
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


_METHODS = {"oa": "oa_eigenmaps", "laplacian": "laplacian_eigenmaps", "pca": "pca"}


def _embed_run(payload):
    """One seeded run: data, embeddings, clustering.  Top level so it pickles."""
    cfg, run, input_path, methods = payload
    e = cfg["embed"]
    seed = cfg["train"]["seed"] + run
    if input_path is not None:
        pc = load_pointcloud(input_path)
    else:
        pc, _ = build_data(cfg, seed)
    if e["subsample"]:
        if pc.labels is None:
            raise ConfigError("[embed] subsample needs labelled data")
        idx, _ = class_weighted_subsample(pc.labels, e["subsample"], seed, (e["entropy_lo"], e["entropy_hi"]))
        pc = pc.subset(idx)
    out = {}
    for method in methods:
        if method == "oa":
            tcfg = cfg.with_seed(seed).train_config()
            if tcfg.widths[0] != pc.d:
                tcfg = tcfg.replace(widths=(pc.d,) + tuple(tcfg.widths[1:]))
            res = train(pc, tcfg.replace(eval_probes=None))
            emb = oa_eigenmaps(res.basis, e["k"])
        elif method == "laplacian":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                emb = laplacian_eigenmaps(pc, e["knn_k"], e["k"], on_disconnected="keep")
        elif method == "pca":
            emb = pca_embed(pc, e["k"])
        else:
            raise ConfigError(f"unknown embed method {method!r}")
        row = {"coords": emb.coords, "index": emb.index}
        if pc.labels is not None:
            pred = kmeans(emb, e["clusters"], e["restarts"], seed)
            row["metrics"] = clustering_metrics(pred, pc.labels[emb.index]).as_dict()
            row["labels"] = pc.labels[emb.index]
        out[method] = row
    return run, out


def cmd_embed(args) -> int:
    cfg = _resolve(args)
    e = cfg["embed"]
    for key in ("method", "k", "runs", "clusters"):
        val = getattr(args, key)
        if val is not None:
            e[key] = val
    methods = list(_METHODS) if e["method"] == "all" else [m.strip() for m in e["method"].split(",")]
    for m in methods:
        if m not in _METHODS:
            raise ConfigError(f"unknown embed method {m!r}; choose from oa, laplacian, pca, all")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [(cfg, r, args.input, methods) for r in range(e["runs"])]
    workers = min(_workers(), len(payloads))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_embed_run, payloads))
    else:
        results = [_embed_run(p) for p in payloads]
    results.sort(key=lambda t: t[0])

    files, runs = [], {_METHODS[m]: [] for m in methods}
    for run, rows in results:
        for m, row in rows.items():
            name = f"{_METHODS[m]}_run{run:03d}.csv"
            write_embedding_csv(Embedding(row["coords"], _METHODS[m], index=row["index"]), out / name, row.get("labels"))
            files.append(name)
            if "metrics" in row:
                runs[_METHODS[m]].append(row["metrics"])
            if run == 0:
                svg = f"{_METHODS[m]}_run000.svg"
                scatter_svg(row["coords"], row.get("labels"), out / svg, title=_METHODS[m])
                files.append(svg)
    if all(runs.values()):
        write_aggregate_table(runs, out / "aggregate.csv")
        files.append("aggregate.csv")
        for method, rows in runs.items():
            nmi = np.mean([r["nmi"] for r in rows])
            ari = np.mean([r["ari"] for r in rows])
            print(f"{method}: NMI {nmi:.4f}, ARI {ari:.4f} over {len(rows)} runs")
    _write_manifest(out, "embed", cfg.hash(), files, {"runs": e["runs"], "methods": methods, "clustering": "kmeans"})
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="python -m specbasis", description="Learn spectral bases from point clouds.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--preset", default="seg1d", choices=PRESET_NAMES)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=out_default)

    s = sub.add_parser("synth", help="write a synthetic point cloud (and mesh)")
    s.add_argument("kind", choices=["segment", "circle", "sphere", "torus", "swiss_roll", "blobs"])
    for key, typ in (("n", int), ("level", int), ("c", int), ("d", int), ("sigma", float), ("separation", float), ("jitter", float), ("radius", float)):
        s.add_argument(f"--{key}", type=typ)
    s.add_argument("--meshed", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="synth")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a spectral basis")
    common(t, "run")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int, help="override [train] steps")
    t.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="compare a basis with an oracle")
    ev.add_argument("basis", help="basis directory (or a train output directory)")
    ev.add_argument("--oracle", help="segment, cotangent, self, or another basis directory")
    common(ev, "eval")
    ev.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run the theorem verification suite")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--n", type=int, default=8)
    c.add_argument("--k", type=int, default=3)
    c.add_argument("--samples", type=int, default=100_000)
    c.add_argument("--out", default="check")
    c.set_defaults(func=cmd_check)

    em = sub.add_parser("embed", help="embed, cluster and score")
    em.add_argument("input", nargs="?", help="point cloud file (CSV with label column); default: synthesize from config")
    em.add_argument("--method", help="oa, laplacian, pca, a comma list, or all")
    em.add_argument("--k", type=int)
    em.add_argument("--runs", type=int)
    em.add_argument("--clusters", type=int)
    common(em, "embed")
    em.set_defaults(func=cmd_embed)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ContractError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        NonFiniteError,
        DegenerateBasisError,
        SingularGramError,
        SmoothingUnderflowError,
        ConvergenceError,
        TrainingAborted,
        FloatingPointError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

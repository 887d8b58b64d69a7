"""Experiment driver: ``putt <subcommand> --config run.json --out DIR``.

Subcommands ``fit2d``, ``fit3d``, ``denoise``, ``complete`` and ``svd`` fit
one or more models to a single target; ``compare`` does the same for a model
list and optional parameter sweep and adds ``compare.csv`` with per-model
aggregates.  Every run writes ``metrics.csv``, one checkpoint and one
reconstruction per (model, seed) pair and a ``summary.json``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure.
Errors are also reported as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import baselines as bl
from .data import (
    Grid,
    GridFormatError,
    NoiseSpec,
    add_noise,
    build_pyramid,
    bundled_image_path,
    load_grid,
    random_mask,
    save_grid,
)
from .metrics import compression_ratio, mse, psnr, ssim
from .optim import TrainConfig, adapt_base_lr, train_putt
from .tt import (
    QttLayout,
    ResourceLimitError,
    param_count,
    quantize_grid,
    save_qtt,
    to_dense,
    trapezoid_ranks,
    tt_svd,
)

log = logging.getLogger("putt")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

MODEL_KINDS = ("qtt-putt", "qtt-noup", "cp", "tucker", "ttsvd")

METRIC_COLUMNS = [
    "run_id", "model", "seed", "iter", "level", "lr", "loss",
    "psnr", "ssim", "params", "compression_ratio", "wall_seconds",
]
COMPARE_COLUMNS = [
    "row_type", "run_id", "model", "sweep", "seed", "n",
    "psnr", "psnr_std", "ssim", "ssim_std", "loss", "loss_std", "params", "compression_ratio",
]

# Reference upsampling schedules per experiment type:
# (full side, initial side, upsampling iterations, total iterations).
# Defaults keep the iteration lists and scale the resolutions to the target.
SCHEDULE_TABLE = {
    ("fit", 2): (1024, 128, (64, 128, 256), 1024),
    ("fit", 3): (64, 8, (16, 48, 144), 512),
    ("denoise", 2): (4096, 128, (64, 128, 256, 512, 1024, 2048), 8192),
    ("denoise", 3): (256, 8, (16, 48, 144, 432, 1296, 3888), 13824),
    ("complete", 2): (4096, 128, (64, 128, 256, 512, 1024, 2048), 8192),
    ("complete", 3): (64, 8, (16, 48, 144), 512),
}

COMMAND_TASK = {"fit2d": "fit", "fit3d": "fit", "denoise": "denoise", "complete": "complete", "svd": "fit"}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "input": {"type": "string"},
        "mask": {"type": "string"},
        "task": {"enum": ["fit", "denoise", "complete"]},
        "models": {"type": "array", "minItems": 1, "items": {"enum": list(MODEL_KINDS)}},
        "r_max": {"type": "integer", "minimum": 1},
        "cp_rank": {"type": "integer", "minimum": 1},
        "tucker_rank": {"type": "integer", "minimum": 1},
        "total_iters": {"type": "integer", "minimum": 1},
        "upsample_iters": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "batch_size": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "init_std": {"type": "number", "exclusiveMinimum": 0},
        "init_per_core": {"type": "boolean"},
        "base_lr": {"type": "number", "exclusiveMinimum": 0},
        "baseline_lr": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "warmup_iters": {"type": "integer", "minimum": 0},
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["gaussian", "laplace"]},
                "scale": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "observed_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "mask_seed": {"type": "integer", "minimum": 0},
        "lr_factor": {"type": "number", "exclusiveMinimum": 0},
        "rank_growth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iters": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "delta": {"type": "integer", "minimum": 1},
                "cap": {"type": "integer", "minimum": 1},
            },
        },
        "eval_every": {"type": "integer", "minimum": 0},
        "log_every": {"type": "integer", "minimum": 0},
        "record_wall_time": {"type": "boolean"},
        "save_reconstruction": {"type": "boolean"},
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "observed_fraction": {
                    "type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1},
                },
                "noise_scale": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


# -- configuration -------------------------------------------------------------


def default_schedule(task: str, d: int, side: int) -> tuple[list[int], int]:
    """Table schedule for ``task`` with the resolutions scaled to ``side``.

    The iteration lists are kept.  Leading upsampling events are dropped when
    the scaled initial resolution would fall below ``2``.
    """
    _, _, ups, total = SCHEDULE_TABLE[(task, d)]
    depth = side.bit_length() - 1
    n = min(len(ups), max(depth - 1, 0))
    return list(ups[len(ups) - n :]), total


def resolve_config(raw: dict, command: str, seed: int | None = None) -> dict:
    """Validate ``raw`` against the schema and fill in defaults."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    cfg = copy.deepcopy(raw)
    if command == "compare":
        cfg.setdefault("task", "fit")
    else:
        if "task" in cfg and cfg["task"] != COMMAND_TASK[command]:
            raise ConfigError(f"task {cfg['task']!r} conflicts with subcommand {command!r}")
        if "sweep" in cfg:
            raise ConfigError("sweep is only supported by the compare subcommand")
        cfg["task"] = COMMAND_TASK[command]
    if command == "svd":
        cfg.setdefault("models", ["ttsvd"])
    elif command == "compare":
        cfg.setdefault("models", ["qtt-putt", "qtt-noup", "cp", "tucker"])
    else:
        cfg.setdefault("models", ["qtt-putt", "qtt-noup"])
    if command == "fit3d" and "input" not in cfg:
        raise ConfigError("fit3d needs an input volume (raw f32 with a JSON sidecar)")
    cfg.setdefault("input", "bundled")
    if seed is not None:
        cfg["seeds"] = [int(seed)]
    cfg.setdefault("seeds", [0])
    cfg.setdefault("r_max", 64)
    cfg.setdefault("init_std", 0.1)
    cfg.setdefault("init_per_core", False)
    cfg.setdefault("base_lr", 5e-3)
    cfg.setdefault("baseline_lr", 1e-2)
    cfg.setdefault("alpha", 0.1)
    cfg.setdefault("beta", 0.9)
    cfg.setdefault("warmup_iters", 50)
    cfg.setdefault("eval_every", 0)
    cfg.setdefault("log_every", 256)
    cfg.setdefault("record_wall_time", False)
    cfg.setdefault("save_reconstruction", True)
    if cfg["task"] == "denoise":
        noise = cfg.setdefault("noise", {})
        noise.setdefault("kind", "gaussian")
        noise.setdefault("scale", 0.3)
        cfg.setdefault("lr_factor", 0.1)
    elif "noise" in cfg:
        raise ConfigError("noise is only used by the denoise task")
    if cfg["task"] == "complete":
        if "mask" not in cfg:
            cfg.setdefault("observed_fraction", 0.1)
        cfg.setdefault("lr_factor", 1.0)
    sweep = cfg.get("sweep", {})
    if "noise_scale" in sweep and cfg["task"] != "denoise":
        raise ConfigError("a noise_scale sweep needs task 'denoise'")
    if "observed_fraction" in sweep and (cfg["task"] != "complete" or "mask" in cfg):
        raise ConfigError("an observed_fraction sweep needs task 'complete' without a mask file")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


# -- data ------------------------------------------------------------------------


def load_target(cfg: dict) -> Grid:
    path = bundled_image_path() if cfg["input"] == "bundled" else Path(cfg["input"])
    grid = load_grid(path, cfg.get("mask"))
    if len(set(grid.shape)) != 1:
        raise GridFormatError(f"{path}: grids must have equal sides, got {grid.shape}")
    return grid


@dataclass
class Problem:
    """Training target, clean reference and the adapted QTT learning rate."""

    train: Grid
    reference: np.ndarray
    lr_scale: float
    sweep: str = ""


def make_problem(cfg: dict, clean: Grid, seed: int, sweep: str = "") -> Problem:
    reference = clean.values
    task = cfg["task"]
    if task == "denoise":
        noise = cfg["noise"]
        spec = NoiseSpec(noise["kind"], noise["scale"], noise.get("seed", seed))
        train = add_noise(Grid(clean.values), spec)
        scale = adapt_base_lr(1.0, "noise", spec.scale, cfg["lr_factor"])
    elif task == "complete":
        if clean.mask is not None:
            mask = clean.mask
        else:
            mask = random_mask(clean.shape, cfg["observed_fraction"], cfg.get("mask_seed", seed))
        if not mask.any():
            raise ConfigError("the mask leaves no observed entries")
        train = Grid(np.where(mask, clean.values, 0.0), mask)
        scale = adapt_base_lr(1.0, "missing", float(mask.mean()), cfg["lr_factor"])
    else:
        train = Grid(clean.values, clean.mask)
        scale = 1.0
    return Problem(train, reference, scale, sweep)


# -- single runs -------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


@dataclass
class RunResult:
    run_id: str
    model: str
    seed: int
    sweep: str
    params: int
    psnr: float
    ssim: float
    loss: float
    fit_mse: float
    compression_ratio: float
    psnr_unobserved: float | None = None
    checkpoint: str = ""
    reconstruction: str = ""
    rows: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "run_id": self.run_id, "model": self.model, "seed": self.seed, "params": self.params,
            "psnr": self.psnr, "ssim": self.ssim, "loss": self.loss, "fit_mse": self.fit_mse,
            "compression_ratio": self.compression_ratio,
            "checkpoint": self.checkpoint, "reconstruction": self.reconstruction,
        }
        if self.sweep:
            out["sweep"] = self.sweep
        if self.psnr_unobserved is not None:
            out["psnr_unobserved"] = self.psnr_unobserved
        return out


class _Evaluator:
    """Scores reconstructions against the clean reference on selected iterations."""

    def __init__(self, reference: np.ndarray, every: int, record_wall: bool, log_every: int, label: str):
        self.reference = reference
        self.every = every
        self.record_wall = record_wall
        self.log_every = log_every
        self.label = label
        self.start = time.perf_counter()
        self.points: dict[int, tuple] = {}

    def score(self, recon: np.ndarray, params: int) -> tuple:
        s = ssim(self.reference, recon) if min(recon.shape) >= 11 else float("nan")
        wall = time.perf_counter() - self.start if self.record_wall else None
        return (psnr(self.reference, recon), s, params, compression_ratio(recon.size, params), wall)

    def maybe(self, it: int, dense_fn, params_fn) -> None:
        if self.every and (it + 1) % self.every == 0:
            self.points[it] = self.score(dense_fn(), params_fn())
        if self.log_every and (it + 1) % self.log_every == 0:
            log.info("%s: iteration %d", self.label, it + 1)


def _baseline_rank(kind: str, cfg: dict, shape: tuple[int, ...], coarse_side: int) -> int:
    layout = QttLayout.for_shape(shape)
    ranks = trapezoid_ranks([layout.phys_dim] * layout.D, cfg["r_max"])
    budget = sum(ranks[k] * layout.phys_dim * ranks[k + 1] for k in range(layout.D))
    if kind == "cp":
        return cfg.get("cp_rank", bl.cp_rank_for_budget(shape, budget))
    m = cfg.get("tucker_rank", bl.tucker_rank_for_budget(shape, budget))
    if m > coarse_side:
        if "tucker_rank" in cfg:
            raise ConfigError(f"tucker_rank {m} exceeds the coarsest side {coarse_side}")
        m = coarse_side
    return m


def run_one(model: str, cfg: dict, seed: int, problem: Problem, run_id: str, out_dir: Path) -> RunResult:
    train = problem.train
    ref = problem.reference
    shape = train.shape
    ups = [] if model in ("qtt-noup", "ttsvd") else list(cfg["upsample_iters"])
    base = cfg["baseline_lr"] if model in ("cp", "tucker") else cfg["base_lr"]
    growth = cfg.get("rank_growth", {})
    tcfg = TrainConfig(
        r_max=cfg["r_max"],
        total_iters=cfg["total_iters"],
        upsample_iters=tuple(ups),
        batch_size=cfg["batch_size"],
        seed=seed,
        base_lr=base * problem.lr_scale,
        alpha=cfg["alpha"],
        beta=cfg["beta"],
        warmup_iters=cfg["warmup_iters"],
        init_sigma=cfg["init_std"],
        init_per_core=cfg["init_per_core"],
        rank_growth_iters=tuple(growth.get("iters", ()) if model.startswith("qtt") else ()),
        rank_growth_delta=growth.get("delta", 1),
        rank_growth_cap=growth.get("cap", cfg["r_max"]),
    )
    ev = _Evaluator(ref, cfg["eval_every"], cfg["record_wall_time"], cfg["log_every"], run_id)
    observed = train.observed

    if model == "ttsvd":
        layout = QttLayout.for_shape(shape)
        tt = tt_svd(quantize_grid(np.where(observed, train.values, 0.0), layout), cfg["r_max"])
        recon = to_dense(tt, layout)
        params = param_count(tt)
        ckpt = out_dir / f"{run_id}.qtt"
        save_qtt(ckpt, tt, layout)
        trace = [(0, 0, None, mse(recon[observed], train.values[observed]))]
    elif model in ("qtt-putt", "qtt-noup"):
        pyramid = build_pyramid(train, len(ups))
        tt, layout, rows = train_putt(
            pyramid, tcfg,
            callback=lambda it, t, L: ev.maybe(it, lambda: to_dense(t, L), lambda: param_count(t)),
        )
        if not tt.is_finite():
            raise FloatingPointError("trained model has non-finite cores")
        recon = to_dense(tt, layout)
        params = param_count(tt)
        ckpt = out_dir / f"{run_id}.qtt"
        save_qtt(ckpt, tt, layout)
        trace = [(r.iter, r.level, r.lr, r.loss) for r in rows]
    else:
        pyramid = build_pyramid(train, len(ups))
        rank = _baseline_rank(model, cfg, shape, pyramid[0].shape[0])
        fitted, rows = bl.train_baseline(
            model, pyramid, tcfg, rank,
            callback=lambda it, m: ev.maybe(it, m.full, m.param_count),
        )
        recon = fitted.full()
        if not np.isfinite(recon).all():
            raise FloatingPointError("trained model produced non-finite values")
        params = fitted.param_count()
        ckpt = out_dir / f"{run_id}.{'cpd' if model == 'cp' else 'tuk'}"
        bl.save_model(ckpt, fitted)
        trace = [(r.iter, r.level, r.lr, r.loss) for r in rows]

    final = ev.score(recon, params)
    ev.points[trace[-1][0]] = final
    csv_rows = []
    for it, level, lr, loss in trace:
        p = ev.points.get(it)
        csv_rows.append([
            run_id, model, seed, it, level, lr, loss,
            *(p if p is not None else (None,) * 5),
        ])
    recon_path = ""
    if cfg["save_reconstruction"]:
        recon_path = out_dir / (f"{run_id}.recon" + (".pgm" if recon.ndim == 2 else ".raw"))
        save_grid(recon, recon_path)
    unobs = None
    if train.mask is not None and not train.mask.all():
        unobs = psnr(ref[~train.mask], recon[~train.mask])
    return RunResult(
        run_id=run_id, model=model, seed=seed, sweep=problem.sweep, params=params,
        psnr=final[0], ssim=final[1], loss=float(trace[-1][3]),
        fit_mse=mse(recon[observed], train.values[observed]),
        compression_ratio=final[3], psnr_unobserved=unobs,
        checkpoint=Path(ckpt).name, reconstruction=Path(recon_path).name if recon_path else "",
        rows=csv_rows,
    )


# -- reporting ---------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return _fmt(x)
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    return x


def _mean_std(values: list[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return float("nan"), float("nan")
    std = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
    return float(np.mean(a)), std


def aggregate(results: list[RunResult]) -> dict:
    groups: dict[str, list[RunResult]] = {}
    for r in results:
        groups.setdefault(f"{r.model}@{r.sweep}" if r.sweep else r.model, []).append(r)
    out = {}
    for key, rs in groups.items():
        entry = {"model": rs[0].model, "n": len(rs), "params": rs[0].params}
        if rs[0].sweep:
            entry["sweep"] = rs[0].sweep
        for name in ("psnr", "ssim", "loss", "fit_mse", "compression_ratio"):
            m, s = _mean_std([getattr(r, name) for r in rs])
            entry[f"{name}_mean"] = m
            entry[f"{name}_std"] = s
        out[key] = entry
    return out


def write_metrics(path: Path, results: list[RunResult]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in results:
        for row in r.rows:
            w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def write_compare(path: Path, results: list[RunResult], agg: dict) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in results:
        w.writerow([_fmt(v) for v in (
            "run", r.run_id, r.model, r.sweep, r.seed, 1,
            r.psnr, None, r.ssim, None, r.loss, None, r.params, r.compression_ratio,
        )])
    for a in agg.values():
        w.writerow([_fmt(v) for v in (
            "aggregate", "", a["model"], a.get("sweep", ""), "", a["n"],
            a["psnr_mean"], a["psnr_std"], a["ssim_mean"], a["ssim_std"],
            a["loss_mean"], a["loss_std"], a["params"], a["compression_ratio_mean"],
        )])
    path.write_text(buf.getvalue())


# -- driver ------------------------------------------------------------------------------


def _classify(exc: BaseException) -> int:
    if isinstance(exc, GridFormatError):
        return EXIT_IO
    if isinstance(exc, (ConfigError, jsonschema.ValidationError, ValueError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (FloatingPointError, np.linalg.LinAlgError, ResourceLimitError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_NUMERIC


def _error_json(exc: BaseException, code: int, **extra) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code, **extra})


def _sweep_points(cfg: dict) -> list[tuple[str, dict]]:
    sweep = cfg.get("sweep")
    if not sweep:
        return [("", cfg)]
    (name, values), = sweep.items()
    points = []
    for v in values:
        c = copy.deepcopy(cfg)
        if name == "observed_fraction":
            c["observed_fraction"] = v
            label = f"p={v:g}"
        else:
            c["noise"]["scale"] = v
            label = f"sigma={v:g}"
        points.append((label, c))
    return points


def execute(command: str, cfg: dict, out_dir: Path) -> int:
    """Run every (sweep point, model, seed) combination and write reports."""
    clean = load_target(cfg)
    side = clean.shape[0]
    d = len(clean.shape)
    if command == "fit2d" and d != 2:
        raise ConfigError(f"fit2d needs a 2D input, got shape {clean.shape}")
    if command == "fit3d" and d != 3:
        raise ConfigError(f"fit3d needs a 3D input, got shape {clean.shape}")
    ups, total = default_schedule(cfg["task"], d, side)
    cfg.setdefault("upsample_iters", ups)
    cfg.setdefault("total_iters", total)
    cfg.setdefault("batch_size", min(512**2, max(1, clean.values.size // 4)))
    try:
        TrainConfig(total_iters=cfg["total_iters"], upsample_iters=tuple(cfg["upsample_iters"]))
        if cfg["upsample_iters"]:
            build_pyramid(clean, len(cfg["upsample_iters"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    digest = config_hash(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")

    results: list[RunResult] = []
    failures = []
    code = EXIT_OK
    for label, pcfg in _sweep_points(cfg):
        for seed in cfg["seeds"]:
            problem = None
            for model in cfg["models"]:
                suffix = f"-{label}" if label else ""
                run_id = f"{command}-{digest}-{model}-s{seed}{suffix}"
                try:
                    if problem is None:
                        problem = make_problem(pcfg, clean, seed, label)
                    log.info("%s: start", run_id)
                    results.append(run_one(model, pcfg, seed, problem, run_id, out_dir))
                except Exception as exc:  # keep the other runs' results
                    c = _classify(exc)
                    code = max(code, c)
                    failures.append({"run_id": run_id, "model": model, "seed": seed,
                                     "error": type(exc).__name__, "message": str(exc), "exit_code": c})
                    print(_error_json(exc, c, run_id=run_id), file=sys.stderr)

    write_metrics(out_dir / "metrics.csv", results)
    agg = aggregate(results)
    summary = {
        "command": command,
        "config_hash": digest,
        "runs": [r.summary() for r in results],
        "aggregate": agg,
        "failures": failures,
    }
    for short, kind in (("putt", "qtt-putt"), ("noup", "qtt-noup"), ("cp", "cp"),
                        ("tucker", "tucker"), ("ttsvd", "ttsvd")):
        if kind in agg:
            summary[f"{short}_psnr"] = agg[kind]["psnr_mean"]
    (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), sort_keys=True, indent=2) + "\n")
    if command == "compare":
        write_compare(out_dir / "compare.csv", results, agg)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="putt", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fit2d": "fit a 2D image (default: the bundled 256x256 image)",
        "fit3d": "fit a 3D raw f32 volume",
        "denoise": "fit a noisy copy and score against the clean input",
        "complete": "fit from a random subset of entries (or a mask file)",
        "svd": "TT-SVD baseline at r_max",
        "compare": "models x seeds (x sweep) with aggregate rows in compare.csv",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=Path("putt-out"), help="output directory")
        p.add_argument("--seed", type=int, help="run a single seed (overrides 'seeds')")
        p.add_argument("--threads", type=int, help="BLAS thread limit")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        raw = {}
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = resolve_config(raw, args.command, args.seed)
        with threadpool_limits(limits=args.threads):
            return execute(args.command, cfg, args.out)
    except Exception as exc:
        code = _classify(exc)
        print(_error_json(exc, code), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

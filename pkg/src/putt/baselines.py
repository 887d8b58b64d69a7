"""CP and Tucker models fitted with the same sampled-MSE harness as the QTT.

Both are upsampled between resolutions by linearly interpolating their
spatial factors to twice the length.
"""

from __future__ import annotations

import string
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Grid
from .optim import AdamState, TraceRow, TrainConfig, adam_update, lr_at


def _check_coords(coords, shape: Sequence[int]) -> np.ndarray:
    c = np.atleast_2d(np.asarray(coords, dtype=np.int64))
    if c.shape[1] != len(shape):
        raise ValueError(f"expected {len(shape)} coordinates per point, got {c.shape[1]}")
    if c.size and ((c < 0).any() or (c >= np.asarray(shape)).any()):
        raise ValueError("coordinate out of range")
    return c


@dataclass
class CpModel:
    """Sum of ``R`` rank-1 terms; ``factors[k]`` has shape ``(n_k, R)``."""

    factors: list[np.ndarray]

    def __post_init__(self):
        self.factors = [np.asarray(f, dtype=np.float64) for f in self.factors]
        if len({f.shape[1] for f in self.factors}) != 1:
            raise ValueError("all CP factors must share the same rank")

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def params(self) -> list[np.ndarray]:
        return self.factors

    def with_params(self, params) -> "CpModel":
        return CpModel(list(params))

    def param_count(self) -> int:
        return sum(f.size for f in self.factors)

    def full(self) -> np.ndarray:
        d = len(self.factors)
        letters = string.ascii_lowercase[:d]
        spec = ",".join(f"{c}z" for c in letters) + "->" + letters
        return np.einsum(spec, *self.factors)

    def grads(self, W: np.ndarray) -> list[np.ndarray]:
        d = len(self.factors)
        letters = string.ascii_lowercase[:d]
        out = []
        for k in range(d):
            others = [f"{letters[l]}z" for l in range(d) if l != k]
            ops = [self.factors[l] for l in range(d) if l != k]
            spec = letters + "," + ",".join(others) + f"->{letters[k]}z"
            out.append(np.einsum(spec, W, *ops))
        return out

    def upsample(self) -> "CpModel":
        return CpModel([interpolate_factor(f, axis=0) for f in self.factors])


@dataclass
class TuckerModel:
    """Core ``(m_1, ..., m_d)`` with factors ``U^k`` of shape ``(m_k, n_k)``."""

    core: np.ndarray
    factors: list[np.ndarray]

    def __post_init__(self):
        self.core = np.asarray(self.core, dtype=np.float64)
        self.factors = [np.asarray(u, dtype=np.float64) for u in self.factors]
        if self.core.ndim != len(self.factors):
            raise ValueError("core order must equal the number of factors")
        for k, u in enumerate(self.factors):
            if u.shape[0] != self.core.shape[k]:
                raise ValueError(f"factor {k} has {u.shape[0]} rows, core needs {self.core.shape[k]}")
            if u.shape[0] > u.shape[1]:
                raise ValueError(f"factor {k}: m_k = {u.shape[0]} exceeds n_k = {u.shape[1]}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for u in self.factors)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.core, *self.factors]

    def with_params(self, params) -> "TuckerModel":
        return TuckerModel(params[0], list(params[1:]))

    def param_count(self) -> int:
        return self.core.size + sum(u.size for u in self.factors)

    def _letters(self):
        d = len(self.factors)
        return string.ascii_lowercase[:d], string.ascii_lowercase[10 : 10 + d]

    def full(self) -> np.ndarray:
        core_ix, grid_ix = self._letters()
        ops = [f"{c}{g}" for c, g in zip(core_ix, grid_ix)]
        return np.einsum(f"{core_ix}," + ",".join(ops) + f"->{grid_ix}", self.core, *self.factors, optimize=True)

    def grads(self, W: np.ndarray) -> list[np.ndarray]:
        core_ix, grid_ix = self._letters()
        ops = [f"{c}{g}" for c, g in zip(core_ix, grid_ix)]
        out = [np.einsum(f"{grid_ix}," + ",".join(ops) + f"->{core_ix}", W, *self.factors, optimize=True)]
        for k in range(len(self.factors)):
            others = [ops[l] for l in range(len(ops)) if l != k]
            mats = [self.factors[l] for l in range(len(ops)) if l != k]
            spec = f"{grid_ix},{core_ix}," + ",".join(others) + f"->{ops[k]}"
            out.append(np.einsum(spec, W, self.core, *mats, optimize=True))
        return out

    def upsample(self) -> "TuckerModel":
        return TuckerModel(self.core.copy(), [interpolate_factor(u, axis=1) for u in self.factors])


def interpolate_factor(f: np.ndarray, axis: int = 0) -> np.ndarray:
    """Double the length along ``axis``: originals at even slots, midpoints between.

    The final slot replicates the last sample.
    """
    f = np.moveaxis(np.asarray(f, dtype=np.float64), axis, 0)
    n = f.shape[0]
    out = np.empty((2 * n,) + f.shape[1:])
    out[0::2] = f
    out[1:-1:2] = 0.5 * (f[:-1] + f[1:])
    out[-1] = f[-1]
    return np.moveaxis(out, 0, axis)


def cp_eval(model: CpModel, coords) -> np.ndarray:
    c = _check_coords(coords, model.shape)
    prod = np.ones((c.shape[0], model.rank))
    for k, f in enumerate(model.factors):
        prod *= f[c[:, k]]
    return prod.sum(axis=1)


def tucker_eval(model: TuckerModel, coords) -> np.ndarray:
    c = _check_coords(coords, model.shape)
    out = np.broadcast_to(model.core, (c.shape[0],) + model.core.shape)
    for k, u in enumerate(model.factors):
        cols = u[:, c[:, k]].T  # (N, m_k)
        out = np.einsum("ni...,ni->n...", out, cols)
    return out


def model_grad_mse(model, coords, targets):
    """Batch MSE and analytic gradients for a CP or Tucker model."""
    c = _check_coords(coords, model.shape)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if c.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    flat = np.ravel_multi_index(tuple(c.T), model.shape)
    return _grad_flat(model, flat, y)


def _grad_flat(model, flat, y):
    full = model.full()
    resid = full.ravel()[flat] - y
    W = np.bincount(flat, weights=2.0 * resid / y.size, minlength=full.size).reshape(full.shape)
    return float(np.mean(resid**2)), model.grads(W)


def cp_param_count(shape: Sequence[int], rank: int) -> int:
    return int(sum(shape) * rank)


def tucker_param_count(shape: Sequence[int], ranks: Sequence[int]) -> int:
    return int(np.prod(ranks) + sum(m * n for m, n in zip(ranks, shape)))


def cp_rank_for_budget(shape: Sequence[int], budget: int) -> int:
    return max(1, budget // sum(shape))


def tucker_rank_for_budget(shape: Sequence[int], budget: int) -> int:
    """Largest uniform ``m`` whose parameter count fits ``budget``."""
    m = 1
    while m < min(shape) and tucker_param_count(shape, [m + 1] * len(shape)) <= budget:
        m += 1
    return m


def random_cp(shape, rank: int, sigma: float, rng) -> CpModel:
    d = len(shape)
    std = (sigma**2 / rank) ** (1.0 / (2 * d))
    return CpModel([rng.normal(0.0, std, size=(n, rank)) for n in shape])


def random_tucker(shape, ranks, sigma: float, rng) -> TuckerModel:
    d = len(shape)
    std = (sigma**2 / float(np.prod(ranks))) ** (1.0 / (2 * (d + 1)))
    core = rng.normal(0.0, std, size=tuple(ranks))
    return TuckerModel(core, [rng.normal(0.0, std, size=(m, n)) for m, n in zip(ranks, shape)])


def train_baseline(kind: str, pyramid: Sequence[Grid], config: TrainConfig, rank: int, *, callback=None):
    """Coarse-to-fine sampled fitting of a CP (``rank`` = R) or Tucker (``rank`` = m) model.

    ``callback(it, model)`` runs after every step.
    """
    pyramid = list(pyramid)
    if len(pyramid) != len(config.upsample_iters) + 1:
        raise ValueError("pyramid and upsampling schedule do not match")
    rng = np.random.default_rng(config.seed)
    shape = pyramid[0].shape
    if kind == "cp":
        model = random_cp(shape, rank, config.init_sigma, rng)
    elif kind == "tucker":
        model = random_tucker(shape, [rank] * len(shape), config.init_sigma, rng)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    schedule = config.schedule()
    ends = [*config.upsample_iters, config.total_iters]
    trace = []
    it = 0
    for level, (grid, end) in enumerate(zip(pyramid, ends)):
        if level > 0:
            model = model.upsample()
        if model.shape != grid.shape:
            raise ValueError(f"model shape {model.shape} does not match level {grid.shape}")
        observed = np.flatnonzero(grid.observed.ravel())
        if observed.size == 0:
            raise ValueError("target has no observed entries")
        values = grid.values.ravel()
        state = AdamState.zeros_like(model.params)
        for _ in range(end - it):
            flat = observed[rng.integers(0, observed.size, size=config.batch_size)]
            lr = lr_at(schedule, it)
            # divergence is reported below as a non-finite loss
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = _grad_flat(model, flat, values[flat])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at iteration {it}")
            params, state = adam_update(state, model.params, grads, lr)
            model = model.with_params(params)
            trace.append(TraceRow(it, level, lr, loss))
            if callback is not None:
                callback(it, model)
            it += 1
    return model, trace


# -- checkpoints ---------------------------------------------------------------


def save_model(path, model) -> None:
    """Binary checkpoint: ``CPD1`` or ``TUK1`` header then f64 little-endian arrays."""
    with open(path, "wb") as fh:
        if isinstance(model, CpModel):
            fh.write(b"CPD1")
            fh.write(struct.pack("<2I", len(model.factors), model.rank))
            fh.write(struct.pack(f"<{len(model.shape)}I", *model.shape))
            arrays = model.factors
        elif isinstance(model, TuckerModel):
            d = len(model.factors)
            fh.write(b"TUK1")
            fh.write(struct.pack("<I", d))
            fh.write(struct.pack(f"<{d}I", *model.core.shape))
            fh.write(struct.pack(f"<{d}I", *model.shape))
            arrays = model.params
        else:
            raise TypeError(f"cannot checkpoint {type(model).__name__}")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path):
    data = open(path, "rb").read()
    magic = data[:4]

    def take(shape, off):
        n = int(np.prod(shape))
        return np.frombuffer(data, "<f8", n, off).reshape(shape).copy(), off + 8 * n

    if magic == b"CPD1":
        d, r = struct.unpack_from("<2I", data, 4)
        shape = struct.unpack_from(f"<{d}I", data, 12)
        off = 12 + 4 * d
        factors = []
        for n in shape:
            f, off = take((n, r), off)
            factors.append(f)
        return CpModel(factors)
    if magic == b"TUK1":
        (d,) = struct.unpack_from("<I", data, 4)
        ranks = struct.unpack_from(f"<{d}I", data, 8)
        shape = struct.unpack_from(f"<{d}I", data, 8 + 4 * d)
        off = 8 + 8 * d
        core, off = take(ranks, off)
        factors = []
        for m, n in zip(ranks, shape):
            u, off = take((m, n), off)
            factors.append(u)
        return TuckerModel(core, factors)
    raise ValueError(f"{path}: unknown checkpoint magic {magic!r}")

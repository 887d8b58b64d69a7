"""Sampled-entry MSE fitting of QTTs: gradients, Adam, LR schedule, PuTT loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import Grid
from .prolong import prolong
from .tt import (
    QttLayout,
    TensorTrain,
    _check_indices,
    _left_partials,
    _right_partials,
    coords_to_qtt,
    quantize_grid,
    random_tt,
    trapezoid_ranks,
)

log = logging.getLogger(__name__)

# dense-environment gradients are only used below this many tensor entries
DENSE_GRAD_LIMIT = 2**22


# -- gradients ---------------------------------------------------------------


def _flat_index(idx: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    return np.ravel_multi_index(tuple(idx.T), tuple(dims))


def _grads_sampled(tt: TensorTrain, idx: np.ndarray, weights: np.ndarray):
    left = _left_partials(tt, idx)
    right = _right_partials(tt, idx)
    grads = []
    for k, core in enumerate(tt.cores):
        g = np.zeros_like(core)
        wl = left[k] * weights[:, None]
        for j in range(core.shape[1]):
            rows = idx[:, k] == j
            if rows.any():
                g[:, j, :] = wl[rows].T @ right[k + 1][rows]
        grads.append(g)
    return left[-1][:, 0], grads


def _environments(tt: TensorTrain):
    """Left envs ``(prod n_<k, R_k)`` and right envs ``(R_k, prod n_>=k)``."""
    left = [np.ones((1, 1))]
    for core in tt.cores:
        r, n, s = core.shape
        left.append((left[-1] @ core.reshape(r, n * s)).reshape(-1, s))
    right = [None] * (tt.D + 1)
    right[tt.D] = np.ones((1, 1))
    for k in range(tt.D - 1, -1, -1):
        r, n, s = tt.cores[k].shape
        right[k] = (tt.cores[k].reshape(r * n, s) @ right[k + 1]).reshape(r, -1)
    return left, right


def _grads_dense(tt: TensorTrain, envs, flat: np.ndarray, weights: np.ndarray):
    """Gradients via full environments and a scattered weight tensor."""
    left, right = envs
    total = left[-1].shape[0]
    W = np.bincount(flat, weights=weights, minlength=total)
    grads = []
    for k, core in enumerate(tt.cores):
        r, n, s = core.shape
        a = left[k].shape[0]
        b = total // (a * n)
        cost_left = r * total + r * n * b * s
        cost_right = s * total + a * r * n * s
        if cost_left <= cost_right:
            t = (left[k].T @ W.reshape(a, n * b)).reshape(r * n, b)
            g = t @ right[k + 1].T
        else:
            t = (W.reshape(a * n, b) @ right[k + 1].T).reshape(a, n * s)
            g = left[k].T @ t
        grads.append(g.reshape(r, n, s))
    return grads


def _sample_cost(tt: TensorTrain, batch: int) -> float:
    # per-sample gathers run roughly 10x slower per flop than the dense GEMMs
    return 30.0 * batch * sum(c.shape[0] * c.shape[2] for c in tt.cores)


def _dense_cost(tt: TensorTrain) -> float:
    total = float(np.prod(tt.phys_dims, dtype=np.float64))
    return 4.0 * total * sum(c.shape[0] + c.shape[2] for c in tt.cores)


def grad_mse(tt: TensorTrain, idx_batch, targets, *, method: str = "auto"):
    """Mean squared error over a batch and its analytic gradient per core.

    ``method`` selects per-sample partial products (``"sample"``) or full
    environment contraction with scattered residuals (``"dense"``); both give
    the same result up to rounding.  ``"auto"`` picks the cheaper one.
    """
    idx = _check_indices(tt, idx_batch)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if idx.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    if y.shape[0] != idx.shape[0]:
        raise ValueError("targets and indices differ in length")
    flat = _flat_index(idx, tt.phys_dims)
    return _grad_flat(tt, idx, flat, y, method)


def _grad_flat(tt, idx, flat, y, method):
    n = y.shape[0]
    if method == "auto":
        total = float(np.prod(tt.phys_dims, dtype=np.float64))
        dense_ok = total <= DENSE_GRAD_LIMIT
        method = "dense" if dense_ok and _dense_cost(tt) < _sample_cost(tt, n) else "sample"
    if method == "dense":
        envs = _environments(tt)
        resid = envs[0][-1][flat, 0] - y
        grads = _grads_dense(tt, envs, flat, 2.0 * resid / n)
    elif method == "sample":
        if idx is None:
            idx = np.stack(np.unravel_index(flat, tt.phys_dims), axis=1)
        pred = _left_partials(tt, idx)[-1][:, 0]
        resid = pred - y
        _, grads = _grads_sampled(tt, idx, 2.0 * resid / n)
    else:
        raise ValueError(f"unknown gradient method {method!r}")
    return float(np.mean(resid**2)), grads


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_update(state: AdamState, params: Sequence[np.ndarray], grads, lr: float):
    """One bias-corrected Adam step on a list of arrays; returns new params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, state.beta1, state.beta2, state.eps)


def adam_step(state: AdamState, tt: TensorTrain, grads, lr: float):
    cores, state = adam_update(state, tt.cores, grads, lr)
    return TensorTrain(cores), state


# -- learning rate -----------------------------------------------------------


@dataclass(frozen=True)
class LrSchedule:
    """Staged exponential decay with per-stage warmup.

    Stage ``s`` spans the iterations between consecutive upsampling events.
    Its peak is ``base_lr * beta**s``; stages after the first ramp linearly
    from 10% of the peak over ``warmup_iters`` and then every stage decays
    exponentially so its last iteration sits at ``alpha * peak``.
    """

    base_lr: float = 5e-3
    alpha: float = 0.1
    beta: float = 0.9
    warmup_iters: int = 50
    boundaries: tuple[int, ...] = ()
    total_iters: int = 1000

    def __post_init__(self):
        if not 0 < self.alpha <= 1 or not 0 < self.beta <= 1:
            raise ValueError("alpha and beta must lie in (0, 1]")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be >= 0")
        b = list(self.boundaries)
        if any(x >= y for x, y in zip(b, b[1:])) or (b and (b[0] <= 0 or b[-1] >= self.total_iters)):
            raise ValueError("boundaries must be strictly increasing inside (0, total_iters)")

    def stage(self, it: int) -> tuple[int, int, int]:
        """``(stage index, start, end)`` of the stage containing ``it``."""
        edges = [0, *self.boundaries, self.total_iters]
        s = int(np.searchsorted(self.boundaries, it, side="right"))
        return s, edges[s], edges[s + 1]


def lr_at(schedule: LrSchedule, it: int, completed_upsamples: int | None = None) -> float:
    s, start, end = schedule.stage(it)
    if completed_upsamples is not None:
        s = completed_upsamples
    peak = schedule.base_lr * schedule.beta**s
    length = end - start
    t = it - start
    warm = 0 if s == 0 else min(schedule.warmup_iters, max(length - 1, 0) // 2)
    if t < warm:
        return peak * (0.1 + 0.9 * t / warm)
    span = length - 1 - warm
    if span <= 0:
        return peak
    return peak * schedule.alpha ** ((t - warm) / span)


def adapt_base_lr(base: float, mode: str, param: float, factor: float = 0.1) -> float:
    """Base LR adapted to the noise level (``"noise"``) or observed fraction (``"missing"``)."""
    if mode == "noise":
        if param < 0:
            raise ValueError("noise level must be >= 0")
        return base * factor**param
    if mode == "missing":
        if not 0.0 <= param <= 1.0:
            raise ValueError("observed fraction must lie in [0, 1]")
        return base * factor ** (1.0 - param)
    raise ValueError(f"unknown adaptation mode {mode!r}")


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    r_max: int | None = 64
    total_iters: int = 1024
    upsample_iters: tuple[int, ...] = ()
    batch_size: int = 512**2
    seed: int = 0
    base_lr: float = 5e-3
    alpha: float = 0.1
    beta: float = 0.9
    warmup_iters: int = 50
    init_sigma: float = 0.1
    init_per_core: bool = False
    rank_growth_iters: tuple[int, ...] = ()
    rank_growth_delta: int = 1
    rank_growth_cap: int | None = None

    def __post_init__(self):
        self.upsample_iters = tuple(int(x) for x in self.upsample_iters)
        self.rank_growth_iters = tuple(int(x) for x in self.rank_growth_iters)
        u = self.upsample_iters
        if any(a >= b for a, b in zip(u, u[1:])) or (u and (u[0] <= 0 or u[-1] >= self.total_iters)):
            raise ValueError("upsample_iters must be strictly increasing and < total_iters")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.r_max is not None and self.r_max < 1:
            raise ValueError("r_max must be >= 1")

    def schedule(self) -> LrSchedule:
        return LrSchedule(
            self.base_lr, self.alpha, self.beta, self.warmup_iters, self.upsample_iters, self.total_iters
        )


@dataclass(frozen=True)
class TraceRow:
    iter: int
    level: int
    lr: float
    loss: float


@dataclass
class _Target:
    """A grid prepared for sampling in QTT index space."""

    layout: QttLayout
    values: np.ndarray  # quantized, flattened
    observed: np.ndarray  # flat QTT indices of observed entries

    @classmethod
    def from_grid(cls, grid: Grid, layout: QttLayout) -> "_Target":
        if grid.shape != layout.shape:
            raise ValueError(f"target shape {grid.shape} does not match model {layout.shape}")
        coords = np.argwhere(grid.observed)
        if coords.shape[0] == 0:
            raise ValueError("target has no observed entries")
        idx = coords_to_qtt(layout, coords)
        flat = _flat_index(idx, [layout.phys_dim] * layout.D)
        return cls(layout, quantize_grid(grid.values, layout).ravel(), flat)


def grow_rank(tt: TensorTrain, delta: int, r_cap: int | None, rng=None, scale: float = 1e-3):
    """Enlarge every internal bond by ``delta`` (capped) without changing the tensor.

    New columns of the left core get small random values and new rows of the
    right core are zero, so chain products are unchanged while the new
    parameters still receive gradient.
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    rng = np.random.default_rng(rng)
    limit = trapezoid_ranks(tt.phys_dims, r_cap)
    old = tt.ranks
    new = [min(old[k] + delta, limit[k]) if 0 < k < tt.D else 1 for k in range(tt.D + 1)]
    new = [max(n, o) for n, o in zip(new, old)]
    cores = []
    for k, c in enumerate(tt.cores):
        r, n, s = c.shape
        g = np.zeros((new[k], n, new[k + 1]))
        g[:r, :, :s] = c
        if new[k + 1] > s:
            g[:r, :, s:] = rng.normal(0.0, scale, size=(r, n, new[k + 1] - s))
        cores.append(g)
    return TensorTrain(cores)


def _pad_state(state: AdamState, tt: TensorTrain) -> AdamState:
    def pad(a, shape):
        out = np.zeros(shape)
        out[tuple(slice(0, s) for s in a.shape)] = a
        return out

    shapes = [c.shape for c in tt.cores]
    return AdamState(
        [pad(m, s) for m, s in zip(state.m, shapes)],
        [pad(v, s) for v, s in zip(state.v, shapes)],
        state.step, state.beta1, state.beta2, state.eps,
    )


def train_level(
    tt: TensorTrain,
    layout: QttLayout,
    target: Grid,
    config: TrainConfig,
    level_iters: int,
    rng: np.random.Generator,
    *,
    start_iter: int = 0,
    level: int = 0,
    state: AdamState | None = None,
    callback: Callable[[int, TensorTrain, QttLayout], None] | None = None,
):
    """Run ``level_iters`` Adam steps on batches sampled from ``target``.

    Returns the trained model, the per-step trace and the optimizer state.
    """
    tgt = _Target.from_grid(target, layout)
    schedule = config.schedule()
    if state is None:
        state = AdamState.zeros_like(tt.cores)
    trace = []
    for step in range(level_iters):
        it = start_iter + step
        if it in config.rank_growth_iters:
            tt = grow_rank(tt, config.rank_growth_delta, config.rank_growth_cap, rng)
            state = _pad_state(state, tt)
        flat = tgt.observed[rng.integers(0, tgt.observed.size, size=config.batch_size)]
        lr = lr_at(schedule, it)
        # divergence is reported below as a non-finite loss
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = _grad_flat(tt, None, flat, tgt.values[flat], "auto")
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        tt, state = adam_step(state, tt, grads, lr)
        trace.append(TraceRow(it, level, lr, loss))
        if callback is not None:
            callback(it, tt, layout)
    return tt, trace, state


def train_putt(
    pyramid: Sequence[Grid],
    config: TrainConfig,
    *,
    callback: Callable[[int, TensorTrain, QttLayout], None] | None = None,
):
    """Coarse-to-fine training: fit, prolong, truncate, repeat.

    ``pyramid`` runs coarse to fine with one upsampling iteration per level
    transition.  Returns the full-resolution model, its layout and the trace.
    """
    pyramid = list(pyramid)
    if len(pyramid) != len(config.upsample_iters) + 1:
        raise ValueError(
            f"pyramid has {len(pyramid)} levels but {len(config.upsample_iters)} upsampling iterations"
        )
    for a, b in zip(pyramid, pyramid[1:]):
        if any(2 * x != y for x, y in zip(a.shape, b.shape)) or len(a.shape) != len(b.shape):
            raise ValueError("pyramid levels must double in size")
    rng = np.random.default_rng(config.seed)
    layout = QttLayout.for_shape(pyramid[0].shape)
    tt = random_tt(layout, config.r_max, config.init_sigma, rng, per_core=config.init_per_core)
    ends = [*config.upsample_iters, config.total_iters]
    trace: list[TraceRow] = []
    it = 0
    for level, (grid, end) in enumerate(zip(pyramid, ends)):
        if level > 0:
            tt, layout = prolong(tt, layout, config.r_max)
            log.debug("upsampled to %s at iteration %d, ranks %s", layout.shape, it, tt.ranks)
        # a fresh optimizer per resolution
        tt, rows, _ = train_level(
            tt, layout, grid, config, end - it, rng, start_iter=it, level=level, callback=callback
        )
        trace.extend(rows)
        it = end
    return tt, layout, trace

"""Tensor-train and quantized tensor-train data model.

A QTT of a ``2^D``-per-side grid in ``d`` spatial dimensions has ``D`` cores
of physical size ``2^d``.  Core ``k`` (0-based) holds the ``k``-th most
significant bit of every axis, packed x-major, so the first core selects a
quadrant (octant in 3D) and later cores refine it.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_SAFETY_CAP = 2**24


class ResourceLimitError(RuntimeError):
    """Raised when a dense conversion would exceed the configured entry cap."""


def safety_cap() -> int:
    """Maximum number of dense entries ``to_dense`` will materialize.

    Read from the ``QTT_SAFETY_CAP`` environment variable when set.
    """
    value = os.environ.get("QTT_SAFETY_CAP")
    if value is None:
        return DEFAULT_SAFETY_CAP
    return int(value)


@dataclass(frozen=True)
class QttLayout:
    d: int
    D: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {self.d}")
        if self.D < 1:
            raise ValueError(f"depth must be >= 1, got {self.D}")

    @property
    def side(self) -> int:
        return 2**self.D

    @property
    def phys_dim(self) -> int:
        return 2**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def size(self) -> int:
        return self.side**self.d

    def with_depth(self, D: int) -> "QttLayout":
        return QttLayout(self.d, D)

    @classmethod
    def for_shape(cls, shape: Sequence[int]) -> "QttLayout":
        shape = tuple(int(s) for s in shape)
        if len(set(shape)) != 1:
            raise ValueError(f"grid must have equal sides, got {shape}")
        side = shape[0]
        if side < 2 or side & (side - 1):
            raise ValueError(f"grid side must be a power of two >= 2, got {side}")
        return cls(len(shape), side.bit_length() - 1)


@dataclass
class TensorTrain:
    """Chain of order-3 cores ``[R_k, n_k, R_{k+1}]`` with boundary ranks 1."""

    cores: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.cores:
            raise ValueError("a tensor train needs at least one core")
        self.cores = [np.asarray(c, dtype=np.float64) for c in self.cores]
        for k, c in enumerate(self.cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} must be order 3, got shape {c.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise ValueError(
                    f"bond mismatch between cores {k} and {k + 1}: "
                    f"{self.cores[k].shape} vs {self.cores[k + 1].shape}"
                )

    @property
    def D(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> list[int]:
        return [c.shape[0] for c in self.cores] + [1]

    @property
    def phys_dims(self) -> list[int]:
        return [c.shape[1] for c in self.cores]

    def is_finite(self) -> bool:
        return all(np.isfinite(c).all() for c in self.cores)

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.cores])


@dataclass
class Mpo:
    """Chain of order-4 cores ``[S_k, n_out, n_in, S_{k+1}]``."""

    cores: list[np.ndarray]

    def __post_init__(self):
        self.cores = [np.asarray(c, dtype=np.float64) for c in self.cores]
        for k, c in enumerate(self.cores):
            if c.ndim != 4:
                raise ValueError(f"MPO core {k} must be order 4, got shape {c.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[3] != 1:
            raise ValueError("MPO boundary bonds must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[3] != self.cores[k + 1].shape[0]:
                raise ValueError(f"MPO bond mismatch between cores {k} and {k + 1}")

    @property
    def bonds(self) -> list[int]:
        return [c.shape[0] for c in self.cores] + [1]

    def to_matrix(self) -> np.ndarray:
        """Dense ``(prod n_out, prod n_in)`` matrix, indices MSB-first."""
        first = self.cores[0]
        acc = first.reshape(first.shape[1], first.shape[2], first.shape[3])
        for c in self.cores[1:]:
            o, i, _ = acc.shape
            s, no, ni, s2 = c.shape
            acc = np.einsum("oia,apqb->opiqb", acc, c).reshape(o * no, i * ni, s2)
        return acc[:, :, 0]


def trapezoid_ranks(phys_dims: Sequence[int], r_max: int | None) -> list[int]:
    """Boundary-padded rank profile ``[1, R_2, ..., R_D, 1]``.

    The bond after core ``k`` is the smaller of the products of physical
    dimensions on either side, clipped at ``r_max``.
    """
    phys_dims = [int(n) for n in phys_dims]
    if not phys_dims:
        raise ValueError("phys_dims must be non-empty")
    if any(n < 1 for n in phys_dims):
        raise ValueError("physical dimensions must be >= 1")
    if r_max is not None and r_max < 1:
        raise ValueError("r_max must be >= 1")
    ranks = [1]
    for k in range(1, len(phys_dims)):
        left = int(np.prod(phys_dims[:k], dtype=object))
        right = int(np.prod(phys_dims[k:], dtype=object))
        r = min(left, right)
        if r_max is not None:
            r = min(r, r_max)
        ranks.append(r)
    ranks.append(1)
    return ranks


def init_sigma(target_sigma: float, rank_profile: Sequence[int]) -> float:
    """Per-core std giving reconstructed entries a std of ``target_sigma``."""
    if target_sigma <= 0:
        raise ValueError("target sigma must be positive")
    D = len(rank_profile) - 1
    if D < 1:
        raise ValueError("rank profile must have at least two entries")
    log_ranks = float(np.sum(np.log(np.asarray(rank_profile, dtype=np.float64))))
    return float(np.exp((2.0 * np.log(target_sigma) - log_ranks) / (2.0 * D)))


def random_tt(
    layout: QttLayout,
    r_max: int | None,
    sigma: float = 1.0,
    seed: int | np.random.Generator | None = 0,
    *,
    per_core: bool = False,
) -> TensorTrain:
    """Random QTT with a trapezoid rank profile.

    With ``per_core=False`` (default) ``sigma`` is the target std of the
    reconstructed entries; with ``per_core=True`` it is used directly as the
    std of every core entry.
    """
    phys = [layout.phys_dim] * layout.D
    ranks = trapezoid_ranks(phys, r_max)
    std = sigma if per_core else init_sigma(sigma, ranks)
    rng = np.random.default_rng(seed)
    cores = [
        rng.normal(0.0, std, size=(ranks[k], phys[k], ranks[k + 1]))
        for k in range(layout.D)
    ]
    return TensorTrain(cores)


def coords_to_qtt(layout: QttLayout, coords) -> np.ndarray:
    """Map integer grid coordinates ``(N, d)`` to per-core indices ``(N, D)``.

    A single coordinate tuple returns a 1D array of length ``D``.
    """
    c = np.asarray(coords, dtype=np.int64)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    if c.shape[1] != layout.d:
        raise ValueError(f"expected {layout.d} coordinates per point, got {c.shape[1]}")
    if c.size and (c.min() < 0 or c.max() >= layout.side):
        raise ValueError(f"coordinates must lie in [0, {layout.side})")
    out = np.zeros((c.shape[0], layout.D), dtype=np.int64)
    for k in range(layout.D):
        shift = layout.D - 1 - k
        for a in range(layout.d):
            out[:, k] |= ((c[:, a] >> shift) & 1) << (layout.d - 1 - a)
    return out[0] if single else out


def qtt_to_coords(layout: QttLayout, idxs) -> np.ndarray:
    """Inverse of :func:`coords_to_qtt`."""
    q = np.asarray(idxs, dtype=np.int64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != layout.D:
        raise ValueError(f"expected {layout.D} core indices per point, got {q.shape[1]}")
    if q.size and (q.min() < 0 or q.max() >= layout.phys_dim):
        raise ValueError(f"core indices must lie in [0, {layout.phys_dim})")
    out = np.zeros((q.shape[0], layout.d), dtype=np.int64)
    for k in range(layout.D):
        shift = layout.D - 1 - k
        for a in range(layout.d):
            out[:, a] |= ((q[:, k] >> (layout.d - 1 - a)) & 1) << shift
    return out[0] if single else out


def _bit_axes(layout: QttLayout) -> tuple[tuple[int, ...], tuple[int, ...]]:
    # grid reshaped to (2,)*(d*D) has axis order (axis a, bit k); QTT wants (k, a)
    bits = (2,) * (layout.d * layout.D)
    perm = tuple(a * layout.D + k for k in range(layout.D) for a in range(layout.d))
    return bits, perm


def quantize_grid(grid, layout: QttLayout) -> np.ndarray:
    """Permute a ``(2^D,)*d`` grid into the ``(2^d,)*D`` interleaved tensor."""
    g = np.asarray(grid)
    if g.shape != layout.shape:
        for s in g.shape:
            if s < 1 or s & (s - 1):
                raise ValueError(f"grid side {s} is not a power of two")
        raise ValueError(f"grid shape {g.shape} does not match layout {layout.shape}")
    bits, perm = _bit_axes(layout)
    return g.reshape(bits).transpose(perm).reshape((layout.phys_dim,) * layout.D)


def unquantize(dense, layout: QttLayout) -> np.ndarray:
    """Inverse of :func:`quantize_grid`."""
    t = np.asarray(dense)
    if t.size != layout.size:
        raise ValueError(f"tensor with {t.size} entries does not match layout")
    bits, perm = _bit_axes(layout)
    inv = np.argsort(perm)
    return t.reshape(bits).transpose(inv).reshape(layout.shape)


def _check_indices(tt: TensorTrain, idx: np.ndarray) -> np.ndarray:
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    if idx.shape[1] != tt.D:
        raise ValueError(f"expected {tt.D} indices per sample, got {idx.shape[1]}")
    dims = np.asarray(tt.phys_dims)
    if idx.size and ((idx < 0).any() or (idx >= dims).any()):
        raise ValueError("core index out of range")
    return idx


def _left_partials(tt: TensorTrain, idx: np.ndarray) -> list[np.ndarray]:
    """``out[k]`` is the (N, R_k) product of the first ``k`` selected slices."""
    n = idx.shape[0]
    out = [np.ones((n, 1))]
    for k, core in enumerate(tt.cores):
        prev = out[-1]
        nxt = np.empty((n, core.shape[2]))
        for j in range(core.shape[1]):
            rows = idx[:, k] == j
            nxt[rows] = prev[rows] @ core[:, j, :]
        out.append(nxt)
    return out


def _right_partials(tt: TensorTrain, idx: np.ndarray) -> list[np.ndarray]:
    """``out[k]`` is the (N, R_k) product of slices ``k..D-1`` (``out[D]`` = ones)."""
    n = idx.shape[0]
    out = [None] * (tt.D + 1)
    out[tt.D] = np.ones((n, 1))
    for k in range(tt.D - 1, -1, -1):
        core = tt.cores[k]
        nxt = np.empty((n, core.shape[0]))
        for j in range(core.shape[1]):
            rows = idx[:, k] == j
            nxt[rows] = out[k + 1][rows] @ core[:, j, :].T
        out[k] = nxt
    return out


def eval_batch(tt: TensorTrain, idx_batch) -> np.ndarray:
    """Evaluate the chain product for each row of per-core indices."""
    idx = _check_indices(tt, idx_batch)
    return _left_partials(tt, idx)[-1][:, 0]


def full_tensor(tt: TensorTrain) -> np.ndarray:
    """Contract all bonds, returning the ``(n_1, ..., n_D)`` tensor."""
    total = int(np.prod(tt.phys_dims, dtype=object))
    cap = safety_cap()
    if total > cap:
        raise ResourceLimitError(f"dense tensor has {total} entries, cap is {cap}")
    acc = tt.cores[0].reshape(-1, tt.cores[0].shape[2])
    for core in tt.cores[1:]:
        r, n, s = core.shape
        acc = (acc @ core.reshape(r, n * s)).reshape(-1, s)
    return acc.reshape(tt.phys_dims)


def to_dense(tt: TensorTrain, layout: QttLayout) -> np.ndarray:
    """Reconstruct the spatial grid represented by a QTT."""
    if tt.D != layout.D or any(n != layout.phys_dim for n in tt.phys_dims):
        raise ValueError("tensor train does not match layout")
    return unquantize(full_tensor(tt), layout)


def _fix_sign(u: np.ndarray, vh: np.ndarray) -> None:
    # largest-magnitude entry of each left singular vector made non-negative
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u *= signs
    vh *= signs[:, None]


def _svd_rank(s: np.ndarray, shape: tuple[int, int], r_max: int | None) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 1
    tol = s[0] * max(shape) * np.finfo(np.float64).eps
    r = max(1, int(np.count_nonzero(s > tol)))
    if r_max is not None:
        r = min(r, r_max)
    return r


def tt_svd(
    tensor, r_max: int | None = None, *, return_discarded: bool = False
):
    """Sequential SVD decomposition of a dense tensor into a tensor train.

    Numerically zero singular values are always dropped, so exact low-rank
    inputs get exact low ranks.  With ``return_discarded`` the discarded
    singular values of each cut are returned as a second value.
    """
    if r_max is not None and r_max < 1:
        raise ValueError("r_max must be >= 1")
    t = np.asarray(tensor, dtype=np.float64)
    if t.size > safety_cap():
        raise ResourceLimitError(f"tensor has {t.size} entries, cap is {safety_cap()}")
    dims = t.shape if t.ndim else (1,)
    cores = []
    discarded = []
    rank = 1
    rest = t.reshape(1, -1)
    for k, n in enumerate(dims[:-1]):
        mat = rest.reshape(rank * n, -1)
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        r = _svd_rank(s, mat.shape, r_max)
        discarded.append(s[r:].copy())
        u, s, vh = u[:, :r].copy(), s[:r], vh[:r].copy()
        _fix_sign(u, vh)
        cores.append(u.reshape(rank, n, r))
        rest = s[:, None] * vh
        rank = r
    cores.append(rest.reshape(rank, dims[-1], 1))
    tt = TensorTrain(cores)
    if return_discarded:
        return tt, discarded
    return tt


def left_orthogonalize(tt: TensorTrain) -> TensorTrain:
    """QR sweep left to right; every core but the last becomes left-orthogonal."""
    cores = [c.copy() for c in tt.cores]
    for k in range(len(cores) - 1):
        r, n, s = cores[k].shape
        q, rr = np.linalg.qr(cores[k].reshape(r * n, s))
        cores[k] = q.reshape(r, n, q.shape[1])
        cores[k + 1] = np.tensordot(rr, cores[k + 1], axes=(1, 0))
    return TensorTrain(cores)


def truncate(tt: TensorTrain, r_max: int | None, *, return_discarded: bool = False):
    """Re-compress bonds to at most ``r_max``.

    Left-orthogonalizes, then sweeps right to left with truncated SVDs.  The
    squared Frobenius error is bounded by the sum of squared discarded
    singular values.
    """
    if r_max is not None and r_max < 1:
        raise ValueError("r_max must be >= 1")
    cores = left_orthogonalize(tt).cores
    discarded = [np.zeros(0)] * (len(cores) - 1)
    for k in range(len(cores) - 1, 0, -1):
        r, n, s = cores[k].shape
        mat = cores[k].reshape(r, n * s)
        # SVD of the transpose so the gauge fix acts on the carried factor side
        u, sv, vh = np.linalg.svd(mat.T, full_matrices=False)
        keep = _svd_rank(sv, mat.shape, r_max)
        discarded[k - 1] = sv[keep:].copy()
        u, sv, vh = u[:, :keep].copy(), sv[:keep], vh[:keep].copy()
        _fix_sign(u, vh)
        cores[k] = u.T.reshape(keep, n, s)
        carry = vh.T * sv  # (r, keep)
        cores[k - 1] = np.tensordot(cores[k - 1], carry, axes=(2, 0))
    out = TensorTrain(cores)
    if return_discarded:
        return out, discarded
    return out


def param_count(tt: TensorTrain) -> int:
    return int(sum(c.size for c in tt.cores))


_MAGIC = b"QTT1"


def save_qtt(path, tt: TensorTrain, layout: QttLayout) -> None:
    """Write the binary ``QTT1`` checkpoint (little-endian).

    Layout: magic, u32 ``d``, ``D``, core count, u32 rank profile, then each
    core as f64 in ``[R_k][2^d][R_{k+1}]`` order.
    """
    if tt.phys_dims != [layout.phys_dim] * tt.D:
        raise ValueError("tensor train does not match layout")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<3I", layout.d, layout.D, tt.D))
        fh.write(struct.pack(f"<{tt.D + 1}I", *tt.ranks))
        for c in tt.cores:
            fh.write(np.ascontiguousarray(c, dtype="<f8").tobytes())


def load_qtt(path) -> tuple[TensorTrain, QttLayout]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a QTT1 checkpoint")
    d, D, ncores = struct.unpack_from("<3I", data, 4)
    off = 16
    ranks = struct.unpack_from(f"<{ncores + 1}I", data, off)
    off += 4 * (ncores + 1)
    cores = []
    for k in range(ncores):
        shape = (ranks[k], 2**d, ranks[k + 1])
        n = int(np.prod(shape))
        cores.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy())
        off += 8 * n
    if off != len(data):
        raise ValueError(f"{path}: trailing or missing bytes in checkpoint")
    return TensorTrain(cores), QttLayout(d, D)

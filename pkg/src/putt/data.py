"""Grids, NetPBM / raw-volume I/O, pyramids, noise and missing-data masks."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class GridFormatError(ValueError):
    """Malformed file or unsupported grid dimensions."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class Grid:
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim not in (1, 2, 3):
            raise GridFormatError(f"grid must be 1D, 2D or 3D, got {self.values.ndim}D")
        for s in self.values.shape:
            if not _is_pow2(s):
                raise GridFormatError(f"grid dims must be powers of two, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise GridFormatError("grid values must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise GridFormatError("mask shape does not match grid")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def observed(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplace"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ValueError("noise scale must be >= 0")


# -- NetPBM ------------------------------------------------------------------


def _read_tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise GridFormatError("truncated NetPBM header")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise GridFormatError(f"bad NetPBM header token {data[start:pos]!r}") from None
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_netpbm(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM (P5) or PPM (P6).  Returns raw samples and maxval."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise GridFormatError(f"{path}: unsupported NetPBM magic {magic!r}")
    (width, height, maxval), pos = _read_tokens(data, 3, 2)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise GridFormatError(f"{path}: invalid header values")
    channels = 3 if magic == b"P6" else 1
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height * channels
    nbytes = count * np.dtype(dtype).itemsize
    if len(data) - pos < nbytes:
        raise GridFormatError(f"{path}: raster is truncated")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raw.reshape(shape).astype(np.float64), maxval


def write_pgm(path, values: np.ndarray, maxval: int = 65535) -> None:
    """Write a 2D array in [0, 1] as a binary PGM."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    if v.ndim != 2:
        raise GridFormatError("PGM output needs a 2D array")
    q = np.rint(v * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.astype(dtype).tobytes())


def _luma(rgb: np.ndarray) -> np.ndarray:
    return rgb @ np.array([0.299, 0.587, 0.114])


def load_grid(path, mask_path=None) -> Grid:
    """Load a 2D image (PGM/PPM) or a 3D raw f32 volume with a JSON sidecar.

    Values are scaled to [0, 1] and clamped.  A mask PGM (0 = missing,
    nonzero = observed) can be attached.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() in (".raw", ".f32"):
        sidecar = path.with_suffix(".json")
        try:
            meta = json.loads(sidecar.read_text())
            dims = [int(x) for x in meta["dims"]]
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise GridFormatError(f"{sidecar}: bad volume sidecar ({exc})") from None
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != int(np.prod(dims)):
            raise GridFormatError(f"{path}: expected {np.prod(dims)} samples, got {raw.size}")
        values = raw.astype(np.float64).reshape(dims)
    else:
        raw, maxval = read_netpbm(path)
        if raw.ndim == 3:
            raw = _luma(raw)
        values = raw / maxval
    for s in values.shape:
        if not _is_pow2(s):
            raise GridFormatError(f"{path}: dimensions {values.shape} are not powers of two")
    values = np.clip(values, 0.0, 1.0)
    mask = None
    if mask_path is not None:
        m, _ = read_netpbm(mask_path)
        if m.shape != values.shape:
            raise GridFormatError(f"{mask_path}: mask shape {m.shape} != grid shape {values.shape}")
        mask = m > 0
    return Grid(values, mask)


def save_grid(grid: Grid | np.ndarray, path) -> None:
    """Save a 2D grid as 16-bit PGM or a 3D grid as raw f32 plus JSON sidecar."""
    values = grid.values if isinstance(grid, Grid) else np.asarray(grid, dtype=np.float64)
    path = Path(path)
    if values.ndim == 2:
        write_pgm(path, values)
    elif values.ndim == 3:
        np.ascontiguousarray(values, dtype="<f4").tofile(path)
        path.with_suffix(".json").write_text(json.dumps({"dims": list(values.shape)}))
    else:
        raise GridFormatError(f"cannot save a {values.ndim}D grid")


def save_mask(mask: np.ndarray, path) -> None:
    write_pgm(path, np.asarray(mask, dtype=np.float64), maxval=255)


def bundled_image_path() -> Path:
    """Path of the bundled 256x256 grayscale test image."""
    return Path(os.path.dirname(__file__)) / "data" / "rocket256.pgm"


# -- pyramids ----------------------------------------------------------------


def _blocks(a: np.ndarray) -> np.ndarray:
    """Reshape to ``(n1/2, 2, n2/2, 2, ...)`` and move block axes last."""
    d = a.ndim
    shape = []
    for s in a.shape:
        shape += [s // 2, 2]
    b = a.reshape(shape)
    order = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
    return b.transpose(order).reshape(tuple(s // 2 for s in a.shape) + (-1,))


def downsample_avg(grid: Grid) -> Grid:
    """Halve every axis by averaging ``2^d`` blocks."""
    if min(grid.shape) < 2:
        raise ValueError("grid is too small to downsample")
    return Grid(_blocks(grid.values).mean(axis=-1))


def masked_avg_pool(grid: Grid) -> Grid:
    """Average only observed values per block; blocks with none stay unobserved (0)."""
    if grid.mask is None:
        raise ValueError("masked pooling needs a mask")
    if min(grid.shape) < 2:
        raise ValueError("grid is too small to downsample")
    vals = _blocks(grid.values)
    obs = _blocks(grid.mask)
    counts = obs.sum(axis=-1)
    sums = np.where(obs, vals, 0.0).sum(axis=-1)
    out = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return Grid(out, counts > 0)


def build_pyramid(grid: Grid, levels: int) -> list[Grid]:
    """Coarse-to-fine list of ``levels + 1`` grids ending with ``grid`` itself."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    depth = min(grid.shape).bit_length() - 1
    if levels > max(depth - 1, 0):
        raise ValueError(f"{levels} levels is too many for a side of {min(grid.shape)}")
    out = [grid]
    for _ in range(levels):
        g = out[-1]
        out.append(masked_avg_pool(g) if g.mask is not None else downsample_avg(g))
    return out[::-1]


# -- corruption --------------------------------------------------------------


def add_noise(grid: Grid, spec: NoiseSpec) -> Grid:
    """Add i.i.d. Gaussian (std ``scale``) or Laplace (scale ``b``) noise; no clamping."""
    if spec.scale == 0:
        return replace(grid, values=grid.values.copy())
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        noise = rng.normal(0.0, spec.scale, size=grid.shape)
    else:
        noise = rng.laplace(0.0, spec.scale, size=grid.shape)
    return Grid(grid.values + noise, None if grid.mask is None else grid.mask.copy())


def random_mask(dims, observed_fraction: float, seed: int = 0) -> np.ndarray:
    """Boolean mask with exactly ``round(p * N)`` observed entries."""
    if not 0.0 <= observed_fraction <= 1.0:
        raise ValueError("observed fraction must lie in [0, 1]")
    dims = tuple(int(s) for s in dims)
    n = int(np.prod(dims))
    k = int(round(observed_fraction * n))
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return mask.reshape(dims)

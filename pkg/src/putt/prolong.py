"""Prolongation MPO: linear interpolation to twice the resolution in QTT form.

For a 1D signal ``v`` of length ``2^D`` the fine signal has length
``2^(D+1)``; fine sample ``2x + 1`` copies ``v[x]`` and fine sample ``2x``
averages ``v[x - 1]`` and ``v[x]`` (with ``v[-1] = 0``).  Writing the fine
index as the coarse-length prefix ``t`` plus a final bit, the even samples
need ``x = t - 1``, which the MPO realizes as a borrow bit travelling from
the least significant core towards the most significant one.
"""

from __future__ import annotations

import numpy as np

from .tt import Mpo, QttLayout, TensorTrain, truncate


def dense_prolongation_matrix(n: int) -> np.ndarray:
    """Dense ``(2n, n)`` interpolation matrix (first row is half the first sample)."""
    P = np.zeros((2 * n, n))
    for x in range(n):
        P[2 * x + 1, x] = 1.0
        P[2 * x, x] = 0.5
        if x > 0:
            P[2 * x, x - 1] = 0.5
    return P


def _borrow_core() -> np.ndarray:
    # [borrow out, fine bit, coarse bit, borrow in]
    core = np.zeros((2, 2, 2, 2))
    core[0, 0, 0, 0] = 1.0
    core[0, 1, 1, 0] = 1.0
    core[0, 1, 0, 1] = 1.0
    core[1, 0, 1, 1] = 1.0
    return core


def _last_core() -> np.ndarray:
    # [borrow in to the core above, fine LSB, (no coarse index), 1]
    core = np.zeros((2, 2, 1, 1))
    core[0, 1, 0, 0] = 1.0
    core[0, 0, 0, 0] = 0.5
    core[1, 0, 0, 0] = 0.5
    return core


def prolongation_mpo_1d(D: int) -> Mpo:
    """MPO with ``D + 1`` cores and bond dimension 2 mapping ``2^D`` to ``2^(D+1)``."""
    if D < 1:
        raise ValueError(f"depth must be >= 1, got {D}")
    mid = _borrow_core()
    # a borrow leaving the most significant core would address x = -1: dropped
    cores = [mid[:1]] + [mid] * (D - 1) + [_last_core()]
    return Mpo([c.copy() for c in cores])


def _kron_all(blocks: list[np.ndarray]) -> np.ndarray:
    out = blocks[0]
    for b in blocks[1:]:
        out = np.kron(out, b)
    return out


def prolongation_mpo_nd(layout: QttLayout) -> Mpo:
    """Tensor product of ``d`` copies of the 1D operator, x-major per core."""
    if layout.d not in (1, 2, 3):
        raise ValueError("spatial dimension must be 1, 2 or 3")
    base = prolongation_mpo_1d(layout.D)
    if layout.d == 1:
        return base
    return Mpo([_kron_all([c] * layout.d) for c in base.cores])


def apply_mpo(mpo: Mpo, tt: TensorTrain) -> TensorTrain:
    """Contract an MPO with a tensor train core by core.

    An MPO with one more core than the train is allowed when its last core
    has no input index (``n_in = 1``); the train is padded with a trivial
    core.  Output bonds are products of MPO and train bonds.
    """
    cores = list(tt.cores)
    if len(mpo.cores) == len(cores) + 1:
        if mpo.cores[-1].shape[2] != 1:
            raise ValueError("extra MPO core must have input dimension 1")
        cores.append(np.ones((1, 1, 1)))
    if len(mpo.cores) != len(cores):
        raise ValueError(f"MPO has {len(mpo.cores)} cores, train has {tt.D}")
    out = []
    for k, (w, g) in enumerate(zip(mpo.cores, cores)):
        s, no, ni, s2 = w.shape
        r, n, r2 = g.shape
        if ni != n:
            raise ValueError(f"core {k}: MPO input dimension {ni} != train dimension {n}")
        c = np.einsum("aoib,ris->arobs", w, g)
        out.append(c.reshape(s * r, no, s2 * r2))
    return TensorTrain(out)


def prolong(
    tt: TensorTrain, layout: QttLayout, r_max: int | None
) -> tuple[TensorTrain, QttLayout]:
    """Upsample a QTT to depth ``D + 1`` and re-compress to ``r_max``."""
    if tt.D != layout.D or any(n != layout.phys_dim for n in tt.phys_dims):
        raise ValueError("tensor train does not match layout")
    fine = apply_mpo(prolongation_mpo_nd(layout), tt)
    return truncate(fine, r_max), layout.with_depth(layout.D + 1)


def prolong_dense(grid: np.ndarray) -> np.ndarray:
    """Dense reference: apply the 1D interpolation matrix along every axis."""
    out = np.asarray(grid, dtype=np.float64)
    for axis in range(out.ndim):
        P = dense_prolongation_matrix(out.shape[axis])
        out = np.moveaxis(np.tensordot(P, out, axes=(1, axis)), 0, axis)
    return out

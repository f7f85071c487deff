"""Displacement-field algebra.

A displacement field is a float array of shape ``(3, X, Y, Z)`` in voxel
units of the grid it lives on; component ``a`` displaces along array axis
``a``. The map it represents is ``x -> x + df[:, x]``.
"""
from __future__ import annotations

import numpy as np

from ._interp import sample_grid
from .errors import GridMismatchError


def check_field(df: np.ndarray, name: str = "field") -> np.ndarray:
    df = np.asarray(df, dtype=np.float64)
    if df.ndim != 4 or df.shape[0] != 3:
        raise GridMismatchError(f"{name} must have shape (3, X, Y, Z), got {df.shape}")
    return df


def _same_grid(a_shape, b_shape, what):
    if tuple(a_shape) != tuple(b_shape):
        raise GridMismatchError(f"{what}: grid {tuple(a_shape)} != {tuple(b_shape)}")


def zeros_like_grid(dims) -> np.ndarray:
    return np.zeros((3, *dims), dtype=np.float64)


def warp(moving: np.ndarray, df: np.ndarray) -> np.ndarray:
    """Backward warp: ``out(x) = moving(x + df(x))``, trilinear, edge-clamped."""
    moving = np.asarray(moving)
    df = check_field(df)
    _same_grid(moving.shape, df.shape[1:], "warp")
    return sample_grid(moving[None], df)[0]


def compose(aggregate: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Resample ``aggregate`` along ``flow`` and add: ``flow(x) + aggregate(x + flow(x))``.

    Satisfies ``warp(img, compose(a, b)) == warp(warp(img, a), b)`` up to
    interpolation error.
    """
    aggregate = check_field(aggregate, "aggregate")
    flow = check_field(flow, "flow")
    _same_grid(aggregate.shape, flow.shape, "compose")
    return flow + sample_grid(aggregate, flow)


def _cubic_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Catmull-Rom resampling matrix mapping ``n_src`` samples onto ``n_dst``.

    Destination index ``j`` sits at source coordinate ``j * n_src / n_dst``.
    Ghost samples beyond either end are linear extrapolations, so linear
    signals are reproduced exactly up to the borders.
    """
    mat = np.zeros((n_dst, n_src))
    if n_src == 1:
        mat[:, 0] = 1.0
        return mat
    pos = np.arange(n_dst) * (n_src / n_dst)
    for j, p in enumerate(pos):
        i = int(np.floor(p))
        t = p - i
        w = (
            0.5 * (-t**3 + 2 * t**2 - t),
            0.5 * (3 * t**3 - 5 * t**2 + 2),
            0.5 * (-3 * t**3 + 4 * t**2 + t),
            0.5 * (t**3 - t**2),
        )
        for off, wk in zip((-1, 0, 1, 2), w):
            k = i + off
            if k < 0:
                # p_k = p_0 + k (p_1 - p_0)
                mat[j, 0] += wk * (1 - k)
                mat[j, 1] += wk * k
            elif k > n_src - 1:
                e = k - (n_src - 1)
                mat[j, n_src - 1] += wk * (1 + e)
                mat[j, n_src - 2] -= wk * e
            else:
                mat[j, k] += wk
    return mat


def resample_cubic(vol: np.ndarray, target_dims) -> np.ndarray:
    """Separable Catmull-Rom resampling of a scalar grid (no value rescaling)."""
    out = np.asarray(vol, dtype=np.float64)
    for axis, n_dst in enumerate(target_dims):
        n_src = out.shape[axis]
        if n_src == n_dst:
            continue
        mat = _cubic_matrix(n_src, int(n_dst))
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [axis])), 0, axis)
    return np.ascontiguousarray(out)


def dilate_flow(df: np.ndarray, target_dims) -> np.ndarray:
    """Upsample a field to ``target_dims`` with cubic interpolation.

    Each component is multiplied by its axis' size ratio because
    displacements are stored in voxels of the grid they live on.
    """
    df = check_field(df)
    target = tuple(int(t) for t in target_dims)
    if any(t < s for t, s in zip(target, df.shape[1:])):
        raise ValueError(f"dilate_flow target {target} smaller than source {df.shape[1:]}")
    out = np.empty((3, *target))
    for a in range(3):
        out[a] = resample_cubic(df[a], target) * (target[a] / df.shape[1 + a])
    return out


def spatial_gradient(df: np.ndarray) -> np.ndarray:
    """``grad[c, a] = d df_c / d x_a``; central differences inside, one-sided at borders."""
    df = check_field(df)
    return np.stack([np.stack(np.gradient(df[c], edge_order=1), axis=0) for c in range(3)], axis=0)


def jacobian_determinant(df: np.ndarray) -> np.ndarray:
    """``det(I + grad df)`` per voxel in index space."""
    df = check_field(df)
    if min(df.shape[1:]) < 3:
        raise ValueError(f"jacobian needs at least 3 voxels per axis, got {df.shape[1:]}")
    g = spatial_gradient(df)
    a, b, c = g[0, 0] + 1, g[0, 1], g[0, 2]
    d, e, f = g[1, 0], g[1, 1] + 1, g[1, 2]
    p, q, r = g[2, 0], g[2, 1], g[2, 2] + 1
    return a * (e * r - f * q) - b * (d * r - f * p) + c * (d * q - e * p)


def gradient_penalty(df: np.ndarray) -> float:
    """Sum of squared forward differences over axes and components, divided by the voxel count."""
    df = check_field(df)
    n_vox = int(np.prod(df.shape[1:]))
    total = 0.0
    for axis in (1, 2, 3):
        if df.shape[axis] > 1:
            total += float(np.sum(np.diff(df, axis=axis) ** 2))
    return total / n_vox


def gradient_penalty_grad(df: np.ndarray) -> np.ndarray:
    """Derivative of :func:`gradient_penalty` with respect to every field value."""
    df = check_field(df)
    n_vox = int(np.prod(df.shape[1:]))
    grad = np.zeros_like(df)
    for axis in (1, 2, 3):
        if df.shape[axis] < 2:
            continue
        d = np.diff(df, axis=axis)
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        grad[tuple(lo)] -= 2 * d
        grad[tuple(hi)] += 2 * d
    return grad / n_vox

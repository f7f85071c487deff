"""Compiled trilinear sampling kernels (edge-clamped).

Every kernel writes one output voxel per loop iteration and performs no
reductions, so results are bit-identical for any thread count.
"""
import numba
import numpy as np

numba.config.THREADING_LAYER = "workqueue"


@numba.njit(inline="always")
def _corner(c, n):
    if c < 0.0:
        c = 0.0
    elif c > n - 1.0:
        c = n - 1.0
    i0 = int(c)
    if i0 > n - 1:
        i0 = n - 1
    i1 = i0 + 1 if i0 < n - 1 else i0
    return i0, i1, c - i0


@numba.njit(parallel=True, cache=True)
def _sample_grid(vols, disp, out):
    C, X, Y, Z = vols.shape
    for i in numba.prange(X):
        for j in range(Y):
            for k in range(Z):
                x0, x1, fx = _corner(i + disp[0, i, j, k], X)
                y0, y1, fy = _corner(j + disp[1, i, j, k], Y)
                z0, z1, fz = _corner(k + disp[2, i, j, k], Z)
                gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
                for c in range(C):
                    a = vols[c]
                    out[c, i, j, k] = (
                        ((a[x0, y0, z0] * gz + a[x0, y0, z1] * fz) * gy
                         + (a[x0, y1, z0] * gz + a[x0, y1, z1] * fz) * fy) * gx
                        + ((a[x1, y0, z0] * gz + a[x1, y0, z1] * fz) * gy
                           + (a[x1, y1, z0] * gz + a[x1, y1, z1] * fz) * fy) * fx
                    )


@numba.njit(parallel=True, cache=True)
def _sample_grid_grad(a, disp, out, grad):
    X, Y, Z = a.shape
    for i in numba.prange(X):
        for j in range(Y):
            for k in range(Z):
                cx = i + disp[0, i, j, k]
                cy = j + disp[1, i, j, k]
                cz = k + disp[2, i, j, k]
                x0, x1, fx = _corner(cx, X)
                y0, y1, fy = _corner(cy, Y)
                z0, z1, fz = _corner(cz, Z)
                gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
                c000 = a[x0, y0, z0]
                c001 = a[x0, y0, z1]
                c010 = a[x0, y1, z0]
                c011 = a[x0, y1, z1]
                c100 = a[x1, y0, z0]
                c101 = a[x1, y0, z1]
                c110 = a[x1, y1, z0]
                c111 = a[x1, y1, z1]
                e00 = c000 * gz + c001 * fz
                e01 = c010 * gz + c011 * fz
                e10 = c100 * gz + c101 * fz
                e11 = c110 * gz + c111 * fz
                f0 = e00 * gy + e01 * fy
                f1 = e10 * gy + e11 * fy
                out[i, j, k] = f0 * gx + f1 * fx
                # derivative is zero where the coordinate was clamped
                dx = f1 - f0 if (cx >= 0.0 and cx < X - 1.0) else 0.0
                dy = ((e01 - e00) * gx + (e11 - e10) * fx) if (cy >= 0.0 and cy < Y - 1.0) else 0.0
                if cz >= 0.0 and cz < Z - 1.0:
                    dz = ((c001 - c000) * gy + (c011 - c010) * fy) * gx + ((c101 - c100) * gy + (c111 - c110) * fy) * fx
                else:
                    dz = 0.0
                grad[0, i, j, k] = dx
                grad[1, i, j, k] = dy
                grad[2, i, j, k] = dz


@numba.njit(parallel=True, cache=True)
def _sample_points(vols, pts, out):
    C, X, Y, Z = vols.shape
    for p in numba.prange(pts.shape[0]):
        x0, x1, fx = _corner(pts[p, 0], X)
        y0, y1, fy = _corner(pts[p, 1], Y)
        z0, z1, fz = _corner(pts[p, 2], Z)
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        for c in range(C):
            a = vols[c]
            out[c, p] = (
                ((a[x0, y0, z0] * gz + a[x0, y0, z1] * fz) * gy
                 + (a[x0, y1, z0] * gz + a[x0, y1, z1] * fz) * fy) * gx
                + ((a[x1, y0, z0] * gz + a[x1, y0, z1] * fz) * gy
                   + (a[x1, y1, z0] * gz + a[x1, y1, z1] * fz) * fy) * fx
            )


def sample_grid(vols: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Sample ``vols`` (C, X, Y, Z) at ``index + disp``; returns (C, X, Y, Z)."""
    vols = np.ascontiguousarray(vols, dtype=np.float64)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    out = np.empty(vols.shape, dtype=np.float64)
    _sample_grid(vols, disp, out)
    return out


def sample_grid_grad(vol: np.ndarray, disp: np.ndarray):
    """Trilinear sample of a scalar volume plus its derivative w.r.t. the sample coordinate."""
    vol = np.ascontiguousarray(vol, dtype=np.float64)
    disp = np.ascontiguousarray(disp, dtype=np.float64)
    out = np.empty(vol.shape, dtype=np.float64)
    grad = np.empty((3, *vol.shape), dtype=np.float64)
    _sample_grid_grad(vol, disp, out, grad)
    return out, grad


def sample_points(vols: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Sample ``vols`` (C, X, Y, Z) at continuous index points (P, 3); returns (C, P)."""
    vols = np.ascontiguousarray(vols, dtype=np.float64)
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    out = np.empty((vols.shape[0], pts.shape[0]), dtype=np.float64)
    _sample_points(vols, pts, out)
    return out

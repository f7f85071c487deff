"""Synthetic chest phantoms, smooth ground-truth deformations and registration cases.

The Euler integrator here samples velocities with ``scipy.ndimage`` rather
than the package's own kernels so it can serve as an independent check of
:mod:`cascadereg.diffeo`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .field import warp
from .metrics import LandmarkSet
from .volume import Volume

AIR = -1000.0
TISSUE = 40.0
LUNG = -850.0
VESSEL = 40.0
LESION = 30.0


@dataclass
class Phantom:
    volume: Volume
    lungs: np.ndarray
    tubes: np.ndarray
    blobs: np.ndarray
    blob_centers: list = field(default_factory=list)
    blob_radii: list = field(default_factory=list)


@dataclass
class SyntheticCase:
    fixed: Volume
    moving: Volume
    ground_truth: np.ndarray
    landmarks: LandmarkSet
    seed: int
    velocity: np.ndarray = None
    phantom: Phantom = None


def _segment_distance(shape, a, b, box):
    """Distance from voxels inside ``box`` to the segment ``a``-``b``."""
    sl = tuple(slice(lo, hi) for lo, hi in box)
    grids = np.meshgrid(*[np.arange(lo, hi, dtype=np.float64) for lo, hi in box], indexing="ij")
    p = np.stack(grids, axis=-1)
    ab = b - a
    t = np.clip(((p - a) @ ab) / max(float(ab @ ab), 1e-12), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return sl, np.sqrt(np.sum((p - closest) ** 2, axis=-1))


def _lung_masks(dims):
    X, Y, Z = dims
    x, y, z = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    cx, cy, cz = (X - 1) / 2, (Y - 1) / 2, (Z - 1) / 2
    body = ((x - cx) / (0.46 * X)) ** 2 + ((y - cy) / (0.42 * Y)) ** 2 <= 1.0
    lungs = np.zeros(dims, dtype=bool)
    centers = []
    for side in (-1, 1):
        c = np.array([cx + side * 0.2 * X, cy, cz])
        ax = np.array([0.16 * X, 0.30 * Y, 0.40 * Z])
        lungs |= ((x - c[0]) / ax[0]) ** 2 + ((y - c[1]) / ax[1]) ** 2 + ((z - c[2]) / ax[2]) ** 2 <= 1.0
        centers.append((c, ax))
    return body, lungs, centers


def build_phantom(seed: int, dims=(96, 96, 96), n_blobs: int = 3, tubes_per_lung: int = 10,
                  blob_radius=(2.0, 5.0)) -> Phantom:
    """Deterministic chest-like phantom: air shell, body, two textured lungs, vessels and lesions."""
    dims = tuple(int(d) for d in dims)
    if min(dims) < 24:
        raise ValueError(f"phantom needs at least 24 voxels per axis, got {dims}")
    rng = np.random.default_rng(seed)
    body, lungs, centers = _lung_masks(dims)
    vol = np.full(dims, AIR)
    vol[body] = TISSUE
    texture = ndi.gaussian_filter(rng.standard_normal(dims), 1.5)
    texture *= 40.0 / max(texture.std(), 1e-12)
    vol[lungs] = LUNG + texture[lungs]

    tube_gain = np.zeros(dims)
    tubes = np.zeros(dims, dtype=bool)
    seg_len = 0.15 * min(dims)
    for c, ax in centers:
        for _ in range(tubes_per_lung):
            # rejection-sample a start point inside this lung
            while True:
                p = c + ax * rng.uniform(-0.8, 0.8, 3)
                if np.sum(((p - c) / ax) ** 2) < 0.7:
                    break
            radius = rng.uniform(1.0, 2.2)
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            for _ in range(rng.integers(3, 6)):
                q = p + seg_len * direction
                margin = 3.0 * radius + 1
                box = [
                    (max(int(np.floor(min(p[a], q[a]) - margin)), 0),
                     min(int(np.ceil(max(p[a], q[a]) + margin)) + 1, dims[a]))
                    for a in range(3)
                ]
                if all(hi > lo for lo, hi in box):
                    sl, dist = _segment_distance(dims, p, q, box)
                    tube_gain[sl] = np.maximum(tube_gain[sl], np.exp(-dist**2 / (2 * radius**2)))
                    tubes[sl] |= dist <= radius
                turn = rng.standard_normal(3) * 0.6
                direction = direction + turn
                direction /= np.linalg.norm(direction)
                p = q
    tube_gain *= lungs
    tubes &= lungs
    vol = vol + tube_gain * (VESSEL - vol)

    blobs = np.zeros(dims, dtype=bool)
    blob_centers, blob_radii = [], []
    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    for b in range(n_blobs):
        c, ax = centers[b % 2]
        while True:
            p = c + ax * rng.uniform(-0.6, 0.6, 3)
            if np.sum(((p - c) / ax) ** 2) < 0.35:
                break
        radii = rng.uniform(*blob_radius, 3)
        inside = sum(((g - pc) / r) ** 2 for g, pc, r in zip(grid, p, radii)) <= 1.0
        vol[inside] = LESION
        blobs |= inside
        blob_centers.append(p)
        blob_radii.append(radii)
    vol = np.clip(vol, AIR, 700.0)
    return Phantom(Volume(vol), lungs, tubes, blobs, blob_centers, blob_radii)


def make_phantom(seed: int, dims=(96, 96, 96), **kwargs) -> Volume:
    return build_phantom(seed, dims, **kwargs).volume


# ---------------------------------------------------------------- deformations


def euler_points(v: np.ndarray, points: np.ndarray, steps: int = 128) -> np.ndarray:
    """Displacement after unit time of ``dx/dt = v(x)`` for each start point (P, 3)."""
    x = np.array(points, dtype=np.float64).T.copy()
    h = 1.0 / steps
    for _ in range(steps):
        vel = np.stack([ndi.map_coordinates(v[c], x, order=1, mode="nearest") for c in range(3)])
        x += h * vel
    return x.T - np.asarray(points, dtype=np.float64)


def euler_dense(v: np.ndarray, steps: int = 128, stride: int = 1) -> np.ndarray:
    """Euler-integrated displacement on the whole grid.

    With ``stride > 1`` trajectories start on a sub-grid (still sampling the
    full-resolution velocity) and the result is filled in with cubic
    interpolation, which is accurate for the smooth fields used here.
    """
    dims = v.shape[1:]
    axes = [np.arange(0, n, stride, dtype=np.float64) for n in dims]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    disp = euler_points(v, pts, steps).T.reshape((3, *[len(a) for a in axes]))
    if stride == 1:
        return disp
    fine = np.stack(np.meshgrid(*[np.arange(n) / stride for n in dims], indexing="ij"))
    return np.stack([ndi.map_coordinates(disp[c], fine, order=3, mode="nearest") for c in range(3)])


def _max_norm(u: np.ndarray) -> float:
    return float(np.sqrt(np.sum(u**2, axis=0)).max())


def make_smooth_svf(seed: int, dims=(96, 96, 96), amplitude: float = 8.0, sigma: float | None = None,
                    steps: int = 128) -> np.ndarray:
    """Gaussian-smoothed white-noise velocity whose time-1 flow peaks near ``amplitude`` voxels."""
    dims = tuple(int(d) for d in dims)
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if amplitude == 0:
        return np.zeros((3, *dims))
    if sigma is None:
        sigma = min(dims) / 7.0
    rng = np.random.default_rng(seed)
    v = np.stack([ndi.gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect") for _ in range(3)])
    v *= amplitude / _max_norm(v)
    stride = max(1, min(dims) // 24)
    axes = [np.arange(0, n, stride, dtype=np.float64) for n in dims]
    probe = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    for _ in range(4):
        reach = float(np.sqrt(np.sum(euler_points(v, probe, steps) ** 2, axis=1)).max())
        ratio = amplitude / reach
        v *= ratio
        if abs(ratio - 1.0) < 0.01:
            break
    return v


def sample_landmarks(rng, candidates: np.ndarray, dims, n: int, margin: int = 4) -> np.ndarray:
    idx = np.argwhere(candidates)
    lo = margin
    hi = np.asarray(dims) - 1 - margin
    idx = idx[np.all((idx >= lo) & (idx <= hi), axis=1)]
    if len(idx) == 0:
        raise ValueError("no candidate landmark voxels")
    pick = rng.choice(len(idx), size=min(n, len(idx)), replace=False)
    return idx[np.sort(pick)].astype(np.float64)


def make_case(seed: int, dims=(96, 96, 96), amplitude: float = 8.0, n_landmarks: int = 300,
              sigma: float | None = None, n_blobs: int = 3) -> SyntheticCase:
    """Phantom plus a known diffeomorphic deformation.

    ``ground_truth`` maps fixed coordinates into the moving image
    (``fixed(x) == moving(x + gt(x))``); the moving image is the fixed one
    warped by the inverse flow (Euler integration of ``-v``).
    """
    dims = tuple(int(d) for d in dims)
    ph = build_phantom(seed, dims, n_blobs=n_blobs)
    v = make_smooth_svf(seed + 7919, dims, amplitude, sigma)
    rng = np.random.default_rng(seed + 104729)
    fixed_pts = sample_landmarks(rng, ph.tubes | ph.blobs, dims, n_landmarks)
    if amplitude == 0:
        gt = np.zeros((3, *dims))
        moving = ph.volume
        partners = fixed_pts.copy()
    else:
        stride = 2 if min(dims) >= 48 else 1
        gt = euler_dense(v, stride=stride)
        inverse = euler_dense(-v, stride=stride)
        moving = Volume(warp(ph.volume.data, inverse), ph.volume.spacing)
        partners = fixed_pts + euler_points(v, fixed_pts)
        inside = np.all((partners >= 0) & (partners <= np.asarray(dims) - 1), axis=1)
        fixed_pts, partners = fixed_pts[inside], partners[inside]
    lm = LandmarkSet(fixed_pts, partners, ph.volume.spacing)
    return SyntheticCase(ph.volume, moving, gt, lm, seed, v, ph)


# ---------------------------------------------------------------- lesion pairs

LESION_EVENTS = ("grown", "shrunk", "appeared", "disappeared")
# expected score sign per event: positive for new or enlarged tissue in the later scan
EVENT_SIGN = {"grown": 1, "shrunk": -1, "appeared": 1, "disappeared": -1}


@dataclass
class LesionEvent:
    kind: str
    center: np.ndarray
    radius_earlier: float
    radius_later: float

    @property
    def expected_sign(self) -> int:
        return EVENT_SIGN[self.kind]


@dataclass
class LesionPair:
    earlier: Volume
    later: Volume
    events: list


def _paint_sphere(vol: np.ndarray, center, radius: float) -> None:
    if radius <= 0:
        return
    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in vol.shape], indexing="ij")
    inside = sum((g - c) ** 2 for g, c in zip(grid, center)) <= radius**2
    vol[inside] = LESION


def make_lesion_pair(seed: int, dims=(64, 64, 64), small: float = 2.0, large: float = 5.0,
                     events=LESION_EVENTS) -> LesionPair:
    """Two scans of one phantom that differ only by spherical lesions.

    Each event gets its own site (two per lung, separated along z); a grown
    lesion goes from ``small`` to ``large`` radius, a shrunk one the reverse,
    and appeared/disappeared lesions of radius ``large`` exist in one scan only.
    """
    dims = tuple(int(d) for d in dims)
    ph = build_phantom(seed, dims, n_blobs=0)
    rng = np.random.default_rng(seed + 31337)
    _, _, centers = _lung_masks(dims)
    kinds = list(rng.permutation(list(events)))
    if len(kinds) > 4:
        raise ValueError("at most four lesion events fit the phantom")
    earlier = ph.volume.data.astype(np.float64)
    later = earlier.copy()
    out = []
    radii = {"grown": (small, large), "shrunk": (large, small), "appeared": (0.0, large), "disappeared": (large, 0.0)}
    for k, kind in enumerate(kinds):
        c, ax = centers[k % 2]
        zsign = 1.0 if k < 2 else -1.0
        center = c + ax * np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.2, 0.2), zsign * rng.uniform(0.4, 0.5)])
        r0, r1 = radii[kind]
        _paint_sphere(earlier, center, r0)
        _paint_sphere(later, center, r1)
        out.append(LesionEvent(kind, center, r0, r1))
    sp = ph.volume.spacing
    return LesionPair(Volume(earlier, sp), Volume(later, sp), out)

"""Lesion-change maps from a registered pair of scans of the same patient.

The later scan is the fixed image and the earlier scan the moving one.
Positive scores flag tissue that appeared or grew between the scans,
negative scores tissue that shrank or disappeared.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .cascade import CascadeConfig, config_for_variant, register
from .errors import GridMismatchError
from .field import jacobian_determinant, warp
from .preprocess import PreprocessConfig, preprocess
from .volume import Volume

DEFAULT_C = 10.0
DIFF_WINDOW = 120.0


@dataclass
class TrackConfig:
    # lesion-scale changes need a much narrower descent smoothing than whole-lung motion
    cascade: CascadeConfig = field(default_factory=lambda: config_for_variant("v4", CascadeConfig(grad_sigma=1.0)))
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    C: float = DEFAULT_C
    diff_window: float = DIFF_WINDOW
    threshold: float = 0.1
    min_voxels: int = 4
    sign_tol: float = 1e-6
    # determinants below this are treated as this value before inversion (folded voxels)
    jacobian_floor: float = 1e-3

    def __post_init__(self):
        if isinstance(self.cascade, dict):
            self.cascade = CascadeConfig.from_dict(self.cascade)
        if isinstance(self.preprocess, dict):
            self.preprocess = PreprocessConfig(**self.preprocess)
        if self.C <= 1:
            raise ValueError(f"C must be > 1, got {self.C}")
        if self.diff_window <= 0 or self.threshold < 0 or self.min_voxels < 1:
            raise ValueError("diff_window must be positive, threshold >= 0 and min_voxels >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Region:
    sign: int
    kind: str
    voxels: int
    volume_mm3: float
    centroid_voxel: tuple
    centroid_mm: tuple
    peak: float


@dataclass
class LesionMap:
    values: Volume
    regions: list

    def report(self) -> dict:
        return {"n_regions": len(self.regions), "regions": [asdict(r) for r in self.regions]}

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=2)


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def intensity_difference(fixed, warped, window: float = DIFF_WINDOW):
    """Normalized absolute difference ``t`` in [0, 1] and the signed difference ``fixed - warped``."""
    f, w = _arr(fixed), _arr(warped)
    if f.shape != w.shape:
        raise GridMismatchError(f"fixed {f.shape} and warped {w.shape} differ")
    signed = f - w
    return np.clip(np.abs(signed), 0.0, window) / window, signed


def normalize_difference(t, C: float = DEFAULT_C):
    """Exponential re-weighting of ``t``; maps [0, 1] onto [0, 1] with N(0)=0, N(1)=1."""
    if C <= 1:
        raise ValueError(f"C must be > 1, got {C}")
    return (np.power(C, t) - 1.0) / (C - 1.0)


def jac_intensity(J, t, C: float = DEFAULT_C, signed_diff=None, sign_tol: float = 1e-6):
    """``sign * (|J - 1| + N(t))**2`` per voxel.

    The sign is that of ``J - 1``; where ``|J - 1| <= sign_tol`` it falls back
    to the sign of ``signed_diff`` (zero when that is not given).
    """
    J = np.asarray(J, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if J.shape != t.shape:
        raise GridMismatchError(f"J {J.shape} and t {t.shape} differ")
    dev = J - 1.0
    s = np.sign(dev)
    flat = np.abs(dev) <= sign_tol
    fallback = np.zeros_like(J) if signed_diff is None else np.sign(np.asarray(signed_diff, dtype=np.float64))
    s = np.where(flat, fallback, s)
    return s * (np.abs(dev) + normalize_difference(t, C)) ** 2


def extract_regions(values, spacing=(1.0, 1.0, 1.0), threshold: float = 0.1, min_voxels: int = 4) -> list:
    """Connected (26-neighbour) regions of ``values >= threshold`` and ``values <= -threshold``."""
    v = _arr(values)
    spacing = tuple(float(s) for s in spacing)
    voxel_mm3 = float(np.prod(spacing))
    structure = np.ones((3, 3, 3), dtype=bool)
    out = []
    for sign in (1, -1):
        labels, n = ndi.label(sign * v >= max(threshold, np.finfo(float).tiny), structure=structure)
        if n == 0:
            continue
        idx = np.arange(1, n + 1)
        sizes = ndi.sum_labels(np.ones_like(v), labels, idx)
        centroids = ndi.center_of_mass(np.ones_like(v), labels, idx)
        peaks = ndi.maximum(sign * v, labels, idx)
        for size, c, peak in zip(sizes, centroids, peaks):
            if size < min_voxels:
                continue
            out.append(Region(
                sign, "appeared/enlarged" if sign > 0 else "shrunk/disappeared", int(size),
                float(size * voxel_mm3), tuple(float(x) for x in c),
                tuple(float(x * s) for x, s in zip(c, spacing)), float(sign * peak),
            ))
    out.sort(key=lambda r: -abs(r.peak))
    return out


@dataclass
class TrackResult:
    lesion_map: LesionMap
    df: np.ndarray
    jacobian: np.ndarray
    t: np.ndarray
    fixed_unenhanced: Volume
    warped_unenhanced: Volume


def track(earlier: Volume, later: Volume, cfg: TrackConfig | None = None) -> TrackResult:
    """Register the earlier scan onto the later one and score local change.

    The deformation maps later-scan coordinates into the earlier scan, so a
    lesion that grew occupies a region the map contracts (``J < 1``). The
    score therefore uses the inverse ratio ``1 / J``, the local volume of the
    later scan relative to the earlier one.
    """
    cfg = cfg or TrackConfig()
    if earlier.dims != later.dims:
        raise GridMismatchError(f"earlier {earlier.dims} and later {later.dims} differ")
    pre_later = preprocess(later, cfg.preprocess)
    pre_earlier = preprocess(earlier, cfg.preprocess)
    res = register(pre_later.enhanced.data, pre_earlier.enhanced.data, cfg.cascade)
    J = jacobian_determinant(res.df)
    growth = 1.0 / np.maximum(J, cfg.jacobian_floor)
    warped = Volume(warp(pre_earlier.unenhanced.data, res.df), later.spacing)
    t, signed = intensity_difference(pre_later.unenhanced, warped, cfg.diff_window)
    values = jac_intensity(growth, t, cfg.C, signed, cfg.sign_tol)
    regions = extract_regions(values, later.spacing, cfg.threshold, cfg.min_voxels)
    lm = LesionMap(Volume(values, later.spacing), regions)
    return TrackResult(lm, res.df, J, t, pre_later.unenhanced, warped)


# ---------------------------------------------------------------- slice dumps


def _write_pnm(path: Path, img: np.ndarray) -> None:
    magic = b"P6" if img.ndim == 3 else b"P5"
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def dump_slices(background: Volume, values, out_dir, threshold: float = 0.1, lo: float = -1000.0,
                hi: float = 700.0, only_flagged: bool = True) -> list:
    """Write each axial slice as a grayscale PGM and a red/blue overlay PPM; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bg = np.clip((_arr(background) - lo) / (hi - lo), 0.0, 1.0) * 255.0
    v = _arr(values)
    written = []
    for k in range(bg.shape[2]):
        pos, neg = v[:, :, k] >= threshold, v[:, :, k] <= -threshold
        if only_flagged and not (pos.any() or neg.any()):
            continue
        gray = bg[:, :, k].T  # rows = y, columns = x
        rgb = np.repeat(gray[..., None], 3, axis=2)
        rgb[pos.T] = (255, 0, 0)
        rgb[neg.T] = (0, 0, 255)
        for name, img in ((f"slice_{k:04d}.pgm", gray), (f"overlay_{k:04d}.ppm", rgb)):
            _write_pnm(out_dir / name, np.round(img))
            written.append(out_dir / name)
    return written

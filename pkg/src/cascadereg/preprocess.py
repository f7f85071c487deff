"""Lung segmentation, tri-orthogonal vesselness, vessel enhancement and normalization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .errors import DegenerateClusteringError, EmptySegmentationError, GridMismatchError
from .volume import IntensityWindow, Volume, crop_center_pad

_IN_PLANE = np.zeros((3, 3, 3), dtype=bool)
_IN_PLANE[:, :, 1] = ndi.generate_binary_structure(2, 1)


@dataclass
class PreprocessConfig:
    window: IntensityWindow = field(default_factory=IntensityWindow)
    enhance_offset: float = 200.0
    min_area: int = 300
    frangi_scales: tuple = (1.0, 2.0, 3.0)
    frangi_beta: float = 0.5
    # None: half the largest Hessian norm of each slice
    frangi_c: float | None = None
    # faces that count as "outside" for exterior-air removal: "lateral" (x/y faces) or "all"
    border_faces: str = "lateral"
    target_dims: tuple | None = None

    def __post_init__(self):
        if isinstance(self.window, (list, tuple)):
            self.window = IntensityWindow(*self.window)
        elif isinstance(self.window, dict):
            self.window = IntensityWindow(**self.window)
        if self.enhance_offset < 0:
            raise ValueError("enhance_offset must be >= 0")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")
        scales = tuple(float(s) for s in self.frangi_scales)
        if not scales or min(scales) <= 0 or list(scales) != sorted(scales):
            raise ValueError(f"frangi_scales must be positive and ascending, got {self.frangi_scales}")
        self.frangi_scales = scales
        if self.frangi_beta <= 0 or (self.frangi_c is not None and self.frangi_c <= 0):
            raise ValueError("Frangi sensitivities must be positive")
        if self.border_faces not in ("lateral", "all"):
            raise ValueError(f"border_faces must be 'lateral' or 'all', got {self.border_faces!r}")


def two_means_threshold(vol: Volume, window: IntensityWindow | None = None) -> float:
    """Midpoint of the two converged centers of 1-D two-means over window-clipped intensities."""
    window = window or IntensityWindow()
    x = np.clip(np.asarray(getattr(vol, "data", vol), dtype=np.float64).ravel(), window.low, window.high)
    lo_val, hi_val = float(x.min()), float(x.max())
    if lo_val == hi_val:
        raise DegenerateClusteringError("two-means clustering of a constant volume")
    lo, hi = window.low, window.high
    assign = None
    for _ in range(1000):
        upper = x > 0.5 * (lo + hi)
        if assign is not None and np.array_equal(upper, assign):
            break
        assign = upper
        n_up = int(upper.sum())
        # an empty cluster restarts from the data extreme on its side
        lo = float(x[~upper].mean()) if n_up < x.size else lo_val
        hi = float(x[upper].mean()) if n_up > 0 else hi_val
    return 0.5 * (lo + hi)


def _border_touching(labels: np.ndarray, faces: str) -> np.ndarray:
    sl = [labels[0], labels[-1], labels[:, 0], labels[:, -1]]
    if faces == "all":
        sl += [labels[:, :, 0], labels[:, :, -1]]
    return np.unique(np.concatenate([s.ravel() for s in sl]))


def segment_lungs(vol: Volume, cfg: PreprocessConfig | None = None) -> Volume:
    """Binary lung mask: dark voxels not connected to the outside, cleaned slice by slice.

    Axial slices are the planes of constant z (last array axis).
    """
    cfg = cfg or PreprocessConfig()
    data = np.clip(vol.data, cfg.window.low, cfg.window.high)
    try:
        threshold = two_means_threshold(vol, cfg.window)
    except DegenerateClusteringError as exc:
        raise EmptySegmentationError("constant volume: no dark cluster to segment") from exc
    dark = data < threshold
    labels, _ = ndi.label(dark)
    outside = _border_touching(labels, cfg.border_faces)
    mask = dark & ~np.isin(labels, outside[outside > 0])
    if cfg.min_area > 0:
        slabels, n = ndi.label(mask, structure=_IN_PLANE)
        sizes = np.bincount(slabels.ravel(), minlength=n + 1)
        keep = sizes >= cfg.min_area
        keep[0] = False
        mask = keep[slabels]
    for k in range(mask.shape[2]):
        if mask[:, :, k].any():
            mask[:, :, k] = ndi.binary_fill_holes(mask[:, :, k])
    if not mask.any():
        raise EmptySegmentationError("lung segmentation is empty after component filtering")
    return Volume(mask.astype(np.float32), vol.spacing)


def _hessian_2d(img: np.ndarray, sigma: float, axes: tuple) -> tuple:
    """Scale-normalized in-plane Hessian entries over the two ``axes``."""
    p, q = axes

    def deriv(op, oq):
        order = [0, 0, 0]
        order[p], order[q] = op, oq
        sig = [0.0, 0.0, 0.0]
        sig[p] = sig[q] = sigma
        return ndi.gaussian_filter(img, sig, order=order, mode="nearest") * sigma**2

    return deriv(2, 0), deriv(1, 1), deriv(0, 2)


def frangi_2d_response(hpp, hpq, hqq, beta: float, c) -> np.ndarray:
    """Bright-structure 2-D Frangi response from Hessian entries (broadcasting)."""
    half_tr = 0.5 * (hpp + hqq)
    disc = np.sqrt(0.25 * (hpp - hqq) ** 2 + hpq**2)
    e1, e2 = half_tr + disc, half_tr - disc
    swap = np.abs(e1) > np.abs(e2)
    l1 = np.where(swap, e2, e1)
    l2 = np.where(swap, e1, e2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rb = np.where(l2 != 0, l1 / l2, 0.0)
    s2 = l1**2 + l2**2
    resp = np.exp(-(rb**2) / (2 * beta**2)) * (1.0 - np.exp(-s2 / (2 * np.asarray(c) ** 2)))
    return np.where(l2 < 0, resp, 0.0)


def _slice_max(x: np.ndarray, axis: int) -> np.ndarray:
    other = tuple(a for a in range(3) if a != axis)
    return np.max(x, axis=other, keepdims=True)


def tri_orthogonal_vesselness(vol: Volume, cfg: PreprocessConfig | None = None) -> Volume:
    """Per-slice 2-D Frangi along all three axes, voxelwise max, min-max normalized to [0, 1]."""
    cfg = cfg or PreprocessConfig()
    img = np.asarray(vol.data, dtype=np.float64)
    best = np.zeros(img.shape)
    for axis in range(3):
        plane = tuple(a for a in range(3) if a != axis)
        for sigma in cfg.frangi_scales:
            hpp, hpq, hqq = _hessian_2d(img, sigma, plane)
            if cfg.frangi_c is None:
                norm = np.sqrt(hpp**2 + 2 * hpq**2 + hqq**2)
                c = 0.5 * _slice_max(norm, axis)
                c = np.where(c > 0, c, 1.0)
            else:
                c = cfg.frangi_c
            np.maximum(best, frangi_2d_response(hpp, hpq, hqq, cfg.frangi_beta, c), out=best)
    lo, hi = best.min(), best.max()
    out = (best - lo) / (hi - lo) if hi > lo else np.zeros_like(best)
    return Volume(out, vol.spacing)


def enhance_vessels(vol: Volume, mask: Volume, cfg: PreprocessConfig | None = None,
                    lung_mask: Volume | None = None) -> Volume:
    """Logarithmic vessel enhancement of voxels brighter than ``low + offset``.

    ``E = I + (high - I) * ln((e - 1) * M + 1)``; voxels outside ``lung_mask``
    are set to the window floor.
    """
    cfg = cfg or PreprocessConfig()
    if vol.dims != mask.dims:
        raise GridMismatchError(f"volume {vol.dims} and vesselness mask {mask.dims} differ")
    w = cfg.window
    i_p = np.clip(vol.data.astype(np.float64), w.low, w.high)
    m = np.clip(mask.data.astype(np.float64), 0.0, 1.0)
    boosted = i_p + (w.high - i_p) * np.log((np.e - 1.0) * m + 1.0)
    out = np.where(i_p <= w.low + cfg.enhance_offset, i_p, boosted)
    if lung_mask is not None:
        if lung_mask.dims != vol.dims:
            raise GridMismatchError(f"lung mask {lung_mask.dims} and volume {vol.dims} differ")
        out = np.where(lung_mask.data > 0, out, w.low)
    return Volume(out, vol.spacing)


def normalize(vol: Volume, window: IntensityWindow | None = None) -> Volume:
    window = window or IntensityWindow()
    x = np.clip(vol.data.astype(np.float64), window.low, window.high)
    return Volume((x - window.low) / window.width, vol.spacing)


@dataclass
class Preprocessed:
    enhanced: Volume  # normalized to [0, 1]
    unenhanced: Volume  # HU, window-clipped, floor outside the lungs
    mask: Volume
    vesselness: Volume


def preprocess(vol: Volume, cfg: PreprocessConfig | None = None) -> Preprocessed:
    """Full chain: segment, optional center crop, vesselness, enhancement, normalization."""
    cfg = cfg or PreprocessConfig()
    w = cfg.window
    mask = segment_lungs(vol, cfg)
    if cfg.target_dims is not None:
        vol = crop_center_pad(vol, cfg.target_dims, w.low, mask)
        mask = crop_center_pad(mask, cfg.target_dims, 0.0, mask)
    clipped = np.clip(vol.data, w.low, w.high)
    masked = Volume(np.where(mask.data > 0, clipped, w.low), vol.spacing)
    vesselness = tri_orthogonal_vesselness(masked, cfg)
    enhanced = enhance_vessels(masked, vesselness, cfg, lung_mask=mask)
    return Preprocessed(normalize(enhanced, w), masked, mask, vesselness)

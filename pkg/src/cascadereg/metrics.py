"""Similarity, loss, landmark TRE and deformation-impedance summaries."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from ._interp import sample_points
from .errors import GridMismatchError, LandmarkError, UndefinedCorrelationError
from .field import check_field, gradient_penalty

DEFAULT_LAMBDA = 0.5


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Global normalized cross-correlation (Pearson) in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GridMismatchError(f"ncc: shapes {a.shape} and {b.shape} differ")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.sum(da * da))
    sbb = float(np.sum(db * db))
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelationError("ncc undefined for a constant image")
    return float(np.clip(np.sum(da * db) / np.sqrt(saa * sbb), -1.0, 1.0))


def loss(fixed, warped, df, lam: float = DEFAULT_LAMBDA) -> float:
    """``-ncc(fixed, warped) + lam * gradient_penalty(df)``."""
    return -ncc(fixed, warped) + lam * gradient_penalty(df)


def ncc_and_grad(fixed: np.ndarray, moving: np.ndarray):
    """Global NCC and its derivative with respect to every ``moving`` voxel.

    A constant input gives ``(0.0, zeros)`` instead of raising, which is what
    an optimizer needs. Equal inputs give a gradient of exactly zero.
    """
    f = fixed - fixed.mean()
    m = moving - moving.mean()
    a = float(np.sum(f * m))
    b = float(np.sum(f * f))
    c = float(np.sum(m * m))
    denom = np.sqrt(b * c)
    if denom == 0.0:
        return 0.0, np.zeros_like(m)
    val = a / denom
    grad = (f - val * (b / denom) * m) / denom
    return val, grad


def _box_sum(x: np.ndarray, win: int) -> np.ndarray:
    return ndi.uniform_filter(x, size=win, mode="constant") * float(win**x.ndim)


def local_ncc_and_grad(fixed: np.ndarray, moving: np.ndarray, win: int = 9, eps: float = 1e-5):
    """Mean windowed NCC and its gradient with respect to ``moving``.

    Windows are zero-padded at the borders and always hold ``win**3``
    samples. Per voxel ``cc = A / sqrt(B C)`` with ``A`` the windowed
    covariance sum and ``B``, ``C`` the windowed variance sums; windows where
    either variance sum is at most ``eps`` count as ``cc = 0`` with no
    gradient.

    Both images are first standardized with the mean and SD of ``fixed``.
    Windowed NCC is invariant to that shift and scale, and it keeps the
    one-pass variance sums from cancelling catastrophically on flat HU
    regions. ``eps`` is in those standardized units.
    """
    shift = float(fixed.mean())
    scale = float(fixed.std()) or 1.0
    fixed = (fixed - shift) / scale
    moving = (moving - shift) / scale
    n = float(win**fixed.ndim)
    n_vox = fixed.size
    s_f = _box_sum(fixed, win)
    s_m = _box_sum(moving, win)
    s_ff = _box_sum(fixed * fixed, win)
    s_mm = _box_sum(moving * moving, win)
    s_fm = _box_sum(fixed * moving, win)
    mean_f = s_f / n
    mean_m = s_m / n
    cov = s_fm - s_f * mean_m
    var_f = s_ff - s_f * mean_f
    var_m = s_mm - s_m * mean_m
    valid = (var_f > eps) & (var_m > eps)
    denom = np.sqrt(np.where(valid, var_f * var_m, 1.0))
    cc = np.where(valid, cov / denom, 0.0)
    val = float(cc.mean())
    # d cc(x) / d m(y) = alpha(x) (f(y) - mean_f(x)) - beta(x) (m(y) - mean_m(x));
    # beta is written so that alpha == beta bitwise when fixed == moving
    alpha = np.where(valid, 1.0 / denom, 0.0)
    beta = cc * (var_f / denom) * alpha
    grad = (
        fixed * _box_sum(alpha, win)
        - _box_sum(alpha * mean_f, win)
        - moving * _box_sum(beta, win)
        + _box_sum(beta * mean_m, win)
    ) / (n_vox * scale)
    return val, grad


# ---------------------------------------------------------------- landmarks


@dataclass
class LandmarkSet:
    """Paired points in voxel index coordinates; ``moving[i]`` corresponds to ``fixed[i]``."""

    fixed: np.ndarray
    moving: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.fixed = np.atleast_2d(np.asarray(self.fixed, dtype=np.float64))
        self.moving = np.atleast_2d(np.asarray(self.moving, dtype=np.float64))
        if self.fixed.shape != self.moving.shape:
            raise LandmarkError(
                f"landmark count mismatch: {len(self.fixed)} fixed vs {len(self.moving)} moving"
            )
        if self.fixed.shape[1] != 3:
            raise LandmarkError(f"landmarks must be 3-D points, got shape {self.fixed.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)

    def __len__(self):
        return len(self.fixed)


def read_landmark_file(path, one_based: bool = False) -> np.ndarray:
    """Read one whitespace-separated ``i j k`` triple per line."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 3:
            raise LandmarkError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
        rows.append([float(p) for p in parts])
    pts = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    return pts - 1.0 if one_based else pts


def write_landmark_file(path, pts) -> None:
    lines = [" ".join(f"{c:g}" for c in p) for p in np.asarray(pts)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_landmarks(fixed_path, moving_path, spacing=(1.0, 1.0, 1.0), one_based: bool = False) -> LandmarkSet:
    return LandmarkSet(
        read_landmark_file(fixed_path, one_based), read_landmark_file(moving_path, one_based), spacing
    )


def evaluate_landmarks(lm: LandmarkSet, df: np.ndarray) -> np.ndarray:
    """Per-landmark TRE in mm: ``|| (x_f + df(x_f) - x_m) * spacing ||``."""
    df = check_field(df)
    dims = np.asarray(df.shape[1:], dtype=np.float64)
    pts = lm.fixed
    bad = np.any((pts < 0) | (pts > dims - 1), axis=1)
    if np.any(bad):
        raise LandmarkError(f"{int(bad.sum())} fixed landmarks outside grid {tuple(df.shape[1:])}")
    disp = sample_points(df, pts).T
    err = (pts + disp - lm.moving) * np.asarray(lm.spacing)
    return np.sqrt(np.sum(err**2, axis=1))


# ---------------------------------------------------------------- DIC


@dataclass
class CaseStats:
    pre_mean: float
    pre_sd: float
    post_mean: float
    post_sd: float


@dataclass
class DicReport:
    """Deformation-impedance summary over several cases.

    All standard deviations use the sample (divide by n - 1) convention;
    a single value has SD 0.
    """

    cases: list
    pooled_pre_sd: float
    pooled_post_sd: float
    pooled_post_mean: float
    max_case: int
    min_case: int
    delta: float
    sd_convention: str = "sample"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        head = f"{'case':>5} {'pre mean':>9} {'pre sd':>8} {'post mean':>10} {'post sd':>8}"
        lines = [head]
        for i, c in enumerate(self.cases):
            lines.append(f"{i:>5} {c.pre_mean:>9.3f} {c.pre_sd:>8.3f} {c.post_mean:>10.3f} {c.post_sd:>8.3f}")
        lines.append(f"pooled post mean {self.pooled_post_mean:.3f}  pooled post sd {self.pooled_post_sd:.3f}")
        lines.append(f"pooled pre sd {self.pooled_pre_sd:.3f}")
        lines.append(f"delta (case {self.max_case} vs case {self.min_case}) {self.delta:.3f}")
        return "\n".join(lines)


def _sd(x: np.ndarray) -> float:
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def dic_summary(pre: list, post: list) -> DicReport:
    """Summarize per-case TRE lists (mm) before and after registration.

    ``delta`` compares the post-registration means of the cases with the
    largest and the smallest pre-registration mean.
    """
    if len(pre) != len(post):
        raise ValueError(f"{len(pre)} pre-registration cases vs {len(post)} post-registration cases")
    if len(pre) < 2:
        raise ValueError("dic_summary needs at least 2 cases")
    pre = [np.asarray(p, dtype=np.float64) for p in pre]
    post = [np.asarray(p, dtype=np.float64) for p in post]
    cases = [
        CaseStats(float(a.mean()), _sd(a), float(b.mean()), _sd(b))
        for a, b in zip(pre, post)
    ]
    pre_means = np.array([c.pre_mean for c in cases])
    # ties resolve to the first occurrence
    imax = int(np.argmax(pre_means))
    imin = int(np.argmin(pre_means))
    pooled_post = np.concatenate(post)
    return DicReport(
        cases=cases,
        pooled_pre_sd=_sd(np.concatenate(pre)),
        pooled_post_sd=_sd(pooled_post),
        pooled_post_mean=float(pooled_post.mean()),
        max_case=imax,
        min_case=imin,
        delta=abs(cases[imax].post_mean - cases[imin].post_mean),
    )

"""Coarse-to-fine cascade: pyramid, per-level flow prediction, inter-level module, recursion."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .diffeo import exp_svf, integrate_svf, t_schedule
from .errors import DivergenceError, GridMismatchError
from .field import check_field, compose, dilate_flow, gradient_penalty, gradient_penalty_grad, warp
from ._interp import sample_grid_grad
from .metrics import local_ncc_and_grad, ncc_and_grad

log = logging.getLogger(__name__)

PART1_MODES = ("resample_compose", "simple_add")
BACKENDS = ("variational", "aru")

# ablation presets: (part1 mode, part2 enabled)
VARIANTS = {
    "v1": ("simple_add", False),
    "v2": ("resample_compose", False),
    "v3": ("simple_add", True),
    "v4": ("resample_compose", True),
}


@dataclass
class CascadeConfig:
    n_levels: int = 4
    lam: float = 0.5
    t0: int = 7
    part1: str = "resample_compose"
    part2: bool = True
    # divide the Part 1 output by 2**T before squaring, i.e. integrate it as a unit-time velocity
    svf_prescale: bool = True
    backend: str = "variational"
    steps: int = 60
    step_size: float = 0.5
    grad_sigma: float = 8.0
    ncc_window: int = 9
    local_ncc_min_dim: int = 16
    pyramid_sigma: float = 1.0
    grade_cap: int = 7
    min_level_dim: int = 4

    def __post_init__(self):
        if self.n_levels < 1:
            raise ValueError(f"n_levels must be >= 1, got {self.n_levels}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.t0 < 1:
            raise ValueError(f"t0 must be >= 1, got {self.t0}")
        if self.part1 not in PART1_MODES:
            raise ValueError(f"part1 must be one of {PART1_MODES}, got {self.part1!r}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if not 1 <= self.grade_cap <= 7:
            raise ValueError("grade_cap must lie in [1, 7]")

    @classmethod
    def variant(cls, name: str, **overrides) -> "CascadeConfig":
        part1, part2 = VARIANTS[name]
        return cls(part1=part1, part2=part2, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cascade config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CascadeConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Pyramid:
    fixed: list
    moving: list
    backend: str = "variational"

    @property
    def n_levels(self) -> int:
        return len(self.fixed) - 1

    @property
    def dims(self) -> list:
        return [tuple(f.shape[-3:]) for f in self.fixed]


@dataclass
class RegistrationResult:
    df: np.ndarray
    warped: np.ndarray
    flows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    loss_trace: list = field(default_factory=list)
    seconds: float = 0.0


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def level_dims(dims, n_levels: int) -> list:
    out = [tuple(int(d) for d in dims)]
    for _ in range(n_levels):
        out.append(tuple((d + 1) // 2 for d in out[-1]))
    return out


def build_pyramid(fixed, moving, cfg: CascadeConfig, weights=None) -> Pyramid:
    """Per-level fixed/moving features; every level halves each axis (odd sizes round up)."""
    f0, m0 = _as_array(fixed), _as_array(moving)
    if f0.shape != m0.shape:
        raise GridMismatchError(f"fixed {f0.shape} and moving {m0.shape} differ")
    dims = level_dims(f0.shape, cfg.n_levels)
    if min(dims[-1]) < cfg.min_level_dim:
        raise ValueError(
            f"input {f0.shape} too small for {cfg.n_levels} levels: coarsest level would be {dims[-1]}"
        )
    if cfg.backend == "aru":
        from .aru import extract_features

        if weights is None:
            raise ValueError("the aru backend needs a weight bundle")
        return Pyramid(extract_features(f0, weights, cfg.n_levels),
                       extract_features(m0, weights, cfg.n_levels), "aru")
    fs, ms = [f0], [m0]
    for _ in range(cfg.n_levels):
        fs.append(ndi.gaussian_filter(fs[-1], cfg.pyramid_sigma, mode="nearest")[::2, ::2, ::2].copy())
        ms.append(ndi.gaussian_filter(ms[-1], cfg.pyramid_sigma, mode="nearest")[::2, ::2, ::2].copy())
    return Pyramid(fs, ms, "variational")


# ---------------------------------------------------------------- variational backend


def variational_objective(fixed, moving, flow, cfg: CascadeConfig, need_grad: bool = True):
    """``-similarity(fixed, warp(moving, flow)) + lam * gradient_penalty(flow)`` and its flow gradient.

    Similarity is windowed NCC, or global NCC when any axis is shorter than
    ``cfg.local_ncc_min_dim``.
    """
    warped, dwarp = sample_grid_grad(moving, flow)
    if min(fixed.shape) >= cfg.local_ncc_min_dim:
        sim, dsim = local_ncc_and_grad(fixed, warped, cfg.ncc_window)
    else:
        sim, dsim = ncc_and_grad(fixed, warped)
    value = -sim + cfg.lam * gradient_penalty(flow)
    if not need_grad:
        return value, None
    grad = -dsim[None] * dwarp + cfg.lam * gradient_penalty_grad(flow)
    return value, grad


def predict_flow_variational(fixed, moving, cfg: CascadeConfig, trace: list | None = None) -> np.ndarray:
    """Gradient descent on :func:`variational_objective` starting from a zero flow.

    The descent direction is the Gaussian-smoothed gradient scaled to unit
    maximum; a step that does not lower the objective is rejected and the
    step size halved, so the recorded objective never increases.
    """
    fixed = _as_array(fixed)
    moving = _as_array(moving)
    if fixed.shape != moving.shape:
        raise GridMismatchError(f"fixed {fixed.shape} and moving {moving.shape} differ")
    flow = np.zeros((3, *fixed.shape))
    value, grad = variational_objective(fixed, moving, flow, cfg)
    if not np.isfinite(value):
        raise DivergenceError("non-finite objective at initialization")
    if trace is not None:
        trace.append(value)
    lr = cfg.step_size
    # gradients are voxel-mean normalized; below this scale they are rounding noise
    tiny = 1e-9 / fixed.size
    for _ in range(cfg.steps):
        direction = grad
        if cfg.grad_sigma > 0:
            direction = np.stack([ndi.gaussian_filter(g, cfg.grad_sigma, mode="nearest") for g in grad])
        peak = float(np.abs(direction).max())
        if peak <= tiny:
            break
        trial = flow - (lr / peak) * direction
        t_value, t_grad = variational_objective(fixed, moving, trial, cfg)
        if not np.isfinite(t_value):
            raise DivergenceError("non-finite objective during descent")
        if t_value < value:
            flow, value, grad = trial, t_value, t_grad
        else:
            lr *= 0.5
        if trace is not None:
            trace.append(value)
    return flow


# ---------------------------------------------------------------- inter-level module


def idm(aggregate_up, flow, steps: int, cfg: CascadeConfig) -> np.ndarray:
    """Merge the dilated higher-level aggregate with this level's flow, then integrate.

    Part 1 resamples the aggregate along the flow and adds (``resample_compose``)
    or simply adds (``simple_add``). Part 2, when enabled, treats the result
    as a stationary velocity and squares it ``steps`` times.
    """
    flow = check_field(flow, "flow")
    if aggregate_up is None:
        merged = flow
    else:
        aggregate_up = check_field(aggregate_up, "aggregate")
        if aggregate_up.shape != flow.shape:
            raise GridMismatchError(f"aggregate {aggregate_up.shape[1:]} vs flow {flow.shape[1:]}")
        merged = compose(aggregate_up, flow) if cfg.part1 == "resample_compose" else aggregate_up + flow
    if not cfg.part2:
        return merged
    if cfg.svf_prescale:
        return exp_svf(merged, steps)
    return integrate_svf(merged, steps)[0]


# ---------------------------------------------------------------- cascade


def register(fixed, moving, cfg: CascadeConfig | None = None, weights=None) -> RegistrationResult:
    """Top-down cascade; returns the level-0 displacement field and the warped moving image."""
    cfg = cfg or CascadeConfig()
    start = time.perf_counter()
    f0, m0 = _as_array(fixed), _as_array(moving)
    pyr = build_pyramid(f0, m0, cfg, weights)
    n = pyr.n_levels
    flows = [None] * (n + 1)
    aggregates = [None] * (n + 1)
    trace = []
    af = None
    for i in range(n, -1, -1):
        steps = t_schedule(i, cfg.t0)
        dims_i = pyr.dims[i]
        up = None if af is None else dilate_flow(af, dims_i)
        if cfg.backend == "variational":
            m_in = pyr.moving[i] if up is None else warp(pyr.moving[i], up)
            level_trace = []
            flow = predict_flow_variational(pyr.fixed[i], m_in, cfg, level_trace)
            trace.append(level_trace)
        else:
            from .aru import aru_level_flow

            flow = aru_level_flow(pyr, i, aggregates[i + 1] if i < n else None, weights, cfg)
        af = idm(up, flow, steps, cfg)
        flows[i], aggregates[i] = flow, af
        log.debug("level %d dims %s: |flow|max %.3f |AF|max %.3f", i, dims_i,
                  np.abs(flow).max(), np.abs(af).max())
    df = af
    return RegistrationResult(df, warp(m0, df), flows, aggregates, trace, time.perf_counter() - start)


def config_for_variant(name: str, base: CascadeConfig | None = None) -> CascadeConfig:
    part1, part2 = VARIANTS[name]
    return replace(base or CascadeConfig(), part1=part1, part2=part2)

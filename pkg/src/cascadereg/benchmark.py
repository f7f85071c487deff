"""Synthetic registration experiments shared by the scripts and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cascade import CascadeConfig, config_for_variant, register
from .field import gradient_penalty
from .metrics import evaluate_landmarks
from .preprocess import PreprocessConfig, preprocess
from .synth import make_case


def amplitude_for(seed_index: int, n_seeds: int, lo: float = 6.0, hi: float = 10.0) -> float:
    """Spread ground-truth amplitudes evenly over ``[lo, hi]`` across the seed list."""
    if n_seeds < 2:
        return hi
    return lo + (hi - lo) * seed_index / (n_seeds - 1)


@dataclass
class VariantRun:
    tre: np.ndarray
    seconds: float
    df_penalty: float
    flow0_penalty: float


@dataclass
class CaseRun:
    seed: int
    amplitude: float
    pre_tre: np.ndarray
    runs: dict = field(default_factory=dict)


def run_case(seed: int, amplitude: float, variants=("v4",), dims=(96, 96, 96),
             base: CascadeConfig | None = None, pre_cfg: PreprocessConfig | None = None,
             use_preprocessing: bool = True) -> CaseRun:
    """Generate one synthetic case, preprocess both images and register with each variant."""
    case = make_case(seed, dims, amplitude)
    if use_preprocessing:
        fixed = preprocess(case.fixed, pre_cfg).enhanced.data
        moving = preprocess(case.moving, pre_cfg).enhanced.data
    else:
        lo, hi = -1000.0, 700.0
        fixed = (np.clip(case.fixed.data, lo, hi) - lo) / (hi - lo)
        moving = (np.clip(case.moving.data, lo, hi) - lo) / (hi - lo)
    zero = np.zeros((3, *case.fixed.dims))
    out = CaseRun(seed, amplitude, evaluate_landmarks(case.landmarks, zero))
    for name in variants:
        cfg = config_for_variant(name, base)
        start = time.perf_counter()
        res = register(fixed, moving, cfg)
        seconds = time.perf_counter() - start
        out.runs[name] = VariantRun(
            evaluate_landmarks(case.landmarks, res.df), seconds,
            gradient_penalty(res.df), gradient_penalty(res.flows[0]),
        )
    return out

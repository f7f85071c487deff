"""Grade-limited encoder-decoder flow predictor (forward inference only).

A grade-``g`` network has ``g`` encoder stages of two 3x3x3 convolutions
followed by 2x max pooling, a two-convolution bottleneck, a mirrored decoder
(nearest x2 upsampling, skip concatenation, two convolutions) and a 1x1x1
three-channel head. The grade of each pyramid level is capped so that the
receptive field along the slice axis does not exceed the number of slices.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import WeightShapeError
from .field import resample_cubic
from ._interp import sample_grid

MAX_GRADE = 7


@dataclass(frozen=True)
class AruArchitecture:
    grade: int
    in_channels: int
    base_channels: int = 16
    max_channels: int = 128
    convs_per_stage: int = 2
    bottleneck_convs: int = 2
    slope: float = 0.2

    def __post_init__(self):
        if not 1 <= self.grade <= MAX_GRADE:
            raise ValueError(f"grade must lie in [1, {MAX_GRADE}], got {self.grade}")

    def channels(self, stage: int) -> int:
        """Width of encoder stage ``stage`` (1-based); ``grade + 1`` is the bottleneck."""
        return min(self.base_channels * 2 ** (stage - 1), self.max_channels)

    def layer_shapes(self, prefix: str) -> dict:
        shapes = {}

        def conv(name, cin, cout, k=3):
            shapes[f"{prefix}.{name}.w"] = (cout, cin, k, k, k)
            shapes[f"{prefix}.{name}.b"] = (cout,)

        cin = self.in_channels
        for s in range(1, self.grade + 1):
            c = self.channels(s)
            for k in range(self.convs_per_stage):
                conv(f"enc{s}.c{k}", cin if k == 0 else c, c)
            cin = c
        c_mid = self.channels(self.grade + 1)
        for k in range(self.bottleneck_convs):
            conv(f"mid.c{k}", cin if k == 0 else c_mid, c_mid)
        below = c_mid if self.bottleneck_convs else cin
        for s in range(self.grade, 0, -1):
            c = self.channels(s)
            for k in range(self.convs_per_stage):
                conv(f"dec{s}.c{k}", below + c if k == 0 else c, c)
            below = c if self.convs_per_stage else below + c
        conv("head", below, 3, k=1)
        return shapes


# ---------------------------------------------------------------- receptive field


def receptive_field_depth(grade: int, convs_per_stage: int = 2, bottleneck_convs: int = 2) -> int:
    """Largest receptive-field extent (voxels) of one output voxel along an axis.

    Walks the dependency interval of a single output index back through the
    decoder, bottleneck and encoder; the maximum is taken over output
    positions modulo the pooling period. ``grade=0`` with no bottleneck
    convolutions is the identity network.
    """
    if not 0 <= grade <= MAX_GRADE:
        raise ValueError(f"grade must lie in [0, {MAX_GRADE}], got {grade}")
    c, b = convs_per_stage, bottleneck_convs

    def back(stage, lo, hi):
        # interval on the input of sub-network `stage` needed for [lo, hi] on its output
        if stage > grade:
            return lo - b, hi + b
        lo, hi = lo - c, hi + c
        deep = back(stage + 1, lo // 2, hi // 2)
        lo, hi = min(lo, 2 * deep[0]), max(hi, 2 * deep[1] + 1)
        return lo - c, hi + c

    best = 1
    for o in range(2**grade):
        lo, hi = back(1, o, o)
        best = max(best, hi - lo + 1)
    return best


def grades_from_caps(caps, cap: int = MAX_GRADE) -> list:
    """Grade per level from the per-level depth limits ``caps`` (levels 0..n)."""
    n = len(caps) - 1
    grades = [0] * (n + 1)
    grades[n] = min(max(caps[n], 1), cap)
    for i in range(n - 1, -1, -1):
        grades[i] = min(grades[i + 1] + 1, max(caps[i], 1), cap)
    return grades


def depth_cap(depth: int, cap: int = MAX_GRADE) -> int:
    """Largest grade whose receptive field fits in ``depth`` slices (0 if none)."""
    best = 0
    for g in range(1, cap + 1):
        if receptive_field_depth(g) <= depth:
            best = g
    return best


def compute_grades(n: int, depths, cap: int = MAX_GRADE) -> list:
    """Grades for levels 0..n given the slice count of each level."""
    if n < 0 or len(depths) != n + 1:
        raise ValueError(f"need n + 1 = {n + 1} depths, got {len(depths)}")
    if any(d <= 0 for d in depths):
        raise ValueError(f"depths must be positive, got {depths}")
    return grades_from_caps([depth_cap(d, cap) for d in depths], cap)


# ---------------------------------------------------------------- weights


def save_weights(weights: dict, path) -> None:
    """Zip archive: ``manifest.json`` (name -> shape) plus raw little-endian float32 payloads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {name: list(np.shape(w)) for name, w in weights.items()}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps({"dtype": "<f4", "tensors": manifest}, indent=1))
        for name, w in weights.items():
            zf.writestr(f"tensors/{name}.bin", np.ascontiguousarray(w, dtype="<f4").tobytes())


def load_weights(path) -> dict:
    with zipfile.ZipFile(Path(path)) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        out = {}
        for name, shape in manifest["tensors"].items():
            buf = zf.read(f"tensors/{name}.bin")
            arr = np.frombuffer(buf, dtype="<f4")
            if arr.size != int(np.prod(shape)):
                raise WeightShapeError(f"{name}: manifest shape {shape} vs {arr.size} stored values")
            out[name] = arr.reshape(shape).astype(np.float32)
    return out


def feature_channels(level: int, base: int = 8, cap: int = 32) -> int:
    return 1 if level == 0 else min(base * 2 ** (level - 1), cap)


def level_architectures(level_dims, grade_cap: int = MAX_GRADE) -> list:
    """Architecture of the flow predictor at each level of a pyramid with the given dims."""
    grades = compute_grades(len(level_dims) - 1, [d[2] for d in level_dims], grade_cap)
    n = len(level_dims) - 1
    archs = []
    for i, g in enumerate(grades):
        cin = 2 * feature_channels(i) + (feature_channels(i + 1) if i < n else 0)
        archs.append(AruArchitecture(g, cin))
    return archs


def weight_shapes(level_dims, grade_cap: int = MAX_GRADE) -> dict:
    shapes = {}
    for i in range(1, len(level_dims)):
        cin, cout = feature_channels(i - 1), feature_channels(i)
        for k in range(3):
            shapes[f"feat.l{i}.c{k}.w"] = (cout, cin if k == 0 else cout, 3, 3, 3)
            shapes[f"feat.l{i}.c{k}.b"] = (cout,)
    for i, arch in enumerate(level_architectures(level_dims, grade_cap)):
        shapes.update(arch.layer_shapes(f"aru.l{i}"))
    return shapes


def init_weights(level_dims, seed: int = 0, grade_cap: int = MAX_GRADE, head_scale: float = 1e-3) -> dict:
    """He-initialized bundle; the flow heads are scaled down so untrained flows stay small."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in weight_shapes(level_dims, grade_cap).items():
        if name.endswith(".b"):
            out[name] = np.zeros(shape, dtype=np.float32)
            continue
        fan_in = int(np.prod(shape[1:]))
        w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        if ".head." in name:
            w *= head_scale
        out[name] = w.astype(np.float32)
    return out


def zero_weights(level_dims, grade_cap: int = MAX_GRADE) -> dict:
    return {k: np.zeros(s, dtype=np.float32) for k, s in weight_shapes(level_dims, grade_cap).items()}


# ---------------------------------------------------------------- inference


def _param(weights: dict, name: str, shape) -> torch.Tensor:
    if name not in weights:
        raise WeightShapeError(f"missing tensor {name!r}")
    w = np.asarray(weights[name], dtype=np.float32)
    if tuple(w.shape) != tuple(shape):
        raise WeightShapeError(f"{name}: expected shape {tuple(shape)}, got {tuple(w.shape)}")
    return torch.from_numpy(np.ascontiguousarray(w))


def _conv(x, weights, name, cin, cout, k=3, stride=1):
    w = _param(weights, f"{name}.w", (cout, cin, k, k, k))
    b = _param(weights, f"{name}.b", (cout,))
    return F.conv3d(x, w, b, stride=stride, padding=k // 2)


def aru_forward(arch: AruArchitecture, inputs: np.ndarray, weights: dict, prefix: str = "aru") -> np.ndarray:
    """Run the grade-limited encoder-decoder on ``inputs`` (C, X, Y, Z); returns a (3, X, Y, Z) flow."""
    inputs = np.asarray(inputs, dtype=np.float32)
    if inputs.ndim != 4 or inputs.shape[0] != arch.in_channels:
        raise WeightShapeError(f"expected ({arch.in_channels}, X, Y, Z) inputs, got {inputs.shape}")
    act = lambda t: F.leaky_relu(t, arch.slope)  # noqa: E731
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(inputs))[None]
        skips = []
        cin = arch.in_channels
        for s in range(1, arch.grade + 1):
            c = arch.channels(s)
            for k in range(arch.convs_per_stage):
                x = act(_conv(x, weights, f"{prefix}.enc{s}.c{k}", cin if k == 0 else c, c))
            cin = c
            skips.append(x)
            x = F.max_pool3d(x, 2, 2, ceil_mode=True)
        c_mid = arch.channels(arch.grade + 1)
        for k in range(arch.bottleneck_convs):
            x = act(_conv(x, weights, f"{prefix}.mid.c{k}", cin if k == 0 else c_mid, c_mid))
        below = c_mid if arch.bottleneck_convs else cin
        for s in range(arch.grade, 0, -1):
            skip = skips[s - 1]
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = x[..., : skip.shape[2], : skip.shape[3], : skip.shape[4]]
            x = torch.cat([x, skip], dim=1)
            c = arch.channels(s)
            for k in range(arch.convs_per_stage):
                x = act(_conv(x, weights, f"{prefix}.dec{s}.c{k}", below + c if k == 0 else c, c))
            below = c if arch.convs_per_stage else below + c
        flow = _conv(x, weights, f"{prefix}.head", below, 3, k=1)
    return flow[0].numpy().astype(np.float64)


def extract_features(image: np.ndarray, weights: dict, n_levels: int, slope: float = 0.2) -> list:
    """Feature pyramid: level 0 is the image; each level applies three convs, the first with stride 2."""
    feats = [np.asarray(image, dtype=np.float64)[None]]
    with torch.no_grad():
        x = torch.from_numpy(np.asarray(image, dtype=np.float32))[None, None]
        for i in range(1, n_levels + 1):
            cin, cout = feature_channels(i - 1), feature_channels(i)
            for k in range(3):
                x = _conv(x, weights, f"feat.l{i}.c{k}", cin if k == 0 else cout, cout, stride=2 if k == 0 else 1)
                x = F.leaky_relu(x, slope)
            feats.append(x[0].numpy().astype(np.float64))
    return feats


def aru_level_flow(pyr, level: int, aggregate_above, weights: dict, cfg) -> np.ndarray:
    """Flow at ``level`` from fixed/moving features plus the upsampled warped feature of the level above."""
    archs = level_architectures(pyr.dims, cfg.grade_cap)
    parts = []
    if aggregate_above is not None:
        warped_above = sample_grid(pyr.moving[level + 1], aggregate_above)
        parts.append(np.stack([resample_cubic(c, pyr.dims[level]) for c in warped_above]))
    parts += [pyr.fixed[level], pyr.moving[level]]
    return aru_forward(archs[level], np.concatenate(parts, axis=0), weights, f"aru.l{level}")


__all__ = [
    "AruArchitecture", "receptive_field_depth", "grades_from_caps", "depth_cap", "compute_grades",
    "save_weights", "load_weights", "init_weights", "zero_weights", "weight_shapes",
    "aru_forward", "extract_features", "aru_level_flow", "level_architectures",
]

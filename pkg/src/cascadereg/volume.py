"""Scalar volumes, file I/O and simple geometric utilities.

Arrays are indexed ``data[x, y, z]``; on disk every payload is linearized
x-fastest (Fortran order), which is also the NIfTI convention.
"""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

import nibabel as nib
import numpy as np

from .errors import SizeMismatchError, UnreadableFileError, UnsupportedDataTypeError

NIFTI_DTYPES = {np.dtype(np.int16), np.dtype(np.float32)}
RAW_DTYPES = {"float32": np.dtype("<f4"), "int16": np.dtype("<i2")}


@dataclass(frozen=True)
class IntensityWindow:
    low: float = -1000.0
    high: float = 700.0

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"window low ({self.low}) must be below high ({self.high})")

    @property
    def width(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class Volume:
    """Immutable float32 grid with physical spacing in mm."""

    data: np.ndarray
    spacing: tuple = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3-D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data) -> "Volume":
        return Volume(data, self.spacing)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.data, other.data)

    __hash__ = None


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def load_volume(path) -> Volume:
    """Read a NIfTI-1 file (``.nii``/``.nii.gz``) or a raw payload with JSON sidecar."""
    path = Path(path)
    if not path.is_file():
        raise UnreadableFileError(f"{path}: no such file")
    if _is_nifti(path):
        return _load_nifti(path)
    return _load_raw(path)


def save_volume(vol: Volume, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        if _is_nifti(path):
            img = nib.Nifti1Image(np.asarray(vol.data, dtype=np.float32), np.diag([*vol.spacing, 1.0]))
            img.header.set_zooms(vol.spacing)
            img.header.set_xyzt_units("mm")
            nib.save(img, str(path))
        else:
            _save_raw(np.asarray(vol.data)[None], vol.spacing, path, unit=None)
    except OSError as exc:
        raise OSError(f"{path}: cannot write volume ({exc})") from exc


def _load_nifti(path: Path) -> Volume:
    try:
        img = nib.load(str(path))
        header = img.header
        dtype = header.get_data_dtype()
    except Exception as exc:  # nibabel raises a zoo of types on corrupt headers
        raise UnreadableFileError(f"{path}: not a readable NIfTI file ({exc})") from exc
    if np.dtype(dtype).newbyteorder("=") not in NIFTI_DTYPES:
        raise UnsupportedDataTypeError(f"{path}: NIfTI data type {dtype} not supported (int16, float32 only)")
    shape = header.get_data_shape()
    if len(shape) < 3 or any(s != 1 for s in shape[3:]):
        raise UnsupportedDataTypeError(f"{path}: expected a 3-D image, header shape {shape}")
    expected = int(np.prod(shape[:3])) * np.dtype(dtype).itemsize + int(img.dataobj.offset)
    actual = _payload_size(path)
    if actual < expected:
        raise SizeMismatchError(f"{path}: header declares {expected} bytes, file holds {actual}")
    try:
        data = np.asanyarray(img.dataobj, dtype=np.float64).reshape(shape[:3])
    except Exception as exc:
        raise UnreadableFileError(f"{path}: cannot decode payload ({exc})") from exc
    spacing = tuple(float(z) for z in header.get_zooms()[:3])
    return Volume(data, spacing)


def _payload_size(path: Path) -> int:
    if path.name.lower().endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return len(fh.read())
    return path.stat().st_size


def _read_sidecar(path: Path) -> dict:
    side = _sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError as exc:
        raise UnreadableFileError(f"{path}: missing JSON sidecar {side.name}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise UnreadableFileError(f"{side}: unreadable sidecar ({exc})") from exc
    if "dims" not in meta or len(meta["dims"]) != 3:
        raise UnreadableFileError(f"{side}: sidecar needs three 'dims'")
    return meta


def _load_raw_array(path: Path):
    meta = _read_sidecar(path)
    dtype_name = meta.get("dtype", "float32")
    if dtype_name not in RAW_DTYPES:
        raise UnsupportedDataTypeError(f"{path}: raw dtype {dtype_name!r} not supported")
    dims = tuple(int(d) for d in meta["dims"])
    ncomp = int(meta.get("components", 1))
    try:
        payload = np.fromfile(path, dtype=RAW_DTYPES[dtype_name])
    except OSError as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc
    expected = ncomp * int(np.prod(dims))
    if payload.size != expected:
        raise SizeMismatchError(
            f"{path}: sidecar declares {ncomp}x{dims} = {expected} scalars, payload has {payload.size}"
        )
    arr = payload.reshape((ncomp, *dims[::-1])).transpose(0, 3, 2, 1)
    return arr, meta


def _load_raw(path: Path) -> Volume:
    arr, meta = _load_raw_array(path)
    if arr.shape[0] != 1:
        raise UnsupportedDataTypeError(f"{path}: holds {arr.shape[0]} components, expected a scalar volume")
    return Volume(arr[0], tuple(meta.get("spacing", (1.0, 1.0, 1.0))))


def _save_raw(arr: np.ndarray, spacing, path: Path, unit) -> None:
    arr = np.asarray(arr, dtype="<f4")
    # planar components, each x-fastest
    arr.transpose(0, 3, 2, 1).tofile(path)
    meta = {"dims": list(arr.shape[1:]), "spacing": list(spacing), "dtype": "float32"}
    if arr.shape[0] != 1:
        meta["components"] = int(arr.shape[0])
    if unit is not None:
        meta["unit"] = unit
    _sidecar_path(path).write_text(json.dumps(meta, indent=1))


def save_field(df: np.ndarray, path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a (3, X, Y, Z) displacement field as planar float32 plus sidecar.

    Values are rounded to float32 on disk.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if df.ndim != 4 or df.shape[0] != 3:
        raise ValueError(f"field must have shape (3, X, Y, Z), got {df.shape}")
    _save_raw(df, spacing, path, unit="voxel")


def load_field(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise UnreadableFileError(f"{path}: no such file")
    arr, meta = _load_raw_array(path)
    if arr.shape[0] != 3:
        raise UnsupportedDataTypeError(f"{path}: expected 3 components, found {arr.shape[0]}")
    if meta.get("unit", "voxel") != "voxel":
        raise UnsupportedDataTypeError(f"{path}: unit {meta['unit']!r} is not 'voxel'")
    return np.ascontiguousarray(arr, dtype=np.float64)


def crop_center_pad(vol: Volume, target_dims, pad_value: float = -1000.0, mask: Volume | None = None) -> Volume:
    """Crop and/or pad ``vol`` to ``target_dims`` around the mask bounding-box center.

    Without a mask (or with an empty one) the volume center is used.
    """
    target = tuple(int(t) for t in target_dims)
    if len(target) != 3 or min(target) < 1:
        raise ValueError(f"target dims must be three positive integers, got {target_dims}")
    src = vol.dims
    if mask is not None and np.any(mask.data > 0):
        idx = np.nonzero(mask.data > 0)
        center = [(i.min() + i.max()) / 2.0 for i in idx]
    else:
        center = [(n - 1) / 2.0 for n in src]
    out = np.full(target, pad_value, dtype=np.float32)
    src_sl, dst_sl = [], []
    for c, n_src, n_dst in zip(center, src, target):
        offset = int(np.floor(c - (n_dst - 1) / 2.0 + 0.5))
        lo, hi = max(offset, 0), min(offset + n_dst, n_src)
        if hi <= lo:
            return Volume(out, vol.spacing)
        src_sl.append(slice(lo, hi))
        dst_sl.append(slice(lo - offset, hi - offset))
    out[tuple(dst_sl)] = vol.data[tuple(src_sl)]
    return Volume(out, vol.spacing)

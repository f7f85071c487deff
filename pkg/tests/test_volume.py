import json

import nibabel as nib
import numpy as np
import pytest
from hypothesis import given, strategies as st

from cascadereg.errors import SizeMismatchError, UnreadableFileError, UnsupportedDataTypeError
from cascadereg.volume import (
    IntensityWindow, Volume, crop_center_pad, load_field, load_volume, save_field, save_volume,
)


def test_volume_is_float32_and_read_only():
    v = Volume(np.arange(8, dtype=np.int16).reshape(2, 2, 2), (1, 1, 2.5))
    assert v.data.dtype == np.float32
    assert v.dims == (2, 2, 2)
    assert v.spacing == (1.0, 1.0, 2.5)
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 5


@pytest.mark.parametrize("spacing", [(0, 1, 1), (1, -1, 1), (1, 1)])
def test_volume_rejects_bad_spacing(spacing):
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), spacing)


def test_window_validation():
    assert IntensityWindow().width == 1700.0
    with pytest.raises(ValueError):
        IntensityWindow(700, -1000)


def test_raw_zeros_with_sidecar(tmp_path):
    p = tmp_path / "zeros.raw"
    np.zeros(8, dtype="<f4").tofile(p)
    (tmp_path / "zeros.json").write_text(json.dumps({"dims": [2, 2, 2], "spacing": [1, 1, 1], "dtype": "float32"}))
    v = load_volume(p)
    assert v.dims == (2, 2, 2)
    assert np.all(v.data == 0)


def test_raw_layout_is_x_fastest(tmp_path):
    p = tmp_path / "ramp.raw"
    np.arange(24, dtype="<f4").tofile(p)
    (tmp_path / "ramp.json").write_text(json.dumps({"dims": [4, 3, 2], "dtype": "float32"}))
    v = load_volume(p)
    assert v.data[1, 0, 0] == 1
    assert v.data[0, 1, 0] == 4
    assert v.data[0, 0, 1] == 12


def test_raw_size_mismatch(tmp_path):
    p = tmp_path / "short.raw"
    np.zeros(7, dtype="<f4").tofile(p)
    (tmp_path / "short.json").write_text(json.dumps({"dims": [2, 2, 2], "dtype": "float32"}))
    with pytest.raises(SizeMismatchError):
        load_volume(p)


def test_raw_unsupported_dtype(tmp_path):
    p = tmp_path / "u8.raw"
    np.zeros(8, dtype=np.uint8).tofile(p)
    (tmp_path / "u8.json").write_text(json.dumps({"dims": [2, 2, 2], "dtype": "uint8"}))
    with pytest.raises(UnsupportedDataTypeError):
        load_volume(p)


def test_unreadable_files(tmp_path):
    with pytest.raises(UnreadableFileError):
        load_volume(tmp_path / "missing.nii")
    bad = tmp_path / "junk.nii"
    bad.write_bytes(b"not a nifti header")
    with pytest.raises(UnreadableFileError):
        load_volume(bad)
    nosidecar = tmp_path / "lonely.raw"
    np.zeros(8, dtype="<f4").tofile(nosidecar)
    with pytest.raises(UnreadableFileError):
        load_volume(nosidecar)


def test_error_kinds_are_distinct():
    assert len({UnreadableFileError, UnsupportedDataTypeError, SizeMismatchError}) == 3
    assert not issubclass(SizeMismatchError, UnreadableFileError)


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz", ".raw"])
def test_round_trip_random(tmp_path, rng, suffix):
    v = Volume(rng.standard_normal((16, 16, 16)) * 300, (1, 1, 2.5))
    path = tmp_path / f"vol{suffix}"
    save_volume(v, path)
    back = load_volume(path)
    assert back == v
    assert back.spacing == (1.0, 1.0, 2.5)


@pytest.mark.parametrize("suffix", [".nii.gz", ".raw"])
def test_round_trip_constant(tmp_path, suffix):
    v = Volume(np.full((4, 4, 4), -1000.0))
    save_volume(v, tmp_path / f"c{suffix}")
    assert load_volume(tmp_path / f"c{suffix}") == v


def test_nifti_int16_with_scaling(tmp_path):
    data = np.arange(27, dtype=np.int16).reshape(3, 3, 3)
    img = nib.Nifti1Image(data, np.eye(4))
    img.header.set_slope_inter(2.0, -1024.0)
    nib.save(img, tmp_path / "ct.nii")
    v = load_volume(tmp_path / "ct.nii")
    np.testing.assert_array_equal(v.data, data * 2.0 - 1024.0)


def test_nifti_unsupported_dtype(tmp_path):
    nib.save(nib.Nifti1Image(np.zeros((2, 2, 2), dtype=np.uint8), np.eye(4)), tmp_path / "u8.nii")
    with pytest.raises(UnsupportedDataTypeError):
        load_volume(tmp_path / "u8.nii")


def test_nifti_truncated_payload(tmp_path):
    save_volume(Volume(np.ones((8, 8, 8))), tmp_path / "t.nii")
    raw = (tmp_path / "t.nii").read_bytes()
    (tmp_path / "t.nii").write_bytes(raw[:-100])
    with pytest.raises(SizeMismatchError):
        load_volume(tmp_path / "t.nii")


def test_field_round_trip(tmp_path, rng):
    df = rng.standard_normal((3, 5, 6, 7)).astype(np.float32).astype(np.float64)
    save_field(df, tmp_path / "df.raw")
    meta = json.loads((tmp_path / "df.json").read_text())
    assert meta["unit"] == "voxel" and meta["components"] == 3
    np.testing.assert_array_equal(load_field(tmp_path / "df.raw"), df)
    # planar payload: the whole x component comes first, x-fastest
    payload = np.fromfile(tmp_path / "df.raw", dtype="<f4")
    np.testing.assert_array_equal(payload[: 5 * 6 * 7], df[0].ravel(order="F"))


def test_crop_pad_symmetric():
    v = Volume(np.arange(64, dtype=float).reshape(4, 4, 4))
    out = crop_center_pad(v, (6, 6, 6), -1000)
    assert out.dims == (6, 6, 6)
    np.testing.assert_array_equal(out.data[1:5, 1:5, 1:5], v.data)
    shell = np.ones((6, 6, 6), bool)
    shell[1:5, 1:5, 1:5] = False
    assert np.all(out.data[shell] == -1000)


def test_crop_pad_identity():
    v = Volume(np.random.default_rng(0).standard_normal((5, 6, 7)))
    assert crop_center_pad(v, v.dims) == v


def test_crop_centers_on_mask():
    data = np.zeros((20, 20, 20))
    data[2:6, 3:7, 10:14] = 1
    out = crop_center_pad(Volume(data), (4, 4, 4), 0.0, mask=Volume(data))
    assert np.all(out.data == 1)


@given(
    src=st.tuples(*[st.integers(1, 9)] * 3),
    dst=st.tuples(*[st.integers(1, 9)] * 3),
)
def test_crop_pad_conserves_in_bounds_values(src, dst):
    # positive values: whatever lands in the target keeps its value, the rest is padding (0)
    data = np.arange(1, np.prod(src) + 1, dtype=float).reshape(src)
    out = crop_center_pad(Volume(data), dst, 0.0)
    kept = out.data[out.data > 0]
    assert out.dims == tuple(dst)
    assert set(kept.tolist()) <= set(data.ravel().tolist())
    assert len(set(kept.tolist())) == kept.size
    # every kept voxel is a contiguous block of the source of size prod(min(src, dst))
    assert kept.size == np.prod(np.minimum(src, dst))

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage as ndi

from cascadereg.errors import GridMismatchError
from cascadereg.field import (
    compose, dilate_flow, gradient_penalty, gradient_penalty_grad, jacobian_determinant, resample_cubic, warp,
)

from conftest import smooth_field, smooth_image


def grid(dims):
    return np.stack(np.meshgrid(*[np.arange(n, dtype=float) for n in dims], indexing="ij"))


def scipy_warp(img, df):
    """Independent trilinear edge-clamped backward warp."""
    coords = grid(img.shape) + df
    for a, n in enumerate(img.shape):
        coords[a] = np.clip(coords[a], 0, n - 1)
    return ndi.map_coordinates(img, coords, order=1, mode="nearest")


# ---------------------------------------------------------------- warp


def test_zero_field_is_identity(rng):
    img = rng.standard_normal((7, 8, 9))
    np.testing.assert_array_equal(warp(img, np.zeros((3, 7, 8, 9))), img)


def test_integer_shift_with_edge_clamp(rng):
    img = rng.standard_normal((6, 5, 4))
    df = np.zeros((3, 6, 5, 4))
    df[0] = 1.0
    out = warp(img, df)
    np.testing.assert_array_equal(out[:-1], img[1:])
    np.testing.assert_array_equal(out[-1], img[-1])


def test_half_voxel_shift_on_ramp_is_exact():
    img = grid((8, 6, 5))[0] * 3.0 + 2.0
    df = np.zeros((3, 8, 6, 5))
    df[0] = 0.5
    out = warp(img, df)
    np.testing.assert_allclose(out[:-1], img[:-1] + 1.5, atol=1e-12)


def test_warp_matches_scipy_trilinear(rng):
    img = rng.standard_normal((9, 10, 11))
    df = rng.uniform(-4, 4, (3, 9, 10, 11))
    np.testing.assert_allclose(warp(img, df), scipy_warp(img, df), atol=1e-10)


@given(st.floats(-1e3, 1e3), st.integers(0, 1000))
def test_warp_preserves_constants(c, seed):
    df = np.random.default_rng(seed).uniform(-10, 10, (3, 5, 6, 4))
    out = warp(np.full((5, 6, 4), c), df)
    assert np.all(np.abs(out - c) <= 1e-9 * max(1.0, abs(c)))


def test_warp_grid_mismatch():
    with pytest.raises(GridMismatchError):
        warp(np.zeros((4, 4, 4)), np.zeros((3, 4, 4, 5)))
    with pytest.raises(GridMismatchError):
        warp(np.zeros((4, 4, 4)), np.zeros((2, 4, 4, 4)))


# ---------------------------------------------------------------- compose


def test_compose_neutral_elements(rng):
    a = rng.standard_normal((3, 6, 6, 6))
    zero = np.zeros_like(a)
    np.testing.assert_array_equal(compose(a, zero), a)
    np.testing.assert_array_equal(compose(zero, a), a)


def test_compose_constants_add():
    a = np.broadcast_to(np.array([1.0, -2.0, 0.5])[:, None, None, None], (3, 5, 5, 5)).copy()
    b = np.broadcast_to(np.array([0.25, 1.0, -1.5])[:, None, None, None], (3, 5, 5, 5)).copy()
    np.testing.assert_allclose(compose(a, b), a + b, atol=1e-12)


def border_taper(dims):
    """Smooth weight that vanishes on the grid border, so warps never clamp."""
    x = grid(dims)
    return np.prod([np.sin(np.pi * x[a] / (n - 1)) for a, n in enumerate(dims)], axis=0)


@pytest.mark.parametrize("seed", range(5))
def test_two_step_warp_equals_composed_warp(seed):
    # trilinear interpolation is exact on an affine image, so any mismatch
    # would come from the composition itself
    rng = np.random.default_rng(seed)
    dims = (16, 16, 16)
    img = np.tensordot(rng.uniform(-1, 1, 3), grid(dims), axes=1)
    a = smooth_field(rng, dims, 1.5, 4.0) * border_taper(dims)
    b = smooth_field(rng, dims, 1.5, 4.0) * border_taper(dims)
    two_step = warp(warp(img, a), b)
    composed = warp(img, compose(a, b))
    assert np.abs(two_step - composed).max() <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_two_step_warp_on_curved_image(seed):
    # on a curved image the two routes differ by double-interpolation error only
    rng = np.random.default_rng(seed)
    dims = (16, 16, 16)
    img = smooth_image(dims, 3.0, seed)
    a, b = smooth_field(rng, dims, 1.5, 4.0), smooth_field(rng, dims, 1.5, 4.0)
    assert np.abs(warp(warp(img, a), b) - warp(img, compose(a, b))).max() <= 5e-2


@pytest.mark.parametrize("seed", range(5))
def test_compose_associative(seed):
    # edge clamping breaks associativity next to the border, so smooth fields
    # are checked away from it and near-affine fields on the whole grid
    rng = np.random.default_rng(seed)
    a, b, c = (smooth_field(rng, (16, 16, 16), 2.0, 8.0) for _ in range(3))
    diff = np.abs(compose(compose(a, b), c) - compose(a, compose(b, c)))
    assert diff[:, 3:-3, 3:-3, 3:-3].max() <= 1e-2
    a, b, c = (smooth_field(rng, (16, 16, 16), 2.0, 16.0) for _ in range(3))
    assert np.abs(compose(compose(a, b), c) - compose(a, compose(b, c))).max() <= 1e-2


# ---------------------------------------------------------------- dilation


def test_dilate_zero_and_constant():
    assert np.all(dilate_flow(np.zeros((3, 4, 4, 4)), (8, 8, 8)) == 0)
    c = np.broadcast_to(np.array([1.0, -0.5, 2.0])[:, None, None, None], (3, 4, 4, 4))
    out = dilate_flow(c, (8, 8, 8))
    np.testing.assert_allclose(out, 2 * np.broadcast_to(c[:, :1, :1, :1], (3, 8, 8, 8)), atol=1e-12)


def test_dilate_linear_ramp_analytic():
    src = np.zeros((3, 8, 8, 8))
    src[0] = 0.3 * grid((8, 8, 8))[0] + 0.1 * grid((8, 8, 8))[2]
    out = dilate_flow(src, (16, 16, 16))
    # destination index j samples source coordinate j / 2
    fine = grid((16, 16, 16)) / 2.0
    np.testing.assert_allclose(out[0], 2 * (0.3 * fine[0] + 0.1 * fine[2]), atol=1e-12)


def test_dilate_odd_target_and_ratio():
    src = np.ones((3, 3, 4, 5))
    out = dilate_flow(src, (5, 8, 9))
    np.testing.assert_allclose(out[0], 5 / 3)
    np.testing.assert_allclose(out[1], 2.0)
    np.testing.assert_allclose(out[2], 9 / 5)


def test_dilate_rejects_shrinking():
    with pytest.raises(ValueError):
        dilate_flow(np.zeros((3, 8, 8, 8)), (4, 8, 8))


@given(st.floats(-5, 5), st.integers(0, 100))
def test_dilate_commutes_with_scaling(s, seed):
    df = np.random.default_rng(seed).standard_normal((3, 4, 5, 3))
    np.testing.assert_allclose(dilate_flow(s * df, (8, 9, 6)), s * dilate_flow(df, (8, 9, 6)), atol=1e-9)


def test_resample_cubic_interpolates_at_source_samples(rng):
    v = rng.standard_normal((5, 5, 5))
    out = resample_cubic(v, (10, 10, 10))
    np.testing.assert_allclose(out[::2, ::2, ::2], v, atol=1e-12)


# ---------------------------------------------------------------- jacobian and penalty


def test_jacobian_identity_and_translation():
    assert np.all(jacobian_determinant(np.zeros((3, 5, 5, 5))) == 1)
    t = np.zeros((3, 5, 6, 7))
    t[0], t[1], t[2] = 1.5, -2.0, 0.25
    assert np.all(jacobian_determinant(t) == 1)


def test_jacobian_linear_expansion():
    df = 0.1 * grid((7, 7, 7))
    J = jacobian_determinant(df)
    assert np.abs(J[1:-1, 1:-1, 1:-1] - 1.331).max() <= 1e-6


def test_jacobian_general_affine_matches_det(rng):
    A = rng.uniform(-0.3, 0.3, (3, 3))
    df = np.einsum("ab,bxyz->axyz", A, grid((6, 6, 6)))
    np.testing.assert_allclose(jacobian_determinant(df), np.linalg.det(np.eye(3) + A), atol=1e-12)


def test_jacobian_too_small():
    with pytest.raises(ValueError):
        jacobian_determinant(np.zeros((3, 2, 5, 5)))


def test_gradient_penalty_examples():
    assert gradient_penalty(np.zeros((3, 4, 4, 4))) == 0
    assert gradient_penalty(np.full((3, 4, 4, 4), 7.0)) == 0
    df = np.zeros((3, 2, 1, 1))
    df[0, :, 0, 0] = (0.0, 3.0)
    # one squared difference of 9, divided by the 2 voxels
    assert gradient_penalty(df) == 4.5


def test_gradient_penalty_grad_matches_finite_differences(rng):
    df = rng.standard_normal((3, 4, 3, 5))
    g = gradient_penalty_grad(df)
    h = 1e-6
    for _ in range(20):
        idx = tuple(rng.integers(0, n) for n in df.shape)
        e = np.zeros_like(df)
        e[idx] = h
        fd = (gradient_penalty(df + e) - gradient_penalty(df - e)) / (2 * h)
        assert abs(fd - g[idx]) <= 1e-6 * max(1.0, abs(fd))

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cascadereg.aru import (
    MAX_GRADE, AruArchitecture, aru_forward, compute_grades, depth_cap, grades_from_caps, init_weights,
    level_architectures, load_weights, receptive_field_depth, save_weights, weight_shapes, zero_weights,
)
from cascadereg.errors import WeightShapeError


# ---------------------------------------------------------------- receptive field oracle


def brute_force_rf(grade, convs=2, mid=2):
    """Propagate dependency sets (bitmasks over input indices) forward through the 1-D layer graph."""
    rf_guess = 16 * 2**grade
    length = 4 * rf_guess
    x = [1 << i for i in range(length)]

    def conv(a):
        n = len(a)
        return [(a[i - 1] if i else 0) | a[i] | (a[i + 1] if i + 1 < n else 0) for i in range(n)]

    skips = []
    for _ in range(grade):
        for _ in range(convs):
            x = conv(x)
        skips.append(x)
        x = [x[2 * j] | (x[2 * j + 1] if 2 * j + 1 < len(x) else 0) for j in range((len(x) + 1) // 2)]
    for _ in range(mid):
        x = conv(x)
    for skip in reversed(skips):
        x = [x[i // 2] | skip[i] for i in range(len(skip))]
        for _ in range(convs):
            x = conv(x)
    best = 0
    # interior outputs only, one full pooling period
    start = length // 2
    for o in range(start, start + 2**grade):
        m = x[o]
        lo = (m & -m).bit_length() - 1
        hi = m.bit_length() - 1
        assert lo > 0 and hi < length - 1, "footprint touched the border"
        best = max(best, hi - lo + 1)
    return best


@pytest.mark.parametrize("grade", range(1, MAX_GRADE + 1))
def test_rf_matches_brute_force(grade):
    assert receptive_field_depth(grade) == brute_force_rf(grade)


def test_rf_variants_match_brute_force():
    for g, c, m in itertools.product(range(0, 4), (1, 2, 3), (0, 1, 2)):
        assert receptive_field_depth(g, c, m) == brute_force_rf(g, c, m), (g, c, m)


def test_rf_identity_network():
    assert receptive_field_depth(0, 2, 0) == 1


def test_rf_strictly_increasing():
    rf = [receptive_field_depth(g) for g in range(1, MAX_GRADE + 1)]
    assert all(a < b for a, b in zip(rf, rf[1:]))


# ---------------------------------------------------------------- grades


@pytest.mark.parametrize("caps, expected", [
    ([5, 4, 3, 2, 1], [5, 4, 3, 2, 1]),
    ([9, 9, 9, 9, 9], [7, 7, 7, 7, 7]),
    ([6, 4, 2, 1, 0], [4, 3, 2, 1, 1]),
])
def test_grade_examples(caps, expected):
    assert grades_from_caps(caps) == expected


def reference_grades(caps, cap=7):
    n = len(caps) - 1
    g = {n: min(max(caps[n], 1), cap)}
    for i in reversed(range(n)):
        g[i] = min(g[i + 1] + 1, max(caps[i], 1), cap)
    return [g[i] for i in range(n + 1)]


def test_grades_random_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        caps = list(rng.integers(0, 10, rng.integers(1, 7)))
        got = grades_from_caps(caps)
        assert got == reference_grades(caps)
        assert all(1 <= g <= 7 for g in got)
        assert all(a <= b + 1 for a, b in zip(got, got[1:]))


@given(st.lists(st.integers(1, 4000), min_size=1, max_size=6))
def test_compute_grades_invariants(depths):
    grades = compute_grades(len(depths) - 1, depths)
    assert all(1 <= g <= 7 for g in grades)
    assert all(a <= b + 1 for a, b in zip(grades, grades[1:]))
    for g, d in zip(grades, depths):
        cap = depth_cap(d)
        assert g <= max(cap, 1)
        if cap:
            assert receptive_field_depth(cap) <= d


def test_depth_cap_boundaries():
    for g in range(1, MAX_GRADE + 1):
        rf = receptive_field_depth(g)
        assert depth_cap(rf) == g
        assert depth_cap(rf - 1) == g - 1


def test_compute_grades_rejects_bad_input():
    with pytest.raises(ValueError):
        compute_grades(2, [10, 5])
    with pytest.raises(ValueError):
        compute_grades(1, [10, 0])


# ---------------------------------------------------------------- forward


def test_architecture_validation():
    with pytest.raises(ValueError):
        AruArchitecture(0, 2)
    with pytest.raises(ValueError):
        AruArchitecture(8, 2)
    arch = AruArchitecture(4, 2)
    assert [arch.channels(s) for s in range(1, 6)] == [16, 32, 64, 128, 128]


def _random_weights(arch, seed=0, prefix="aru"):
    rng = np.random.default_rng(seed)
    return {k: (rng.standard_normal(s) * 0.1).astype(np.float32) for k, s in arch.layer_shapes(prefix).items()}


@pytest.mark.parametrize("dims", [(8, 8, 8), (9, 7, 5), (12, 10, 6)])
def test_forward_shape(dims):
    arch = AruArchitecture(2, 3)
    out = aru_forward(arch, np.random.default_rng(0).standard_normal((3, *dims)), _random_weights(arch))
    assert out.shape == (3, *dims)
    assert np.all(np.isfinite(out))


def test_zero_weights_give_zero_flow():
    arch = AruArchitecture(2, 3)
    w = {k: np.zeros(s, np.float32) for k, s in arch.layer_shapes("aru").items()}
    out = aru_forward(arch, np.random.default_rng(0).standard_normal((3, 8, 8, 8)), w)
    assert np.all(out == 0)


def test_head_homogeneity():
    arch = AruArchitecture(2, 2)
    w = _random_weights(arch, 1)
    x = np.random.default_rng(1).standard_normal((2, 8, 8, 8))
    base = aru_forward(arch, x, w)
    w2 = dict(w)
    w2["aru.head.w"] = w["aru.head.w"] * 2
    w2["aru.head.b"] = w["aru.head.b"] * 2
    np.testing.assert_array_equal(aru_forward(arch, x, w2), 2 * base)


def test_shape_mismatch_raises():
    arch = AruArchitecture(1, 2)
    w = _random_weights(arch)
    w["aru.enc1.c0.w"] = w["aru.enc1.c0.w"][:, :1]
    with pytest.raises(WeightShapeError):
        aru_forward(arch, np.zeros((2, 4, 4, 4)), w)
    with pytest.raises(WeightShapeError):
        aru_forward(arch, np.zeros((3, 4, 4, 4)), _random_weights(arch))
    w = _random_weights(arch)
    del w["aru.head.b"]
    with pytest.raises(WeightShapeError, match="missing"):
        aru_forward(arch, np.zeros((2, 4, 4, 4)), w)


def test_bundle_round_trip(tmp_path):
    dims = [(16, 16, 16), (8, 8, 8)]
    w = init_weights(dims, seed=3)
    assert set(w) == set(weight_shapes(dims))
    save_weights(w, tmp_path / "w.zip")
    back = load_weights(tmp_path / "w.zip")
    assert set(back) == set(w)
    for k in w:
        assert back[k].dtype == np.float32
        np.testing.assert_array_equal(back[k], w[k])
    arch = level_architectures(dims)[1]
    x = np.random.default_rng(0).standard_normal((arch.in_channels, 8, 8, 8))
    np.testing.assert_array_equal(aru_forward(arch, x, w, "aru.l1"), aru_forward(arch, x, back, "aru.l1"))


def test_zero_bundle_covers_every_level():
    dims = [(32, 32, 16), (16, 16, 8), (8, 8, 4)]
    archs = level_architectures(dims)
    w = zero_weights(dims)
    for i, arch in enumerate(archs):
        assert 1 <= arch.grade <= 7
        assert all(k in w for k in arch.layer_shapes(f"aru.l{i}"))

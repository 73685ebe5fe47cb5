import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regibench.errors import (
    DegenerateGeometryError,
    InsufficientMatchesError,
    InvalidParameterError,
    NoFeaturesError,
)
from regibench.feature import (
    PATTERN,
    FeatureConfig,
    Keypoint,
    Match,
    describe_brief,
    detect_fast,
    estimate_affine_ransac,
    fast_scores,
    hamming_distance,
    hamming_matrix,
    match_hamming,
    ransac_affine,
    register_feature,
)
from regibench.geometry import DisplacementField, affine_to_field, warp

RING = [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)]


def slow_fast_score(img, x, y, thr):
    """Plain-loop segment test: best weakest-pixel margin over 9-long arcs."""
    c = img[y, x]
    best = 0.0
    for sign in (1, -1):
        d = [sign * (img[y + dy, x + dx] - c) for dx, dy in RING]
        for start in range(16):
            arc = [d[(start + k) % 16] for k in range(9)]
            if min(arc) > thr:
                best = max(best, min(arc))
    return best


def square_image():
    img = np.full((80, 80), 50.0)
    img[15:65, 15:65] = 200.0
    return img


def test_pattern_shape_and_radius():
    assert PATTERN.shape == (256, 4)
    assert np.abs(PATTERN).max() <= 15
    assert not np.any(np.all(PATTERN[:, :2] == PATTERN[:, 2:], axis=1))


def test_fast_scores_match_loop_oracle(rng):
    img = np.round(rng.uniform(0, 255, (24, 24)))
    img[8:16, 8:16] += 60
    got = fast_scores(img, 20.0)
    for y in range(3, 21):
        for x in range(3, 21):
            assert got[y, x] == slow_fast_score(img, x, y, 20.0)
    assert not got[:3].any() and not got[:, -3:].any()


def test_fast_constant_and_huge_threshold(textured_gray):
    assert detect_fast(np.full((40, 40), 90.0)) == []
    assert detect_fast(textured_gray, threshold=300) == []
    with pytest.raises(InvalidParameterError):
        detect_fast(textured_gray, threshold=0)


def test_fast_square_corners_only():
    kps = detect_fast(square_image(), threshold=20)
    corners = [(15, 15), (64, 15), (15, 64), (64, 64)]
    assert len(kps) == 4
    for kp in kps:
        assert min(max(abs(kp.x - cx), abs(kp.y - cy)) for cx, cy in corners) <= 3
    assert all(kp.score > 0 for kp in kps)


def test_fast_respects_cap(textured_gray):
    kps = detect_fast(textured_gray, max_keypoints=25)
    assert len(kps) == 25
    assert all(a.score >= b.score for a, b in zip(kps, kps[1:]))


@settings(max_examples=25)
@given(st.integers(0, 2**31))
def test_nms_leaves_no_adjacent_keypoints(seed):
    img = np.random.default_rng(seed).integers(0, 256, (40, 40)).astype(float)
    kps = detect_fast(img, threshold=15, max_keypoints=10_000)
    pts = np.array([(k.x, k.y) for k in kps]).reshape(-1, 2)
    if len(pts) > 1:
        cheb = np.abs(pts[:, None] - pts[None]).max(axis=2)
        np.fill_diagonal(cheb, 99)
        assert cheb.min() > 1
    assert all(3 <= k.x < 37 and 3 <= k.y < 37 for k in kps)


def test_brief_determinism_and_border(textured_gray):
    kp = Keypoint(100, 120, 1.0)
    a = describe_brief(textured_gray, kp)
    assert a.shape == (32,) and a.dtype == np.uint8
    assert np.array_equal(a, describe_brief(textured_gray, kp))
    assert describe_brief(textured_gray, Keypoint(10, 120, 1.0)) is None


def test_brief_shift_equivariance(textured_gray):
    big = textured_gray
    a, b = big[:, 7:], big[:, :-7]  # a(x) == b(x + 7)
    for x, y in [(60, 60), (120, 90), (180, 200)]:
        da = describe_brief(a, Keypoint(x, y, 1.0))
        db = describe_brief(b, Keypoint(x + 7, y, 1.0))
        assert np.array_equal(da, db)


def test_brief_inversion_complements(textured_gray):
    kp = Keypoint(128, 128, 1.0)
    d = describe_brief(textured_gray, kp)
    inv = describe_brief(255.0 - textured_gray, kp)
    assert np.array_equal(inv, np.bitwise_not(d))


def test_hamming_examples(rng):
    d = rng.integers(0, 256, 32, dtype=np.uint8)
    assert hamming_distance(d, d) == 0
    assert hamming_distance(d, np.bitwise_not(d)) == 256
    e = d.copy()
    e[5] ^= 0b0001_0000
    assert hamming_distance(d, e) == 1


descs = st.lists(st.integers(0, 255), min_size=32, max_size=32).map(lambda v: np.array(v, dtype=np.uint8))


@given(descs, descs, descs)
def test_hamming_is_metric(a, b, c):
    assert hamming_distance(a, a) == 0
    assert hamming_distance(a, b) == hamming_distance(b, a)
    assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)
    expected = sum(bin(int(x) ^ int(y)).count("1") for x, y in zip(a, b))
    assert hamming_distance(a, b) == expected


def test_hamming_matrix_matches_pairwise(rng):
    dm = rng.integers(0, 256, (5, 32), dtype=np.uint8)
    df = rng.integers(0, 256, (4, 32), dtype=np.uint8)
    m = hamming_matrix(dm, df)
    for i in range(5):
        for j in range(4):
            assert m[i, j] == hamming_distance(dm[i], df[j])


def test_match_identical_lists(rng):
    d = rng.integers(0, 256, (6, 32), dtype=np.uint8)
    matches = match_hamming(d, d, keep_fraction=1.0)
    assert sorted(matches) == [Match(i, i, 0) for i in range(6)]
    assert len(match_hamming(d, d, keep_fraction=0.5)) == 3
    assert len(match_hamming(d, d, keep_fraction=0.4)) == 3  # ceil(2.4)


def test_match_errors(rng):
    d = rng.integers(0, 256, (3, 32), dtype=np.uint8)
    with pytest.raises(NoFeaturesError):
        match_hamming(d[:0], d)
    with pytest.raises(InvalidParameterError):
        match_hamming(d, d, keep_fraction=0.0)


def test_match_is_mutual(rng):
    dm = rng.integers(0, 256, (12, 32), dtype=np.uint8)
    df = rng.integers(0, 256, (9, 32), dtype=np.uint8)
    dist = hamming_matrix(dm, df)
    matches = match_hamming(dm, df, keep_fraction=1.0)
    for m in matches:
        assert dist[m.index_moving].argmin() == m.index_fixed
        assert dist[:, m.index_fixed].argmin() == m.index_moving
    assert [m.distance for m in matches] == sorted(m.distance for m in matches)


A_TRUE = np.array([[1.02, 0.05, 3.0], [-0.04, 0.97, -2.0], [0.0, 0.0, 1.0]])


def _apply(a, pts):
    return pts @ a[:2, :2].T + a[:2, 2]


def test_ransac_three_exact():
    src = np.array([[10.0, 10.0], [200.0, 30.0], [50.0, 180.0]])
    t, mask = ransac_affine(src, _apply(A_TRUE, src), iters=10)
    np.testing.assert_allclose(t.m, A_TRUE, atol=1e-9)
    assert mask.all()


def test_ransac_with_outliers(rng):
    src = rng.uniform(0, 256, (50, 2))
    dst = _apply(A_TRUE, src)
    dst[35:] = rng.uniform(0, 256, (15, 2))
    t, mask = ransac_affine(src, dst, iters=1000, inlier_tol=2.0, seed=3)
    np.testing.assert_allclose(t.m, A_TRUE, atol=1e-3)
    assert mask[:35].all() and mask.sum() >= 35


def test_ransac_errors():
    with pytest.raises(InsufficientMatchesError):
        ransac_affine(np.zeros((2, 2)), np.zeros((2, 2)))
    line = np.stack([np.arange(10.0), 2 * np.arange(10.0)], axis=1)
    with pytest.raises(DegenerateGeometryError):
        ransac_affine(line, line, iters=50)
    kps = [Keypoint(0, 0, 1.0)] * 2
    with pytest.raises(InsufficientMatchesError):
        estimate_affine_ransac([Match(0, 0, 0), Match(1, 1, 0)], kps, kps)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.permutations(range(30)))
def test_ransac_permutation_invariant(seed, perm):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 256, (30, 2))
    dst = _apply(A_TRUE, src) + rng.normal(0, 0.3, (30, 2))
    dst[:8] = rng.uniform(0, 256, (8, 2))
    perm = np.array(perm)
    t1, m1 = ransac_affine(src, dst, iters=200, seed=5)
    t2, m2 = ransac_affine(src[perm], dst[perm], iters=200, seed=5)
    assert np.array_equal(t1.m, t2.m)
    assert np.array_equal(m1[perm], m2)


def test_register_feature_self(textured):
    t, diag = register_feature(textured, textured)
    np.testing.assert_allclose(t.m, np.eye(3), atol=1e-3)
    assert diag["inlier_ratio"] == 1.0


def test_register_feature_translation(textured):
    field = DisplacementField.constant(256, 256, 3.0, -2.0)
    fixed = warp(textured, field, fill="zero")
    t, _ = register_feature(textured, fixed)
    est = affine_to_field(t, 256, 256)
    rmse = np.sqrt(np.mean((est.dx - 3.0) ** 2 + (est.dy + 2.0) ** 2))
    assert rmse < 1.0


def test_register_feature_constant_pair():
    img = np.full((64, 64), 100.0)
    with pytest.raises(NoFeaturesError):
        register_feature(img, img)


@settings(max_examples=6, deadline=None)
@given(st.integers(-5, 5), st.integers(-5, 5))
def test_integer_shift_equivariance(textured, tx, ty):
    fixed = warp(textured, DisplacementField.constant(256, 256, tx, ty), fill="zero")
    t, _ = register_feature(textured, fixed, FeatureConfig())
    assert abs(t.m[0, 2] - tx) <= 1 and abs(t.m[1, 2] - ty) <= 1

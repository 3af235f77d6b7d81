"""Tests for fundamental matrices, epipolar distances, bias and joint attention."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nvsgeom.camera import CameraIntrinsics, RelativePose, rotation_from_ypr
from nvsgeom.epipolar import (
    SENTINEL_DISTANCE,
    DegenerateGeometryError,
    EpipolarDistanceMatrix,
    EpipolarMixParams,
    attention_bias,
    epipolar_distance_matrix,
    fundamental_matrix,
    joint_attention,
    skew,
    token_centers,
    zero_bias,
)
from nvsgeom.rng import make_rng

from helpers import correspondences, double_loop, random_forward_pose, random_intrinsics, random_pose

UNIT_K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# fundamental matrix


def test_canonical_stereo():
    f = fundamental_matrix(UNIT_K, UNIT_K, RelativePose(np.eye(3), [1.0, 0.0, 0.0]))
    expected = skew([1.0, 0.0, 0.0])
    np.testing.assert_allclose(f, expected / np.linalg.norm(expected), atol=1e-15)


def test_unit_frobenius_norm_and_rank_two():
    rng = make_rng(20)
    f = fundamental_matrix(random_intrinsics(rng), random_intrinsics(rng), random_pose(rng))
    assert np.linalg.norm(f) == pytest.approx(1.0, abs=1e-14)
    assert np.linalg.svd(f, compute_uv=False)[2] < 1e-12


def test_projection_oracle():
    rng = make_rng(21)
    for _ in range(50):
        ks, kd, pose = random_intrinsics(rng), random_intrinsics(rng), random_forward_pose(rng)
        f = fundamental_matrix(ks, kd, pose)
        xs, xd = correspondences(rng, ks, kd, pose)
        assert np.abs(np.einsum("ni,ij,nj->n", xd, f, xs)).max() < 1e-6


def test_swapping_roles_transposes():
    rng = make_rng(22)
    ks, kd, pose = random_intrinsics(rng), random_intrinsics(rng), random_pose(rng)
    f = fundamental_matrix(ks, kd, pose)
    g = fundamental_matrix(kd, ks, pose.inverse())
    sign = np.sign(np.sum(f.T * g))
    np.testing.assert_allclose(g, sign * f.T, atol=1e-12)


def test_pure_rotation_is_degenerate():
    with pytest.raises(DegenerateGeometryError):
        fundamental_matrix(UNIT_K, UNIT_K, RelativePose(rotation_from_ypr(3, 1, 0), [1e-9, 0, 0]))


# ---------------------------------------------------------------------------
# distance matrix


def test_token_centers():
    c = token_centers((2, 4), (64, 128))
    np.testing.assert_array_equal(c[:, 0], [16, 48, 80, 112] * 2)
    np.testing.assert_array_equal(c[:, 1], [16] * 4 + [48] * 4)
    with pytest.raises(ValueError):
        token_centers((0, 4), (64, 64))


def test_rectified_rows_are_zero_distance():
    f = fundamental_matrix(UNIT_K, UNIT_K, RelativePose(np.eye(3), [1.0, 0.0, 0.0]))
    d = epipolar_distance_matrix(f, (4, 4), (4, 4), (8, 8)).values
    rows = np.repeat(np.arange(4), 4)
    same_row = rows[:, None] == rows[None, :]
    np.testing.assert_allclose(d[same_row], 0.0, atol=1e-12)
    # Other entries equal the vertical offset in pixels (token pitch 2).
    np.testing.assert_allclose(d[~same_row], (2.0 * np.abs(rows[:, None] - rows[None, :]))[~same_row], atol=1e-12)


def test_token_on_line_has_zero_distance():
    rng = make_rng(23)
    ks, kd, pose = random_intrinsics(rng), random_intrinsics(rng), random_forward_pose(rng)
    f = fundamental_matrix(ks, kd, pose)
    xs, xd = correspondences(rng, ks, kd, pose, n=5)
    for s, dpt in zip(xs, xd):
        line = f.T @ dpt
        assert abs(line @ s) / np.hypot(line[0], line[1]) < 1e-9


def test_double_loop_oracle():
    rng = make_rng(24)
    for _ in range(10):
        ks, kd, pose = random_intrinsics(rng), random_intrinsics(rng), random_pose(rng)
        f = fundamental_matrix(ks, kd, pose)
        got = epipolar_distance_matrix(f, (8, 8), (8, 8), (64, 64))
        np.testing.assert_allclose(got.values, double_loop(f, (8, 8), (8, 8), (64, 64)), rtol=0, atol=1e-9)
        assert not got.has_degenerate


def test_unequal_grids():
    rng = make_rng(25)
    f = fundamental_matrix(random_intrinsics(rng, 96, 64), random_intrinsics(rng, 96, 64), random_pose(rng))
    got = epipolar_distance_matrix(f, (4, 6), (2, 3), (64, 96)).values
    assert got.shape == (24, 6)
    np.testing.assert_allclose(got, double_loop(f, (4, 6), (2, 3), (64, 96)), rtol=0, atol=1e-9)


def test_degenerate_rows_get_sentinel(caplog):
    # Forward motion: the epipole (destination image center) has no line.
    k = CameraIntrinsics(1.0, 1.0, 1.0, 1.0, 2.0, 2.0)
    f = fundamental_matrix(k, k, RelativePose(np.eye(3), [0.0, 0.0, 1.0]))
    with caplog.at_level("WARNING"):
        d = epipolar_distance_matrix(f, (1, 1), (2, 2), (2, 2))
    assert d.has_degenerate
    np.testing.assert_array_equal(d.values, np.full((1, 4), SENTINEL_DISTANCE))


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1))
def test_distances_non_negative_and_finite(seed):
    rng = make_rng(seed)
    f = fundamental_matrix(random_intrinsics(rng), random_intrinsics(rng), random_pose(rng))
    d = epipolar_distance_matrix(f, (5, 3), (4, 4), (64, 64)).values
    assert np.all(np.isfinite(d)) and np.all(d >= 0)


# ---------------------------------------------------------------------------
# bias


dists = arrays(np.float64, (6, 5), elements=st.floats(0, 1e4))


@given(d=dists)
def test_initial_bias_is_zero(d):
    bias = attention_bias(d, EpipolarMixParams.initial(3))
    assert bias.shape == (3, 6, 5)
    assert np.all(bias == 0.0)


@given(d=dists, beta=st.floats(-10, 10))
def test_zero_amplitude_gives_constant(d, beta):
    params = EpipolarMixParams(0.0, 2.0, 1.5, beta)
    assert np.all(attention_bias(d, params) == beta)


def test_hard_cutoff_limit():
    d = np.array([[0.0, 0.5, 0.99, 1.01, 2.0, 50.0]])
    bias = attention_bias(d, EpipolarMixParams(1.0, 1e4, 1.0, 0.0))[0, 0]
    np.testing.assert_allclose(bias, [1, 1, 1, 0, 0, 0], atol=1e-12)


def test_analytic_point():
    bias = attention_bias(np.zeros((1, 1)), EpipolarMixParams(2.0, 1.0, 0.0, -1.0))
    assert bias[0, 0, 0] == 0.0


def test_per_head_parameters():
    d = np.array([[0.0, 3.0]])
    params = EpipolarMixParams([1.0, 2.0], [1.0, 0.5], [0.0, 1.0], [0.0, -1.0])
    bias = attention_bias(d, params)
    sig = lambda x: 1 / (1 + np.exp(-x))  # noqa: E731
    expected = np.array([[[sig(0.0), sig(-3.0)]], [[2 * sig(0.5) - 1, 2 * sig(-1.0) - 1]]])
    np.testing.assert_allclose(bias, expected, rtol=1e-15)


@given(
    m=st.floats(0.01, 10),
    tau=st.floats(0.01, 10),
    c=st.floats(-5, 20),
    d=arrays(np.float64, 20, elements=st.floats(0, 100)),
)
def test_bias_non_increasing_in_distance(m, tau, c, d):
    d = np.sort(d)
    bias = attention_bias(d[None], EpipolarMixParams(m, tau, c, 0.0))[0, 0]
    assert np.all(np.diff(bias) <= 0)


def test_negative_tau_allowed():
    bias = attention_bias(np.array([[0.0, 10.0]]), EpipolarMixParams(1.0, -1.0, 1.0, 0.0))
    assert bias[0, 0, 0] < bias[0, 0, 1]


def test_mix_params_validation_and_round_trip():
    with pytest.raises(ValueError):
        EpipolarMixParams(np.nan, 1, 1, 0)
    with pytest.raises(ValueError):
        EpipolarMixParams([1, 2], [1, 2, 3], 1, 0)
    p = EpipolarMixParams([1.0, 2.0], 0.5, 3.0, [-1.0, 0.0])
    q = EpipolarMixParams.from_dict(p.to_dict())
    assert q.heads == 2
    for k in ("m", "tau", "c", "b"):
        np.testing.assert_array_equal(getattr(p, k), getattr(q, k))


def test_bias_accepts_distance_matrix_type():
    d = EpipolarDistanceMatrix(np.full((2, 2), 3.0))
    np.testing.assert_array_equal(attention_bias(d, EpipolarMixParams.initial(1)), zero_bias(1, 2, 2))


# ---------------------------------------------------------------------------
# joint attention


def _tokens(rng, n_dst=5, n_src=7, dim=8):
    return (
        rng.normal(size=(n_dst, dim)),
        rng.normal(size=(n_dst, dim)),
        rng.normal(size=(n_dst, dim)),
        rng.normal(size=(n_src, dim)),
        rng.normal(size=(n_src, dim)),
    )


def test_hand_computed_two_by_two():
    q = np.array([[1.0, 0.0], [0.0, 2.0]])
    kd = np.array([[1.0, 1.0], [0.0, 1.0]])
    vd = np.array([[1.0, 0.0], [0.0, 1.0]])
    ks = np.array([[2.0, 0.0], [1.0, -1.0]])
    vs = np.array([[3.0, 1.0], [-1.0, 2.0]])
    bias = np.array([[0.5, -0.5], [0.0, 1.0]])
    out = joint_attention(q, kd, vd, ks, vs, bias=bias)
    scale = 1 / np.sqrt(2)
    # Row 0: logits q0.k / sqrt(2) = [1, 0, 2, 1] * scale, plus bias on the last two.
    l0 = np.array([1 * scale, 0 * scale, 2 * scale + 0.5, 1 * scale - 0.5])
    l1 = np.array([2 * scale, 2 * scale, 0 * scale + 0.0, -2 * scale + 1.0])
    vals = np.array([[1.0, 0.0], [0.0, 1.0], [3.0, 1.0], [-1.0, 2.0]])
    expected = []
    for l in (l0, l1):
        w = np.exp(l) / np.exp(l).sum()
        expected.append(w @ vals)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-9)


def test_zero_bias_equals_unbiased():
    rng = make_rng(30)
    toks = _tokens(rng)
    a = joint_attention(*toks, heads=2)
    b = joint_attention(*toks, bias=zero_bias(2, 5, 7), heads=2)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_large_negative_bias_is_self_attention():
    rng = make_rng(31)
    q, kd, vd, ks, vs = _tokens(rng)
    out = joint_attention(q, kd, vd, ks, vs, bias=np.full((5, 7), -1e3))
    logits = q @ kd.T / np.sqrt(8)
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out, w @ vd, rtol=0, atol=1e-6)


def test_heads_split_matches_per_head_loop():
    rng = make_rng(32)
    q, kd, vd, ks, vs = _tokens(rng, dim=12)
    bias = rng.normal(size=(3, 5, 7))
    out = joint_attention(q, kd, vd, ks, vs, bias=bias, heads=3)
    for h in range(3):
        sl = slice(4 * h, 4 * h + 4)
        single = joint_attention(q[:, sl], kd[:, sl], vd[:, sl], ks[:, sl], vs[:, sl], bias=bias[h])
        np.testing.assert_allclose(out[:, sl], single, rtol=0, atol=1e-12)


@settings(max_examples=40)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0, 100))
def test_rows_sum_to_one_and_cross_weights_positive(seed, scale):
    rng = make_rng(seed)
    toks = _tokens(rng)
    bias = rng.uniform(-scale, scale, size=(2, 5, 7))
    res = joint_attention(*toks, bias=bias, heads=2, return_weights=True)
    np.testing.assert_allclose(res.weights.sum(axis=-1), 1.0, atol=1e-9)
    assert res.cross_weights.shape == (2, 5, 7)
    assert np.all(res.cross_weights > 0)


def test_stable_with_huge_logits():
    q = np.full((2, 4), 1e3)
    kd = np.full((2, 4), 1e3)
    out = joint_attention(q, kd, np.ones((2, 4)), np.zeros((3, 4)), np.zeros((3, 4)))
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize(
    "kwargs",
    [dict(heads=3), dict(bias=np.zeros((5, 6))), dict(bias=np.zeros((4, 5, 7)), heads=2)],
)
def test_shape_errors(kwargs):
    toks = _tokens(make_rng(33))
    with pytest.raises(ValueError):
        joint_attention(*toks, **kwargs)


def test_mismatched_token_shapes():
    q, kd, vd, ks, vs = _tokens(make_rng(34))
    with pytest.raises(ValueError):
        joint_attention(q, kd[:4], vd, ks, vs)
    with pytest.raises(ValueError):
        joint_attention(q, kd, vd, ks[:, :4], vs)

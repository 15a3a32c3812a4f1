import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xrpose.geometry import (DEFAULT_LAYOUT, DegenerateGeometryError, KeypointLayout, KeypointSet, Pose,
                             ProjectionGeometry, angle_error, fit_line, keypoints_from_pose, keypoints_from_pose_array,
                             pose_array_from_keypoints, pose_from_keypoints)

GEOM = ProjectionGeometry()
PX = 300.0 / 1024


def eq2(pose, xk, yk):
    """Scalar transcription of the keypoint formula, written independently."""
    s = 1064.0 / (PX * pose.depth)
    a, t = math.radians(pose.alpha), math.radians(pose.tau)
    u, v = xk * math.cos(t), yk
    return pose.x + s * (math.cos(a) * u - math.sin(a) * v), pose.y + s * (math.sin(a) * u + math.cos(a) * v)


def test_d2p_is_spacing_over_sdd():
    assert GEOM.d2p == GEOM.detector_pixel_spacing / GEOM.source_detector_distance


def test_unit_magnification_axis_point():
    kp = keypoints_from_pose(Pose(512, 512, 0, 0, 1064), DEFAULT_LAYOUT, GEOM).points
    i = DEFAULT_LAYOUT.points.index((3.0, 0.0))
    assert kp[i] == pytest.approx([512 + 10.24, 512], abs=1e-12)


def test_alpha_90_moves_along_rows():
    kp = keypoints_from_pose(Pose(100, 200, 90, 0, 1064), DEFAULT_LAYOUT, GEOM).points
    i = DEFAULT_LAYOUT.points.index((3.0, 0.0))
    assert kp[i] == pytest.approx([100, 210.24], abs=1e-9)


def test_half_depth_perp_offset():
    pose = Pose(300, 400, 0, 0, 532)
    kp = keypoints_from_pose(pose, DEFAULT_LAYOUT, GEOM).points
    i = DEFAULT_LAYOUT.points.index((0.0, 2.0))
    assert kp[i, 1] - 400 == pytest.approx(2 * 1064 / (PX * 532), rel=1e-14)
    assert kp[i, 1] - 400 == pytest.approx(13.653333333333334, rel=1e-12)


@given(st.floats(0, 1023), st.floats(0, 1023), st.floats(0, 360, exclude_max=True),
       st.floats(-89, 89), st.floats(300, 1000))
def test_matches_scalar_formula(x, y, a, t, d):
    pose = Pose(x, y, a, t, d)
    kp = keypoints_from_pose(pose, DEFAULT_LAYOUT, GEOM).points
    for p, (xk, yk) in zip(kp, DEFAULT_LAYOUT.points):
        assert p == pytest.approx(eq2(pose, xk, yk), abs=1e-9)


def test_rejects_tau_90():
    with pytest.raises(DegenerateGeometryError):
        keypoints_from_pose(Pose(1, 1, 0, 90, 500))


def test_pose_invariants():
    assert Pose(0, 0, -30).alpha == 330
    with pytest.raises(ValueError):
        Pose(0, 0, 0, 91, 10)
    with pytest.raises(ValueError):
        Pose(0, 0, 0, 0, 0)


def test_layout_validation():
    with pytest.raises(ValueError):
        KeypointLayout(((1, 1), (0, 1), (0, -1), (1, 0), (2, 0), (3, 0)))
    with pytest.raises(ValueError):
        KeypointLayout(((1, 0), (1, 0), (1, 0), (1, 0), (0, 1), (0, -1)))


def test_fit_line_examples():
    p, d = fit_line([(0, 0), (2, 0)])
    assert p == pytest.approx([1, 0]) and d == pytest.approx([1, 0])
    _, d = fit_line([(0, 0), (1, 1), (2, 2)])
    assert d == pytest.approx([math.sqrt(0.5)] * 2, abs=1e-15)


def test_fit_line_matches_scatter_eigenvector():
    pts = np.array([(0, 0.1), (1, -0.1), (2, 0.1), (3, -0.1)])
    c = pts - pts.mean(axis=0)
    w, v = np.linalg.eigh(c.T @ c)
    ref = v[:, np.argmax(w)]
    ref = ref if ref[0] > 0 else -ref
    _, d = fit_line(pts)
    assert d == pytest.approx(ref, abs=1e-12)


def test_fit_line_coincident():
    with pytest.raises(DegenerateGeometryError):
        fit_line([(1, 1), (1, 1), (1, 1)])


def test_depth_and_tau_recovery():
    pose = Pose(300, 400, 10, 60, 532)
    est = pose_from_keypoints(keypoints_from_pose(pose))
    assert est.depth == pytest.approx(532, rel=1e-12)
    assert est.tau == pytest.approx(60, abs=1e-9)


def poses(tau=st.floats(0.1, 80) | st.floats(-80, -0.1) | st.just(0.0)):
    # 0 < |tau| < 0.1 deg is excluded: arccos is ill-conditioned there, see test_tau_near_zero_conditioning
    return st.builds(Pose, st.floats(0, 1023), st.floats(0, 1023), st.floats(0, 359.999), tau, st.floats(300, 1000))


@settings(max_examples=300)
@given(poses())
def test_round_trip(pose):
    est = pose_from_keypoints(keypoints_from_pose(pose))
    assert est.x == pytest.approx(pose.x, abs=1e-9)
    assert est.y == pytest.approx(pose.y, abs=1e-9)
    assert abs(angle_error(est.alpha, pose.alpha)) < 1e-9
    assert est.tau == pytest.approx(abs(pose.tau), abs=1e-9)
    assert est.depth == pytest.approx(pose.depth, abs=1e-9)


def test_tau_near_zero_conditioning():
    # keypoints near pixel 500 carry ~1e-13 px rounding; arccos turns that into a tau error of about
    # 1e-13 / (arm_px * sin(tau)) rad, so 1e-9 deg is out of reach below ~0.01 deg
    rng = np.random.default_rng(0)
    for t, bound in ((0.0, 0.0), (1e-3, 1e-7), (0.01, 1e-8), (0.1, 1e-9)):
        p = np.column_stack([rng.uniform(0, 1023, 2000), rng.uniform(0, 1023, 2000), rng.uniform(0, 360, 2000),
                             np.full(2000, t), rng.uniform(300, 1000, 2000)])
        est, _ = pose_array_from_keypoints(keypoints_from_pose_array(p))
        assert np.abs(est[:, 3] - t).max() <= bound


def test_batch_matches_scalar():
    rng = np.random.default_rng(2)
    p = np.column_stack([rng.uniform(0, 1023, 50), rng.uniform(0, 1023, 50), rng.uniform(0, 360, 50),
                         rng.uniform(-80, 80, 50), rng.uniform(300, 1000, 50)])
    kp = keypoints_from_pose_array(p)
    est, _ = pose_array_from_keypoints(kp)
    for row, k, e in zip(p, kp, est):
        assert np.array_equal(keypoints_from_pose(Pose(*row)).points, k)
        s = pose_from_keypoints(KeypointSet(k))
        assert np.array_equal([s.x, s.y, s.alpha, s.tau, s.depth], e)


@given(poses(), st.floats(1.1, 3))
def test_depth_scaling(pose, k):
    a = keypoints_from_pose(pose).points - pose.xy
    b = keypoints_from_pose(pose.with_(depth=pose.depth * k)).points - pose.xy
    assert b == pytest.approx(a / k, abs=1e-9)


@given(poses(), st.floats(-89, 89))
def test_perp_arm_ignores_tau(pose, t2):
    pp = list(DEFAULT_LAYOUT.perp_indices)
    a = keypoints_from_pose(pose).points[pp]
    b = keypoints_from_pose(pose.with_(tau=t2)).points[pp]
    assert np.array_equal(a, b)


def test_cos_tau_clamp_flag():
    kp = keypoints_from_pose(Pose(500, 500, 0, 0, 500)).points.copy()
    ax = list(DEFAULT_LAYOUT.axis_indices)
    kp[ax] = 500 + (kp[ax] - 500) * (1 + 1e-9)
    est = pose_from_keypoints(KeypointSet(kp))
    assert est.tau == 0 and "cos_tau_clamped" not in est.flags
    kp[ax] = 500 + (kp[ax] - 500) * 1.01
    est = pose_from_keypoints(KeypointSet(kp))
    assert est.tau == 0 and "cos_tau_clamped" in est.flags


def test_parallel_arms_are_degenerate():
    kp = np.array([(0, 0), (1, 0), (2, 0), (3, 0), (5, 0), (6, 0)], dtype=float)
    with pytest.raises(DegenerateGeometryError):
        pose_from_keypoints(KeypointSet(kp))


@pytest.mark.parametrize("a,b,expected", [(359, 1, -2), (0, 0, 0), (90, 270, 180)])
def test_angle_error_examples(a, b, expected):
    assert angle_error(a, b) == expected


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_angle_error_range(a, b):
    e = angle_error(a, b)
    assert -180 < e <= 180
    assert math.isclose(math.cos(math.radians(e)), math.cos(math.radians(a - b)), abs_tol=1e-9)


def test_noise_grows_median_error():
    rng = np.random.default_rng(5)
    meds = []
    for sigma in (0.1, 0.5, 1.0):
        errs = []
        for _ in range(10_000):
            pose = Pose(*rng.uniform(100, 900, 2), rng.uniform(0, 360), rng.uniform(-80, 80), rng.uniform(400, 700))
            kp = keypoints_from_pose(pose).points + rng.normal(0, sigma, (6, 2))
            est = pose_from_keypoints(KeypointSet(kp))
            errs.append(np.hypot(est.x - pose.x, est.y - pose.y))
        meds.append(np.median(errs))
    assert meds[0] < meds[1] < meds[2]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pod4d.preprocess import (CompensatedPoints, GroundParams, compensate_velocity, dump_two_frame, extrapolate,
                              extract_ground, generate_virtual_future, load_two_frame)
from pod4d.sim import (DEFAULT_DIMS, GROUND_LABEL, ActorTrack, LidarModel, PointCloudFrame, Scene, scan_frame)

QUIET = LidarModel(channels=64, angular_resolution=0.4, noise_sigma_range=0.0, noise_sigma_vel=0.0)


def _frame(points):
    return PointCloudFrame(np.asarray(points, dtype=np.float64))


def _points(xyz, v):
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64)
    return CompensatedPoints(xyz, np.zeros(len(xyz)), v.copy(), v, np.zeros(len(xyz), bool))


def _drive(speed=10.0, actors=()):
    ego = ActorTrack("car", DEFAULT_DIMS["car"], (0.0, 0.0, 0.0), (speed, 0.0))
    return Scene(actors=list(actors), ego=ego)


def test_ground_mask_matches_simulator_labels():
    car = ActorTrack("car", DEFAULT_DIMS["car"], (18.0, 1.0, 0.3), (0.0, 0.0))
    frame = scan_frame(_drive(actors=[car]), 0.0, QUIET)
    est = extract_ground(frame)
    truth = frame.labels == GROUND_LABEL
    assert not est.insufficient
    assert est.mask[truth].mean() >= 0.95
    # only the lowest slice of the car may touch the plane tolerance
    assert est.mask[~truth].mean() < 0.1
    np.testing.assert_allclose(est.plane[:3], (0.0, 0.0, 1.0), atol=1e-4)


def test_empty_frame_has_insufficient_ground():
    est = extract_ground(_frame(np.zeros((0, 5))))
    assert est.mask.shape == (0,)
    assert est.insufficient


def test_single_plane_is_all_ground():
    rng = np.random.default_rng(0)
    xy = rng.uniform(-20, 20, (500, 2))
    pts = np.column_stack([xy, np.full(500, -1.8), np.zeros(500), np.zeros(500)])
    assert extract_ground(_frame(pts)).mask.all()


def test_too_few_points_is_insufficient():
    pts = np.column_stack([np.arange(10.0), np.zeros(10), np.full(10, -1.8), np.zeros(10), np.zeros(10)])
    est = extract_ground(_frame(pts), GroundParams(min_inliers=50))
    assert est.insufficient


def test_mean_compensation_example():
    pts = np.array([[10, 0, -1.8, 0, -10.0], [12, 1, -1.8, 0, -10.0], [15, 0, 0.0, 0, -4.0]])
    comp = compensate_velocity(_frame(pts), np.array([True, True, False]))
    assert comp.v_abs[2] == pytest.approx(6.0)
    assert comp.ground_mean_v == pytest.approx(-10.0)


def test_stationary_ego_leaves_velocity_unchanged():
    pts = np.array([[10, 0, -1.8, 0, 0.0], [12, 1, -1.8, 0, 0.0], [15, 0, 0.0, 0, 3.5]])
    comp = compensate_velocity(_frame(pts), np.array([True, True, False]))
    np.testing.assert_array_equal(comp.v_abs, comp.v_rel)


def test_no_ground_is_degraded_and_uncompensated():
    pts = np.array([[10, 0, 0, 0, -3.0], [12, 1, 0, 0, 2.0]])
    comp = compensate_velocity(_frame(pts), np.zeros(2, bool))
    assert comp.degraded
    np.testing.assert_array_equal(comp.v_abs, comp.v_rel)


def test_per_ray_compensation_zeroes_static_points():
    frame = scan_frame(_drive(12.0), 0.0, QUIET)
    comp = compensate_velocity(frame, extract_ground(frame), method="per_ray")
    np.testing.assert_allclose(comp.ego_velocity[:2], (12.0, 0.0), atol=1e-6)
    assert np.abs(comp.v_abs).max() < 1e-6
    known = compensate_velocity(frame, extract_ground(frame), method="per_ray", ego_velocity=(12.0, 0.0))
    assert np.abs(known.v_abs).max() < 1e-9


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        compensate_velocity(_frame(np.zeros((1, 5))), np.ones(1, bool), method="median")


@pytest.mark.parametrize("v,expected", [(6.0, (13.0, 0.0, 0.0)), (-6.0, (7.0, 0.0, 0.0)), (0.0, (10.0, 0.0, 0.0))])
def test_virtual_point_examples(v, expected):
    tf = generate_virtual_future(_points([10.0, 0.0, 0.0], [v]), 0.5)
    np.testing.assert_allclose(tf.xyz[1], expected, atol=1e-12)
    assert list(tf.t_label) == [0, 1]


def test_twin_layout_and_origin_drop():
    pts = _points([[0, 0, 0], [5, 5, 0], [0, -3, 1]], [1.0, 2.0, -1.0])
    tf = generate_virtual_future(pts, 0.2, sensor_origin=(0, 0, 0))
    assert tf.dropped == 1
    assert tf.n_current == 2 and len(tf) == 4
    np.testing.assert_array_equal(tf.xyz[:2], pts.xyz[1:])
    np.testing.assert_array_equal(tf.v_abs[:2], tf.v_abs[2:])


def test_nonpositive_horizon_rejected():
    with pytest.raises(ValueError):
        generate_virtual_future(_points([1, 0, 0], [1.0]), 0.0)


@settings(max_examples=50, deadline=None)
@given(x=st.tuples(*[st.floats(-100, 100) for _ in range(3)]), o=st.tuples(*[st.floats(-5, 5) for _ in range(3)]),
       v=st.floats(-40, 40), dt=st.floats(0.01, 2.0))
def test_extrapolation_moves_along_ray(x, o, v, dt):
    x, o = np.array([x]), np.array(o)
    ray = x[0] - o
    if np.linalg.norm(ray) < 1e-3:
        return
    y = extrapolate(x, np.array([v]), dt, o)[0]
    disp = y - x[0]
    assert np.linalg.norm(disp) == pytest.approx(abs(v) * dt, rel=1e-9, abs=1e-12)
    assert np.linalg.norm(np.cross(disp, ray / np.linalg.norm(ray))) < 1e-9
    # positive velocity moves away from the sensor
    if v * dt > 1e-6:
        assert np.linalg.norm(y - o) > np.linalg.norm(ray)


def test_two_frame_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    tf = generate_virtual_future(_points(rng.uniform(1, 30, (50, 3)), rng.normal(size=50)), 0.5)
    dump_two_frame(tmp_path / "tf", tf)
    back = load_two_frame(tmp_path / "tf")
    np.testing.assert_allclose(back.xyz, tf.xyz, rtol=1e-6)
    np.testing.assert_array_equal(back.t_label, tf.t_label)
    assert back.delta_t == 0.5

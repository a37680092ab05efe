import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pod4d.sim import (DEFAULT_DIMS, GROUND_LABEL, ActorTrack, ClassSpec, LidarModel, Scene, SceneConfig,
                       SceneConfigError, generate_scene, ground_truth_boxes, read_frame, scan_frame, write_frame)

QUIET = LidarModel(channels=32, angular_resolution=0.5, noise_sigma_range=0.0, noise_sigma_vel=0.0)


def _scene(actors, ego_speed=0.0):
    ego = ActorTrack("car", DEFAULT_DIMS["car"], (0.0, 0.0, 0.0), (ego_speed, 0.0))
    return Scene(actors=actors, ego=ego)


def _car(x, y, vx=0.0, vy=0.0, yaw=0.0):
    return ActorTrack("car", DEFAULT_DIMS["car"], (x, y, yaw), (vx, vy))


def test_ray_directions_are_unit_and_complete():
    lidar = LidarModel(channels=16, angular_resolution=1.0)
    d = lidar.ray_directions()
    assert d.shape == (16 * 100, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    az = np.degrees(np.arctan2(d[:, 1], d[:, 0]))
    assert az.min() > -50.0 and az.max() < 50.0


@pytest.mark.parametrize("kw", [{"channels": 0}, {"fov_h": 0.0}, {"max_range": -1.0}, {"noise_sigma_vel": -0.1},
                                {"angular_resolution": 0.0}])
def test_lidar_model_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        LidarModel(**kw)


def test_empty_config_gives_empty_scene():
    scene = generate_scene(SceneConfig(), 7)
    assert scene.actors == []


def test_generate_scene_is_deterministic():
    cfg = SceneConfig(classes={"car": ClassSpec(count=4, speed=(5.0, 15.0)),
                               "pedestrian": ClassSpec(count=2, speed=(0.0, 1.5))})
    assert generate_scene(cfg, 3).to_dict() == generate_scene(cfg, 3).to_dict()
    assert generate_scene(cfg, 3).to_dict() != generate_scene(cfg, 4).to_dict()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sampled_speeds_within_bounds(seed):
    cfg = SceneConfig(classes={"car": ClassSpec(count=5, speed=(5.0, 15.0))})
    scene = generate_scene(cfg, seed)
    assert len(scene.actors) == 5
    for a in scene.actors:
        assert 5.0 - 1e-9 <= a.speed <= 15.0 + 1e-9


def test_sampled_actors_do_not_overlap():
    cfg = SceneConfig(classes={"car": ClassSpec(count=8), "pedestrian": ClassSpec(count=4)})
    scene = generate_scene(cfg, 11)
    centers = np.array([a.pose0[:2] for a in scene.actors])
    radii = np.array([0.5 * np.hypot(*a.dims[:2]) for a in scene.actors])
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            assert np.linalg.norm(centers[i] - centers[j]) >= radii[i] + radii[j]


@pytest.mark.parametrize("classes,kw", [
    ({"truck": ClassSpec(count=1)}, {}),
    ({"car": ClassSpec(count=1, speed=(5.0, 2.0))}, {}),
    ({"car": ClassSpec(count=1, speed=(0.0, 100.0))}, {}),
    ({"car": ClassSpec(count=1, speed=(0.0, 3.0))}, {"min_dynamic": 1}),
])
def test_invalid_scene_configs(classes, kw):
    with pytest.raises(SceneConfigError):
        SceneConfig(classes=classes, **kw)


def test_static_world_has_zero_velocity():
    frame = scan_frame(_scene([_car(20.0, 0.0), _car(35.0, 4.0)]), 0.0, QUIET)
    assert len(frame) > 0
    assert np.all(frame.velocity == 0.0)


def test_receding_actor_velocity_is_ray_projection():
    frame = scan_frame(_scene([_car(20.0, 0.0, vx=5.0)]), 0.0, QUIET)
    on_car = frame.labels == 0
    d = frame.xyz[on_car] / np.linalg.norm(frame.xyz[on_car], axis=1, keepdims=True)
    np.testing.assert_allclose(frame.velocity[on_car], 5.0 * d[:, 0], atol=1e-12)
    assert frame.velocity[on_car].max() == pytest.approx(5.0, rel=0.01)


def test_moving_ego_sees_static_ground_approaching():
    frame = scan_frame(_scene([], ego_speed=10.0), 0.0, QUIET)
    assert np.all(frame.labels == GROUND_LABEL)
    d = frame.xyz / np.linalg.norm(frame.xyz, axis=1, keepdims=True)
    np.testing.assert_allclose(frame.velocity, -10.0 * d[:, 0], atol=1e-12)
    ahead = np.argmin(np.abs(np.arctan2(d[:, 1], d[:, 0])) + np.abs(d[:, 2]))
    assert frame.velocity[ahead] == pytest.approx(-10.0, rel=0.01)


def test_ground_points_lie_on_ground_plane():
    scene = _scene([_car(20.0, 0.0)])
    frame = scan_frame(scene, 0.0, QUIET)
    g = frame.labels == GROUND_LABEL
    np.testing.assert_allclose(frame.xyz[g, 2], scene.ground_z, atol=1e-9)
    car_z = frame.xyz[~g, 2]
    assert car_z.min() >= scene.ground_z - 1e-9
    assert car_z.max() <= scene.ground_z + DEFAULT_DIMS["car"][2] + 1e-9


def test_scan_is_deterministic_with_noise():
    scene = generate_scene(SceneConfig(classes={"car": ClassSpec(count=3, speed=(5.0, 10.0))}), 2)
    lidar = LidarModel(channels=16, angular_resolution=1.0)
    a, b = scan_frame(scene, 0.3, lidar), scan_frame(scene, 0.3, lidar)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, scan_frame(scene, 0.4, lidar).points)


def test_ground_truth_kinematics():
    scene = _scene([_car(10.0, 0.0, vx=6.0)])
    now = ground_truth_boxes(scene, 0.0, 0.0)[0]
    later = ground_truth_boxes(scene, 0.5, 0.0)[0]
    assert now.time_tag == "current" and later.time_tag == "future"
    np.testing.assert_allclose(now.center[:2], (10.0, 0.0), atol=1e-12)
    np.testing.assert_allclose(later.center[:2], (13.0, 0.0), atol=1e-12)


def test_ground_truth_follows_reference_ego_pose():
    scene = _scene([_car(10.0, 0.0)], ego_speed=4.0)
    at0 = ground_truth_boxes(scene, 0.5, 0.0)[0]
    at_half = ground_truth_boxes(scene, 0.5, 0.5)[0]
    assert at_half.center[0] - at0.center[0] == pytest.approx(-2.0, abs=1e-12)


def test_frame_roundtrip(tmp_path):
    scene = generate_scene(SceneConfig(classes={"car": ClassSpec(count=2, speed=(5.0, 10.0))}), 1)
    frame = scan_frame(scene, 0.1, LidarModel(channels=16, angular_resolution=1.0))
    write_frame(tmp_path / "f", frame)
    back = read_frame(tmp_path / "f")
    np.testing.assert_allclose(back.points, frame.points, rtol=1e-6, atol=1e-5)
    assert np.array_equal(back.labels, frame.labels)
    assert back.lidar == frame.lidar
    assert back.ego_pose == pytest.approx(frame.ego_pose)
    assert (tmp_path / "f.bin").stat().st_size == 20 * len(frame)

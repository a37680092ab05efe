import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pod4d.decode import (DecodeParams, classify_by_size, complete_box, decode_frame, fit_box, min_area_rectangle,
                          segment_foreground)
from pod4d.preprocess import CompensatedPoints, generate_virtual_future
from pod4d.sim import DEFAULT_DIMS


def _blob(center, n=40, spread=0.3, seed=0):
    rng = np.random.default_rng(seed)
    return np.asarray(center, dtype=np.float64) + rng.uniform(-spread, spread, (n, 3))


def _inside(box, xyz, tol=1e-9):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rel = np.asarray(xyz)[:, :2] - np.asarray(box.center[:2])
    u, v = rel @ (c, s), rel @ (-s, c)
    return np.all(np.abs(u) <= box.dims[0] / 2 + tol) and np.all(np.abs(v) <= box.dims[1] / 2 + tol)


def _car_surface(cx, cy, yaw=0.0, ground=-1.8, step=0.15):
    """Points on the two faces of a car that face a sensor at the origin."""
    L, W, H = DEFAULT_DIMS["car"]
    zs = np.arange(ground + 0.1, ground + H, 0.2)
    rear = np.array([[-L / 2, w] for w in np.arange(-W / 2, W / 2 + 1e-9, step)])
    side = np.array([[l, -W / 2 if cy >= 0 else W / 2] for l in np.arange(-L / 2, L / 2 + 1e-9, step)])
    local = np.vstack([rear, side])
    c, s = math.cos(yaw), math.sin(yaw)
    xy = local @ np.array([[c, s], [-s, c]]) + (cx, cy)
    return np.array([[x, y, z] for x, y in xy for z in zs])


def _ground(n=400, z=-1.8, seed=1):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0, 40, n), rng.uniform(-15, 15, n), np.full(n, z)])


def test_far_blobs_are_two_clusters():
    xyz = np.vstack([_blob((10, 0, 0)), _blob((20, 0, 0), seed=1)])
    clusters = segment_foreground(xyz, None)
    assert len(clusters) == 2
    assert sorted(len(c) for c in clusters) == [40, 40]


def test_close_blobs_merge():
    xyz = np.vstack([_blob((10, 0, 0)), _blob((10.9, 0, 0), seed=1)])
    assert len(segment_foreground(xyz, None)) == 1


def test_ground_and_empty_inputs():
    xyz = _blob((10, 0, 0))
    assert segment_foreground(xyz, np.ones(len(xyz), bool)) == []
    assert segment_foreground(np.zeros((0, 3)), None) == []
    assert segment_foreground(_blob((5, 5, 0), n=3), None) == []  # under min_points


def test_min_area_rectangle_axis_aligned():
    rng = np.random.default_rng(2)
    xy = np.column_stack([rng.uniform(-2, 2, 300), rng.uniform(-1, 1, 300)])
    xy = np.vstack([xy, [[-2, -1], [2, -1], [2, 1], [-2, 1]]]) + (5.0, 3.0)
    center, length, width, yaw = min_area_rectangle(xy)
    np.testing.assert_allclose(center, (5.0, 3.0), atol=1e-9)
    assert length == pytest.approx(4.0, rel=0.05) and width == pytest.approx(2.0, rel=0.05)
    assert abs(math.sin(yaw)) < 1e-9


def test_min_area_rectangle_rotated():
    corners = np.array([[-2, -1], [2, -1], [2, 1], [-2, 1]], float)
    a = math.pi / 4
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    _, length, width, yaw = min_area_rectangle(corners @ rot.T)
    assert (length, width) == pytest.approx((4.0, 2.0))
    assert yaw == pytest.approx(a)


def test_min_area_rectangle_degenerate():
    line = np.column_stack([np.linspace(0, 3, 10), np.zeros(10)])
    _, length, width, _ = min_area_rectangle(line, width_floor=0.1)
    assert length == pytest.approx(3.0) and width == 0.1
    _, length, width, _ = min_area_rectangle(np.array([[1.0, 1.0]]), width_floor=0.2)
    assert length == width == 0.2


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rectangle_contains_its_points(seed):
    rng = np.random.default_rng(seed)
    xy = rng.normal(size=(30, 2)) * rng.uniform(0.2, 3.0, 2)
    center, length, width, yaw = min_area_rectangle(xy, width_floor=1e-6)
    c, s = math.cos(yaw), math.sin(yaw)
    rel = xy - center
    assert np.all(np.abs(rel @ (c, s)) <= length / 2 + 1e-9)
    assert np.all(np.abs(rel @ (-s, c)) <= width / 2 + 1e-9)


@pytest.mark.parametrize("cls", ["car", "pedestrian", "cyclist", "van", "traffic_cone"])
def test_templates_classify_as_themselves(cls):
    L, W, H = DEFAULT_DIMS[cls]
    assert classify_by_size(L, W, H, DEFAULT_DIMS) == cls


def test_fit_box_bottom_and_score():
    xyz = _blob((10, 2, -1.0), n=50, spread=0.2)
    box = fit_box(xyz, DecodeParams(score_cap=100), ground_z=-1.8, time_tag="current")
    assert box.center[2] - box.dims[2] / 2 == pytest.approx(-1.8)
    assert box.score == 0.5 and box.num_points == 50
    assert _inside(box, xyz)
    with pytest.raises(ValueError):
        fit_box(np.zeros((0, 3)))


@pytest.mark.parametrize("cx,cy,yaw", [(15.0, 4.0, 0.0), (20.0, -3.0, 0.3), (12.0, 6.0, -0.5)])
def test_completed_car_contains_points_and_matches_template(cx, cy, yaw):
    pts = _car_surface(cx, cy, yaw)
    params = DecodeParams()
    raw = fit_box(pts, params, ground_z=-1.8)
    box = complete_box(raw, pts, params)
    assert box.cls == "car"
    assert _inside(box, pts, tol=1e-6)
    assert box.dims[0] >= DEFAULT_DIMS["car"][0] - 1e-9
    assert box.dims[1] >= DEFAULT_DIMS["car"][1] - 1e-9
    assert np.hypot(box.center[0] - cx, box.center[1] - cy) < 0.3


def _two_frames(xyz, v, dt=0.5):
    n = len(xyz)
    ground = np.zeros(n, bool)
    g = _ground()
    xyz = np.vstack([xyz, g])
    v = np.concatenate([v, np.zeros(len(g))])
    ground = np.concatenate([ground, np.ones(len(g), bool)])
    comp = CompensatedPoints(xyz, np.zeros(len(xyz)), v.copy(), v, ground)
    return generate_virtual_future(comp, dt)


def test_static_scene_future_equals_current():
    pts = _car_surface(15.0, 4.0)
    cur, fut = decode_frame(_two_frames(pts, np.zeros(len(pts))), frame_id="000000_000")
    assert len(cur) == len(fut) == 1
    assert fut[0].center == pytest.approx(cur[0].center)
    assert (fut[0].time_tag, fut[0].delta_t, fut[0].t_query) == ("future", 0.5, 0.5)
    assert cur[0].frame_ref == "000000_000"


def test_receding_car_moves_along_rays():
    pts = _car_surface(20.0, 0.5)
    d = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    v = 6.0 * d[:, 0]  # radial part of a 6 m/s drive along +x
    cur, fut = decode_frame(_two_frames(pts, v))
    shift = np.subtract(fut[0].center, cur[0].center)
    assert shift[0] == pytest.approx(3.0, abs=0.1)
    assert abs(shift[1]) < 0.2 and shift[2] == 0.0
    assert fut[0].dims == cur[0].dims


def test_no_foreground_gives_no_boxes():
    tf = _two_frames(np.zeros((0, 3)), np.zeros(0))
    assert decode_frame(tf) == ([], [])


def test_independent_mode_refits_future():
    pts = _car_surface(15.0, 4.0)
    params = DecodeParams(future_mode="independent")
    cur, fut = decode_frame(_two_frames(pts, np.zeros(len(pts))), params)
    assert len(cur) == len(fut) == 1
    assert fut[0].center == pytest.approx(cur[0].center)


def test_decode_params_validation():
    with pytest.raises(ValueError):
        DecodeParams(future_mode="magic")
    with pytest.raises(ValueError):
        DecodeParams(templates={"truck": (8.0, 2.5, 3.0)})
    with pytest.raises(ValueError):
        DecodeParams(cell_size=0.0)

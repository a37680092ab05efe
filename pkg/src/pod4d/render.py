"""Static top-down rendering of a frame with predicted and ground-truth boxes."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .boxes import DetectionBox

BACKGROUND = (255, 255, 255)
AXIS = (160, 160, 160)
GRID = (232, 232, 232)
COLORS = {
    ("pred", "current"): (20, 60, 220),
    ("pred", "future"): (0, 170, 220),
    ("gt", "current"): (220, 30, 30),
    ("gt", "future"): (240, 140, 0),
}


class TopDownView:
    """Maps ego-frame meters to pixels with x (forward) pointing up and y (left) pointing left."""

    def __init__(self, x_range=(0.0, 100.0), y_range=(-50.0, 50.0), pixels_per_meter: float = 8.0):
        self.x_range = tuple(float(v) for v in x_range)
        self.y_range = tuple(float(v) for v in y_range)
        self.ppm = float(pixels_per_meter)
        self.width = int(round((self.y_range[1] - self.y_range[0]) * self.ppm))
        self.height = int(round((self.x_range[1] - self.x_range[0]) * self.ppm))

    def to_pixel(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        col = (self.y_range[1] - xy[:, 1]) * self.ppm
        row = (self.x_range[1] - xy[:, 0]) * self.ppm
        return np.column_stack([col, row])


def velocity_colors(v: np.ndarray, v_max: float = 15.0) -> np.ndarray:
    """Blue for approaching, gray near zero, red for receding."""
    a = np.clip(np.asarray(v, dtype=np.float64) / v_max, -1.0, 1.0)
    gray = np.array([150.0, 150.0, 150.0])
    red, blue = np.array([230.0, 20.0, 20.0]), np.array([20.0, 40.0, 230.0])
    w = np.abs(a)[:, None]
    target = np.where(a[:, None] >= 0, red, blue)
    return ((1.0 - w) * gray + w * target).astype(np.uint8)


def render_topdown(out_path, xyz=None, v_abs=None, pred: list[DetectionBox] = (), gt: list[DetectionBox] = (),
                   view: TopDownView | None = None, grid_step: float = 10.0) -> TopDownView:
    view = view or TopDownView()
    img = Image.new("RGB", (view.width, view.height), BACKGROUND)
    draw = ImageDraw.Draw(img)

    for x in np.arange(np.ceil(view.x_range[0] / grid_step) * grid_step, view.x_range[1] + 1e-9, grid_step):
        (c0, r), (c1, _) = view.to_pixel([[x, view.y_range[0]], [x, view.y_range[1]]])
        draw.line([(c0, r), (c1, r)], fill=GRID)
    for y in np.arange(np.ceil(view.y_range[0] / grid_step) * grid_step, view.y_range[1] + 1e-9, grid_step):
        (c, r0), (_, r1) = view.to_pixel([[view.x_range[0], y], [view.x_range[1], y]])
        draw.line([(c, r0), (c, r1)], fill=GRID)
    # axes through the sensor
    o = view.to_pixel([[0.0, 0.0]])[0]
    draw.line([tuple(o), tuple(view.to_pixel([[view.x_range[1], 0.0]])[0])], fill=AXIS)
    draw.line([tuple(view.to_pixel([[0.0, view.y_range[0]]])[0]), tuple(view.to_pixel([[0.0, view.y_range[1]]])[0])],
              fill=AXIS)

    if xyz is not None and len(xyz):
        xyz = np.asarray(xyz)
        v = np.zeros(len(xyz)) if v_abs is None else np.asarray(v_abs)
        px = np.floor(view.to_pixel(xyz[:, :2])).astype(np.int64)
        ok = (px[:, 0] >= 0) & (px[:, 0] < view.width) & (px[:, 1] >= 0) & (px[:, 1] < view.height)
        arr = np.asarray(img).copy()
        arr[px[ok, 1], px[ok, 0]] = velocity_colors(v[ok])
        img = Image.fromarray(arr)
        draw = ImageDraw.Draw(img)

    for kind, boxes in (("gt", gt), ("pred", pred)):
        for b in boxes:
            corners = view.to_pixel(b.bev_corners())
            pts = [tuple(p) for p in corners] + [tuple(corners[0])]
            draw.line(pts, fill=COLORS[(kind, b.time_tag)], width=2)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    img.save(out_path)
    return view

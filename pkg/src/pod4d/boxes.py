"""Oriented 3D boxes, rigid frame transforms and the JSON-lines box format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

CLASSES = ("car", "pedestrian", "cyclist", "van", "traffic_cone")
TIME_TAGS = ("current", "future")


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


class Pose(NamedTuple):
    """Planar rigid pose with a vertical offset: frame origin (x, y, z) and heading yaw."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    z: float = 0.0

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = pts.copy()
        out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + self.x
        out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + self.y
        if pts.shape[-1] > 2:
            out[..., 2] = pts[..., 2] + self.z
        return out

    def from_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = pts[..., 0] - self.x
        dy = pts[..., 1] - self.y
        out = pts.copy()
        out[..., 0] = c * dx + s * dy
        out[..., 1] = -s * dx + c * dy
        if pts.shape[-1] > 2:
            out[..., 2] = pts[..., 2] - self.z
        return out

    def rotate_to_world(self, vecs: np.ndarray) -> np.ndarray:
        """Rotate free 2D vectors (e.g. velocities) from this frame into the world."""
        vecs = np.asarray(vecs, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = vecs.copy()
        out[..., 0] = c * vecs[..., 0] - s * vecs[..., 1]
        out[..., 1] = s * vecs[..., 0] + c * vecs[..., 1]
        return out

    def rotate_from_world(self, vecs: np.ndarray) -> np.ndarray:
        vecs = np.asarray(vecs, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = vecs.copy()
        out[..., 0] = c * vecs[..., 0] + s * vecs[..., 1]
        out[..., 1] = -s * vecs[..., 0] + c * vecs[..., 1]
        return out


@dataclass
class DetectionBox:
    center: tuple[float, float, float]
    dims: tuple[float, float, float]  # (l, w, h)
    yaw: float
    cls: str
    score: float = 1.0
    time_tag: str = "current"
    frame_ref: str = ""
    t_query: float | None = None
    t_ref: float | None = None
    delta_t: float | None = None
    velocity: tuple[float, float] | None = None
    actor_id: int | None = None
    num_points: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.center = tuple(float(c) for c in self.center)
        self.dims = tuple(float(d) for d in self.dims)
        if len(self.center) != 3 or len(self.dims) != 3:
            raise ValueError("center and dims must have three components")
        if min(self.dims) <= 0:
            raise ValueError(f"box dims must be positive, got {self.dims}")
        if self.cls not in CLASSES:
            raise ValueError(f"unknown class {self.cls!r}")
        if self.time_tag not in TIME_TAGS:
            raise ValueError(f"unknown time_tag {self.time_tag!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        self.yaw = wrap_angle(self.yaw)
        if self.velocity is not None:
            self.velocity = tuple(float(v) for v in self.velocity)

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def bev_corners(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise."""
        return box_bev_corners(self.center[:2], self.dims[:2], self.yaw)

    def to_record(self) -> dict:
        rec = {
            "frame_id": self.frame_ref,
            "t_query": self.t_query,
            "t_ref": self.t_ref,
            "class": self.cls,
            "center": list(self.center),
            "dims": list(self.dims),
            "yaw": self.yaw,
            "velocity": list(self.velocity) if self.velocity is not None else None,
            "actor_id": self.actor_id,
            "score": self.score,
            "time_tag": self.time_tag,
        }
        if self.delta_t is not None:
            rec["delta_t"] = self.delta_t
        if self.num_points is not None:
            rec["num_points"] = self.num_points
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "DetectionBox":
        known = {"frame_id", "t_query", "t_ref", "class", "center", "dims", "yaw",
                 "velocity", "actor_id", "score", "time_tag", "delta_t", "num_points"}
        return cls(
            center=tuple(rec["center"]),
            dims=tuple(rec["dims"]),
            yaw=rec["yaw"],
            cls=rec["class"],
            score=rec.get("score", 1.0),
            time_tag=rec.get("time_tag", "current"),
            frame_ref=rec.get("frame_id", ""),
            t_query=rec.get("t_query"),
            t_ref=rec.get("t_ref"),
            delta_t=rec.get("delta_t"),
            velocity=rec.get("velocity"),
            actor_id=rec.get("actor_id"),
            num_points=rec.get("num_points"),
            extra={k: v for k, v in rec.items() if k not in known},
        )


def box_bev_corners(center_xy, lw, yaw: float) -> np.ndarray:
    cx, cy = float(center_xy[0]), float(center_xy[1])
    hl, hw = 0.5 * float(lw[0]), 0.5 * float(lw[1])
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def transform_boxes(boxes: Iterable[DetectionBox], pose_src: Pose, pose_dst: Pose) -> list[DetectionBox]:
    """Re-express boxes given in the ``pose_src`` frame in the ``pose_dst`` frame.

    Dims are untouched; velocities are rotated along with the heading.
    """
    out = []
    for b in boxes:
        world_c = pose_src.to_world(np.array(b.center))
        new_c = pose_dst.from_world(world_c)
        yaw = b.yaw + pose_src.yaw - pose_dst.yaw
        vel = b.velocity
        if vel is not None:
            vel = tuple(pose_dst.rotate_from_world(pose_src.rotate_to_world(np.array(vel))))
        out.append(replace(b, center=tuple(new_c), yaw=yaw, velocity=vel, extra=dict(b.extra)))
    return out


def write_jsonl(path: str | Path, boxes: Iterable[DetectionBox]) -> None:
    path = Path(path)
    lines = [json.dumps(b.to_record(), sort_keys=True) for b in boxes]
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines))
    tmp.replace(path)


def read_jsonl(path: str | Path) -> list[DetectionBox]:
    boxes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                boxes.append(DetectionBox.from_record(json.loads(line)))
    return boxes

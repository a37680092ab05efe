"""Ego-motion compensation of radial velocities and virtual future frame generation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import PointCloudFrame

log = logging.getLogger(__name__)


@dataclass
class GroundParams:
    ground_z: float | None = None  # None: estimate from a low z percentile
    z_percentile: float = 2.0
    z_gate: float = 0.3
    inlier_tol: float = 0.15
    iterations: int = 60
    min_inliers: int = 50
    min_normal_z: float = 0.9
    seed: int = 0


@dataclass
class GroundEstimate:
    mask: np.ndarray
    plane: np.ndarray | None  # (a, b, c, d) with a*x + b*y + c*z + d = 0, unit normal
    insufficient: bool
    z_estimate: float | None = None


def _plane_from_points(p: np.ndarray) -> np.ndarray | None:
    n = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    if n[2] < 0:
        n = -n
    return np.append(n, -n @ p[0])


def _refit(p: np.ndarray) -> np.ndarray:
    centroid = p.mean(axis=0)
    _, _, vt = np.linalg.svd(p - centroid, full_matrices=False)
    n = vt[-1]
    if n[2] < 0:
        n = -n
    return np.append(n, -n @ centroid)


def extract_ground(frame: PointCloudFrame | np.ndarray, params: GroundParams | None = None) -> GroundEstimate:
    """Height gate followed by a seeded consensus plane fit.

    Returns the inlier mask; ``insufficient`` is set when fewer than
    ``params.min_inliers`` points support the plane, in which case callers
    should apply no compensation.
    """
    params = params or GroundParams()
    xyz = frame.xyz if isinstance(frame, PointCloudFrame) else np.asarray(frame, dtype=np.float64)[:, :3]
    n = len(xyz)
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return GroundEstimate(mask, None, True)

    z = xyz[:, 2]
    z_est = params.ground_z if params.ground_z is not None else float(np.percentile(z, params.z_percentile))
    cand = np.nonzero(np.abs(z - z_est) <= params.z_gate)[0]
    if len(cand) < max(3, params.min_inliers):
        return GroundEstimate(mask, None, True, z_est)

    pc = xyz[cand]
    rng = np.random.default_rng(params.seed)
    best_plane, best_count = None, -1
    for _ in range(params.iterations):
        sample = pc[rng.choice(len(pc), 3, replace=False)]
        plane = _plane_from_points(sample)
        if plane is None or plane[2] < params.min_normal_z:
            continue
        count = int(np.count_nonzero(np.abs(pc @ plane[:3] + plane[3]) <= params.inlier_tol))
        if count > best_count:
            best_plane, best_count = plane, count
    if best_plane is None:
        return GroundEstimate(mask, None, True, z_est)

    inl = np.abs(pc @ best_plane[:3] + best_plane[3]) <= params.inlier_tol
    if inl.sum() >= 3:
        refit = _refit(pc[inl])
        if refit[2] >= params.min_normal_z:
            refit_inl = np.abs(pc @ refit[:3] + refit[3]) <= params.inlier_tol
            if refit_inl.sum() >= inl.sum():
                best_plane, inl = refit, refit_inl
    mask[cand[inl]] = True
    insufficient = int(mask.sum()) < params.min_inliers
    return GroundEstimate(mask, best_plane, insufficient, z_est)


@dataclass
class CompensatedPoints:
    """Struct-of-arrays point set carrying relative and absolute radial velocity."""

    xyz: np.ndarray
    intensity: np.ndarray
    v_rel: np.ndarray
    v_abs: np.ndarray
    is_ground: np.ndarray
    ground_mean_v: float = 0.0
    degraded: bool = False
    method: str = "mean"
    ego_velocity: np.ndarray | None = None  # per_ray method only
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.xyz)


def estimate_ego_velocity(dirs: np.ndarray, v_rel: np.ndarray) -> np.ndarray:
    """Least-squares sensor velocity from static returns, using v_rel = -u . d."""
    u, *_ = np.linalg.lstsq(-dirs, v_rel, rcond=None)
    return u


def compensate_velocity(
    frame: PointCloudFrame,
    ground_mask: np.ndarray | GroundEstimate,
    method: str = "mean",
    ego_velocity: np.ndarray | None = None,
) -> CompensatedPoints:
    """Convert relative radial velocity to absolute.

    ``method="mean"`` subtracts the mean ground-point velocity from every
    point. ``method="per_ray"`` adds back the projection of an ego-velocity
    estimate onto each ray, fitting that estimate to the ground points when
    none is supplied.
    """
    degraded = False
    if isinstance(ground_mask, GroundEstimate):
        degraded = ground_mask.insufficient
        ground_mask = ground_mask.mask
    mask = np.asarray(ground_mask, dtype=bool)
    v_rel = frame.velocity.copy()
    if not mask.any():
        degraded = True

    ground_mean_v = 0.0
    ego_v = None
    if method == "mean":
        if not degraded:
            ground_mean_v = float(np.mean(v_rel[mask]))
        v_abs = v_rel - ground_mean_v
    elif method == "per_ray":
        rays = frame.xyz - frame.sensor_origin
        with np.errstate(invalid="ignore", divide="ignore"):
            dirs = rays / np.linalg.norm(rays, axis=1, keepdims=True)
        dirs = np.nan_to_num(dirs)
        if ego_velocity is not None:
            ego_v = np.asarray(ego_velocity, dtype=np.float64)
            if ego_v.shape == (2,):
                ego_v = np.append(ego_v, 0.0)
        elif not degraded:
            ego_v = estimate_ego_velocity(dirs[mask], v_rel[mask])
        else:
            ego_v = np.zeros(3)
        v_abs = v_rel + dirs @ ego_v
        if mask.any():
            ground_mean_v = float(np.mean(v_rel[mask]))
    else:
        raise ValueError(f"unknown compensation method {method!r}")

    if degraded:
        log.warning("insufficient ground evidence; velocity compensation degraded")
    return CompensatedPoints(
        xyz=frame.xyz.copy(),
        intensity=frame.intensity.copy(),
        v_rel=v_rel,
        v_abs=v_abs,
        is_ground=mask.copy(),
        ground_mean_v=ground_mean_v,
        degraded=degraded,
        method=method,
        ego_velocity=ego_v,
        labels=None if frame.labels is None else frame.labels.copy(),
    )


@dataclass
class TwoFramePoints:
    """Current points (t_label 0) followed by their virtual future twins (t_label 1).

    Row ``k`` and row ``k + n_current`` are twins.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    v_rel: np.ndarray
    v_abs: np.ndarray
    t_label: np.ndarray
    is_ground: np.ndarray
    delta_t: float
    sensor_origin: np.ndarray
    dropped: int = 0
    ground_mean_v: float = 0.0
    degraded: bool = False
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def n_current(self) -> int:
        return int(np.count_nonzero(self.t_label == 0))

    def select(self, t: int) -> np.ndarray:
        return self.t_label == t


def extrapolate(xyz: np.ndarray, v_abs: np.ndarray, delta_t: float, origin) -> np.ndarray:
    """Move each point along its sensor ray by v_abs * delta_t."""
    rays = xyz - np.asarray(origin, dtype=np.float64)
    dist = np.linalg.norm(rays, axis=1, keepdims=True)
    return xyz + (v_abs * delta_t)[:, None] * (rays / dist)


def generate_virtual_future(
    points: CompensatedPoints, delta_t: float, sensor_origin=(0.0, 0.0, 0.0)
) -> TwoFramePoints:
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    origin = np.asarray(sensor_origin, dtype=np.float64)
    dist = np.linalg.norm(points.xyz - origin, axis=1)
    keep = dist >= 1e-9
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        log.info("dropped %d points coincident with the sensor origin", dropped)

    xyz0 = points.xyz[keep]
    v_abs = points.v_abs[keep]
    xyz1 = extrapolate(xyz0, v_abs, delta_t, origin)
    n = len(xyz0)

    def twice(a):
        a = a[keep]
        return np.concatenate([a, a])

    labels = None if points.labels is None else twice(points.labels)
    return TwoFramePoints(
        xyz=np.concatenate([xyz0, xyz1]),
        intensity=twice(points.intensity),
        v_rel=twice(points.v_rel),
        v_abs=twice(points.v_abs),
        t_label=np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)]),
        is_ground=twice(points.is_ground),
        delta_t=float(delta_t),
        sensor_origin=origin,
        dropped=dropped,
        ground_mean_v=points.ground_mean_v,
        degraded=points.degraded,
        labels=labels,
    )


def dump_two_frame(stem: str | Path, tf: TwoFramePoints) -> None:
    """Write ``<stem>.bin`` as float32 N x 7 (x, y, z, i, v_abs, t_label, pad) plus a JSON sidecar."""
    stem = Path(stem)
    arr = np.column_stack([tf.xyz, tf.intensity, tf.v_abs, tf.t_label, np.zeros(len(tf))])
    stem.with_suffix(".bin").write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta = {
        "delta_t": tf.delta_t,
        "ground_mean_v": tf.ground_mean_v,
        "degraded": tf.degraded,
        "dropped": tf.dropped,
        "sensor_origin": [float(v) for v in tf.sensor_origin],
        "num_records": len(tf),
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_two_frame(stem: str | Path) -> TwoFramePoints:
    stem = Path(stem)
    arr = np.fromfile(stem.with_suffix(".bin"), dtype="<f4").reshape(-1, 7).astype(np.float64)
    meta = json.loads(stem.with_suffix(".json").read_text())
    n = len(arr)
    return TwoFramePoints(
        xyz=arr[:, :3],
        intensity=arr[:, 3],
        v_rel=np.full(n, np.nan),
        v_abs=arr[:, 4],
        t_label=arr[:, 5].astype(np.int64),
        is_ground=np.zeros(n, dtype=bool),
        delta_t=meta["delta_t"],
        sensor_origin=np.array(meta["sensor_origin"]),
        dropped=meta["dropped"],
        ground_mean_v=meta["ground_mean_v"],
        degraded=meta["degraded"],
    )

"""Synthetic FMCW LiDAR: parametric scenes, Doppler ray casting, exact ground truth.

Coordinates: the ego frame has x forward, y left, z up with the sensor at the
origin. The ground is the plane ``z = ground_z`` in both world and ego frames.
Radial velocity is the range rate ``(v_point - v_sensor) . d``; positive means
the point recedes from the sensor.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .boxes import CLASSES, DetectionBox, Pose, transform_boxes

GROUND_LABEL = -1

DEFAULT_DIMS = {
    "car": (4.5, 1.9, 1.6),
    "pedestrian": (0.8, 0.6, 1.75),
    "cyclist": (1.8, 0.6, 1.7),
    "van": (5.5, 2.1, 2.3),
    "traffic_cone": (0.4, 0.4, 0.75),
}

# surface reflectivity before the incidence falloff
REFLECTIVITY = {
    "ground": 0.25,
    "car": 0.6,
    "pedestrian": 0.45,
    "cyclist": 0.5,
    "van": 0.65,
    "traffic_cone": 0.9,
}


class SceneConfigError(ValueError):
    pass


@dataclass
class LidarModel:
    channels: int = 128
    fov_h: float = 100.0
    fov_v: float = 30.0
    max_range: float = 200.0
    rate: float = 10.0
    noise_sigma_range: float = 0.02
    noise_sigma_vel: float = 0.1
    fov_v_up: float = 5.0  # elevation of the top beam, degrees
    angular_resolution: float = 0.2  # azimuth step, degrees
    min_range: float = 0.5

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not 0.0 < self.fov_h <= 360.0:
            raise ValueError("fov_h must be in (0, 360]")
        if self.fov_v < 0.0:
            raise ValueError("fov_v must be >= 0")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")
        if self.noise_sigma_range < 0.0 or self.noise_sigma_vel < 0.0:
            raise ValueError("noise sigmas must be >= 0")
        if self.angular_resolution <= 0.0:
            raise ValueError("angular_resolution must be positive")

    @property
    def azimuth_steps(self) -> int:
        return max(1, int(round(self.fov_h / self.angular_resolution)))

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, shape (channels * azimuth_steps, 3)."""
        if self.channels == 1:
            elev = np.array([self.fov_v_up])
        else:
            elev = np.linspace(self.fov_v_up - self.fov_v, self.fov_v_up, self.channels)
        n_az = self.azimuth_steps
        step = self.fov_h / n_az
        az = -0.5 * self.fov_h + (np.arange(n_az) + 0.5) * step
        el, az = np.meshgrid(np.deg2rad(elev), np.deg2rad(az), indexing="ij")
        d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
        d = d.reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass
class ActorTrack:
    class_label: str
    dims: tuple[float, float, float]
    pose0: tuple[float, float, float]  # x, y, yaw at t=0
    velocity: tuple[float, float]
    yaw_rate: float = 0.0

    def __post_init__(self):
        if self.class_label not in CLASSES:
            raise ValueError(f"unknown class {self.class_label!r}")
        self.dims = tuple(float(d) for d in self.dims)
        if min(self.dims) <= 0:
            raise ValueError("actor dims must be positive")
        self.pose0 = tuple(float(p) for p in self.pose0)
        self.velocity = tuple(float(v) for v in self.velocity)
        self.yaw_rate = float(self.yaw_rate)

    def state_at(self, t: float) -> tuple[np.ndarray, float, np.ndarray]:
        """World (xy position, yaw, xy velocity) at time t; constant turn rate and speed."""
        p0 = np.array(self.pose0[:2])
        v0 = np.array(self.velocity)
        w = self.yaw_rate
        if abs(w) < 1e-12:
            return p0 + v0 * t, self.pose0[2] + w * t, v0
        s, c = math.sin(w * t), math.cos(w * t)
        integ = np.array([[s / w, -(1.0 - c) / w], [(1.0 - c) / w, s / w]])
        rot = np.array([[c, -s], [s, c]])
        return p0 + integ @ v0, self.pose0[2] + w * t, rot @ v0

    def pose_at(self, t: float) -> Pose:
        p, yaw, _ = self.state_at(t)
        return Pose(float(p[0]), float(p[1]), float(yaw))

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass
class Scene:
    actors: list[ActorTrack]
    ego: ActorTrack
    ground_z: float = -1.8
    extent: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 100.0), (-20.0, 20.0))
    rng_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            actors=[ActorTrack(**a) for a in d["actors"]],
            ego=ActorTrack(**d["ego"]),
            ground_z=d["ground_z"],
            extent=tuple(tuple(e) for e in d["extent"]),
            rng_seed=d["rng_seed"],
        )


@dataclass
class ClassSpec:
    count: int = 0
    speed: tuple[float, float] = (0.0, 0.0)
    dims: tuple[float, float, float] | None = None  # class prior mean, defaults per class
    dims_jitter: float = 0.05  # relative std of the dimension prior


@dataclass
class SceneConfig:
    classes: dict[str, ClassSpec] = field(default_factory=dict)
    extent: tuple[tuple[float, float], tuple[float, float]] = ((10.0, 90.0), (-9.0, 9.0))
    ground_z: float = -1.8
    ego_speed: tuple[float, float] = (0.0, 0.0)
    heading_mode: str = "lane"  # "lane" or "random"
    lanes: tuple[float, ...] = (-7.0, -3.5, 0.0, 3.5, 7.0)
    lane_headings: tuple[float, ...] = (0.0, 0.0, 0.0, math.pi, math.pi)
    lane_jitter: float = 0.3
    min_dynamic: int = 0
    dynamic_speed_floor: float = 0.5
    ego_clearance: float = 6.0
    separation: float = 1.0
    max_attempts: int = 200

    def __post_init__(self):
        self.classes = {
            k: (v if isinstance(v, ClassSpec) else ClassSpec(**v)) for k, v in self.classes.items()
        }
        for name, spec in self.classes.items():
            if name not in CLASSES:
                raise SceneConfigError(f"unknown class {name!r}")
            if spec.count < 0:
                raise SceneConfigError(f"negative count for {name}")
            lo, hi = spec.speed
            if lo < 0 or hi < lo or hi > 70.0:
                raise SceneConfigError(f"speed range {spec.speed} for {name} is not physical")
        if self.heading_mode not in ("lane", "random"):
            raise SceneConfigError(f"unknown heading_mode {self.heading_mode!r}")
        if len(self.lanes) != len(self.lane_headings):
            raise SceneConfigError("lanes and lane_headings must have equal length")
        lo, hi = self.ego_speed
        if lo < 0 or hi < lo or hi > 70.0:
            raise SceneConfigError(f"ego speed range {self.ego_speed} is not physical")
        dynamic_capable = sum(
            s.count for s in self.classes.values() if s.speed[0] >= self.dynamic_speed_floor
        )
        if dynamic_capable < self.min_dynamic:
            raise SceneConfigError(
                f"only {dynamic_capable} actors are guaranteed dynamic, {self.min_dynamic} requested"
            )


def _footprint_radius(dims) -> float:
    return 0.5 * math.hypot(dims[0], dims[1])


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Sample actors with class-conditional priors; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    (xmin, xmax), (ymin, ymax) = config.extent
    lo, hi = config.ego_speed
    ego_speed = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    ego = ActorTrack("car", DEFAULT_DIMS["car"], (0.0, 0.0, 0.0), (ego_speed, 0.0))

    placed: list[tuple[np.ndarray, float]] = []
    actors: list[ActorTrack] = []
    for name in CLASSES:
        spec = config.classes.get(name)
        if spec is None:
            continue
        mean_dims = np.array(spec.dims if spec.dims is not None else DEFAULT_DIMS[name])
        for _ in range(spec.count):
            dims = mean_dims * np.exp(rng.normal(0.0, spec.dims_jitter, 3))
            radius = _footprint_radius(dims)
            for _attempt in range(config.max_attempts):
                x = rng.uniform(xmin + radius, xmax - radius)
                vehicle_like = name in ("car", "van", "cyclist")
                if config.heading_mode == "lane" and vehicle_like and len(config.lanes):
                    lane = int(rng.integers(len(config.lanes)))
                    y = config.lanes[lane] + rng.normal(0.0, config.lane_jitter)
                    yaw = config.lane_headings[lane]
                else:
                    y = rng.uniform(ymin + radius, ymax - radius)
                    yaw = rng.uniform(-math.pi, math.pi)
                c = np.array([x, y])
                if not (xmin + radius <= x <= xmax - radius and ymin + radius <= y <= ymax - radius):
                    continue
                if np.hypot(x, y) < config.ego_clearance + radius:
                    continue
                if any(np.linalg.norm(c - pc) < radius + pr + config.separation for pc, pr in placed):
                    continue
                break
            else:
                raise SceneConfigError(
                    f"could not place {name} without overlap after {config.max_attempts} attempts"
                )
            slo, shi = spec.speed
            speed = float(rng.uniform(slo, shi)) if shi > slo else float(slo)
            vel = (speed * math.cos(yaw), speed * math.sin(yaw))
            placed.append((c, radius))
            actors.append(ActorTrack(name, tuple(dims), (float(x), float(y), float(yaw)), vel))
    return Scene(actors=actors, ego=ego, ground_z=config.ground_z, extent=config.extent, rng_seed=seed)


@dataclass
class PointCloudFrame:
    points: np.ndarray  # (N, 5): x, y, z, i, v
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0
    ego_pose: Pose = Pose()
    ego_velocity_gt: tuple[float, float] = (0.0, 0.0)
    lidar: LidarModel | None = None
    labels: np.ndarray | None = None  # per-point source: actor index or GROUND_LABEL

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 5)
        self.sensor_origin = np.asarray(self.sensor_origin, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    @property
    def velocity(self) -> np.ndarray:
        return self.points[:, 4]


def _frame_rng(scene: Scene, t: float, seed: int | None) -> np.random.Generator:
    base = scene.rng_seed if seed is None else seed
    return np.random.default_rng([int(base) & 0xFFFFFFFF, int(round(t * 1e6)) & 0xFFFFFFFF, 0x5CA9])


def _ray_box_hits(dirs: np.ndarray, center: np.ndarray, yaw: float, dims) -> tuple[np.ndarray, np.ndarray]:
    """Slab test of rays from the origin against an oriented box.

    Returns entry distance (inf when missed) and the local axis of the entry face.
    """
    c, s = math.cos(-yaw), math.sin(-yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    o_local = rot @ (-center)
    d_local = dirs @ rot.T
    half = 0.5 * np.asarray(dims)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d_local
        t1 = (-half - o_local) * inv
        t2 = (half - o_local) * inv
    # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
    parallel = d_local == 0.0
    inside = np.abs(o_local) <= half
    tlo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    thi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = tlo.max(axis=1)
    axis = tlo.argmax(axis=1)
    t_far = thi.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 0.0)
    return np.where(hit, t_near, np.inf), axis


def actor_boxes_in_ego(scene: Scene, t: float, ego_pose: Pose) -> list[tuple[np.ndarray, float, tuple]]:
    out = []
    for a in scene.actors:
        p, yaw, _ = a.state_at(t)
        center = ego_pose.from_world(np.array([p[0], p[1], scene.ground_z + 0.5 * a.dims[2]]))
        out.append((center, yaw - ego_pose.yaw, a.dims))
    return out


def scan_frame(scene: Scene, t: float, lidar: LidarModel, seed: int | None = None) -> PointCloudFrame:
    """Cast one ray per (channel, azimuth step) and report first hits in the ego frame at t."""
    ego_p, ego_yaw, ego_v = scene.ego.state_at(t)
    ego_pose = Pose(float(ego_p[0]), float(ego_p[1]), float(ego_yaw))
    dirs = lidar.ray_directions()
    n = len(dirs)

    best_label = np.full(n, GROUND_LABEL, dtype=np.int64)
    normal_local_axis = np.zeros(n, dtype=np.int64)

    down = dirs[:, 2] < 0.0
    with np.errstate(divide="ignore"):
        t_ground = np.where(down, scene.ground_z / np.where(down, dirs[:, 2], 1.0), np.inf)
    best_t = np.where(t_ground > 0, t_ground, np.inf)

    boxes = actor_boxes_in_ego(scene, t, ego_pose)
    for k, (center, yaw, dims) in enumerate(boxes):
        t_hit, axis = _ray_box_hits(dirs, center, yaw, dims)
        closer = t_hit < best_t
        best_t = np.where(closer, t_hit, best_t)
        best_label = np.where(closer, k, best_label)
        normal_local_axis = np.where(closer, axis, normal_local_axis)

    valid = np.isfinite(best_t) & (best_t <= lidar.max_range) & (best_t >= lidar.min_range)
    idx = np.nonzero(valid)[0]
    d = dirs[idx]
    r = best_t[idx]
    labels = best_label[idx]
    pts = d * r[:, None]

    # world-frame point velocities
    vel_world = np.zeros((len(idx), 2))
    normals = np.tile(np.array([0.0, 0.0, 1.0]), (len(idx), 1))
    refl = np.full(len(idx), REFLECTIVITY["ground"])
    if len(idx):
        pts_world = ego_pose.to_world(pts)
        for k, actor in enumerate(scene.actors):
            m = labels == k
            if not m.any():
                continue
            p_c, yaw_w, v_lin = actor.state_at(t)
            rel = pts_world[m, :2] - p_c
            w = actor.yaw_rate
            vel_world[m] = v_lin + w * np.stack([-rel[:, 1], rel[:, 0]], axis=1)
            refl[m] = REFLECTIVITY[actor.class_label]
            ax = normal_local_axis[idx[m]]
            yaw_e = yaw_w - ego_pose.yaw
            cy, sy = math.cos(yaw_e), math.sin(yaw_e)
            local_axes = np.array([[cy, sy, 0.0], [-sy, cy, 0.0], [0.0, 0.0, 1.0]])
            normals[m] = local_axes[ax]

    d_world_xy = ego_pose.rotate_to_world(d[:, :2]) if len(idx) else np.zeros((0, 2))
    v_true = np.einsum("ij,ij->i", vel_world - ego_v[None, :], d_world_xy)
    cos_inc = np.abs(np.einsum("ij,ij->i", normals, d))
    intensity = np.clip(refl * (0.2 + 0.8 * cos_inc), 0.0, 1.0)

    rng = _frame_rng(scene, t, seed)
    noisy_r = r
    v = v_true
    if lidar.noise_sigma_range > 0:
        noisy_r = r + rng.normal(0.0, lidar.noise_sigma_range, len(r))
    if lidar.noise_sigma_vel > 0:
        v = v_true + rng.normal(0.0, lidar.noise_sigma_vel, len(r))
    if lidar.noise_sigma_range > 0:
        pts = d * noisy_r[:, None]
    keep = (noisy_r <= lidar.max_range) & (noisy_r > 0)
    points = np.column_stack([pts, intensity, v])[keep]
    return PointCloudFrame(
        points=points,
        sensor_origin=np.zeros(3),
        timestamp=float(t),
        ego_pose=ego_pose,
        ego_velocity_gt=(float(ego_v[0]), float(ego_v[1])),
        lidar=lidar,
        labels=labels[keep],
    )


def ground_truth_boxes(scene: Scene, t_query: float, t_ref: float, frame_id: str = "") -> list[DetectionBox]:
    """Actor boxes at ``t_query`` expressed in the ego frame at ``t_ref``."""
    world = Pose()
    ref_pose = scene.ego.pose_at(t_ref)
    tag = "current" if abs(t_query - t_ref) < 1e-9 else "future"
    boxes = []
    for k, a in enumerate(scene.actors):
        p, yaw, v = a.state_at(t_query)
        boxes.append(
            DetectionBox(
                center=(p[0], p[1], scene.ground_z + 0.5 * a.dims[2]),
                dims=a.dims,
                yaw=yaw,
                cls=a.class_label,
                score=1.0,
                time_tag=tag,
                frame_ref=frame_id,
                t_query=float(t_query),
                t_ref=float(t_ref),
                velocity=(v[0], v[1]),
                actor_id=k,
            )
        )
    return transform_boxes(boxes, world, ref_pose)


def lidar_to_dict(lidar: LidarModel) -> dict:
    return asdict(lidar)


def write_frame(stem: str | Path, frame: PointCloudFrame) -> None:
    """Write ``<stem>.bin`` (float32 LE, N x 5) and the ``<stem>.json`` sidecar."""
    stem = Path(stem)
    blob = np.ascontiguousarray(frame.points, dtype="<f4").tobytes()
    meta = {
        "timestamp": frame.timestamp,
        "sensor_origin": [float(x) for x in frame.sensor_origin],
        "ego_pose": {"x": frame.ego_pose.x, "y": frame.ego_pose.y, "yaw": frame.ego_pose.yaw},
        "ego_velocity_gt": list(frame.ego_velocity_gt),
        "lidar": lidar_to_dict(frame.lidar) if frame.lidar is not None else None,
        "num_points": len(frame),
    }
    _atomic_write_bytes(stem.with_suffix(".bin"), blob)
    _atomic_write_bytes(stem.with_suffix(".json"), json.dumps(meta, sort_keys=True, indent=1).encode())
    if frame.labels is not None:
        _atomic_write_bytes(stem.with_suffix(".labels.bin"),
                            np.ascontiguousarray(frame.labels, dtype="<i4").tobytes())


def read_frame(stem: str | Path) -> PointCloudFrame:
    stem = Path(stem)
    pts = np.fromfile(stem.with_suffix(".bin"), dtype="<f4").reshape(-1, 5).astype(np.float64)
    meta = json.loads(stem.with_suffix(".json").read_text())
    labels_path = stem.with_suffix(".labels.bin")
    labels = np.fromfile(labels_path, dtype="<i4").astype(np.int64) if labels_path.exists() else None
    pose = meta["ego_pose"]
    return PointCloudFrame(
        points=pts,
        sensor_origin=np.array(meta["sensor_origin"]),
        timestamp=meta["timestamp"],
        ego_pose=Pose(pose["x"], pose["y"], pose["yaw"]),
        ego_velocity_gt=tuple(meta["ego_velocity_gt"]),
        lidar=LidarModel(**meta["lidar"]) if meta.get("lidar") else None,
        labels=labels,
    )


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)

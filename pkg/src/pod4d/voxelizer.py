"""4D voxelization of two-frame point sets and the per-voxel linear feature map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import TwoFramePoints

CHANNEL_MODES = {
    "xyz": ("x", "y", "z"),
    "xyzi": ("x", "y", "z", "i"),
    "xyzi_relv": ("x", "y", "z", "i", "v_rel"),
    "xyzi_absv": ("x", "y", "z", "i", "v_abs"),
}


@dataclass
class VoxelGridConfig:
    voxel_size: tuple[float, float, float] = (0.08, 0.08, 0.25)
    grid_shape: tuple[int, int, int, int] = (1888, 1280, 64, 2)
    origin: tuple[float, float, float] = (0.0, -51.2, -5.0)
    channel_mode: str = "xyzi_absv"
    count_cap: int = 32

    def __post_init__(self):
        self.voxel_size = tuple(float(v) for v in self.voxel_size)
        self.grid_shape = tuple(int(g) for g in self.grid_shape)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise ValueError("voxel_size must be three positive numbers")
        if len(self.grid_shape) != 4 or min(self.grid_shape) < 1:
            raise ValueError("grid_shape must be four counts >= 1")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError(f"unknown channel_mode {self.channel_mode!r}")
        if self.count_cap < 1:
            raise ValueError("count_cap must be >= 1")

    @property
    def feature_dim(self) -> int:
        return len(CHANNEL_MODES[self.channel_mode]) + 4

    @classmethod
    def spconv4d_default(cls, **kw) -> "VoxelGridConfig":
        return cls(voxel_size=(0.08, 0.08, 0.25), grid_shape=(1888, 1280, 64, 2), **kw)

    @classmethod
    def pillar_default(cls, **kw) -> "VoxelGridConfig":
        return cls(voxel_size=(0.32, 0.32, 16.0), grid_shape=(472, 320, 1, 2), **kw)


@dataclass
class Voxel4DSet:
    indices: np.ndarray  # (M, 4) int64, unique, lexicographically sorted
    features: np.ndarray  # (M, C)
    point_counts: np.ndarray  # (M,)
    spatial_shape: tuple[int, int, int, int]
    points_in: int = 0
    points_dropped: int = 0

    def __len__(self) -> int:
        return len(self.indices)


def pack_keys(indices: np.ndarray, shape) -> np.ndarray:
    """Row-major linear key of 4D indices; preserves lexicographic order."""
    idx = np.asarray(indices, dtype=np.int64)
    s = [int(v) for v in shape]
    return ((idx[:, 0] * s[1] + idx[:, 1]) * s[2] + idx[:, 2]) * s[3] + idx[:, 3]


def _channel_matrix(points: TwoFramePoints, mode: str) -> np.ndarray:
    cols = []
    for name in CHANNEL_MODES[mode]:
        if name in ("x", "y", "z"):
            cols.append(points.xyz[:, "xyz".index(name)])
        elif name == "i":
            cols.append(points.intensity)
        elif name == "v_rel":
            cols.append(points.v_rel)
        else:
            cols.append(points.v_abs)
    return np.column_stack(cols) if cols else np.zeros((len(points), 0))


def voxelize_4d(points: TwoFramePoints, cfg: VoxelGridConfig) -> Voxel4DSet:
    """Bin points into (ix, iy, iz, it) cells and average their channel vectors.

    Feature layout per voxel: mean channel vector (per ``channel_mode``), mean
    offset of the points from the voxel center, ``min(count, cap) / cap``.
    """
    n = len(points)
    size = np.array(cfg.voxel_size)
    origin = np.array(cfg.origin)
    shape = np.array(cfg.grid_shape)
    C = cfg.feature_dim
    if n == 0:
        return Voxel4DSet(np.zeros((0, 4), np.int64), np.zeros((0, C)), np.zeros(0, np.int64),
                          cfg.grid_shape, 0, 0)

    spatial = np.floor((points.xyz - origin) / size).astype(np.int64)
    idx = np.column_stack([spatial, np.asarray(points.t_label, dtype=np.int64)])
    inside = np.all((idx >= 0) & (idx < shape), axis=1)
    idx = idx[inside]
    dropped = int(n - inside.sum())
    if len(idx) == 0:
        return Voxel4DSet(np.zeros((0, 4), np.int64), np.zeros((0, C)), np.zeros(0, np.int64),
                          cfg.grid_shape, n, dropped)

    keys = pack_keys(idx, shape)
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    vox_idx = np.stack(np.unravel_index(uniq, tuple(int(v) for v in shape)), axis=1).astype(np.int64)

    chans = _channel_matrix(points, cfg.channel_mode)[inside]
    centers = origin + (vox_idx[:, :3] + 0.5) * size
    offsets = points.xyz[inside] - centers[inverse]
    per_point = np.column_stack([chans, offsets])
    # canonical summation order inside each voxel so shuffled input sums bit-identically
    order = np.lexsort(tuple(per_point.T[::-1]) + (inverse,))
    bounds = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(per_point[order], bounds, axis=0)
    means = sums / counts[:, None]
    count_feat = np.minimum(counts, cfg.count_cap) / cfg.count_cap
    feats = np.column_stack([means, count_feat])
    return Voxel4DSet(vox_idx, feats, counts.astype(np.int64), cfg.grid_shape, n, dropped)


def project_features(voxels: Voxel4DSet, weight: np.ndarray, bias: np.ndarray | None = None) -> Voxel4DSet:
    """Per-voxel affine map followed by a rectifier; indices are unchanged."""
    weight = np.asarray(weight, dtype=np.float64)
    c_in = voxels.features.shape[1]
    if weight.ndim != 2 or weight.shape[0] != c_in:
        raise ValueError(f"weight shape {weight.shape} does not match input width {c_in}")
    if bias is None:
        bias = np.zeros(weight.shape[1])
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match output width {weight.shape[1]}")
    out = np.maximum(voxels.features @ weight + bias, 0.0)
    return Voxel4DSet(voxels.indices, out, voxels.point_counts, voxels.spatial_shape,
                      voxels.points_in, voxels.points_dropped)

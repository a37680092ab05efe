from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXIS_CAP = 1 << 16  # 16 bits per axis in the packed coordinate key


class NonCanonicalIndicesError(ValueError):
    pass


def pack_coords(indices: np.ndarray) -> np.ndarray:
    """Pack (ix, iy, iz, it) into one uint64 key, 16 bits per axis.

    Unsigned comparison of keys equals lexicographic comparison of tuples.
    """
    idx = np.asarray(indices).astype(np.uint64, copy=False)
    if idx.size == 0:
        return np.zeros(0, dtype=np.uint64)
    s = np.uint64(16)
    return (((idx[:, 0] << s) | idx[:, 1]) << s | idx[:, 2]) << s | idx[:, 3]


def unpack_coords(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    mask = np.uint64(0xFFFF)
    cols = [(keys >> np.uint64(sh)) & mask for sh in (48, 32, 16, 0)]
    return np.stack(cols, axis=1).astype(np.int64) if len(keys) else np.zeros((0, 4), np.int64)


def check_canonical(indices: np.ndarray, spatial_shape) -> np.ndarray:
    """Validate uniqueness, bounds and lexicographic order; return the packed keys."""
    idx = np.asarray(indices)
    if idx.ndim != 2 or idx.shape[1] != 4:
        raise NonCanonicalIndicesError(f"indices must be (N, 4), got {idx.shape}")
    shape = np.asarray(spatial_shape, dtype=np.int64)
    if np.any(shape > AXIS_CAP):
        raise ValueError(f"spatial shape {tuple(shape)} exceeds the per-axis cap {AXIS_CAP}")
    if len(idx) == 0:
        return np.zeros(0, dtype=np.uint64)
    if np.any(idx < 0) or np.any(idx >= shape):
        raise NonCanonicalIndicesError("indices out of bounds")
    keys = pack_coords(idx)
    if len(keys) > 1 and not np.all(keys[1:] > keys[:-1]):
        raise NonCanonicalIndicesError("indices must be unique and sorted lexicographically")
    return keys


@dataclass
class SparseTensor4D:
    indices: np.ndarray  # (N, 4) int64
    features: np.ndarray  # (N, C)
    spatial_shape: tuple[int, int, int, int]

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, 4)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.indices), -1)
        self.spatial_shape = tuple(int(s) for s in self.spatial_shape)
        if len(self.features) != len(self.indices):
            raise ValueError("features and indices row counts differ")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]

    def replace_features(self, features: np.ndarray) -> "SparseTensor4D":
        return SparseTensor4D(self.indices, features, self.spatial_shape)

    def validate(self) -> np.ndarray:
        return check_canonical(self.indices, self.spatial_shape)

    @classmethod
    def from_unsorted(cls, indices, features, spatial_shape) -> "SparseTensor4D":
        """Canonicalize by sorting; duplicate coordinates are rejected."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, 4)
        features = np.asarray(features, dtype=np.float64).reshape(len(indices), -1)
        keys = pack_coords(indices)
        order = np.argsort(keys, kind="stable")
        if len(keys) > 1 and np.any(np.diff(keys[order].astype(np.int64)) == 0):
            raise NonCanonicalIndicesError("duplicate coordinates")
        t = cls(indices[order], features[order], spatial_shape)
        t.validate()
        return t

    @classmethod
    def from_voxels(cls, voxels) -> "SparseTensor4D":
        return cls(voxels.indices, voxels.features, voxels.spatial_shape)

    def to_dense(self) -> np.ndarray:
        """Channel-last dense array of shape spatial_shape + (C,)."""
        dense = np.zeros(tuple(self.spatial_shape) + (self.num_channels,))
        if len(self):
            dense[tuple(self.indices.T)] = self.features
        return dense

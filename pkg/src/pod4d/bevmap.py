"""Split 4D features by time slice and flatten each slice into a dense bird's-eye-view grid."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse4d.tensor import SparseTensor4D

BEV_MAGIC = b"POD4DBEV"


@dataclass
class BevMap:
    features: np.ndarray  # (C, Ny, Nx)
    resolution: tuple[float, float]  # meters per cell along (x, y)
    origin: tuple[float, float]  # meters, corner of cell (0, 0)
    time_tag: str = "current"
    delta_t: float = 0.0

    def __post_init__(self):
        if self.features.ndim != 3:
            raise ValueError("BEV features must be (C, Ny, Nx)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("BEV features must be finite")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.features.shape

    def occupied(self) -> np.ndarray:
        """(Ny, Nx) boolean mask of cells with any nonzero channel."""
        return np.any(self.features != 0, axis=0)


def separate_temporal(x: SparseTensor4D) -> tuple[SparseTensor4D, SparseTensor4D]:
    """Return the t=0 and t=1 slices, each with a single time index."""
    if x.spatial_shape[3] != 2:
        raise ValueError(f"expected two time slices, got spatial shape {x.spatial_shape}")
    shape = tuple(x.spatial_shape[:3]) + (1,)
    out = []
    for t in (0, 1):
        sel = x.indices[:, 3] == t
        idx = x.indices[sel].copy()
        idx[:, 3] = 0
        out.append(SparseTensor4D(idx, x.features[sel], shape))
    return out[0], out[1]


def densify_bev(
    x: SparseTensor4D,
    mode: str = "max_over_z",
    resolution=(1.0, 1.0),
    origin=(0.0, 0.0),
    time_tag: str = "current",
    delta_t: float = 0.0,
) -> BevMap:
    """Scatter a single-time-slice tensor into a (C', Ny, Nx) grid.

    ``max_over_z`` keeps C channels with the per-column maximum;
    ``concat_over_z`` stacks the Nz height slices into C * Nz channels
    (channel ``iz * C + c``).
    """
    if x.spatial_shape[3] != 1:
        raise ValueError("densify_bev expects a single time slice")
    nx, ny, nz, _ = x.spatial_shape
    C = x.features.shape[1] if x.features.ndim == 2 else 0
    if mode == "max_over_z":
        grid = np.zeros((C, ny, nx))
        if len(x):
            cols = x.indices[:, 1] * nx + x.indices[:, 0]
            order = np.argsort(cols, kind="stable")
            sc = cols[order]
            starts = np.concatenate([[0], np.nonzero(sc[1:] != sc[:-1])[0] + 1])
            colmax = np.maximum.reduceat(x.features[order], starts, axis=0)
            u = sc[starts]
            grid[:, u // nx, u % nx] = colmax.T
    elif mode == "concat_over_z":
        grid = np.zeros((nz, C, ny, nx))
        if len(x):
            i = x.indices
            grid[i[:, 2], :, i[:, 1], i[:, 0]] = x.features
        grid = grid.reshape(nz * C, ny, nx)
    else:
        raise ValueError(f"unknown BEV mode {mode!r}")
    res = tuple(float(r) for r in np.broadcast_to(resolution, (2,)))
    return BevMap(grid, res, tuple(float(o) for o in origin), time_tag, float(delta_t))


def dump_bev(path: str | Path, bev: BevMap) -> None:
    """Header line of JSON after a magic tag, then little-endian float32 body."""
    header = json.dumps({
        "C": bev.shape[0], "Ny": bev.shape[1], "Nx": bev.shape[2],
        "resolution": list(bev.resolution), "origin": list(bev.origin),
        "time_tag": bev.time_tag, "delta_t": bev.delta_t,
    }, sort_keys=True).encode()
    body = np.ascontiguousarray(bev.features, dtype="<f4").tobytes()
    Path(path).write_bytes(BEV_MAGIC + struct.pack("<I", len(header)) + header + body)


def load_bev(path: str | Path) -> BevMap:
    data = Path(path).read_bytes()
    if not data.startswith(BEV_MAGIC):
        raise ValueError(f"{path} is not a BEV dump")
    k = len(BEV_MAGIC)
    (hlen,) = struct.unpack("<I", data[k:k + 4])
    h = json.loads(data[k + 4:k + 4 + hlen])
    body = np.frombuffer(data[k + 4 + hlen:], dtype="<f4").astype(np.float64)
    feats = body.reshape(h["C"], h["Ny"], h["Nx"])
    return BevMap(feats, tuple(h["resolution"]), tuple(h["origin"]), h["time_tag"], h["delta_t"])

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import check_canonical, pack_coords, unpack_coords


@dataclass
class ConvSpec4D:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int, int] = (3, 3, 3, 3)
    stride: tuple[int, int, int, int] = (1, 1, 1, 1)
    padding: tuple[int, int, int, int] = (1, 1, 1, 1)
    submanifold: bool = True

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)
        self.stride = tuple(int(s) for s in self.stride)
        self.padding = tuple(int(p) for p in self.padding)
        if len(self.kernel) != 4 or len(self.stride) != 4 or len(self.padding) != 4:
            raise ValueError("kernel, stride and padding must be 4-tuples")
        if min(self.kernel) < 1:
            raise ValueError("kernel sizes must be >= 1")
        if min(self.stride) < 1:
            raise ValueError("stride must be >= 1 on every axis")
        if min(self.padding) < 0:
            raise ValueError("padding must be >= 0")
        if self.submanifold:
            if any(k % 2 == 0 for k in self.kernel):
                raise ValueError("submanifold convolution needs odd kernel sizes")
            if any(s != 1 for s in self.stride):
                raise ValueError("submanifold convolution has unit stride")

    @property
    def kernel_volume(self) -> int:
        return int(np.prod(self.kernel))

    def kernel_offsets(self) -> np.ndarray:
        """Kernel positions (K, 4) in row-major order, matching the weight layout."""
        return np.indices(self.kernel).reshape(4, -1).T.astype(np.int64)

    def output_shape(self, spatial_shape) -> tuple[int, int, int, int]:
        if self.submanifold:
            return tuple(int(s) for s in spatial_shape)
        return tuple(
            (int(n) + 2 * p - k) // s + 1
            for n, k, s, p in zip(spatial_shape, self.kernel, self.stride, self.padding)
        )


@dataclass
class Rulebook:
    """Per kernel offset: arrays of (input_row, output_row) pairs, plus the output site table."""

    in_rows: list[np.ndarray]
    out_rows: list[np.ndarray]
    out_indices: np.ndarray
    out_shape: tuple[int, int, int, int]
    offsets: np.ndarray = field(repr=False, default=None)

    @property
    def pair_count(self) -> int:
        return int(sum(len(r) for r in self.in_rows))

    def pairs(self, k: int) -> list[tuple[int, int]]:
        return list(zip(self.in_rows[k].tolist(), self.out_rows[k].tolist()))


def _lookup(sorted_keys: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row of each query key in ``sorted_keys``, -1 when absent."""
    if len(sorted_keys) == 0 or len(query) == 0:
        return np.full(len(query), -1, dtype=np.int64)
    pos = np.searchsorted(sorted_keys, query)
    pos_c = np.minimum(pos, len(sorted_keys) - 1)
    found = sorted_keys[pos_c] == query
    return np.where(found, pos_c, -1).astype(np.int64)


def _submanifold_pairs(idx, keys, shape, spec, offsets):
    """Neighbor pairs for centered odd kernels.

    Neighbor keys come from adding a packed offset to the sorted keys, which is
    exact whenever the neighbor is in bounds. Offset ``k`` and its mirror
    ``K - 1 - k`` have swapped pairs, so only half the lookups are done.
    """
    n, K = len(idx), len(offsets)
    center = (np.asarray(spec.kernel) - 1) // 2
    rel = offsets - center
    all_rows = np.arange(n, dtype=np.int64)
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return [empty] * K, [empty] * K
    # per-axis bounds masks for every offset value on that axis
    masks = [{int(d): (idx[:, a] + d >= 0) & (idx[:, a] + d < shape[a]) for d in np.unique(rel[:, a])}
             for a in range(4)]
    in_rows, out_rows = [None] * K, [None] * K
    for k in range(K):
        if in_rows[k] is not None:
            continue
        d = rel[k]
        if not d.any():
            in_rows[k], out_rows[k] = all_rows, all_rows.copy()
            continue
        ok = masks[0][int(d[0])] & masks[1][int(d[1])] & masks[2][int(d[2])] & masks[3][int(d[3])]
        delta = (int(d[0]) << 48) + (int(d[1]) << 32) + (int(d[2]) << 16) + int(d[3])
        q = keys[ok] + np.uint64(delta % (1 << 64))  # wraps modulo 2**64 for negative offsets
        rows = _lookup(keys, q)
        hit = rows >= 0
        i_rows, o_rows = rows[hit], all_rows[ok][hit]
        in_rows[k], out_rows[k] = i_rows, o_rows
        m = K - 1 - k
        in_rows[m], out_rows[m] = o_rows, i_rows
    return in_rows, out_rows


def build_rulebook(indices: np.ndarray, spatial_shape, spec: ConvSpec4D) -> Rulebook:
    """Compile gather/scatter pairs for one convolution.

    Output ``o`` receives input ``i`` through kernel position ``k`` when
    ``i = o * stride - padding + k``. Submanifold mode restricts outputs to the
    input sites (with centered padding); strided mode activates every output
    reached by at least one input.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, 4)
    keys = check_canonical(idx, spatial_shape)
    shape = np.asarray(spatial_shape, dtype=np.int64)
    offsets = spec.kernel_offsets()
    K = len(offsets)
    stride = np.asarray(spec.stride, dtype=np.int64)
    pad = np.asarray(spec.padding, dtype=np.int64)
    out_shape = spec.output_shape(spatial_shape)
    n = len(idx)
    empty = np.zeros(0, dtype=np.int64)

    if spec.submanifold:
        in_rows, out_rows = _submanifold_pairs(idx, keys, shape, spec, offsets)
        return Rulebook(in_rows, out_rows, idx.copy(), out_shape, offsets)

    oshape = np.asarray(out_shape, dtype=np.int64)
    if n == 0 or np.any(oshape < 1):
        return Rulebook([empty] * K, [empty] * K, np.zeros((0, 4), np.int64), out_shape, offsets)

    cand_in, cand_key = [], []
    all_rows = np.arange(n, dtype=np.int64)
    for k in range(K):
        num = idx + pad - offsets[k]
        ok = np.all((num % stride == 0) & (num >= 0), axis=1)
        o = num[ok] // stride
        inb = np.all(o < oshape, axis=1)
        cand_in.append(all_rows[ok][inb])
        cand_key.append(pack_coords(o[inb]))
    all_keys = np.concatenate(cand_key)
    out_keys, inverse = np.unique(all_keys, return_inverse=True)
    inverse = inverse.reshape(-1)
    out_indices = unpack_coords(out_keys)

    in_rows, out_rows = [], []
    start = 0
    for k in range(K):
        m = len(cand_in[k])
        in_rows.append(cand_in[k])
        out_rows.append(inverse[start:start + m].astype(np.int64))
        start += m
    return Rulebook(in_rows, out_rows, out_indices, out_shape, offsets)

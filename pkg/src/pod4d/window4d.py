"""4D voxel transformer: window partition, rotated set partition, masked set attention, 4D pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse4d.tensor import SparseTensor4D, pack_coords
from .sparse4d.weights import validate_params

AXES = {"x": 0, "y": 1, "z": 2, "t": 3}


@dataclass
class WindowConfig:
    window_shape: tuple[int, int, int, int] = (60, 60, 1, 2)
    shifts: tuple[tuple[int, int, int, int], ...] = ((0, 0, 0, 0), (30, 30, 0, 0))
    set_capacity: int = 120
    hybrid_factor: tuple[int, int, int, int] = (1, 1, 1, 1)
    d_model: int = 64
    heads: int = 8
    dim_feedforward: int = 128
    layer_norm: bool = True
    sort_axes: tuple[str, ...] = ("x", "y")

    def __post_init__(self):
        self.window_shape = tuple(int(w) for w in self.window_shape)
        self.shifts = tuple(tuple(int(s) for s in sh) for sh in self.shifts)
        self.hybrid_factor = tuple(int(h) for h in self.hybrid_factor)
        if len(self.window_shape) != 4 or min(self.window_shape) < 1:
            raise ValueError("window_shape must be four counts >= 1")
        if self.set_capacity < 1:
            raise ValueError("set_capacity must be >= 1")
        if len(self.hybrid_factor) != 4 or min(self.hybrid_factor) < 1:
            raise ValueError("hybrid_factor must be four integers >= 1")
        for sh in self.shifts:
            if len(sh) != 4 or any(s < 0 or s >= w for s, w in zip(sh, self.window_shape)):
                raise ValueError(f"shift {sh} must satisfy 0 <= shift < window_shape componentwise")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if len(self.sort_axes) != len(self.shifts) or any(a not in ("x", "y") for a in self.sort_axes):
            raise ValueError("need one sort axis in {x, y} per shift")

    @property
    def effective_window(self) -> tuple[int, int, int, int]:
        """Window shape after the hybrid subdivision (factor 1 leaves it unchanged)."""
        return tuple(-(-w // h) for w, h in zip(self.window_shape, self.hybrid_factor))


@dataclass
class WindowAssignment:
    window_coords: np.ndarray  # (N, 4)
    inner_coords: np.ndarray  # (N, 4)
    window_keys: np.ndarray  # (N,) packed window coordinate, orders windows lexicographically


def assign_windows(indices: np.ndarray, cfg: WindowConfig, shift=(0, 0, 0, 0)) -> WindowAssignment:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, 4)
    shifted = idx + np.asarray(shift, dtype=np.int64)
    win = np.asarray(cfg.effective_window, dtype=np.int64)
    wc = shifted // win
    inner = shifted % win
    return WindowAssignment(wc, inner, pack_coords(wc))


@dataclass
class SetPartition:
    voxel_inds: np.ndarray  # (S, capacity), -1 in padded slots
    mask: np.ndarray  # (S, capacity), True for valid slots
    window_keys: np.ndarray  # (S,)
    sort_axis: str

    @property
    def num_sets(self) -> int:
        return len(self.voxel_inds)


def partition_sets(assignment: WindowAssignment, cfg: WindowConfig, sort_axis: str = "x") -> SetPartition:
    """Sort voxels inside each window along ``sort_axis`` and chunk them into fixed-capacity sets."""
    if sort_axis not in ("x", "y"):
        raise ValueError("sort_axis must be 'x' or 'y'")
    cap = cfg.set_capacity
    n = len(assignment.window_keys)
    if n == 0:
        return SetPartition(np.zeros((0, cap), np.int64), np.zeros((0, cap), bool),
                            np.zeros(0, np.uint64), sort_axis)
    inner = assignment.inner_coords
    primary, secondary = (0, 1) if sort_axis == "x" else (1, 0)
    # lexsort: last key is most significant
    order = np.lexsort((inner[:, 3], inner[:, 2], inner[:, secondary], inner[:, primary],
                        assignment.window_keys))
    wk = assignment.window_keys[order]
    starts = np.concatenate([[0], np.nonzero(wk[1:] != wk[:-1])[0] + 1])
    counts = np.diff(np.append(starts, n))
    group = np.repeat(np.arange(len(starts)), counts)
    rank = np.arange(n) - starts[group]
    sets_per_win = -(-counts // cap)
    set_offset = np.concatenate([[0], np.cumsum(sets_per_win)[:-1]])
    set_id = set_offset[group] + rank // cap
    slot = rank % cap
    S = int(sets_per_win.sum())
    voxel_inds = np.full((S, cap), -1, dtype=np.int64)
    voxel_inds[set_id, slot] = order
    window_keys = np.repeat(wk[starts], sets_per_win)
    return SetPartition(voxel_inds, voxel_inds >= 0, window_keys, sort_axis)


def positional_encoding(inner_coords: np.ndarray, tables) -> np.ndarray:
    """Sum of one learned row per axis, selected by the inner-window coordinate."""
    inner = np.asarray(inner_coords, dtype=np.int64).reshape(-1, 4)
    tables = [np.asarray(t, dtype=np.float64) for t in tables]
    if len(tables) != 4:
        raise ValueError("need one table per axis (x, y, z, t)")
    out = np.zeros((len(inner), tables[0].shape[1]))
    for axis, table in enumerate(tables):
        col = inner[:, axis]
        if len(col) and (col.min() < 0 or col.max() >= len(table)):
            raise ValueError(f"inner coordinate out of range for axis {axis} (table has {len(table)} rows)")
        out += table[col]
    return out


def _softmax_masked(logits: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
    logits = np.where(key_mask, logits, -np.inf)
    m = logits.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(logits - m)
    s = e.sum(axis=-1, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def masked_set_attention(set_x, set_pos, mask, params: dict, heads: int, return_probs: bool = False):
    """Multi-head attention within each set; queries/keys see position, values do not.

    ``set_x``/``set_pos``: (S, P, C). Padded slots never act as keys and their
    values are zeroed, so their content cannot reach valid outputs.
    """
    S, P, C = set_x.shape
    dh = C // heads
    qk_in = set_x + set_pos
    q = qk_in @ params["q_w"] + params["q_b"]
    k = qk_in @ params["k_w"] + params["k_b"]
    v = set_x @ params["v_w"] + params["v_b"]
    v = np.where(mask[..., None], v, 0.0)
    q = q.reshape(S, P, heads, dh).transpose(0, 2, 1, 3)
    k = k.reshape(S, P, heads, dh).transpose(0, 2, 1, 3)
    v = v.reshape(S, P, heads, dh).transpose(0, 2, 1, 3)
    logits = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
    probs = _softmax_masked(logits, mask[:, None, None, :])
    out = (probs @ v).transpose(0, 2, 1, 3).reshape(S, P, C)
    out = out @ params["o_w"] + params["o_b"]
    out = np.where(mask[..., None], out, 0.0)
    if return_probs:
        return out, probs
    return out


def set_attention(features, partition: SetPartition, params: dict, heads: int,
                  pos: np.ndarray | None = None, chunk_elems: int = 1 << 23) -> np.ndarray:
    """Attention output per voxel (no residual), computed set by set in fixed order."""
    features = np.asarray(features, dtype=np.float64)
    N, C = features.shape
    if C % heads:
        raise ValueError(f"feature width {C} not divisible by {heads} heads")
    for name in ("q_w", "k_w", "v_w", "o_w"):
        if params[name].shape != (C, C):
            raise ValueError(f"{name} has shape {params[name].shape}, expected {(C, C)}")
    if pos is None:
        pos = np.zeros_like(features)
    out = np.zeros((N, C))
    # valid slots form a prefix of each set; grouping sets by fill lets a chunk
    # drop its trailing padding, which masked attention ignores anyway
    fill = partition.mask.sum(axis=1)
    order = np.argsort(-fill, kind="stable")
    s0 = 0
    while s0 < len(order):
        width = max(1, int(fill[order[s0]]))  # widest set of the chunk comes first
        rows = order[s0:s0 + max(1, chunk_elems // (heads * width * width))]
        s0 += len(rows)
        inds = partition.voxel_inds[rows, :width]
        mask = partition.mask[rows, :width]
        safe = np.where(mask, inds, 0)
        sx = np.where(mask[..., None], features[safe], 0.0)
        sp = np.where(mask[..., None], pos[safe], 0.0)
        res = masked_set_attention(sx, sp, mask, params, heads)
        out[inds[mask]] = res[mask]
    return out


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def block_param_shapes(cfg: WindowConfig) -> dict[str, tuple]:
    C, F = cfg.d_model, cfg.dim_feedforward
    win = cfg.effective_window
    shapes = {}
    for l in range(len(cfg.shifts)):
        p = f"layer{l}"
        for name in ("q", "k", "v", "o"):
            shapes[f"{p}.attn.{name}_w"] = (C, C)
            shapes[f"{p}.attn.{name}_b"] = (C,)
        shapes[f"{p}.ffn.w1"] = (C, F)
        shapes[f"{p}.ffn.b1"] = (F,)
        shapes[f"{p}.ffn.w2"] = (F, C)
        shapes[f"{p}.ffn.b2"] = (C,)
        for ax, n in zip("xyzt", win):
            shapes[f"{p}.pos.{ax}"] = (n, C)
        if cfg.layer_norm:
            for nm in ("norm1", "norm2"):
                shapes[f"{p}.{nm}.gamma"] = (C,)
                shapes[f"{p}.{nm}.beta"] = (C,)
    return shapes


def init_block_params(cfg: WindowConfig, seed: int = 0, std: float = 0.02) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in block_param_shapes(cfg).items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape)
        elif name.endswith(("_b", ".b1", ".b2", ".beta")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, std, shape)
    return params


def _layer_attn_params(params: dict, l: int) -> dict:
    prefix = f"layer{l}.attn."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def encoder_layer(x: np.ndarray, indices: np.ndarray, params: dict, cfg: WindowConfig, l: int) -> np.ndarray:
    """One rotated-set layer: attention and feed-forward, each with a residual connection."""
    p = f"layer{l}"
    assign = assign_windows(indices, cfg, cfg.shifts[l])
    part = partition_sets(assign, cfg, cfg.sort_axes[l])
    tables = [params[f"{p}.pos.{ax}"] for ax in "xyzt"]
    pos = positional_encoding(assign.inner_coords, tables)
    attn = set_attention(x, part, _layer_attn_params(params, l), cfg.heads, pos)
    x = x + attn
    if cfg.layer_norm:
        x = layer_norm(x, params[f"{p}.norm1.gamma"], params[f"{p}.norm1.beta"])
    hidden = np.maximum(x @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"], 0.0)
    x = x + hidden @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"]
    if cfg.layer_norm:
        x = layer_norm(x, params[f"{p}.norm2.gamma"], params[f"{p}.norm2.beta"])
    return x


def dsvt4d_block(x: SparseTensor4D, params: dict, cfg: WindowConfig | None = None) -> SparseTensor4D:
    """Layer ``l`` uses ``shifts[l]`` and ``sort_axes[l]``; active sites never change."""
    cfg = cfg or WindowConfig(d_model=x.num_channels)
    validate_params(params, block_param_shapes(cfg))
    if len(x) and x.num_channels != cfg.d_model:
        raise ValueError(f"input width {x.num_channels} != d_model {cfg.d_model}")
    feats = x.features
    for l in range(len(cfg.shifts)):
        if len(x):
            feats = encoder_layer(feats, x.indices, params, cfg, l)
    return SparseTensor4D(x.indices, feats, x.spatial_shape)


def pool_4d(x: SparseTensor4D, axes=("z",)) -> SparseTensor4D:
    """Merge voxels that agree on every non-pooled axis, taking the channel-wise max."""
    axes = tuple(axes)
    if not axes or any(a not in ("z", "t") for a in axes):
        raise ValueError("axes must be a nonempty subset of {'z', 't'}")
    shape = list(x.spatial_shape)
    idx = x.indices.copy()
    for a in axes:
        idx[:, AXES[a]] = 0
        shape[AXES[a]] = 1
    if len(idx) == 0:
        return SparseTensor4D(idx, x.features.reshape(0, x.features.shape[1]), tuple(shape))
    keys = pack_coords(idx)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    starts = np.concatenate([[0], np.nonzero(sk[1:] != sk[:-1])[0] + 1])
    feats = np.maximum.reduceat(x.features[order], starts, axis=0)
    return SparseTensor4D(idx[order][starts], feats, tuple(shape))

"""Dense reference convolutions used to check the sparse engine."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAX_DENSE_CELLS = 1_000_000


class DenseSizeError(ValueError):
    pass


def _check(dense: np.ndarray, kernel) -> None:
    if dense.ndim != 5:
        raise ValueError("dense input must be (X, Y, Z, T, C)")
    cells = int(np.prod(dense.shape[:4]))
    if cells > MAX_DENSE_CELLS:
        raise DenseSizeError(f"{cells} cells exceeds the dense oracle guard of {MAX_DENSE_CELLS}")


def _pad(dense, padding):
    return np.pad(dense, [(p, p) for p in padding] + [(0, 0)])


def dense_oracle_conv4d(dense, weights, kernel=(3, 3, 3, 3), stride=(1, 1, 1, 1), padding=(1, 1, 1, 1),
                        bias=None) -> np.ndarray:
    """Direct convolution: loop over the four kernel axes, full grid per step.

    ``out[o] = sum_k W[k]^T x[o * stride - padding + k]``, zero outside the grid.
    """
    dense = np.asarray(dense, dtype=np.float64)
    _check(dense, kernel)
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights.reshape(tuple(kernel) + weights.shape[-2:])
    xp = _pad(dense, padding)
    out_shape = [(n + 2 * p - k) // s + 1 for n, k, s, p in zip(dense.shape[:4], kernel, stride, padding)]
    out = np.zeros(out_shape + [weights.shape[-1]])
    if min(out_shape) < 1:
        return out
    for a in range(kernel[0]):
        for b in range(kernel[1]):
            for c in range(kernel[2]):
                for d in range(kernel[3]):
                    sl = xp[
                        a: a + stride[0] * (out_shape[0] - 1) + 1: stride[0],
                        b: b + stride[1] * (out_shape[1] - 1) + 1: stride[1],
                        c: c + stride[2] * (out_shape[2] - 1) + 1: stride[2],
                        d: d + stride[3] * (out_shape[3] - 1) + 1: stride[3],
                    ]
                    out += sl @ weights[a, b, c, d]
    if bias is not None:
        out += bias
    return out


def dense_windowed_conv4d(dense, weights, kernel=(3, 3, 3, 3), stride=(1, 1, 1, 1), padding=(1, 1, 1, 1)):
    """Second, independently written dense convolution via window views and one tensor contraction."""
    dense = np.asarray(dense, dtype=np.float64)
    _check(dense, kernel)
    w = np.asarray(weights, dtype=np.float64)
    w = w.reshape(tuple(kernel) + w.shape[-2:])
    xp = _pad(dense, padding)
    win = sliding_window_view(xp, tuple(kernel), axis=(0, 1, 2, 3))
    win = win[:: stride[0], :: stride[1], :: stride[2], :: stride[3]]
    # win: (O0, O1, O2, O3, C, k0, k1, k2, k3)
    return np.einsum("abcdiklmn,klmnio->abcdo", win, w)


def dense_active_sites(occupancy: np.ndarray, kernel, stride, padding) -> np.ndarray:
    """Boolean map of output cells whose receptive field contains an active input."""
    occ = np.asarray(occupancy, dtype=np.float64)[..., None]
    ones = np.ones(tuple(kernel) + (1, 1))
    return dense_oracle_conv4d(occ, ones, kernel, stride, padding)[..., 0] > 0

from __future__ import annotations

import numpy as np

from .rulebook import ConvSpec4D, Rulebook, build_rulebook
from .tensor import SparseTensor4D


def sparse_conv4d(
    x: SparseTensor4D,
    weights: np.ndarray,
    spec: ConvSpec4D,
    rulebook: Rulebook | None = None,
    bias: np.ndarray | None = None,
) -> SparseTensor4D:
    """Gather-matmul-scatter forward pass.

    ``weights`` has shape (kernel_volume, in_channels, out_channels). Each
    output row accumulates its contributions in rulebook order (kernel
    position, then input row), so results do not depend on scheduling.
    """
    weights = np.asarray(weights, dtype=np.float64)
    K = spec.kernel_volume
    if weights.shape != (K, spec.in_channels, spec.out_channels):
        raise ValueError(
            f"weights {weights.shape} do not match {(K, spec.in_channels, spec.out_channels)}"
        )
    if len(x) and x.num_channels != spec.in_channels:
        raise ValueError(f"input has {x.num_channels} channels, conv expects {spec.in_channels}")
    if rulebook is None:
        rulebook = build_rulebook(x.indices, x.spatial_shape, spec)

    out = np.zeros((len(rulebook.out_indices), spec.out_channels))
    feats = x.features
    for k in range(K):
        i_rows = rulebook.in_rows[k]
        if len(i_rows) == 0:
            continue
        # output rows are unique within one kernel position, so plain += is a scatter
        out[rulebook.out_rows[k]] += feats[i_rows] @ weights[k]
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return SparseTensor4D(rulebook.out_indices, out, rulebook.out_shape)


def batchnorm_relu(
    x: SparseTensor4D,
    gamma: np.ndarray,
    beta: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float = 1e-5,
) -> SparseTensor4D:
    """Inference-mode batch normalization followed by ReLU, per channel."""
    params = [np.asarray(p, dtype=np.float64) for p in (gamma, beta, mean, var)]
    C = x.num_channels
    for p in params:
        if p.shape != (C,):
            raise ValueError(f"normalization parameter shape {p.shape} != ({C},)")
    gamma, beta, mean, var = params
    if np.any(var < 0):
        raise ValueError("variance must be non-negative")
    scale = gamma / np.sqrt(var + eps)
    y = np.maximum((x.features - mean) * scale + beta, 0.0)
    return x.replace_features(y)

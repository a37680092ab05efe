"""SparseConv 4D VoxelNet: one submanifold input block and four downsampling modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import batchnorm_relu, sparse_conv4d
from .rulebook import ConvSpec4D, build_rulebook
from .tensor import SparseTensor4D
from .weights import validate_params

DEFAULT_STRIDES = ((2, 2, 2, 1), (2, 2, 2, 1), (1, 1, 2, 1), (1, 1, 2, 1))


@dataclass
class BackboneSpec:
    in_channels: int = 64
    widths: tuple[int, ...] = (16, 32, 64, 128, 128)
    strides: tuple[tuple[int, int, int, int], ...] = DEFAULT_STRIDES
    kernel: tuple[int, int, int, int] = (3, 3, 3, 3)
    padding: tuple[int, int, int, int] = (1, 1, 1, 1)
    subm_per_module: int = 2
    eps: float = 1e-5

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.strides = tuple(tuple(int(s) for s in st) for st in self.strides)
        if len(self.widths) != len(self.strides) + 1:
            raise ValueError("need one width for the input block plus one per downsampling module")

    def layers(self) -> list[tuple[str, ConvSpec4D]]:
        """Ordered (name, conv spec) pairs; each layer is conv + batch norm + ReLU."""
        center = tuple((k - 1) // 2 for k in self.kernel)
        out = [("conv_input", ConvSpec4D(self.in_channels, self.widths[0], self.kernel, (1, 1, 1, 1), center, True))]
        for m, stride in enumerate(self.strides, start=1):
            cin, cout = self.widths[m - 1], self.widths[m]
            out.append((f"down{m}.conv", ConvSpec4D(cin, cout, self.kernel, stride, self.padding, False)))
            for j in range(1, self.subm_per_module + 1):
                out.append((f"down{m}.subm{j}", ConvSpec4D(cout, cout, self.kernel, (1, 1, 1, 1), center, True)))
        return out

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for name, spec in self.layers():
            shapes[f"{name}.weight"] = (spec.kernel_volume, spec.in_channels, spec.out_channels)
            for p in ("gamma", "beta", "mean", "var"):
                shapes[f"{name}.bn.{p}"] = (spec.out_channels,)
        return shapes

    def output_shape(self, spatial_shape) -> tuple[int, int, int, int]:
        shape = tuple(spatial_shape)
        for _, spec in self.layers():
            shape = spec.output_shape(shape)
        return shape


def init_backbone_params(spec: BackboneSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded He-normal conv weights with identity batch-norm statistics."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, conv in spec.layers():
        fan_in = conv.kernel_volume * conv.in_channels
        params[f"{name}.weight"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                              (conv.kernel_volume, conv.in_channels, conv.out_channels))
        params[f"{name}.bn.gamma"] = np.ones(conv.out_channels)
        params[f"{name}.bn.beta"] = np.zeros(conv.out_channels)
        params[f"{name}.bn.mean"] = np.zeros(conv.out_channels)
        params[f"{name}.bn.var"] = np.ones(conv.out_channels)
    return params


def spconv4d_backbone(
    x: SparseTensor4D,
    params: dict[str, np.ndarray],
    spec: BackboneSpec | None = None,
    return_intermediates: bool = False,
):
    """Forward pass; submanifold layers of one module share a rulebook."""
    spec = spec or BackboneSpec(in_channels=x.num_channels)
    validate_params(params, spec.param_shapes())
    intermediates = []
    cached = None  # (indices identity, rulebook) for consecutive submanifold layers
    for name, conv in spec.layers():
        if conv.submanifold and cached is not None and cached[0] is x.indices:
            rb = cached[1]
        else:
            rb = build_rulebook(x.indices, x.spatial_shape, conv)
            if conv.submanifold:
                cached = (x.indices, rb)
        y = sparse_conv4d(x, params[f"{name}.weight"], conv, rb)
        x = batchnorm_relu(y, params[f"{name}.bn.gamma"], params[f"{name}.bn.beta"],
                           params[f"{name}.bn.mean"], params[f"{name}.bn.var"], spec.eps)
        if conv.submanifold and cached is not None:
            cached = (x.indices, cached[1])
        intermediates.append((name, x))
    if return_intermediates:
        return x, intermediates
    return x

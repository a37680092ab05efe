"""Sparse 4D tensors, rulebooks, sparse convolution and the SpConv4D backbone."""

from .backbone import DEFAULT_STRIDES, BackboneSpec, init_backbone_params, spconv4d_backbone
from .conv import batchnorm_relu, sparse_conv4d
from .oracle import DenseSizeError, dense_active_sites, dense_oracle_conv4d, dense_windowed_conv4d
from .rulebook import ConvSpec4D, Rulebook, build_rulebook
from .tensor import NonCanonicalIndicesError, SparseTensor4D, pack_coords, unpack_coords
from .weights import BundleMismatchError, load_bundle, save_bundle, validate_params

__all__ = [
    "DEFAULT_STRIDES", "BackboneSpec", "init_backbone_params", "spconv4d_backbone",
    "batchnorm_relu", "sparse_conv4d",
    "DenseSizeError", "dense_active_sites", "dense_oracle_conv4d", "dense_windowed_conv4d",
    "ConvSpec4D", "Rulebook", "build_rulebook",
    "NonCanonicalIndicesError", "SparseTensor4D", "pack_coords", "unpack_coords",
    "BundleMismatchError", "load_bundle", "save_bundle", "validate_params",
]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pod4d.sparse4d import (BackboneSpec, BundleMismatchError, ConvSpec4D, DenseSizeError, NonCanonicalIndicesError,
                            SparseTensor4D, batchnorm_relu, build_rulebook, dense_active_sites, dense_oracle_conv4d,
                            dense_windowed_conv4d, init_backbone_params, load_bundle, pack_coords, save_bundle,
                            sparse_conv4d, spconv4d_backbone, unpack_coords)

coords = st.lists(st.tuples(*[st.integers(0, 65535)] * 4), min_size=1, max_size=50)


@settings(max_examples=50)
@given(coords)
def test_pack_roundtrip_and_order(c):
    idx = np.array(c, dtype=np.int64)
    keys = pack_coords(idx)
    np.testing.assert_array_equal(unpack_coords(keys), idx)
    lex = sorted(range(len(c)), key=lambda i: c[i])
    assert [c[i] for i in np.argsort(keys, kind="stable")] == [c[i] for i in lex]


def test_canonical_checks():
    with pytest.raises(NonCanonicalIndicesError):
        SparseTensor4D([[1, 0, 0, 0], [0, 0, 0, 0]], np.zeros((2, 1)), (4, 4, 4, 2)).validate()
    with pytest.raises(NonCanonicalIndicesError):
        SparseTensor4D([[0, 0, 0, 2]], np.zeros((1, 1)), (4, 4, 4, 2)).validate()
    with pytest.raises(NonCanonicalIndicesError):
        SparseTensor4D.from_unsorted([[1, 0, 0, 0], [1, 0, 0, 0]], np.zeros((2, 1)), (4, 4, 4, 2))
    t = SparseTensor4D.from_unsorted([[1, 0, 0, 0], [0, 3, 0, 1]], [[1.0], [2.0]], (4, 4, 4, 2))
    assert t.indices.tolist() == [[0, 3, 0, 1], [1, 0, 0, 0]]
    assert t.features[:, 0].tolist() == [2.0, 1.0]


def test_single_voxel_rulebook_is_center_pair():
    rb = build_rulebook(np.array([[2, 2, 2, 1]]), (5, 5, 5, 2), ConvSpec4D(1, 1))
    assert rb.pair_count == 1
    assert rb.pairs(40) == [(0, 0)]


def test_adjacent_voxels_rulebook():
    spec = ConvSpec4D(1, 1)
    rb = build_rulebook(np.array([[2, 2, 2, 0], [3, 2, 2, 0]]), (6, 6, 6, 2), spec)
    offsets = spec.kernel_offsets() - 1
    nonempty = {tuple(offsets[k]): rb.pairs(k) for k in range(81) if rb.pairs(k)}
    assert nonempty == {(0, 0, 0, 0): [(0, 0), (1, 1)], (1, 0, 0, 0): [(1, 0)], (-1, 0, 0, 0): [(0, 1)]}


def test_strided_sites_match_dense_active_sites():
    shape = (8, 8, 8, 2)
    spec = ConvSpec4D(1, 1, stride=(2, 2, 2, 1), submanifold=False)
    rb = build_rulebook(np.array([[3, 2, 1, 0]]), shape, spec)
    occ = np.zeros(shape, bool)
    occ[3, 2, 1, 0] = True
    expected = np.argwhere(dense_active_sites(occ, spec.kernel, spec.stride, spec.padding))
    np.testing.assert_array_equal(rb.out_indices, expected)
    assert rb.out_shape == (4, 4, 4, 2)


def test_identity_center_kernel():
    rng = np.random.default_rng(0)
    idx = np.unique(rng.integers(0, 6, (40, 4)) % np.array([6, 6, 6, 2]), axis=0)
    x = SparseTensor4D(idx, rng.normal(size=(len(idx), 3)), (6, 6, 6, 2))
    w = np.zeros((81, 3, 3))
    w[40] = np.eye(3)
    y = sparse_conv4d(x, w, ConvSpec4D(3, 3))
    np.testing.assert_array_equal(y.features, x.features)


def test_empty_tensor():
    x = SparseTensor4D(np.zeros((0, 4)), np.zeros((0, 2)), (6, 6, 6, 2))
    y = sparse_conv4d(x, np.ones((81, 2, 2)), ConvSpec4D(2, 2, stride=(2, 2, 2, 1), submanifold=False))
    assert len(y) == 0 and y.spatial_shape == (3, 3, 3, 2)


def test_two_dense_oracles_agree():
    rng = np.random.default_rng(1)
    dense = rng.normal(size=(5, 6, 4, 2, 2))
    w = rng.normal(size=(81, 2, 3))
    for stride in ((1, 1, 1, 1), (2, 2, 1, 1)):
        np.testing.assert_allclose(dense_oracle_conv4d(dense, w, stride=stride),
                                   dense_windowed_conv4d(dense, w, stride=stride), atol=1e-10)


def test_dense_oracle_examples():
    dense = np.zeros((5, 5, 5, 5, 1))
    dense[2, 2, 2, 2] = 1.0
    spread = dense_oracle_conv4d(dense, np.ones((81, 1, 1)))[..., 0]
    assert spread.sum() == 81 and spread[1:4, 1:4, 1:4, 1:4].all()
    ident = np.zeros((81, 1, 1))
    ident[40] = 1.0
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 4, 4, 2, 1))
    np.testing.assert_array_equal(dense_oracle_conv4d(x, ident), x)


def test_dense_guard():
    with pytest.raises(DenseSizeError):
        dense_oracle_conv4d(np.zeros((200, 200, 30, 2, 1)), np.ones((81, 1, 1)))


def test_conv_shape_checks():
    x = SparseTensor4D([[0, 0, 0, 0]], [[1.0, 2.0]], (2, 2, 2, 2))
    with pytest.raises(ValueError):
        sparse_conv4d(x, np.ones((27, 2, 2)), ConvSpec4D(2, 2))
    with pytest.raises(ValueError):
        sparse_conv4d(x, np.ones((81, 3, 2)), ConvSpec4D(3, 2))
    with pytest.raises(ValueError):
        ConvSpec4D(1, 1, stride=(2, 1, 1, 1))
    with pytest.raises(ValueError):
        ConvSpec4D(1, 1, kernel=(2, 3, 3, 3))


def test_batchnorm_relu():
    rng = np.random.default_rng(3)
    x = SparseTensor4D([[0, 0, 0, 0], [1, 0, 0, 0]], np.abs(rng.normal(size=(2, 3))), (2, 1, 1, 1))
    one, zero = np.ones(3), np.zeros(3)
    np.testing.assert_array_equal(batchnorm_relu(x, one, zero, zero, one, eps=0.0).features, x.features)
    assert not batchnorm_relu(x, one, np.full(3, -1e6), zero, one).features.any()
    g, b, m, v = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3), rng.uniform(0.5, 2, 3)
    got = batchnorm_relu(x, g, b, m, v, eps=1e-5).features
    for i in range(2):
        for c in range(3):
            ref = max(0.0, g[c] * (x.features[i, c] - m[c]) / np.sqrt(v[c] + 1e-5) + b[c])
            assert got[i, c] == pytest.approx(ref, abs=1e-6)


def _dense_layer(dense, occ, spec, w, bn, eps):
    out = dense_oracle_conv4d(dense, w, spec.kernel, spec.stride, spec.padding)
    sites = occ if spec.submanifold else dense_active_sites(occ, spec.kernel, spec.stride, spec.padding)
    g, b, m, v = bn
    out = np.maximum(g * (out - m) / np.sqrt(v + eps) + b, 0.0)
    return np.where(sites[..., None], out, 0.0), sites


def test_backbone_matches_dense_chain():
    rng = np.random.default_rng(4)
    shape = (16, 16, 16, 2)
    flat = rng.choice(int(np.prod(shape)), 50, replace=False)
    idx = np.stack(np.unravel_index(np.sort(flat), shape), axis=1)
    x = SparseTensor4D(idx, rng.normal(size=(50, 2)), shape)
    spec = BackboneSpec(in_channels=2, widths=(3, 4, 4, 5, 5))
    params = init_backbone_params(spec, 0)
    for name in params:
        if ".bn." in name:
            params[name] = rng.uniform(0.5, 1.5, params[name].shape)
    _, stages = spconv4d_backbone(x, params, spec, return_intermediates=True)

    dense, occ = x.to_dense(), np.zeros(shape, bool)
    occ[tuple(idx.T)] = True
    for (name, conv), (_, got) in zip(spec.layers(), stages):
        bn = [params[f"{name}.bn.{p}"] for p in ("gamma", "beta", "mean", "var")]
        dense, occ = _dense_layer(dense, occ, conv, params[f"{name}.weight"], bn, spec.eps)
        np.testing.assert_array_equal(got.indices, np.argwhere(occ))
        np.testing.assert_allclose(got.features, dense[occ], atol=1e-4)
    assert stages[-1][1].spatial_shape == spec.output_shape(shape) == (4, 4, 1, 2)


def test_backbone_empty_input():
    spec = BackboneSpec(in_channels=2, widths=(2, 2, 2, 2, 2))
    x = SparseTensor4D(np.zeros((0, 4)), np.zeros((0, 2)), (1888, 1280, 64, 2))
    y = spconv4d_backbone(x, init_backbone_params(spec), spec)
    assert len(y) == 0 and y.spatial_shape == (472, 320, 4, 2)


def test_backbone_rejects_mismatched_params():
    spec = BackboneSpec(in_channels=2, widths=(2, 2, 2, 2, 2))
    params = init_backbone_params(spec)
    params.pop("down1.conv.weight")
    x = SparseTensor4D([[0, 0, 0, 0]], [[1.0, 1.0]], (8, 8, 8, 2))
    with pytest.raises(BundleMismatchError):
        spconv4d_backbone(x, params, spec)


def test_bundle_roundtrip(tmp_path):
    spec = BackboneSpec(in_channels=2, widths=(2, 3, 3, 3, 3))
    params = init_backbone_params(spec, 5)
    path = save_bundle(tmp_path / "w.json", params, {"note": "seeded"})
    back = load_bundle(path, spec.param_shapes())
    for k, v in params.items():
        np.testing.assert_allclose(back[k], v.astype(np.float32), rtol=0, atol=0)
    wrong = BackboneSpec(in_channels=3, widths=(2, 3, 3, 3, 3))
    with pytest.raises(BundleMismatchError):
        load_bundle(path, wrong.param_shapes())

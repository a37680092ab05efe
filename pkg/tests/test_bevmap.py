import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pod4d.bevmap import BevMap, densify_bev, dump_bev, load_bev, separate_temporal
from pod4d.sparse4d import SparseTensor4D


def _tensor(seed, n, shape, c=3):
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(np.prod(shape)), n, replace=False)
    idx = np.stack(np.unravel_index(np.sort(flat), shape), axis=1)
    return SparseTensor4D(idx, rng.normal(size=(n, c)), shape)


def test_separate_temporal_example():
    x = SparseTensor4D([[0, 0, 0, 0], [1, 0, 0, 1], [2, 1, 0, 1]], [[1.0], [2.0], [3.0]], (3, 2, 1, 2))
    cur, fut = separate_temporal(x)
    assert cur.indices.tolist() == [[0, 0, 0, 0]]
    assert fut.indices.tolist() == [[1, 0, 0, 0], [2, 1, 0, 0]]
    assert fut.features[:, 0].tolist() == [2.0, 3.0]
    assert cur.spatial_shape == fut.spatial_shape == (3, 2, 1, 1)
    with pytest.raises(ValueError):
        separate_temporal(SparseTensor4D([[0, 0, 0, 0]], [[1.0]], (1, 1, 1, 1)))


def test_separate_temporal_empty_slice():
    x = SparseTensor4D([[0, 0, 0, 0]], [[1.0, 2.0]], (2, 2, 1, 2))
    _, fut = separate_temporal(x)
    assert len(fut) == 0 and fut.features.shape == (0, 2)


def _dense(x):
    return x.to_dense()[..., 0, :]  # (nx, ny, nz, C)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60))
def test_max_over_z_matches_dense_oracle(seed, n):
    x = _tensor(seed, n, (6, 5, 4, 1))
    bev = densify_bev(x, "max_over_z")
    d = _dense(x)
    occ = np.zeros(d.shape[:3], bool)
    occ[tuple(x.indices[:, :3].T)] = True
    ref = np.where(occ[..., None], d, -np.inf).max(axis=2)
    ref = np.where(occ.any(axis=2)[..., None], ref, 0.0)
    np.testing.assert_array_equal(bev.features, ref.transpose(2, 1, 0))
    assert bev.occupied().sum() <= len(np.unique(x.indices[:, :2], axis=0))


def test_concat_over_z_channel_layout():
    x = _tensor(3, 40, (6, 5, 4, 1))
    bev = densify_bev(x, "concat_over_z")
    assert bev.shape == (4 * 3, 5, 6)
    for (ix, iy, iz, _), f in zip(x.indices, x.features):
        for c in range(3):
            assert bev.features[iz * 3 + c, iy, ix] == f[c]
    assert np.count_nonzero(bev.features) == np.count_nonzero(x.features)


def test_max_over_z_single_column():
    x = SparseTensor4D([[1, 2, 0, 0], [1, 2, 3, 0]], [[1.0, -4.0], [-2.0, 5.0]], (3, 4, 4, 1))
    bev = densify_bev(x, resolution=0.5, origin=(-1.0, 2.0))
    assert bev.features[:, 2, 1].tolist() == [1.0, 5.0]
    assert bev.occupied().sum() == 1
    assert bev.resolution == (0.5, 0.5) and bev.origin == (-1.0, 2.0)


def test_densify_rejects_bad_input():
    x = _tensor(0, 5, (4, 4, 2, 1))
    with pytest.raises(ValueError):
        densify_bev(x, "mean_over_z")
    with pytest.raises(ValueError):
        densify_bev(_tensor(0, 5, (4, 4, 2, 2)))
    with pytest.raises(ValueError):
        BevMap(np.full((1, 2, 2), np.nan), (1.0, 1.0), (0.0, 0.0))


def test_empty_tensor_gives_zero_map():
    x = SparseTensor4D(np.zeros((0, 4)), np.zeros((0, 3)), (5, 4, 2, 1))
    bev = densify_bev(x)
    assert bev.shape == (3, 4, 5) and not bev.features.any()


def test_dump_load_roundtrip(tmp_path):
    bev = densify_bev(_tensor(1, 30, (8, 6, 2, 1)), "concat_over_z", resolution=(0.32, 0.32), origin=(0.0, -51.2),
                      time_tag="future", delta_t=0.5)
    dump_bev(tmp_path / "b.bev", bev)
    back = load_bev(tmp_path / "b.bev")
    np.testing.assert_array_equal(back.features, bev.features.astype(np.float32))
    assert (back.resolution, back.origin, back.time_tag, back.delta_t) == ((0.32, 0.32), (0.0, -51.2), "future", 0.5)
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_bev(tmp_path / "junk")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from panoptic_lab.core import (IGNORE, ClassTable, ConfigurationError, DimensionError,
                               LossHyperParams, append_coordinates, canonicalize_instances,
                               downsample_labels, make_coordinate_grid)


def test_grid_2x2():
    g = make_coordinate_grid(2, 2)
    assert np.array_equal(g.xchan, [[0, 1], [0, 1]])
    assert np.array_equal(g.ychan, [[0, 0], [1, 1]])


def test_grid_single_row():
    g = make_coordinate_grid(1, 3)
    assert np.array_equal(g.xchan, [[0, 0.5, 1]])
    assert np.array_equal(g.ychan, [[0, 0, 0]])


def test_grid_single_column():
    g = make_coordinate_grid(3, 1)
    assert np.array_equal(g.xchan, np.zeros((3, 1)))
    assert np.array_equal(g.ychan, [[0], [0.5], [1]])


@pytest.mark.parametrize("h, w", [(0, 3), (3, 0), (-1, 2)])
def test_grid_rejects_empty(h, w):
    with pytest.raises(DimensionError):
        make_coordinate_grid(h, w)


@given(st.integers(1, 40), st.integers(1, 20).map(lambda k: 2 * k))
def test_grid_mirror_symmetry(h, w):
    g = make_coordinate_grid(h, w)
    assert np.array_equal(g.xchan[:, ::-1], 1.0 - g.xchan)
    assert g.xchan.min() >= 0 and g.xchan.max() <= 1
    assert g.ychan.min() >= 0 and g.ychan.max() <= 1


def test_append_coordinates_is_content_independent():
    rng = np.random.default_rng(0)
    a = append_coordinates(rng.random((4, 6, 3)))
    b = append_coordinates(np.zeros((4, 6, 3)))
    assert a.shape == (4, 6, 5)
    assert np.array_equal(a[..., 3:], b[..., 3:])
    g = make_coordinate_grid(4, 6)
    assert np.array_equal(b[..., 3], g.xchan) and np.array_equal(b[..., 4], g.ychan)


@pytest.mark.parametrize("src, want", [
    ([[5, 5], [9, 0]], [[1, 1], [2, 0]]),
    ([[0, 0], [0, 0]], [[0, 0], [0, 0]]),
    ([[3, 7], [7, 3]], [[1, 2], [2, 1]]),
])
def test_canonicalize_examples(src, want):
    assert np.array_equal(canonicalize_instances(np.array(src)), want)


def test_canonicalize_large_sparse_ids():
    ids = np.array([[0, 2**40], [7, 2**40]])
    assert np.array_equal(canonicalize_instances(ids), [[0, 1], [2, 1]])


@given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.integers(0, 6)))
def test_canonicalize_idempotent_and_partition_preserving(ids):
    out = canonicalize_instances(ids)
    assert np.array_equal(canonicalize_instances(out), out)
    assert np.array_equal(out == 0, ids == 0)
    # same-label pixel pairs are preserved in both directions
    a, b = ids.ravel(), out.ravel()
    assert np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])
    nz = np.unique(b[b > 0])
    assert np.array_equal(nz, np.arange(1, len(nz) + 1))


def test_downsample_examples():
    assert np.array_equal(downsample_labels(np.array([[1, 2], [3, 4]]), 2), [[1]])
    m = np.arange(12).reshape(3, 4)
    assert np.array_equal(downsample_labels(m, 1), m)
    assert np.array_equal(downsample_labels(np.full((4, 4), 7), 4), [[7]])


def test_downsample_rejects_non_divisor():
    with pytest.raises(DimensionError):
        downsample_labels(np.zeros((4, 6)), 4)


@given(arrays(np.int64, (8, 8), elements=st.integers(0, 9)), st.sampled_from([1, 2, 4, 8]))
def test_downsample_never_invents_labels(m, f):
    assert set(np.unique(downsample_labels(m, f))) <= set(np.unique(m))


def test_class_table():
    t = ClassTable.from_pairs([("sky", "stuff"), ("car", "thing"), ("road", "stuff")])
    assert t.num_classes == 3
    assert t.thing_ids == [1] and t.stuff_ids == [0, 2]
    assert t.index("road") == 2 and t.is_thing(1) and not t.is_thing(0)
    with pytest.raises(ConfigurationError):
        ClassTable.from_pairs([("a", "thing"), ("a", "stuff")])
    with pytest.raises(ConfigurationError):
        ClassTable.from_pairs([("a", "blob")])


def test_hyperparams_defaults_and_validation():
    p = LossHyperParams()
    assert (p.delta_v, p.delta_d, p.delta_r) == (0.25, 1.0, 6.0)
    assert (p.alpha, p.beta, p.gamma) == (1.0, 1.0, 0.1)
    assert p.scale_weights == (1.0, 0.4, 0.16)
    with pytest.raises(ConfigurationError):
        LossHyperParams(delta_v=1.0, delta_d=1.0)
    with pytest.raises(ConfigurationError):
        LossHyperParams(gamma=-0.1)
    with pytest.raises(ConfigurationError):
        LossHyperParams(scale_weights=())


def test_ignore_sentinel():
    assert IGNORE == 65535

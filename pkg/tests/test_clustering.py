import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import blob_points, brute_mean_shift, same_partition
from panoptic_lab.clustering import (MERGE_FRACTION, BandwidthTable, bandwidth_search, bin_seeds,
                                     classwise_cluster, default_grid, mean_shift, merge_modes)
from panoptic_lab.core import IGNORE, ClassTable, ConfigurationError

CLASSES = ClassTable.from_pairs([("road", "stuff"), ("car", "thing"), ("person", "thing")])


def as_set(seeds):
    return sorted(map(tuple, np.round(np.asarray(seeds), 12)))


def test_bin_seeds_examples():
    pts = np.array([0.1, 0.2, 1.1])
    assert as_set(bin_seeds(pts, 1.0)) == [(0.0,), (1.0,)]
    assert as_set(bin_seeds(pts, 1.0, min_freq=2)) == [(0.0,)]
    same = np.tile([[0.37, -1.2]], (9, 1))
    assert as_set(bin_seeds(same, 0.25)) == [(0.25, -1.25)]


def test_bin_seeds_rounds_half_up():
    assert as_set(bin_seeds(np.array([0.5, -0.5, 1.5]), 1.0)) == [(0.0,), (1.0,), (2.0,)]


def test_bin_seeds_edge_cases():
    assert bin_seeds(np.zeros((0, 3)), 1.0).shape == (0, 3)
    with pytest.raises(ValueError):
        bin_seeds(np.zeros((2, 1)), 0.0)


def test_mean_shift_1d_example():
    res = mean_shift(np.array([0.0, 0.1, 5.0, 5.1]), 0.5, seeds="exhaustive")
    assert np.allclose(np.sort(res.modes[:, 0]), [0.05, 5.05])
    lab = res.labels
    assert lab[0] == lab[1] and lab[2] == lab[3] and lab[0] != lab[2]
    assert np.allclose(res.modes[lab, 0], [0.05, 0.05, 5.05, 5.05])


def test_mean_shift_identical_points():
    pts = np.tile([[0.3, 0.4, -2.0]], (7, 1))
    res = mean_shift(pts, 0.25)
    assert res.n_clusters == 1
    assert np.allclose(res.modes[0], pts[0], rtol=0, atol=1e-12)
    assert np.all(res.labels == 0)


def test_two_far_blobs_recovered():
    rng = np.random.default_rng(0)
    bw = 0.3
    a = rng.normal(0, 0.05, (60, 4))
    b = rng.normal(0, 0.05, (40, 4)) + 10 * bw * np.eye(4)[0]
    res = mean_shift(np.vstack([a, b]), bw)
    assert same_partition(res.labels, [0] * 60 + [1] * 40)


def test_empty_bin_seed_restarts_from_member():
    # in 12-D the grid point of this bin lies ~0.42 from the data, outside the window
    pts = np.full((5, 12), 0.12) + np.random.default_rng(1).uniform(-1e-3, 1e-3, (5, 12))
    res = mean_shift(pts, 0.25)
    assert res.n_clusters == 1
    assert np.allclose(res.modes[0], pts.mean(axis=0))


def test_merge_order_and_radius():
    modes = np.array([[0.0], [0.1], [1.0], [0.05]])
    window = np.array([3, 5, 5, 0])
    kept = merge_modes(modes, window, 0.4)
    # counts 5 tie between 0.1 and 1.0: smaller mode first; 0.0 lies within 0.2 of 0.1
    assert list(kept) == [1, 2]
    assert MERGE_FRACTION == 0.5


def test_modes_are_separated_after_merge():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 2, (300, 2))
    bw = 0.3
    res = mean_shift(pts, bw, seeds="exhaustive")
    d = np.linalg.norm(res.modes[:, None] - res.modes[None], axis=2)
    assert np.all(d[~np.eye(len(d), dtype=bool)] > bw / 2)
    assert len(res.labels) == 300


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exhaustive_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    bw = float(rng.uniform(0.25, 0.5))
    pts = rng.normal(size=(int(rng.integers(5, 60)), d)) * rng.uniform(0.1, 1.0)
    res = mean_shift(pts, bw, seeds="exhaustive")
    modes, lab = brute_mean_shift(pts, bw)
    assert len(modes) == res.n_clusters
    assert np.allclose(res.modes, modes, atol=1e-9)
    assert same_partition(res.labels, lab)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bin_matches_exhaustive_on_blobs(seed):
    rng = np.random.default_rng(seed)
    bw = float(rng.uniform(0.25, 0.5))
    k, d = int(rng.integers(1, 6)), int(rng.integers(1, 13))
    pts, truth = blob_points(rng, k, rng.integers(1, 60, k), d, bw / 2, 2.0)
    a = mean_shift(pts, bw, seeds="bin")
    b = mean_shift(pts, bw, seeds="exhaustive")
    assert same_partition(a.labels, b.labels)
    assert same_partition(a.labels, truth)


def test_explicit_seeds_and_rows():
    pts = np.array([[0.0], [0.1], [5.0], [5.1], [9.0]])
    res = mean_shift(pts, 0.5, seeds=np.array([[0.0], [5.0]]))
    assert res.n_clusters == 2
    sub = mean_shift(pts, 0.5, rows=np.array([3, 0, 2]))
    assert len(sub.labels) == 3 and sub.labels[0] == sub.labels[2] != sub.labels[1]


def test_mean_shift_errors():
    with pytest.raises(ValueError):
        mean_shift(np.zeros((3, 2)), 0.0)
    with pytest.raises(ValueError):
        mean_shift(np.zeros((0, 2)), 0.5)
    with pytest.raises(ValueError):
        mean_shift(np.zeros((3, 2)), 0.5, seeds="random")


# -- class-wise ---------------------------------------------------------------

def two_class_map():
    """6x8 map: left half car (two blobs), right half person (two blobs)."""
    sem = np.zeros((6, 8), dtype=np.int64)
    sem[:, :4] = 1
    sem[:, 4:] = 2
    sem[0] = 0  # a stuff row
    inst = np.zeros_like(sem)
    inst[1:4, :4], inst[4:, :4], inst[1:4, 4:], inst[4:, 4:] = 1, 2, 3, 4
    centers = {1: [0, 0, 0], 2: [3, 0, 0], 3: [0, 0, 0], 4: [0, 3, 0]}
    rng = np.random.default_rng(0)
    emb = rng.normal(0, 0.02, (6, 8, 3))
    for k, c in centers.items():
        emb[inst == k] += c
    return emb, sem, inst


def test_classwise_four_instances():
    emb, sem, inst = two_class_map()
    out = classwise_cluster(emb, sem, CLASSES, {"car": 0.25, "person": 0.25})
    assert set(np.unique(out)) == {0, 1, 2, 3, 4}
    assert np.all(out[sem == 0] == 0)
    assert same_partition(out, inst)


def test_classwise_no_things():
    sem = np.zeros((4, 4), dtype=np.int64)
    sem[0, 0] = IGNORE
    out = classwise_cluster(np.zeros((4, 4, 2)), sem, CLASSES, {})
    assert np.all(out == 0)


def test_classwise_groups_disconnected_regions():
    sem = np.zeros((5, 9), dtype=np.int64)
    sem[1:4, 0:2] = 1
    sem[1:4, 7:9] = 1
    emb = np.zeros((5, 9, 4))
    emb[sem == 1] = [1.0, 2.0, 0.0, -1.0]
    emb[sem == 1] += np.random.default_rng(3).normal(0, 1e-3, (12, 4))
    out = classwise_cluster(emb, sem, CLASSES, {"car": 0.25})
    assert set(np.unique(out[sem == 1])) == {1}


def test_classwise_missing_bandwidth():
    emb, sem, _ = two_class_map()
    with pytest.raises(ConfigurationError):
        classwise_cluster(emb, sem, CLASSES, {"car": 0.25})


def test_classwise_thread_independent():
    emb, sem, _ = two_class_map()
    bws = {"car": 0.3, "person": 0.3}
    a = classwise_cluster(emb, sem, CLASSES, bws, threads=1)
    b = classwise_cluster(emb, sem, CLASSES, bws, threads=4)
    assert np.array_equal(a, b)


def test_every_thing_pixel_gets_an_id():
    rng = np.random.default_rng(4)
    sem = rng.integers(0, 3, (12, 12))
    out = classwise_cluster(rng.normal(size=(12, 12, 3)), sem, CLASSES,
                            {"car": 0.25, "person": 0.4})
    assert np.all((out > 0) == (sem > 0))


# -- bandwidth table and search --------------------------------------------------

def test_bandwidth_table_round_trip(tmp_path):
    t = BandwidthTable(car=0.275, person=0.3)
    t.save(tmp_path / "bw.txt")
    assert (tmp_path / "bw.txt").read_text() == "car 0.275\nperson 0.3\n"
    again = BandwidthTable.load(tmp_path / "bw.txt")
    assert again == t
    assert again.dumps() == t.dumps()
    with pytest.raises(ConfigurationError):
        BandwidthTable.load(tmp_path / "missing.txt")
    with pytest.raises(ConfigurationError):
        BandwidthTable.loads("car\n")


def test_default_grid():
    g = default_grid(0.25)
    assert len(g) == 11 and g[0] == 0.25 and g[-1] == pytest.approx(0.5)
    assert min(g) >= 0.25


def zero_loss_scene(rng, n_inst=3, d=3, radius=0.25):
    sem = np.ones((6, 6 * n_inst), dtype=np.int64)
    inst = np.repeat(np.arange(1, n_inst + 1), 36).reshape(n_inst, 6, 6)
    inst = np.concatenate(list(inst), axis=1)
    emb = np.zeros((6, 6 * n_inst, d))
    for k in range(1, n_inst + 1):
        m = inst == k
        emb[m] = 2.0 * k * np.eye(d)[k % d] + ball(rng, int(m.sum()), d, radius)
    return emb, sem, inst


def ball(rng, n, d, radius):
    off = rng.normal(size=(n, d))
    off -= off.mean(axis=0)
    return off * radius / np.linalg.norm(off, axis=1).max()


def test_search_zero_loss_returns_smallest():
    rng = np.random.default_rng(5)
    scenes = [zero_loss_scene(rng) for _ in range(3)]
    assert bandwidth_search(scenes, 1, CLASSES, default_grid(0.25)) == 0.25


def test_search_spread_above_margin():
    rng = np.random.default_rng(6)
    # blobs whose radius exceeds the margin: the smallest bandwidth splits them
    scenes = [zero_loss_scene(rng, radius=0.45) for _ in range(3)]
    bw = bandwidth_search(scenes, 1, CLASSES, default_grid(0.25))
    assert bw > 0.25


def test_search_errors():
    rng = np.random.default_rng(7)
    scenes = [zero_loss_scene(rng)]
    with pytest.raises(ValueError):
        bandwidth_search(scenes, 2, CLASSES, default_grid(0.25))
    with pytest.raises(ValueError):
        bandwidth_search(scenes, 1, CLASSES, [0.1, 0.3])

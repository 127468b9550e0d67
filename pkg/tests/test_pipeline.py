import numpy as np
import pytest

from panoptic_lab.core import IGNORE, ClassTable, ConfigurationError, DimensionError
from panoptic_lab.datagen import generate_scenes, toy_spec
from panoptic_lab.fusion import fuse
from panoptic_lab.network import TrainConfig, train
from panoptic_lab.pipeline import (BENCH_CLASSES, BenchReport, run_benchmark, run_pipeline,
                                   semantic_labels, synthetic_embedding)

SPEC = toy_spec(height=24, width=24, things=toy_spec().things[:1])
CLASSES = SPEC.class_table()


@pytest.fixture(scope="module")
def models():
    scenes = generate_scenes(SPEC, 6, 0)
    sem, _ = train("semantic", scenes, TrainConfig(iters=30, lr=1.0, batch_size=2,
                                                   hidden=(8,), num_classes=3))
    inst, _ = train("instance", scenes, TrainConfig(iters=30, lr=1.0, batch_size=2,
                                                    hidden=(8,), embed_dim=4, num_classes=3))
    return sem, inst


def test_pipeline_output_is_a_valid_panoptic_map(models):
    sem_net, inst_net = models
    scene = generate_scenes(SPEC, 1, 99)[0]
    pan = run_pipeline(scene.image, sem_net, inst_net, {"car": 0.5}, CLASSES)
    labels = semantic_labels(sem_net, scene.image)
    assert labels.shape == (24, 24)
    assert np.all(pan.seg_map > 0)
    assert np.array_equal(pan.category_map(), labels)
    assert [s.id for s in pan.segments] == list(range(1, len(pan.segments) + 1))
    assert sum(s.area for s in pan.segments) == 24 * 24
    stuff = [s.category for s in pan.segments if not CLASSES.is_thing(s.category)]
    assert len(stuff) == len(set(stuff))


def test_pipeline_with_ground_truth_semantics(models):
    _, inst_net = models
    scene = generate_scenes(SPEC, 1, 98)[0]
    sem = scene.sem.copy()
    sem[0, 0] = IGNORE
    pan = run_pipeline(scene.image, None, inst_net, {"car": 0.5}, CLASSES, semantic_gt=sem)
    cat = pan.category_map()
    assert np.array_equal(cat, sem) and pan.seg_map[0, 0] == 0


def test_pipeline_errors(models):
    sem_net, inst_net = models
    image = np.zeros((24, 24, 3))
    with pytest.raises(ConfigurationError):
        run_pipeline(image, sem_net, inst_net, {}, CLASSES)
    four = ClassTable.from_pairs([("a", "stuff"), ("b", "stuff"), ("car", "thing"),
                                  ("d", "stuff")])
    with pytest.raises(DimensionError):
        run_pipeline(image, sem_net, inst_net, {"car": 0.5}, four)


def test_synthetic_embedding_layout():
    emb, sem, inst = synthetic_embedding(40, 60, 5, 5, 0)
    assert emb.shape == (40, 60, 5) and emb.dtype == np.float32
    assert set(np.unique(inst)) == set(range(6))
    assert np.array_equal(sem == 1, inst > 0)
    means = np.array([emb[inst == k].mean(axis=0) for k in range(1, 6)])
    d = np.linalg.norm(means[:, None] - means[None], axis=2)
    assert d[~np.eye(5, dtype=bool)].min() > 1.0
    # clusters are tight relative to the benchmark bandwidth
    spread = max(np.abs(emb[inst == k] - means[k - 1]).max() for k in range(1, 6))
    assert spread < 0.15


def test_benchmark_smoke():
    r = run_benchmark(64, 64, 12, 5, runs=5)
    assert isinstance(r, BenchReport)
    assert r.found == 5 and len(r.times_ms) == 5 and all(t > 0 for t in r.times_ms)
    assert r.median_ms == float(np.median(r.times_ms)) and r.peak_rss_bytes > 0
    keys = [line.split()[0] for line in r.format().splitlines()]
    assert keys[:5] == ["height", "width", "channels", "instances", "seeding"]
    assert "found" in keys and "median_ms" in keys
    assert BENCH_CLASSES.thing_ids == [1]


def test_benchmark_seedings_agree():
    a = run_benchmark(96, 96, 12, 8, "bin", runs=1)
    b = run_benchmark(96, 96, 12, 8, "exhaustive", runs=1)
    assert a.found == b.found == 8
    with pytest.raises(ValueError):
        run_benchmark(8, 8, 2, 1, runs=0)


def test_ground_truth_fusion_matches_generator():
    scene = generate_scenes(SPEC, 1, 5)[0]
    pan = fuse(scene.sem, scene.inst, CLASSES)
    assert len([s for s in pan.segments if s.category == 2]) == int(scene.inst.max())

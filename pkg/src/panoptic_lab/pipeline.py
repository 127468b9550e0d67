"""End-to-end inference and the clustering benchmark."""

from __future__ import annotations

import math
import resource
import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .clustering import classwise_cluster
from .core import ClassTable, ConfigurationError, DimensionError
from .fusion import PanopticSegmentation, fuse
from .network import Network, predict


def semantic_labels(net: Network, image: np.ndarray) -> np.ndarray:
    return np.argmax(predict(net, image), axis=-1).astype(np.int64)


def run_pipeline(image: np.ndarray, sem_net: Network, inst_net: Network,
                 bandwidths: Mapping[str, float], classes: ClassTable,
                 semantic_gt: np.ndarray | None = None, threads: int = 1,
                 min_freq: int = 1) -> PanopticSegmentation:
    """Semantic argmax, instance embedding, class-wise mean-shift, fusion.

    With ``semantic_gt`` the given labels replace the semantic prediction (the
    semantic network is then not run and may be ``None``).
    """
    missing = [classes.classes[k].name for k in classes.thing_ids
               if classes.classes[k].name not in bandwidths]
    if missing:
        raise ConfigurationError(f"no bandwidth for thing classes {missing}")
    if sem_net is not None and sem_net.out_channels != classes.num_classes:
        raise DimensionError(f"semantic model predicts {sem_net.out_channels} classes, "
                             f"class table has {classes.num_classes}")
    if semantic_gt is not None:
        sem = np.asarray(semantic_gt, dtype=np.int64)
    else:
        sem = semantic_labels(sem_net, image)
    emb = predict(inst_net, image)
    inst = classwise_cluster(emb, sem, classes, bandwidths, min_freq=min_freq,
                             threads=threads)
    return fuse(sem, inst, classes)


# -- benchmark ---------------------------------------------------------------

BENCH_CLASSES = ClassTable.from_pairs([("background", "stuff"), ("object", "thing")])
BENCH_NOISE = 0.02


@dataclass(frozen=True)
class BenchReport:
    height: int
    width: int
    channels: int
    instances: int
    seeding: str
    runs: int
    times_ms: tuple[float, ...]
    median_ms: float
    peak_rss_bytes: int
    found: int

    def format(self) -> str:
        """``key value`` lines; timings are the only run-dependent fields."""
        rows = [("height", self.height), ("width", self.width), ("channels", self.channels),
                ("instances", self.instances), ("seeding", self.seeding),
                ("runs", self.runs), ("median_ms", f"{self.median_ms:.3f}"),
                ("times_ms", ",".join(f"{t:.3f}" for t in self.times_ms)),
                ("peak_rss_bytes", self.peak_rss_bytes), ("found", self.found)]
        return "".join(f"{k} {v}\n" for k, v in rows)


def _centers(instances: int, channels: int) -> np.ndarray:
    """Distinct points of the lattice 2Z^D, closest to the origin first.

    Any two are at least 2 apart, which is twice the distance margin.
    """
    out = np.zeros((instances, channels))
    for m in range(instances):
        out[m, m % channels] = 2.0 * (1 + m // channels)
    return out


def synthetic_embedding(height: int, width: int, channels: int, instances: int,
                        seed: int = 0):
    """Embedding map with ``instances`` tight blobs laid out as image tiles.

    The image is cut into a near-square grid of tiles; the first ``instances``
    tiles are instances of the single thing class and the rest is stuff.
    Returns ``(emb, sem, inst)``.
    """
    if min(height, width, channels, instances) < 1:
        raise ValueError("benchmark dimensions must be >= 1")
    cols = math.ceil(math.sqrt(instances * width / height))
    cols = min(max(cols, 1), width)
    rows = math.ceil(instances / cols)
    if rows > height:
        raise ValueError(f"{instances} instances do not fit a {height}x{width} map")
    r = np.minimum(np.arange(height) * rows // height, rows - 1)
    c = np.minimum(np.arange(width) * cols // width, cols - 1)
    tile = r[:, None] * cols + c[None, :]
    inst = np.where(tile < instances, tile + 1, 0)
    sem = (inst > 0).astype(np.int64)

    rng = np.random.default_rng(seed)
    emb = rng.normal(0.0, BENCH_NOISE, (height, width, channels))
    centers = np.vstack([np.zeros((1, channels)), _centers(instances, channels)])
    emb += centers[inst]
    return emb.astype(np.float32), sem, inst


def run_benchmark(height: int, width: int, channels: int, instances: int,
                  seeding: str = "bin", runs: int = 5, seed: int = 0,
                  bandwidth: float = 0.25, threads: int = 1) -> BenchReport:
    """Time class-wise clustering on a synthetic map (one warm-up, then ``runs``)."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    emb, sem, _ = synthetic_embedding(height, width, channels, instances, seed)
    bws = {"object": bandwidth}

    def once():
        return classwise_cluster(emb, sem, BENCH_CLASSES, bws, threads=threads,
                                 seeding=seeding)

    once()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        out = once()
        times.append((time.perf_counter() - t0) * 1e3)
    found = int(out.max())
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    return BenchReport(height, width, channels, instances, seeding, runs, tuple(times),
                       float(np.median(times)), int(peak), found)

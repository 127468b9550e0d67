"""Flat-kernel mean-shift with bin seeding, applied class-wise to embedding maps."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit

from . import _kernels as K
from .core import IGNORE, ClassTable, ConfigurationError, canonicalize_instances, check_same_shape

TOL = 1e-3          # convergence: shift below TOL * bandwidth
MAX_ITER = 300
MERGE_FRACTION = 0.5  # modes closer than this * bandwidth are merged


@dataclass
class ClusterResult:
    modes: np.ndarray       # (M, D), ordered by decreasing window count
    labels: np.ndarray      # (N,), index into modes
    iterations: np.ndarray  # per seed
    window: np.ndarray      # per surviving mode, points in its final window

    @property
    def n_clusters(self) -> int:
        return len(self.modes)


class _CellIndex:
    """Rows ``points[rows]`` grouped into cubic cells of side ``cell`` (see ``_kernels``)."""

    def __init__(self, points: np.ndarray, cell: float, rows: np.ndarray | None = None):
        pts = np.ascontiguousarray(points)
        if pts.dtype not in (np.float32, np.float64):
            pts = pts.astype(np.float64)
        rows = (np.arange(len(pts), dtype=np.int64) if rows is None
                else np.ascontiguousarray(rows, dtype=np.int64))
        self.n, self.d = len(rows), pts.shape[1]
        self.cell = cell
        self.gid, self.first, self.cells = K.group_cells(pts, rows, cell)
        (self.order, self.starts, self.members, self.counts, self.sums, self.means,
         self.radius) = K.build_cells(pts, rows, self.gid, len(self.first))

    def shift(self, seeds, bandwidth, fallback=None):
        seeds = np.ascontiguousarray(seeds, dtype=np.float64).reshape(-1, self.d)
        if fallback is None:
            fallback = np.full(len(seeds), -1, dtype=np.int64)
        return K.shift_seeds(seeds, bandwidth, TOL, MAX_ITER, self.starts, self.members,
                             self.counts, self.sums, self.means, self.radius, fallback)

    def assign(self, modes):
        return K.assign_nearest(np.ascontiguousarray(modes, dtype=np.float64), self.order,
                                self.starts, self.members, self.means, self.radius, self.n)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def bin_seeds(points, bin_size: float, min_freq: int = 1) -> np.ndarray:
    """Grid points ``round(p / bin_size) * bin_size`` of bins holding >= min_freq points.

    Seeds are returned once each, in order of first occupancy.  Rounding is
    half-up.
    """
    if bin_size <= 0:
        raise ValueError(f"bin_size must be positive, got {bin_size}")
    pts = _as_points(points)
    if len(pts) == 0:
        return np.zeros((0, pts.shape[1] if pts.ndim == 2 else 1))
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    gid, _, cells = K.group_cells(pts, np.arange(len(pts), dtype=np.int64), bin_size)
    counts = np.bincount(gid, minlength=len(cells))
    return cells[counts >= min_freq].astype(np.float64) * bin_size


@njit(cache=True)
def _merge(modes, window, order, radius):
    kept = np.empty(len(order), dtype=np.int64)
    n = 0
    r2 = radius * radius
    d = modes.shape[1]
    for s in order:
        ok = True
        for j in range(n):
            acc = 0.0
            for k in range(d):
                t = modes[s, k] - modes[kept[j], k]
                acc += t * t
            if acc <= r2:
                ok = False
                break
        if ok:
            kept[n] = s
            n += 1
    return kept[:n]


def merge_modes(modes: np.ndarray, window: np.ndarray, bandwidth: float) -> np.ndarray:
    """Indices of surviving modes.

    Candidates are visited by decreasing window count, ties broken by the
    lexicographically smaller mode; a candidate within ``bandwidth / 2`` of an
    already kept mode is dropped.  Zero-count candidates never survive.
    """
    live = np.flatnonzero(window > 0)
    if len(live) == 0:
        return live
    keys = [modes[live, k] for k in range(modes.shape[1] - 1, -1, -1)] + [-window[live]]
    order = live[np.lexsort(keys)]
    return _merge(modes, window, order, MERGE_FRACTION * bandwidth)


def mean_shift(points, bandwidth: float, seeds="bin", min_freq: int = 1,
               bin_size: float | None = None, rows: np.ndarray | None = None) -> ClusterResult:
    """Flat-kernel mean-shift; every point ends up assigned to its nearest mode.

    Args:
        points: ``(N, D)`` array (or ``(N,)`` for 1-D data).
        bandwidth: window radius.
        seeds: ``"bin"`` for bin seeding, ``"exhaustive"`` to start from every
            point, or an explicit ``(S, D)`` array.
        min_freq: minimum bin occupancy for a bin seed.
        bin_size: seeding grid spacing, the bandwidth by default.
        rows: cluster only ``points[rows]`` (saves a copy of a big map);
            labels then follow the order of ``rows``.

    A bin seed whose window holds no point (possible in high dimension, where
    the grid point can sit far from its bin's members) restarts from the
    first member of its bin.  If no seed survives at all, every point is used
    as a seed.
    """
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    pts = _as_points(points)
    if (len(pts) if rows is None else len(rows)) == 0:
        raise ValueError("mean_shift needs at least one point")
    bin_size = bandwidth if bin_size is None else bin_size
    index = _CellIndex(pts, bandwidth, rows)

    fallback = None
    if isinstance(seeds, str):
        if seeds == "exhaustive":
            seed_arr = index.members[np.argsort(index.order, kind="stable")]
        elif seeds == "bin":
            if bin_size == bandwidth:
                gid, first, cells = index.gid, index.first, index.cells
            else:
                gid, first, cells = K.group_cells(index.members, np.argsort(index.order),
                                                  bin_size)
            counts = np.bincount(gid, minlength=len(first))
            keep = np.flatnonzero(counts >= min_freq)
            seed_arr = cells[keep].astype(np.float64) * bin_size
            # position of each bin's first member inside the sorted member array
            inverse = np.empty(index.n, dtype=np.int64)
            inverse[index.order] = np.arange(index.n)
            fallback = inverse[first[keep]]
        else:
            raise ValueError(f"unknown seeding {seeds!r}")
    else:
        seed_arr = np.asarray(seeds, dtype=np.float64).reshape(-1, index.d)

    modes, window, iters = index.shift(seed_arr, bandwidth, fallback)
    kept = merge_modes(modes, window, bandwidth)
    if len(kept) == 0:
        all_pts = index.members[np.argsort(index.order, kind="stable")]
        modes, window, iters = index.shift(all_pts, bandwidth)
        kept = merge_modes(modes, window, bandwidth)
    labels = index.assign(modes[kept])
    return ClusterResult(modes[kept].copy(), labels, iters, window[kept].copy())


# -- class-wise application ---------------------------------------------------

class BandwidthTable(dict):
    """Per thing-class bandwidth keyed by class name.

    Text form: one ``name value`` line per class.
    """

    def dumps(self) -> str:
        return "".join(f"{name} {float(v)!r}\n" for name, v in self.items())

    @classmethod
    def loads(cls, text: str) -> "BandwidthTable":
        table = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigurationError(f"bandwidth line {n}: expected 'name value'")
            table[parts[0]] = float(parts[1])
        return table

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path) -> "BandwidthTable":
        try:
            with open(path) as f:
                return cls.loads(f.read())
        except FileNotFoundError:
            raise ConfigurationError(f"bandwidth file not found: {path}") from None


def classwise_cluster(emb: np.ndarray, sem: np.ndarray, classes: ClassTable,
                      bandwidths: Mapping[str, float], min_freq: int = 1,
                      threads: int = 1, seeding: str = "bin") -> np.ndarray:
    """Instance map from mean-shift on the embeddings of each thing class.

    Stuff and IGNORE pixels get id 0.  Ids are dense over the whole image and
    canonical (numbered by first row-major appearance), so the result does not
    depend on ``threads``.
    """
    check_same_shape(emb, sem)
    d = emb.shape[-1]
    flat = emb.reshape(-1, d)
    labels = np.asarray(sem).ravel()
    jobs = []
    for k in classes.thing_ids:
        where = np.flatnonzero(labels == k)
        if len(where) == 0:
            continue
        name = classes.classes[k].name
        if name not in bandwidths:
            raise ConfigurationError(f"no bandwidth for thing class {name!r}")
        jobs.append((where, float(bandwidths[name])))

    def run(job):
        where, bw = job
        return mean_shift(flat, bw, seeds=seeding, min_freq=min_freq, rows=where).labels

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    out = np.zeros(labels.shape, dtype=np.int64)
    offset = 0
    for (where, _), lab in zip(jobs, results):
        out[where] = lab + 1 + offset
        offset += int(lab.max()) + 1
    return canonicalize_instances(out.reshape(sem.shape))


def default_grid(delta_v: float = 0.25, steps: int = 10) -> list[float]:
    return [delta_v * (1 + 0.1 * k) for k in range(steps + 1)]


def bandwidth_search(scenes: Iterable, class_index: int, classes: ClassTable,
                     grid: Sequence[float], delta_v: float = 0.25,
                     min_freq: int = 1) -> float:
    """Grid value with the best mean segment F1 for one thing class.

    ``scenes`` yields ``(emb, sem, inst)`` triples with ground-truth ``sem`` and
    ``inst``.  Pixels of the class are clustered with each candidate bandwidth
    and matched to the ground-truth instances of that class (IoU > 0.5).  Ties
    go to the smallest bandwidth.
    """
    from .metrics import segment_f1

    grid = sorted(float(g) for g in grid)
    if any(g < delta_v for g in grid):
        raise ValueError("bandwidth grid must not go below delta_v")
    name = classes.classes[class_index].name
    scores = np.zeros(len(grid))
    used = 0
    for emb, sem, inst in scenes:
        mask = np.asarray(sem) == class_index
        if not mask.any():
            continue
        used += 1
        pts = emb[mask]
        gt = np.asarray(inst)[mask]
        for j, bw in enumerate(grid):
            pred = mean_shift(pts, bw, seeds="bin", min_freq=min_freq).labels + 1
            scores[j] += segment_f1(pred, gt)
    if used == 0:
        raise ValueError(f"class {name!r} does not occur in any scene")
    scores /= used
    return grid[int(np.argmax(scores))]

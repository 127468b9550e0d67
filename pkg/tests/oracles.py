"""Independent reference implementations and data constructions for tests."""

import numpy as np


def brute_mean_shift(points, bandwidth, seeds=None, tol=1e-3, max_iter=300):
    """Flat-kernel mean-shift by full scans; returns (modes, labels).

    Modes are merged greedily (larger window first, ties to the
    lexicographically smaller mode) within bandwidth / 2; each point goes to
    its nearest mode, ties to the lower index.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    seeds = x.copy() if seeds is None else np.asarray(seeds, dtype=np.float64).reshape(-1, x.shape[1])
    found = []
    for s in seeds:
        p = s.copy()
        inside = np.sum((x - p) ** 2, axis=1) <= bandwidth ** 2
        if not inside.any():
            continue
        for _ in range(max_iter):
            q = x[inside].mean(axis=0)
            moved = np.linalg.norm(q - p)
            p = q
            if moved < tol * bandwidth:
                break
            inside = np.sum((x - p) ** 2, axis=1) <= bandwidth ** 2
        count = int(np.sum(np.sum((x - p) ** 2, axis=1) <= bandwidth ** 2))
        found.append((p, count))
    found.sort(key=lambda t: (-t[1], tuple(t[0])))
    kept = []
    for p, _ in found:
        if all(np.linalg.norm(p - k) > bandwidth / 2 for k in kept):
            kept.append(p)
    modes = np.array(kept)
    d = np.linalg.norm(x[:, None, :] - modes[None, :, :], axis=2)
    return modes, np.argmin(d, axis=1)


def same_partition(a, b) -> bool:
    """True when two labelings group the elements identically."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        return False
    fwd, back = {}, {}
    for u, v in zip(a.tolist(), b.tolist()):
        if fwd.setdefault(u, v) != v or back.setdefault(v, u) != u:
            return False
    return True


def separated_centers(rng, k, d, gap, box=None):
    """``k`` random centers in ``d`` dimensions with pairwise distance >= gap."""
    box = box if box is not None else gap * (k ** (1.0 / d) + 1.0)
    centers = []
    while len(centers) < k:
        c = rng.uniform(-box, box, size=d)
        if all(np.linalg.norm(c - o) >= gap for o in centers):
            centers.append(c)
    return np.array(centers)


def ball_offsets(rng, n, d, radius):
    """``n`` offsets with zero mean and norms at most ``radius``."""
    off = rng.normal(size=(n, d))
    off -= off.mean(axis=0)
    top = np.linalg.norm(off, axis=1).max()
    if top > 0:
        off *= radius * rng.uniform(0.2, 1.0) / top
    return off


def blob_points(rng, k, sizes, d, radius, gap):
    """Points of ``k`` blobs of at most ``radius`` around separated centers."""
    centers = separated_centers(rng, k, d, gap)
    pts, lab = [], []
    for j, (c, n) in enumerate(zip(centers, sizes)):
        pts.append(c + ball_offsets(rng, n, d, radius))
        lab += [j] * n
    return np.vstack(pts), np.array(lab)

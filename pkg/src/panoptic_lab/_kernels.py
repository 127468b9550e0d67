"""Compiled inner loops for binned mean-shift.

Points are grouped into cubic cells of a fixed size.  Each cell keeps its
member count, coordinate sum, mean and covering radius (max member distance
from the mean).  Window queries then decide whole cells at once with the
triangle inequality and only visit individual members of cells that straddle
the window boundary, so results equal a point-by-point scan.
"""

import numpy as np
from numba import njit

# Relative slack on cell-level decisions so that rounding in the
# triangle-inequality bound never disagrees with the per-point test.
_SLACK = 1e-9


@njit(cache=True, nogil=True)
def group_cells(points, rows, cell):
    """Group ``points[rows]`` by their cell ``floor(p / cell + 0.5)``.

    Returns a dense group id per selected row (numbered by first occurrence),
    the first position of every group and that group's integer cell
    coordinates.
    """
    n = rows.shape[0]
    d = points.shape[1]
    size = 1
    while size < 2 * n + 1:
        size *= 2
    mask = size - 1
    slots = np.full(size, -1, dtype=np.int64)
    gid = np.empty(n, dtype=np.int64)
    first = np.empty(n, dtype=np.int64)
    cells = np.empty((n, d), dtype=np.int64)  # only the first n_groups rows are touched
    key = np.empty(d, dtype=np.int64)
    n_groups = 0
    for i in range(n):
        r = rows[i]
        h = np.uint64(1469598103934665603)
        for k in range(d):
            key[k] = np.int64(np.floor(points[r, k] / cell + 0.5))
            h = (h ^ np.uint64(key[k])) * np.uint64(1099511628211)
        h ^= h >> np.uint64(29)
        s = np.int64(h & np.uint64(mask))
        while True:
            g = slots[s]
            if g < 0:
                slots[s] = n_groups
                cells[n_groups] = key
                gid[i] = n_groups
                first[n_groups] = i
                n_groups += 1
                break
            same = True
            for k in range(d):
                if cells[g, k] != key[k]:
                    same = False
                    break
            if same:
                gid[i] = g
                break
            s = (s + 1) & mask
    return gid, first[:n_groups].copy(), cells[:n_groups].copy()


@njit(cache=True, nogil=True)
def rank_by_first_appearance(flat, max_id):
    """Map nonzero ids in ``[1, max_id]`` to 1..M by first appearance; 0 stays 0."""
    rank = np.zeros(max_id + 1, dtype=np.int64)
    out = np.zeros(flat.shape[0], dtype=np.int64)
    m = 0
    for i in range(flat.shape[0]):
        v = flat[i]
        if v == 0:
            continue
        if rank[v] == 0:
            m += 1
            rank[v] = m
        out[i] = rank[v]
    return out


@njit(cache=True, nogil=True)
def build_cells(points, rows, gid, n_groups):
    """Counting-sort ``points[rows]`` by group and compute per-cell statistics."""
    n = rows.shape[0]
    d = points.shape[1]
    counts = np.zeros(n_groups, dtype=np.int64)
    for i in range(n):
        counts[gid[i]] += 1
    starts = np.zeros(n_groups + 1, dtype=np.int64)
    for g in range(n_groups):
        starts[g + 1] = starts[g] + counts[g]
    fill = starts[:-1].copy()
    order = np.empty(n, dtype=np.int64)
    for i in range(n):
        g = gid[i]
        order[fill[g]] = i
        fill[g] += 1
    members = np.empty((n, d), dtype=np.float64)
    sums = np.zeros((n_groups, d), dtype=np.float64)
    for g in range(n_groups):
        for m in range(starts[g], starts[g + 1]):
            i = rows[order[m]]
            for k in range(d):
                v = np.float64(points[i, k])
                members[m, k] = v
                sums[g, k] += v
    means = np.empty((n_groups, d), dtype=np.float64)
    radius = np.zeros(n_groups, dtype=np.float64)
    for g in range(n_groups):
        for k in range(d):
            means[g, k] = sums[g, k] / counts[g]
        r2 = 0.0
        for m in range(starts[g], starts[g + 1]):
            acc = 0.0
            for k in range(d):
                t = members[m, k] - means[g, k]
                acc += t * t
            if acc > r2:
                r2 = acc
        radius[g] = np.sqrt(r2)
    return order, starts, members, counts, sums, means, radius


@njit(cache=True, nogil=True)
def _window(p, bw, starts, members, counts, sums, means, radius, out):
    """Sum of points within distance ``bw`` of ``p`` into ``out``; returns count."""
    n_groups, d = means.shape
    bw2 = bw * bw
    hi = bw * (1.0 - _SLACK)
    lo = bw * (1.0 + _SLACK)
    for k in range(d):
        out[k] = 0.0
    total = 0
    for g in range(n_groups):
        acc = 0.0
        for k in range(d):
            t = p[k] - means[g, k]
            acc += t * t
        dist = np.sqrt(acc)
        if dist + radius[g] <= hi:
            for k in range(d):
                out[k] += sums[g, k]
            total += counts[g]
        elif dist - radius[g] > lo:
            continue
        else:
            for m in range(starts[g], starts[g + 1]):
                acc = 0.0
                for k in range(d):
                    t = members[m, k] - p[k]
                    acc += t * t
                if acc <= bw2:
                    for k in range(d):
                        out[k] += members[m, k]
                    total += 1
    return total


@njit(cache=True, nogil=True)
def shift_seeds(seeds, bw, tol, max_iter, starts, members, counts, sums, means, radius,
                fallback):
    """Iterate every seed to convergence.

    A seed whose first window is empty restarts from ``fallback[s]`` (a data
    point of its bin) when that index is non-negative, otherwise it is dropped
    (window count 0).
    """
    n_seeds, d = seeds.shape
    modes = np.empty((n_seeds, d), dtype=np.float64)
    window = np.zeros(n_seeds, dtype=np.int64)
    iters = np.zeros(n_seeds, dtype=np.int64)
    p = np.empty(d, dtype=np.float64)
    nxt = np.empty(d, dtype=np.float64)
    stop = tol * bw
    for s in range(n_seeds):
        for k in range(d):
            p[k] = seeds[s, k]
        c = _window(p, bw, starts, members, counts, sums, means, radius, nxt)
        if c == 0 and fallback[s] >= 0:
            for k in range(d):
                p[k] = members[fallback[s], k]
            c = _window(p, bw, starts, members, counts, sums, means, radius, nxt)
        if c == 0:
            for k in range(d):
                modes[s, k] = p[k]
            continue
        it = 0
        while True:
            it += 1
            shift = 0.0
            for k in range(d):
                v = nxt[k] / c
                t = v - p[k]
                shift += t * t
                p[k] = v
            if np.sqrt(shift) < stop or it >= max_iter:
                break
            c = _window(p, bw, starts, members, counts, sums, means, radius, nxt)
        # count of the window around the converged mode
        c = _window(p, bw, starts, members, counts, sums, means, radius, nxt)
        for k in range(d):
            modes[s, k] = p[k]
        window[s] = c
        iters[s] = it
    return modes, window, iters


@njit(cache=True, nogil=True)
def assign_nearest(modes, order, starts, members, means, radius, n_points):
    """Nearest-mode label per original point; ties go to the lower mode index."""
    n_modes, d = modes.shape
    n_groups = means.shape[0]
    labels = np.empty(n_points, dtype=np.int64)
    dist = np.empty(n_modes, dtype=np.float64)
    for g in range(n_groups):
        best = 0
        for j in range(n_modes):
            acc = 0.0
            for k in range(d):
                t = means[g, k] - modes[j, k]
                acc += t * t
            dist[j] = np.sqrt(acc)
            if dist[j] < dist[best]:
                best = j
        r = radius[g]
        whole = True
        for j in range(n_modes):
            if j != best and dist[j] - r <= (dist[best] + r) * (1.0 + _SLACK):
                whole = False
                break
        if whole:
            for m in range(starts[g], starts[g + 1]):
                labels[order[m]] = best
            continue
        for m in range(starts[g], starts[g + 1]):
            bi = 0
            bd = np.inf
            for j in range(n_modes):
                acc = 0.0
                for k in range(d):
                    t = members[m, k] - modes[j, k]
                    acc += t * t
                if acc < bd:
                    bd = acc
                    bi = j
            labels[order[m]] = bi
    return labels


# -- 3x3 convolution patch shuffling -------------------------------------------

@njit(cache=True, nogil=True)
def im2col3(x):
    """``(B, H, W, C)`` -> ``(B, H, W, 9, C)`` zero-padded 3x3 neighbourhoods."""
    b, h, w, c = x.shape
    out = np.zeros((b, h, w, 9, c), dtype=x.dtype)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for dy in range(3):
                    y = i + dy - 1
                    if y < 0 or y >= h:
                        continue
                    for dx in range(3):
                        xx = j + dx - 1
                        if xx < 0 or xx >= w:
                            continue
                        t = 3 * dy + dx
                        for k in range(c):
                            out[n, i, j, t, k] = x[n, y, xx, k]
    return out


@njit(cache=True, nogil=True)
def col2im3(cols):
    """Adjoint of :func:`im2col3`: scatter-add patches back onto the input grid."""
    b, h, w, _, c = cols.shape
    out = np.zeros((b, h, w, c), dtype=cols.dtype)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for dy in range(3):
                    y = i + dy - 1
                    if y < 0 or y >= h:
                        continue
                    for dx in range(3):
                        xx = j + dx - 1
                        if xx < 0 or xx >= w:
                            continue
                        t = 3 * dy + dx
                        for k in range(c):
                            out[n, y, xx, k] += cols[n, i, j, t, k]
    return out

"""Merge semantic and instance maps into a panoptic segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IGNORE, ClassTable, check_same_shape


class ConsistencyError(ValueError):
    """Semantic and instance maps disagree."""


@dataclass(frozen=True)
class Segment:
    id: int
    category: int
    area: int


@dataclass
class PanopticSegmentation:
    segments: list[Segment]
    seg_map: np.ndarray  # (H, W) segment ids, 0 = void

    def category_map(self) -> np.ndarray:
        """Per-pixel class, IGNORE on void pixels."""
        top = max([int(self.seg_map.max(initial=0))] + [s.id for s in self.segments])
        lut = np.full(top + 1, IGNORE, dtype=np.int64)
        for s in self.segments:
            lut[s.id] = s.category
        return lut[self.seg_map]

    def by_id(self) -> dict[int, Segment]:
        return {s.id: s for s in self.segments}


def fuse(sem: np.ndarray, inst: np.ndarray, classes: ClassTable,
         min_area: int = 0) -> PanopticSegmentation:
    """One segment per stuff class present and one per instance id.

    Thing pixels without an instance id are gathered into one segment per
    class, so no labelled pixel is left void.  Segment ids are numbered 1..S
    in order of first row-major appearance.  With ``min_area > 0`` smaller
    segments are voided.
    """
    check_same_shape(sem, inst)
    shape = np.shape(sem)
    sem = np.asarray(sem).ravel().astype(np.int64)
    inst = np.asarray(inst).ravel().astype(np.int64)
    valid = sem != IGNORE
    k = classes.num_classes
    is_thing = np.array([classes.is_thing(i) for i in range(k)] + [False])
    sem_c = np.where(valid, sem, k)
    thing_px = valid & is_thing[sem_c]

    # key 0: void; stuff c -> c + 1; thing (class, instance) pairs above that
    key = np.zeros(sem.shape, dtype=np.int64)
    key[valid & ~thing_px] = sem[valid & ~thing_px] + 1
    key[thing_px] = (k + 1) + inst[thing_px] * (k + 1) + sem[thing_px]

    stuff_px = valid & ~thing_px
    if (inst[stuff_px] != 0).any():
        raise ConsistencyError("instance ids on stuff pixels")
    owned = thing_px & (inst != 0)
    pairs = np.unique(np.stack([inst[owned], sem[owned]]), axis=1)
    if len(np.unique(pairs[0])) != pairs.shape[1]:
        raise ConsistencyError("an instance id spans two semantic classes")

    present = key != 0
    uniq, first, inverse = np.unique(key[present], return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(1, len(uniq) + 1)
    seg = np.zeros(sem.shape, dtype=np.int64)
    seg[present] = rank[inverse]

    areas = np.bincount(seg, minlength=len(uniq) + 1)
    cats = np.zeros(len(uniq) + 1, dtype=np.int64)
    cats[seg[present]] = sem[present]
    if min_area > 0:
        small = areas < min_area
        small[0] = False
        if small.any():
            keep = np.flatnonzero(~small[1:]) + 1
            relabel = np.zeros(len(uniq) + 1, dtype=np.int64)
            relabel[keep] = np.arange(1, len(keep) + 1)
            seg = relabel[seg]
            areas = np.concatenate([[0], areas[keep]])
            cats = np.concatenate([[0], cats[keep]])
    segments = [Segment(i, int(cats[i]), int(areas[i])) for i in range(1, len(areas))]
    return PanopticSegmentation(segments, seg.reshape(shape))

"""Panoptic quality (PQ, SQ, RQ) and mean IoU on a 0-100 scale."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import IGNORE, ClassTable, check_same_shape
from .fusion import PanopticSegmentation

MATCH_IOU = 0.5


def _contingency(a: np.ndarray, b: np.ndarray):
    """Unique (a, b) label pairs with their pixel counts."""
    a = a.astype(np.int64).ravel()
    b = b.astype(np.int64).ravel()
    span = int(b.max()) + 1 if b.size else 1
    keys, counts = np.unique(a * span + b, return_counts=True)
    return keys // span, keys % span, counts


@dataclass
class ClassMatches:
    tp: list[tuple[int, int, float]] = field(default_factory=list)  # (pred, gt, iou)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)


@dataclass
class Matches:
    """Per-class matching outcome, possibly accumulated over several images."""

    per_class: dict[int, ClassMatches] = field(default_factory=dict)

    def cls(self, k: int) -> ClassMatches:
        return self.per_class.setdefault(k, ClassMatches())

    def __iadd__(self, other: "Matches"):
        for k, m in other.per_class.items():
            mine = self.cls(k)
            mine.tp += m.tp
            mine.fp += m.fp
            mine.fn += m.fn
        return self


def match_segments(pred: PanopticSegmentation, gt: PanopticSegmentation) -> Matches:
    """Same-class pairs with IoU strictly above 0.5 are true positives.

    Pixels void in the ground truth are removed from every union.  Such
    matches are unique, so no assignment step is needed.
    """
    check_same_shape(pred.seg_map, gt.seg_map)
    p_area = {s.id: s.area for s in pred.segments}
    g_area = {s.id: s.area for s in gt.segments}
    p_cat = {s.id: s.category for s in pred.segments}
    g_cat = {s.id: s.category for s in gt.segments}
    pi, gi, inter = _contingency(pred.seg_map, gt.seg_map)
    void_overlap = {int(p): int(c) for p, g, c in zip(pi, gi, inter) if g == 0}

    out = Matches()
    matched_p, matched_g = set(), set()
    for p, g, c in zip(pi.tolist(), gi.tolist(), inter.tolist()):
        if p == 0 or g == 0 or p_cat[p] != g_cat[g]:
            continue
        union = p_area[p] + g_area[g] - c - void_overlap.get(p, 0)
        iou = c / union
        if iou > MATCH_IOU:
            out.cls(g_cat[g]).tp.append((p, g, iou))
            matched_p.add(p)
            matched_g.add(g)
    for s in pred.segments:
        if s.id not in matched_p:
            out.cls(s.category).fp.append(s.id)
    for s in gt.segments:
        if s.id not in matched_g:
            out.cls(s.category).fn.append(s.id)
    for m in out.per_class.values():
        m.tp.sort()
    return out


@dataclass(frozen=True)
class ClassPQ:
    tp: int
    fp: int
    fn: int
    iou_sum: float
    pq: float
    sq: float
    rq: float

    @property
    def has_tp(self) -> bool:
        return self.tp > 0


@dataclass
class PQStats:
    per_class: dict[int, ClassPQ]
    all: tuple[float, float, float]
    things: tuple[float, float, float]
    stuff: tuple[float, float, float]


def _class_pq(m: ClassMatches) -> ClassPQ:
    tp, fp, fn = len(m.tp), len(m.fp), len(m.fn)
    iou_sum = float(sum(i for _, _, i in m.tp))
    denom = tp + 0.5 * fp + 0.5 * fn
    sq = 100.0 * iou_sum / tp if tp else 0.0
    rq = 100.0 * tp / denom if denom else 0.0
    return ClassPQ(tp, fp, fn, iou_sum, sq * rq / 100.0, sq, rq)


def _mean(stats: list[ClassPQ]):
    if not stats:
        return (0.0, 0.0, 0.0)
    return tuple(float(np.mean([getattr(s, a) for s in stats])) for a in ("pq", "sq", "rq"))


def panoptic_quality(matches: Matches, classes: ClassTable | None = None) -> PQStats:
    """Per-class and averaged PQ/SQ/RQ.

    PQ is computed as ``SQ * RQ / 100`` so the decomposition is exact.  A class
    without true positives reports SQ = 0 (check ``ClassPQ.has_tp``).  Classes
    with no segment in either prediction or ground truth are left out of the
    averages.
    """
    per = {k: _class_pq(m) for k, m in sorted(matches.per_class.items())
           if m.tp or m.fp or m.fn}
    things = [s for k, s in per.items() if classes is not None and classes.is_thing(k)]
    stuff = [s for k, s in per.items() if classes is not None and not classes.is_thing(k)]
    return PQStats(per, _mean(list(per.values())), _mean(things), _mean(stuff))


def segment_f1(pred: np.ndarray, gt: np.ndarray) -> float:
    """F1 of IoU > 0.5 matching between two labelings of the same pixels.

    Label 0 in ``gt`` is void; every other label of either side is a segment.
    """
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    keep = gt != 0
    pred, gt = pred[keep], gt[keep]
    if gt.size == 0:
        return 1.0 if pred.size == 0 else 0.0
    pa = dict(zip(*np.unique(pred, return_counts=True)))
    ga = dict(zip(*np.unique(gt, return_counts=True)))
    pi, gi, inter = _contingency(pred, gt)
    tp = sum(1 for p, g, c in zip(pi, gi, inter) if c / (pa[p] + ga[g] - c) > MATCH_IOU)
    return 2.0 * tp / (len(pa) + len(ga))


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int):
    """Per-class IoU (percent, NaN when the class is absent from gt) and their mean.

    Pixels IGNORE in ``gt`` are removed from intersection and union.
    """
    check_same_shape(pred, gt)
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    keep = gt != IGNORE
    pred, gt = pred[keep], gt[keep]
    ious = np.full(num_classes, np.nan)
    for k in range(num_classes):
        g = gt == k
        if not g.any():
            continue
        p = pred == k
        ious[k] = 100.0 * np.sum(g & p) / np.sum(g | p)
    present = ~np.isnan(ious)
    mean = float(ious[present].mean()) if present.any() else 0.0
    return ious, mean


REPORT_COLUMNS = ("PQ", "SQ", "RQ", "PQ_Th", "SQ_Th", "RQ_Th", "PQ_St", "SQ_St", "RQ_St",
                  "mIoU")


def report_values(stats: PQStats, mean_iou: float) -> dict[str, float]:
    vals = list(stats.all) + list(stats.things) + list(stats.stuff) + [mean_iou]
    return dict(zip(REPORT_COLUMNS, vals))


def format_table(values: dict[str, float], label: str = "method") -> str:
    """Aligned two-line text table, one column per metric."""
    heads = ["method"] + list(values)
    cells = [label] + [f"{v:.1f}" for v in values.values()]
    widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
    line = lambda row: "  ".join(x.rjust(w) for x, w in zip(row, widths)).rstrip()
    return line(heads) + "\n" + line(cells) + "\n"


def format_key_values(values: dict[str, float], stats: PQStats | None = None,
                      classes: ClassTable | None = None) -> str:
    """Machine-readable ``key value`` lines, per-class rows after the summary."""
    lines = [f"{k} {v!r}" for k, v in values.items()]
    if stats is not None:
        for k, s in stats.per_class.items():
            name = classes.classes[k].name if classes is not None else str(k)
            lines.append(f"class.{name} tp={s.tp} fp={s.fp} fn={s.fn} pq={s.pq!r} "
                         f"sq={s.sq!r} rq={s.rq!r}")
    return "\n".join(lines) + "\n"


def evaluate(preds: Iterable[PanopticSegmentation], gts: Iterable[PanopticSegmentation],
             classes: ClassTable) -> PQStats:
    """Dataset-level PQ: matches are pooled over images before averaging."""
    total = Matches()
    for p, g in zip(preds, gts):
        total += match_segments(p, g)
    return panoptic_quality(total, classes)

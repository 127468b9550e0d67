"""
Panoptic quality on a toy pair of maps
======================================

Fuse semantic and instance maps into segments, then score a prediction
against the ground truth.
"""

import numpy as np

from panoptic_lab import ClassTable, fuse
from panoptic_lab.metrics import (format_table, match_segments, miou, panoptic_quality,
                                  report_values)

classes = ClassTable.from_pairs([("road", "stuff"), ("car", "thing")])

sem = np.zeros((6, 10), dtype=np.int64)
inst = np.zeros_like(sem)
sem[1:4, 1:4], inst[1:4, 1:4] = 1, 1      # car 1, 9 px
sem[2:5, 6:9], inst[2:5, 6:9] = 1, 2      # car 2, 9 px
gt = fuse(sem, inst, classes)
print("ground truth segments:", gt.segments)

# prediction: car 1 slightly too big, car 2 cut in half
p_sem, p_inst = sem.copy(), inst.copy()
p_sem[1:4, 4], p_inst[1:4, 4] = 1, 1
p_inst[2:5, 8] = 3
pred = fuse(p_sem, p_inst, classes)

m = match_segments(pred, gt)
for k, cm in m.per_class.items():
    print(classes.classes[k].name, "tp", cm.tp, "fp", cm.fp, "fn", cm.fn)

stats = panoptic_quality(m, classes)
_, mean_iou = miou(pred.category_map(), gt.category_map(), classes.num_classes)
print(format_table(report_values(stats, mean_iou), "toy"))

# the cut-off column of car 2 is its own segment: IoU 3/9 with the gt car is
# not above one half, so it counts as a false positive

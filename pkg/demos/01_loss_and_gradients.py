"""
Discriminative embedding loss, by hand
======================================

Three clusters of 2-D embeddings; watch each term switch on and off, then
check the analytic gradient against central differences.
"""

import numpy as np

from panoptic_lab import LossHyperParams
from panoptic_lab.loss import discriminative_loss, discriminative_loss_grad, finite_diff_check

p = LossHyperParams()
print("margins: delta_v", p.delta_v, "delta_d", p.delta_d, "delta_r", p.delta_r)

# two tight clusters far apart: every hinge is inactive
emb = np.array([[[0.0, 0.0], [0.5, 0.0], [3.0, 0.0], [3.5, 0.0]]])
ids = np.array([[1, 1, 2, 2]])
br, stats = discriminative_loss(emb, ids, p)
print("separated:", br)
print("  cluster means", stats.means.tolist())

# pull the second cluster in: the distance term takes over
emb2 = np.array([[[0.0, 0.0], [1.0, 0.0], [0.6, 0.0]]])
br, _ = discriminative_loss(emb2, np.array([[1, 1, 2]]), p)
print("crowded:  ", br)     # l_var 0.03125, l_dist 3.61, total 3.64125

# far from the origin: the regularizer kicks in
far = emb + 10.0
print("far away: ", discriminative_loss(far, ids, p)[0])

# gradient check on a random map with background pixels (id 0 is ignored)
rng = np.random.default_rng(0)
x = rng.normal(size=(5, 5, 3))
gt = rng.integers(0, 4, (5, 5))
ev = lambda e: (discriminative_loss(e, gt, p)[0].l_inst, discriminative_loss_grad(e, gt, p))
print("worst relative gradient error: %.2e" % finite_diff_check(ev, x))

# a few plain gradient-descent steps shrink the loss
for step in range(6):
    br, _ = discriminative_loss(x, gt, p)
    print("step %d  loss %.4f" % (step, br.l_inst))
    x = x - 2.0 * discriminative_loss_grad(x, gt, p)

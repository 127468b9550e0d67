"""Semantic cross-entropy and discriminative instance losses with exact gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import IGNORE, DimensionError, LossHyperParams, check_same_shape


class EmptyLossError(ValueError):
    """No pixel contributes to the loss."""


def semantic_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over non-IGNORE pixels and its logit gradient.

    Args:
        logits: ``(H, W, K)`` class scores.
        labels: ``(H, W)`` class indices, IGNORE pixels are skipped.

    Returns:
        ``(loss, grad)`` with ``grad`` shaped like ``logits``.
    """
    check_same_shape(logits, labels)
    k = logits.shape[-1]
    flat = logits.reshape(-1, k)
    lab = labels.ravel()
    valid = lab != IGNORE
    n = int(valid.sum())
    if n == 0:
        raise EmptyLossError("every pixel is IGNORE")
    if lab[valid].max() >= k or lab[valid].min() < 0:
        raise ValueError(f"labels outside [0, {k})")
    z = flat[valid]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    target = lab[valid].astype(np.int64)
    rows = np.arange(n)
    loss = float(np.sum(logsum - z[rows, target]) / n)
    prob = np.exp(z - logsum[:, None])
    prob[rows, target] -= 1.0
    grad = np.zeros_like(flat)
    grad[valid] = prob / n
    return loss, grad.reshape(logits.shape)


def multi_scale_loss(per_scale: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted sum of per-scale losses."""
    if len(per_scale) != len(weights):
        raise DimensionError(f"{len(per_scale)} losses but {len(weights)} weights")
    return float(sum(w * l for w, l in zip(weights, per_scale)))


@dataclass(frozen=True)
class ClusterStats:
    ids: np.ndarray     # instance id of each cluster, in ascending order
    counts: np.ndarray  # pixels per cluster
    means: np.ndarray   # (C, D)

    @property
    def count(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class LossBreakdown:
    l_var: float
    l_dist: float
    l_reg: float
    l_inst: float

    def recombine(self, p: LossHyperParams) -> float:
        return p.alpha * self.l_var + p.beta * self.l_dist + p.gamma * self.l_reg


def _clusters(emb, gt):
    check_same_shape(emb, gt)
    d = emb.shape[-1] if emb.ndim == 3 else 1
    x = emb.reshape(-1, d).astype(np.float64, copy=False)
    ids = np.asarray(gt).ravel()
    member = ids != 0
    uniq, lab = np.unique(ids[member], return_inverse=True)
    return x, member, uniq, lab


def _terms(x, lab, c, p):
    """Shared forward quantities over member pixels ``x`` labelled ``lab``."""
    counts = np.bincount(lab, minlength=c).astype(np.float64)
    sums = np.zeros((c, x.shape[1]))
    np.add.at(sums, lab, x)
    means = sums / counts[:, None]

    diff = means[lab] - x
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    h_var = np.maximum(dist - p.delta_v, 0.0)
    per_cluster = np.bincount(lab, weights=h_var ** 2, minlength=c) / counts
    l_var = per_cluster.sum() / c

    if c > 1:
        pair = means[:, None, :] - means[None, :, :]
        mdist = np.sqrt(np.einsum("abk,abk->ab", pair, pair))
        h_dist = np.maximum(2.0 * p.delta_d - mdist, 0.0)
        np.fill_diagonal(h_dist, 0.0)
        l_dist = (h_dist ** 2).sum() / (c * (c - 1))
    else:
        pair = mdist = h_dist = None
        l_dist = 0.0

    norm = np.sqrt(np.einsum("ck,ck->c", means, means))
    h_reg = np.maximum(norm - p.delta_r, 0.0)
    l_reg = (h_reg ** 2 / counts).sum() / c
    return dict(counts=counts, means=means, diff=diff, dist=dist, h_var=h_var,
                l_var=l_var, pair=pair, mdist=mdist, h_dist=h_dist, l_dist=l_dist,
                norm=norm, h_reg=h_reg, l_reg=l_reg)


def discriminative_loss(emb: np.ndarray, gt: np.ndarray,
                        p: LossHyperParams) -> tuple[LossBreakdown, ClusterStats]:
    """Variance, distance and regularization terms over the nonzero ids of ``gt``.

    Pixels with id 0 are excluded.  With no clusters every term is 0, with a
    single cluster the distance term is 0.
    """
    x, member, uniq, lab = _clusters(emb, gt)
    c = len(uniq)
    if c == 0:
        zero = LossBreakdown(0.0, 0.0, 0.0, 0.0)
        return zero, ClusterStats(uniq, np.zeros(0), np.zeros((0, x.shape[1])))
    t = _terms(x[member], lab, c, p)
    l_inst = p.alpha * t["l_var"] + p.beta * t["l_dist"] + p.gamma * t["l_reg"]
    breakdown = LossBreakdown(float(t["l_var"]), float(t["l_dist"]), float(t["l_reg"]),
                              float(l_inst))
    return breakdown, ClusterStats(uniq, t["counts"].astype(np.int64), t["means"])


def discriminative_loss_grad(emb: np.ndarray, gt: np.ndarray,
                             p: LossHyperParams) -> np.ndarray:
    """Gradient of the combined instance loss with respect to every embedding."""
    x, member, uniq, lab = _clusters(emb, gt)
    grad = np.zeros_like(x)
    c = len(uniq)
    if c == 0:
        return grad.reshape(emb.shape)
    t = _terms(x[member], lab, c, p)
    counts = t["counts"]

    # d/dx_j of the variance term, including the pull through the mean.
    safe = np.where(t["dist"] > 0, t["dist"], 1.0)
    v = (2.0 * t["h_var"] / safe)[:, None] * t["diff"]  # 2 h_i u_i
    v_mean = np.zeros((c, x.shape[1]))
    np.add.at(v_mean, lab, v)
    v_mean /= counts[:, None]
    g_var = (v_mean[lab] - v) / (c * counts[lab])[:, None]

    # d/dmu_c of distance and regularization terms
    g_mu = np.zeros((c, x.shape[1]))
    if c > 1:
        md = np.where(t["mdist"] > 0, t["mdist"], 1.0)
        coef = -4.0 * t["h_dist"] / md / (c * (c - 1))
        g_mu += p.beta * np.einsum("ab,abk->ak", coef, t["pair"])
    nr = np.where(t["norm"] > 0, t["norm"], 1.0)
    g_mu += p.gamma * (2.0 * t["h_reg"] / nr / (c * counts))[:, None] * t["means"]

    grad[member] = p.alpha * g_var + (g_mu / counts[:, None])[lab]
    return grad.reshape(emb.shape)


def finite_diff_check(evaluator: Callable[[np.ndarray], tuple[float, np.ndarray]],
                      x: np.ndarray, step: float = 1e-5, floor: float = 1e-2) -> float:
    """Worst per-coordinate relative error of an analytic gradient.

    ``evaluator(x)`` returns ``(loss, gradient)``.  Every coordinate is
    perturbed by ``+-step`` and the central difference compared with the
    analytic value.  Denominators are ``max(|a|, |n|, floor * scale)`` where
    ``scale`` is the largest gradient magnitude, so coordinates with
    vanishing gradients are judged against the gradient's overall size.
    """
    x = np.array(x, dtype=np.float64)
    f0, analytic = evaluator(x)
    if not np.isfinite(f0):
        raise FloatingPointError(f"non-finite loss {f0}")
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    num = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = evaluator(x)[0]
        flat[i] = orig - step
        fm = evaluator(x)[0]
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss at coordinate {i}")
        num[i] = (fp - fm) / (2.0 * step)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))

"""Classification and box-regression losses over per-anchor predictions."""

from __future__ import annotations

import numpy as np


def softmax_ce_loss(cls_logits, labels, selection):
    """Two-class softmax cross-entropy averaged over the OHEM selection.

    Label +1 maps to class 1 (face), label 0 to class 0. Anchors outside the
    selection get zero gradient. Empty selection: loss 0, zero grads.
    """
    cls_logits = np.asarray(cls_logits)
    dlogits = np.zeros_like(cls_logits)
    sel = np.asarray(selection.indices, dtype=np.int64)
    if sel.size == 0:
        return 0.0, dlogits
    z = cls_logits[sel]
    target = (np.asarray(labels)[sel] == 1).astype(np.int64)
    m = z.max(axis=1, keepdims=True)
    log_norm = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    n = sel.size
    loss = -float(log_p[np.arange(n), target].sum()) / n
    grad = np.exp(log_p)
    grad[np.arange(n), target] -= 1.0
    dlogits[sel] = grad / n
    return loss, dlogits


def smooth_l1_loss(reg_pred, reg_targets, reg_mask):
    """Smooth-L1 summed over the 4 delta components, averaged over masked anchors.

    f(x) = 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise. Empty mask: loss 0.
    """
    reg_pred = np.asarray(reg_pred)
    dpred = np.zeros_like(reg_pred)
    rows = np.flatnonzero(np.asarray(reg_mask))
    if rows.size == 0:
        return 0.0, dpred
    r = reg_pred[rows] - np.asarray(reg_targets)[rows]
    a = np.abs(r)
    quad = a < 1.0
    per = np.where(quad, 0.5 * r * r, a - 0.5)
    n = rows.size
    loss = float(per.sum()) / n
    dpred[rows] = np.where(quad, r, np.sign(r)) / n
    return loss, dpred

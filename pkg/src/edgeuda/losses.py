"""Training objectives: DICE overlap on edge maps, pixel cross-entropy on
segmentation maps, and the weighted total combining the initial- and
final-prediction terms.

Edge targets are constants (binary maps); predictions are graph tensors,
so every loss here is differentiable w.r.t. the predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, make_op, sum_all

DICE_EPS = 1e-8
PROB_FLOOR = 1e-12
IGNORE_INDEX = 255


def _as_constant(value):
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def dice(target, prediction):
    """DICE overlap 2*sum(e*p) / (sum(e^2) + sum(p^2) + eps), in [0, 1].

    ``target`` is a binary {0, 1} map; ``prediction`` holds values in
    [0, 1]. The epsilon keeps the empty-empty case defined (score 0).
    """
    target = _as_constant(target)
    if not isinstance(prediction, Tensor):
        prediction = _as_constant(prediction)
    if target.shape != prediction.shape:
        raise ValueError(f"dice: target shape {target.shape} != prediction shape {prediction.shape}")
    td = target.data
    if not np.all((td == 0.0) | (td == 1.0)):
        raise ValueError("dice: target must be binary {0, 1}")
    overlap = sum_all(target * prediction)
    denom = sum_all(target * target) + sum_all(prediction * prediction) + DICE_EPS
    return (2.0 * overlap) / denom


def edge_loss(target_s, target_t, pred_s_init, pred_t_init, pred_s_final, pred_t_final):
    """Initial and final edge losses, each summing one (1 - DICE) term per domain."""
    l_init = (1.0 - dice(target_s, pred_s_init)) + (1.0 - dice(target_t, pred_t_init))
    l_final = (1.0 - dice(target_s, pred_s_final)) + (1.0 - dice(target_t, pred_t_final))
    return l_init, l_final


def cross_entropy(labels, probs, ignore_index=IGNORE_INDEX):
    """Mean negative log-probability of the true class over labeled pixels.

    ``labels`` is an integer (H, W) map; ``probs`` a (C, H, W) tensor of
    per-pixel class distributions. Pixels labeled ``ignore_index``
    contribute neither value nor gradient; if every pixel is ignored the
    loss is 0. Probabilities are clamped to >= 1e-12 before the log.
    """
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"cross_entropy: labels must be integers, got dtype {labels.dtype}")
    pd = probs.data
    if pd.ndim != 3 or labels.shape != pd.shape[1:]:
        raise ValueError(
            f"cross_entropy: probs shape {pd.shape} incompatible with labels shape {labels.shape}"
        )
    num_classes = pd.shape[0]
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise ValueError(
            f"cross_entropy: class ids {sorted(np.unique(labels[bad]).tolist())} outside [0, {num_classes})"
        )
    n_valid = int(valid.sum())
    if n_valid == 0:
        return Tensor(np.asarray(0.0))

    safe_labels = np.where(valid, labels, 0)
    selected = np.take_along_axis(pd, safe_labels[None], axis=0)[0]
    clamped = np.maximum(selected, PROB_FLOOR)
    value = -np.log(clamped[valid]).sum() / n_valid

    def backward(grad):
        coeff = np.where(valid & (selected > PROB_FLOOR), -1.0 / (clamped * n_valid), 0.0)
        gp = np.zeros_like(pd)
        np.put_along_axis(gp, safe_labels[None], (grad * coeff)[None], axis=0)
        return (gp,)

    return make_op(np.asarray(value), (probs,), backward)


@dataclass
class LossReport:
    """Scalar summary of one training step's objective."""

    l_seg_init: float
    l_seg_final: float
    l_edge_init: float
    l_edge_final: float
    lam: float
    l_total: float

    def log_line(self, step):
        return (
            f"{step} {self.l_total:.12e} {self.l_seg_init:.12e} {self.l_seg_final:.12e} "
            f"{self.l_edge_init:.12e} {self.l_edge_final:.12e}"
        )


METRICS_HEADER = "step l_total l_seg_init l_seg_final l_edge_init l_edge_final"


def total_loss(l_seg_init, l_seg_final, lam, l_edge_init=None, l_edge_final=None):
    """Combine the four loss components into the optimization target.

    total = (l_seg_init + l_seg_final) + lam * (l_edge_init + l_edge_final)

    Edge terms may be omitted (edge supervision disabled); they then
    count as zero. Returns the differentiable total plus a float report.
    """
    total = l_seg_init + l_seg_final
    if l_edge_init is not None and l_edge_final is not None:
        total = total + float(lam) * (l_edge_init + l_edge_final)
        ei, ef = l_edge_init.item(), l_edge_final.item()
    elif l_edge_init is None and l_edge_final is None:
        ei = ef = 0.0
    else:
        raise ValueError("total_loss: edge terms must be both present or both absent")
    report = LossReport(
        l_seg_init=l_seg_init.item(),
        l_seg_final=l_seg_final.item(),
        l_edge_init=ei,
        l_edge_final=ef,
        lam=float(lam),
        l_total=total.item(),
    )
    return total, report

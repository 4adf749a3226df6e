"""Independent oracles shared across test modules.

Everything here is written as straight-line reference code (nested loops,
brute-force enumeration, finite differences) and must stay independent of
the implementation paths it checks.
"""

import numpy as np


def naive_conv2d(x, kernel, stride=1, padding=0):
    """Nested-loop reference convolution for (N, C, H, W) x (K, C, kh, kw)."""
    n, c, h, w = x.shape
    k, _, kh, kw = kernel.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    padded = np.zeros((n, c, hp, wp))
    padded[:, :, padding:padding + h, padding:padding + w] = x
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((n, k, oh, ow))
    for ni in range(n):
        for ki in range(k):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ii in range(kh):
                            for jj in range(kw):
                                acc += (
                                    padded[ni, ci, oi * stride + ii, oj * stride + jj]
                                    * kernel[ki, ci, ii, jj]
                                )
                    out[ni, ki, oi, oj] = acc
    return out


def finite_diff(loss_fn, array, eps=1e-5):
    """Central finite differences of a scalar function w.r.t. one array.

    ``loss_fn`` is called with no arguments and must read ``array`` by
    reference; entries are perturbed in place and restored.
    """
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + eps
        hi = loss_fn()
        array[idx] = orig - eps
        lo = loss_fn()
        array[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * eps)
        it.iternext()
    return grad


def max_rel_err(analytic, numeric, floor=1e-8):
    """Worst per-coordinate relative error with a floored denominator."""
    a = np.asarray(analytic, dtype=float).reshape(-1)
    b = np.asarray(numeric, dtype=float).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def flood_fill_hysteresis(strong, weak):
    """Reference hysteresis: keep weak pixels 8-connected to a strong seed.

    Plain breadth-first flood fill over the union mask, started from every
    strong pixel.
    """
    h, w = strong.shape
    keep = strong.copy()
    frontier = [(int(r), int(c)) for r, c in np.argwhere(strong)]
    while frontier:
        r, c = frontier.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and weak[rr, cc] and not keep[rr, cc]:
                    keep[rr, cc] = True
                    frontier.append((rr, cc))
    return keep


def brute_force_iou(pred, truth, num_classes, ignore_index=255):
    """Per-class IoU via explicit pixel-set intersection/union loops."""
    ious = np.full(num_classes, np.nan)
    present = []
    for c in range(num_classes):
        inter = 0
        union = 0
        in_truth = 0
        for p, t in zip(pred.reshape(-1), truth.reshape(-1)):
            if t == ignore_index:
                continue
            pm = p == c
            tm = t == c
            if pm and tm:
                inter += 1
            if pm or tm:
                union += 1
            if tm:
                in_truth += 1
        if in_truth > 0:
            present.append(c)
            ious[c] = inter / union
    miou = float(np.mean([ious[c] for c in present]))
    return ious, miou

"""Classical edge extraction used to manufacture supervision targets.

Edges are extracted from plain images with fixed kernels, so the same
operator runs on both training domains without any labels: grayscale
conversion, separable Gaussian smoothing, Sobel gradients, and the full
Canny pipeline (non-maximum suppression, double threshold, hysteresis).

All functions take and return 2-D float64 arrays with pixel values in
[0, 1]; Canny outputs are binary {0, 1} maps.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from typing import NamedTuple

import numpy as np

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Default thresholds apply to gradient magnitude normalized by its image
# maximum, which makes them independent of absolute image contrast.
DEFAULT_SIGMA = 1.0
DEFAULT_LOW = 0.1
DEFAULT_HIGH = 0.2

_SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])
_SOBEL_DIFF = np.array([-1.0, 0.0, 1.0])


def to_gray(rgb):
    """Luminance of a (3, H, W) image, clamped to [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"to_gray expects a (3, H, W) image, got shape {rgb.shape}")
    r, g, b = GRAY_WEIGHTS
    return np.clip(r * rgb[0] + g * rgb[1] + b * rgb[2], 0.0, 1.0)


def gaussian_kernel1d(sigma):
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _correlate1d(img, weights, axis):
    # Mirror-with-edge padding (scipy's "reflect"); together with a
    # normalized symmetric kernel this conserves total intensity.
    radius = len(weights) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="symmetric")
    out = np.zeros_like(img)
    index = [slice(None), slice(None)]
    for k, w in enumerate(weights):
        index[axis] = slice(k, k + img.shape[axis])
        out += w * padded[tuple(index)]
    return out


def gaussian_smooth(img, sigma):
    """Separable Gaussian blur with mirror-padded borders."""
    img = np.asarray(img, dtype=np.float64)
    taps = gaussian_kernel1d(sigma)
    return _correlate1d(_correlate1d(img, taps, axis=0), taps, axis=1)


def sobel_gradients(img):
    """3x3 Sobel gradients: (gx, gy, magnitude, angle).

    x grows with the column index, y with the row index; the angle is
    arctan2(gy, gx) in (-pi, pi]. Borders are mirror-padded.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"sobel_gradients needs at least a 3x3 image, got shape {img.shape}")
    gx = _correlate1d(_correlate1d(img, _SOBEL_SMOOTH, axis=0), _SOBEL_DIFF, axis=1)
    gy = _correlate1d(_correlate1d(img, _SOBEL_SMOOTH, axis=1), _SOBEL_DIFF, axis=0)
    magnitude = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx)
    return gx, gy, magnitude, angle


def _neighbor(padded, dr, dc, h, w):
    return padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]


def _non_maximum_suppression(magnitude, angle):
    """Zero out pixels that are not local maxima along the gradient.

    The gradient direction is quantized to 4 bins (0, 45, 90, 135 deg);
    a pixel survives when its magnitude is >= both neighbors along the
    quantized direction. Off-image neighbors count as zero.
    """
    h, w = magnitude.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = magnitude

    # Direction is modulo pi; shift by half a bin so bin 0 straddles 0 deg.
    bins = (np.floor((np.mod(angle, np.pi) + np.pi / 8) / (np.pi / 4)).astype(int)) % 4
    pairs = {
        0: ((0, 1), (0, -1)),    # gradient ~ horizontal
        1: ((1, 1), (-1, -1)),   # ~ 45 deg (down-right / up-left)
        2: ((1, 0), (-1, 0)),    # ~ vertical
        3: ((1, -1), (-1, 1)),   # ~ 135 deg
    }
    keep = np.zeros((h, w), dtype=bool)
    for b, ((dr1, dc1), (dr2, dc2)) in pairs.items():
        sel = bins == b
        n1 = _neighbor(padded, dr1, dc1, h, w)
        n2 = _neighbor(padded, dr2, dc2, h, w)
        keep |= sel & (magnitude >= n1) & (magnitude >= n2)
    return np.where(keep, magnitude, 0.0)


def _hysteresis(strong, weak):
    """Grow the strong set through 8-connected weak pixels to a fixpoint."""
    h, w = strong.shape
    edges = strong.copy()
    stack = [(int(r), int(c)) for r, c in np.argwhere(strong)]
    while stack:
        r, c = stack.pop()
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and weak[rr, cc] and not edges[rr, cc]:
                    edges[rr, cc] = True
                    stack.append((rr, cc))
    return edges


class CannyStages(NamedTuple):
    smoothed: np.ndarray
    magnitude: np.ndarray   # normalized by its image maximum
    suppressed: np.ndarray  # after non-maximum suppression
    strong: np.ndarray
    weak: np.ndarray
    edges: np.ndarray       # binary {0, 1} float map


def canny_stages(img, sigma=DEFAULT_SIGMA, low=DEFAULT_LOW, high=DEFAULT_HIGH):
    """Run the Canny pipeline and keep every intermediate stage."""
    if not 0 < low < high:
        raise ValueError(f"thresholds must satisfy 0 < low < high, got low={low} high={high}")
    img = np.asarray(img, dtype=np.float64)
    smoothed = gaussian_smooth(img, sigma)
    _, _, magnitude, angle = sobel_gradients(smoothed)
    peak = magnitude.max()
    if peak == 0.0:
        zero = np.zeros_like(img)
        falsy = np.zeros(img.shape, dtype=bool)
        return CannyStages(smoothed, zero, zero, falsy, falsy, zero)
    magnitude = magnitude / peak
    suppressed = _non_maximum_suppression(magnitude, angle)
    strong = suppressed >= high
    weak = (suppressed >= low) & ~strong
    edges = _hysteresis(strong, weak)
    return CannyStages(smoothed, magnitude, suppressed, strong, weak, edges.astype(np.float64))


def canny(img, sigma=DEFAULT_SIGMA, low=DEFAULT_LOW, high=DEFAULT_HIGH):
    """Binary edge map of a grayscale image."""
    return canny_stages(img, sigma, low, high).edges


class EdgeTargetCache:
    """Memoizes edge targets keyed by (image digest, sigma, low, high).

    Extraction is cheap but the training loop asks for the same target
    many times when datasets repeat; a bounded FIFO keeps that free.
    """

    def __init__(self, max_entries=1024):
        self.max_entries = max_entries
        self._entries = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, img, sigma=DEFAULT_SIGMA, low=DEFAULT_LOW, high=DEFAULT_HIGH):
        img = np.ascontiguousarray(img, dtype=np.float64)
        digest = hashlib.sha1(img.tobytes()).hexdigest()
        key = (digest, float(sigma), float(low), float(high))
        cached = self._entries.get(key)
        if cached is not None:
            self.hits += 1
            return cached
        self.misses += 1
        edges = canny(img, sigma, low, high)
        self._entries[key] = edges
        if len(self._entries) > self.max_entries:
            self._entries.popitem(last=False)
        return edges

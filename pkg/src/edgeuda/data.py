"""Procedural source/target scenes and on-disk paired-image ingestion.

Scenes are a few random solid shapes on a flat background; the class of
a pixel is the kind of the topmost shape covering it. A target-domain
scene shares its geometry (and therefore its labels) with the source
scene of the same seed; only the image is pushed through the domain-gap
transform (global color shift, multiplicative texture, pixel noise).

Target labels exist solely for evaluation. The training-side accessor
``target_sample`` returns the image alone, so no training code path can
touch them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netpbm import read_pnm

# Base colors per class; background first, then one color per shape kind.
PALETTE = np.array(
    [
        (0.18, 0.18, 0.22),  # background
        (0.80, 0.25, 0.20),  # rectangle
        (0.20, 0.70, 0.30),  # disk
        (0.25, 0.35, 0.85),  # triangle
        (0.85, 0.80, 0.20),  # stripe
        (0.70, 0.30, 0.75),
        (0.20, 0.75, 0.75),
        (0.95, 0.55, 0.15),
    ]
)

SHAPE_KINDS = ("rectangle", "disk", "triangle", "stripe")
TEXTURE_AMP = 0.25


def class_names(num_classes):
    names = ["background"] + [SHAPE_KINDS[(c - 1) % len(SHAPE_KINDS)] for c in range(1, num_classes)]
    # Disambiguate repeats when classes outnumber shape kinds.
    if num_classes > len(SHAPE_KINDS) + 1:
        names = ["background"] + [f"{n}{(c - 1) // len(SHAPE_KINDS) or ''}" for c, n in enumerate(names[1:], 1)]
    return names


@dataclass
class SceneSpec:
    """Parameters of one scene distribution."""

    size: int = 64
    num_classes: int = 5
    domain: str = "source"
    color_shift: tuple = (0.0, 0.0, 0.0)
    noise_amp: float = 0.0
    texture_freq: float = 0.0

    def validate(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")
        if len(self.color_shift) != 3:
            raise ValueError("color_shift must have 3 components")
        if self.noise_amp < 0:
            raise ValueError(f"noise_amp must be >= 0, got {self.noise_amp}")


def _palette(num_classes):
    if num_classes <= len(PALETTE):
        return PALETTE[:num_classes]
    # Extend deterministically around the hue circle.
    extra = []
    for i in range(num_classes - len(PALETTE)):
        t = (i * 0.61803398875) % 1.0
        extra.append((0.3 + 0.6 * t, 0.9 - 0.6 * t, 0.4 + 0.5 * ((t + 0.33) % 1.0)))
    return np.vstack([PALETTE, np.array(extra)])


def _rect_mask(rng, size, xx, yy):
    w = int(rng.integers(size // 8, size // 3 + 1))
    h = int(rng.integers(size // 8, size // 3 + 1))
    x0 = int(rng.integers(0, size - w))
    y0 = int(rng.integers(0, size - h))
    return (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)


def _disk_mask(rng, size, xx, yy):
    r = int(rng.integers(max(3, size // 12), size // 5 + 1))
    cx = int(rng.integers(r, size - r))
    cy = int(rng.integers(r, size - r))
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _triangle_mask(rng, size, xx, yy):
    min_area = (size / 6.0) ** 2
    for _ in range(32):
        pts = rng.uniform(2, size - 2, size=(3, 2))
        area = 0.5 * abs(
            (pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1])
            - (pts[2, 0] - pts[0, 0]) * (pts[1, 1] - pts[0, 1])
        )
        if area >= min_area:
            break
    mask = np.ones((size, size), dtype=bool)
    for i in range(3):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % 3]
        cx, cy = pts[(i + 2) % 3]
        side = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
        ref = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        mask &= side * ref >= 0
    return mask


def _stripe_mask(rng, size, xx, yy):
    theta = rng.uniform(0, np.pi)
    proj = xx * np.cos(theta) + yy * np.sin(theta)
    offset = rng.uniform(0.3, 0.7) * (proj.max() + proj.min())
    halfwidth = int(rng.integers(2, max(3, size // 14) + 1))
    return np.abs(proj - offset) <= halfwidth


_SHAPE_MASKS = {
    "rectangle": _rect_mask,
    "disk": _disk_mask,
    "triangle": _triangle_mask,
    "stripe": _stripe_mask,
}


def _draw_scene(rng, spec):
    size = spec.size
    yy, xx = np.mgrid[0:size, 0:size]
    colors = _palette(spec.num_classes)
    label = np.zeros((size, size), dtype=np.int64)
    image = np.empty((3, size, size))
    image[:] = colors[0][:, None, None]

    n_shapes = int(rng.integers(2, 7))
    for _ in range(n_shapes):
        cls = int(rng.integers(1, spec.num_classes))
        kind = SHAPE_KINDS[(cls - 1) % len(SHAPE_KINDS)]
        mask = _SHAPE_MASKS[kind](rng, size, xx, yy)
        label[mask] = cls
        for ch in range(3):
            image[ch][mask] = colors[cls][ch]
    return image, label


def apply_domain_gap(image, spec, rng):
    """Target-domain appearance transform; labels are untouched by design.

    Order: multiplicative texture grating, then the global color shift,
    then additive pixel noise, then clamping to [0, 1].
    """
    out = image.copy()
    size = spec.size
    if spec.texture_freq > 0:
        yy, xx = np.mgrid[0:size, 0:size]
        grating = np.sin(2 * np.pi * spec.texture_freq * xx / size) * np.sin(
            2 * np.pi * spec.texture_freq * yy / size
        )
        out = out * (1.0 + TEXTURE_AMP * grating[None])
    out = out + np.asarray(spec.color_shift, dtype=np.float64)[:, None, None]
    if spec.noise_amp > 0:
        out = out + rng.normal(0.0, spec.noise_amp, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def scene_seed_sequences(seed):
    """Geometry and gap child streams for one scene seed.

    Shared between source and target so that a (spec, seed) pair yields
    identical labels in both domains.
    """
    root = np.random.SeedSequence(seed)
    geometry, gap = root.spawn(2)
    return geometry, gap


def generate_scene(spec, seed):
    """Deterministic (image, label) pair for a spec and seed.

    The image is (3, H, W) float64 in [0, 1]; the label map is (H, W)
    int64. Retries the draw (continuing the same stream) in the rare
    case a scene ends up without background or without any shape pixel.
    """
    spec.validate()
    geometry_ss, gap_ss = scene_seed_sequences(seed)
    rng = np.random.default_rng(geometry_ss)
    for _ in range(16):
        image, label = _draw_scene(rng, spec)
        counts = np.bincount(label.reshape(-1), minlength=spec.num_classes)
        if counts[0] > 0 and counts[1:].sum() > 0:
            break
    if spec.domain == "target":
        image = apply_domain_gap(image, spec, np.random.default_rng(gap_ss))
    return image, label


def source_sample(spec, seed):
    """Labeled pair from the source distribution."""
    return generate_scene(spec, seed)


def target_sample(spec, seed):
    """Unlabeled target image; the generated label never leaves this call."""
    image, _ = generate_scene(spec, seed)
    return image


def eval_sample(spec, seed):
    """Labeled target pair, for evaluation only."""
    return generate_scene(spec, seed)


def load_paired_dataset(root):
    """Iterate (stem, image, label-or-None) pairs from a dataset directory.

    Layout: ``<root>/images/*.ppm`` plus optional ``<root>/labels/<stem>.pgm``
    with label pixel values equal to class ids. Files pair by stem and are
    visited in lexicographic order.
    """
    root = Path(root)
    images_dir = root / "images"
    labels_dir = root / "labels"
    if not images_dir.is_dir():
        raise ValueError(f"{images_dir}: not a directory")
    for path in sorted(images_dir.glob("*.ppm")):
        rgb = read_pnm(str(path))
        if rgb.ndim != 3:
            raise ValueError(f"{path}: expected a color (P6) image")
        image = rgb.astype(np.float64).transpose(2, 0, 1) / 255.0
        label = None
        label_path = labels_dir / f"{path.stem}.pgm"
        if label_path.exists():
            raw = read_pnm(str(label_path))
            if raw.ndim != 2:
                raise ValueError(f"{label_path}: expected a grayscale (P5) label map")
            if raw.shape != image.shape[1:]:
                raise ValueError(
                    f"{label_path}: label size {raw.shape} does not match image size {image.shape[1:]} of {path}"
                )
            label = raw.astype(np.int64)
        yield path.stem, image, label

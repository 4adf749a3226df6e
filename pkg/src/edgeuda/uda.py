"""Target-domain self-training: pseudo-labels from the model's own
predictions, class-mix augmentation pasting source classes onto target
images, and the training step optimizing the combined objective.

One step, in order: extract edge targets for both domains, forward the
target image without building a graph to harvest pseudo-labels, build the
class-mixed pair, then run the differentiable forwards (source, mixed,
target), backpropagate the total loss and apply one SGD update.

Cross-entropy supervises the source image (ground truth) and the mixed
image (ground truth on pasted pixels, pseudo-labels elsewhere); the edge
DICE terms supervise both raw domains. Raw-target cross-entropy is left
out on purpose: target semantics reach the model only through confident
pseudo-labels inside mixed images.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SceneSpec, eval_sample, load_paired_dataset, source_sample, target_sample
from .edge import EdgeTargetCache, to_gray
from .losses import IGNORE_INDEX, cross_entropy, edge_loss, total_loss
from .metrics import metrics_from_confusion, confusion_matrix
from .model import Model
from .tensor import Tensor, no_grad, zero_grads


@dataclass
class PseudoLabelBatch:
    labels: np.ndarray       # (H, W) int64, ignore_index at low-confidence pixels
    confidence: np.ndarray   # (H, W) max class probability
    coverage: float          # fraction of labeled pixels


def pseudo_labels(probs, threshold, ignore_index=IGNORE_INDEX):
    """Per-pixel argmax labels wherever confidence reaches the threshold.

    The result is detached by construction: it is a plain integer array,
    so no gradient can flow back through label selection.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    values = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    if values.ndim != 3:
        raise ValueError(f"pseudo_labels expects (C, H, W) probabilities, got shape {values.shape}")
    labels = values.argmax(axis=0).astype(np.int64)
    confidence = values.max(axis=0)
    keep = confidence >= threshold
    labels = np.where(keep, labels, ignore_index)
    return PseudoLabelBatch(labels=labels, confidence=confidence, coverage=float(keep.mean()))


@dataclass
class MixedBatch:
    image: np.ndarray   # (3, H, W)
    label: np.ndarray   # (H, W)
    mask: np.ndarray    # (H, W) bool, True where the pixel comes from the source


def class_mix(x_s, y_s, x_t, y_pseudo, rng):
    """Paste half the source classes (at least one) onto the target image.

    Pixels under the pasted classes keep the source image and source
    label; everywhere else the target image and pseudo-label remain.
    """
    x_s = np.asarray(x_s)
    x_t = np.asarray(x_t)
    y_s = np.asarray(y_s)
    y_pseudo = np.asarray(y_pseudo)
    if x_s.shape != x_t.shape or y_s.shape != y_pseudo.shape or y_s.shape != x_s.shape[1:]:
        raise ValueError(
            f"class_mix: incompatible shapes images {x_s.shape}/{x_t.shape} labels {y_s.shape}/{y_pseudo.shape}"
        )
    present = np.unique(y_s)
    n_pick = max(1, len(present) // 2)
    selected = rng.choice(present, size=n_pick, replace=False)
    mask = np.isin(y_s, selected)
    image = np.where(mask[None], x_s, x_t)
    label = np.where(mask, y_s, y_pseudo)
    return MixedBatch(image=image, label=label, mask=mask)


class SGD:
    """Plain momentum SGD over the named parameter map (fixed name order)."""

    def __init__(self, params, lr=0.01, momentum=0.9):
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._names = sorted(params)
        self._velocity = {name: np.zeros_like(params[name].data) for name in self._names}

    def step(self):
        for name in self._names:
            p = self.params[name]
            if p.grad is None:
                continue
            v = self._velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grads(self):
        zero_grads(self.params.values())


def supervised_losses(mdl, x_s, y_s, x_t, edge_target_s, edge_target_t, mixed):
    """Differentiable total loss given frozen step constants.

    Edge targets, pseudo-labels and the mixed batch are plain arrays; only
    the network forwards build graph. Kept separate from ``train_step`` so
    gradient checks can hold the constants fixed.
    """
    cfg = mdl.config
    out_s = mdl.forward(x_s)
    ce_s_init = cross_entropy(y_s, out_s.y_init)
    ce_s_final = cross_entropy(y_s, out_s.y_final)

    out_m = mdl.forward(mixed.image)
    ce_m_init = cross_entropy(mixed.label, out_m.y_init)
    ce_m_final = cross_entropy(mixed.label, out_m.y_final)

    l_seg_init = ce_s_init + ce_m_init
    l_seg_final = ce_s_final + ce_m_final

    l_edge_init = l_edge_final = None
    if cfg.enable_edge_aux:
        out_t = mdl.forward(x_t)
        l_edge_init, l_edge_final = edge_loss(
            edge_target_s, edge_target_t,
            out_s.e_init, out_t.e_init, out_s.e_final, out_t.e_final,
        )
    return total_loss(l_seg_init, l_seg_final, cfg.lam, l_edge_init, l_edge_final)


def train_step(mdl, optimizer, source_pair, target_image, rng, threshold=0.9, edge_cache=None):
    """One optimization step; returns the loss report.

    ``rng`` drives the class-mix draw. Pseudo-labels come from a
    non-graph forward of the current model, so they are constants for
    the subsequent backward pass.
    """
    x_s, y_s = source_pair
    cfg = mdl.config

    edge_target_s = edge_target_t = None
    if cfg.enable_edge_aux:
        if edge_cache is None:
            edge_cache = EdgeTargetCache(max_entries=4)
        edge_target_s = edge_cache.get(to_gray(x_s), cfg.sigma, cfg.low, cfg.high)
        edge_target_t = edge_cache.get(to_gray(target_image), cfg.sigma, cfg.low, cfg.high)

    with no_grad():
        preview = mdl.forward(target_image)
    pseudo = pseudo_labels(preview.y_final, threshold)
    mixed = class_mix(x_s, y_s, target_image, pseudo.labels, rng)

    total, report = supervised_losses(
        mdl, x_s, y_s, target_image, edge_target_s, edge_target_t, mixed
    )
    optimizer.zero_grads()
    total.backward()
    optimizer.step()
    return report


def evaluate(mdl, samples):
    """Aggregate confusion over (image, label) pairs; returns Metrics."""
    num_classes = mdl.config.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    with no_grad():
        for image, label in samples:
            pred = mdl.forward(image).y_final.data.argmax(axis=0)
            confusion += confusion_matrix(pred, label, num_classes)
    return metrics_from_confusion(confusion)


def eval_csv_header(num_classes):
    cols = ",".join(f"iou_{c}" for c in range(num_classes))
    return f"step,{cols},miou"


def eval_csv_line(step, metrics):
    cells = ",".join(f"{v:.6f}" for v in metrics.per_class_iou)
    return f"{step},{cells},{metrics.miou:.6f}"


class _ProceduralStream:
    def __init__(self, spec, namespace, seed, labeled):
        self.spec = spec
        self.namespace = namespace
        self.seed = seed
        self.labeled = labeled

    def sample(self, step):
        key = [self.seed, self.namespace, step]
        if self.labeled:
            return source_sample(self.spec, key)
        return target_sample(self.spec, key)


class _DiskStream:
    def __init__(self, root, labeled):
        self.items = list(load_paired_dataset(root))
        if not self.items:
            raise ValueError(f"{root}: dataset is empty")
        self.labeled = labeled
        if labeled:
            for stem, _, label in self.items:
                if label is None:
                    raise ValueError(f"{root}: source item {stem!r} has no label")

    def sample(self, step):
        _, image, label = self.items[step % len(self.items)]
        if self.labeled:
            return image, label
        return image


def run_training(cfg, out_dir=None):
    """Full training run: metrics log, periodic eval rows, checkpoints.

    Deterministic for a fixed config: scene seeds and the class-mix
    stream are derived from ``cfg.seed``, evaluation scenes from
    ``cfg.eval_seed``.
    """
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")

    mdl = Model.initialize(cfg.model_config(), cfg.seed)
    optimizer = SGD(mdl.params, lr=cfg.lr, momentum=cfg.momentum)
    edge_cache = EdgeTargetCache()
    mix_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))

    source = (
        _DiskStream(cfg.source_dir, labeled=True)
        if cfg.source_dir
        else _ProceduralStream(cfg.source_scene_spec(), 1, cfg.seed, labeled=True)
    )
    target = (
        _DiskStream(cfg.target_dir, labeled=False)
        if cfg.target_dir
        else _ProceduralStream(cfg.target_scene_spec(), 2, cfg.seed, labeled=False)
    )
    eval_spec = cfg.target_scene_spec()
    eval_set = [eval_sample(eval_spec, [cfg.eval_seed, i]) for i in range(cfg.eval_scenes)]

    metrics_path = out / "metrics.log"
    eval_path = out / "eval.csv"
    started = time.monotonic()
    last_metrics = None
    with open(metrics_path, "w", encoding="utf-8") as metrics_fh, open(
        eval_path, "w", encoding="utf-8"
    ) as eval_fh:
        eval_fh.write(eval_csv_header(cfg.num_classes) + "\n")
        for step in range(1, cfg.steps + 1):
            report = train_step(
                mdl,
                optimizer,
                source.sample(step),
                target.sample(step),
                mix_rng,
                threshold=cfg.threshold,
                edge_cache=edge_cache,
            )
            metrics_fh.write(report.log_line(step) + "\n")
            if (cfg.eval_every and step % cfg.eval_every == 0) or step == cfg.steps:
                last_metrics = evaluate(mdl, eval_set)
                eval_fh.write(eval_csv_line(step, last_metrics) + "\n")
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                mdl.save(out / f"checkpoint_{step:06d}.ckpt")
    mdl.save(out / "checkpoint_final.ckpt")

    return {
        "out_dir": str(out),
        "steps": cfg.steps,
        "seconds": time.monotonic() - started,
        "final_miou": last_metrics.miou if last_metrics is not None else None,
        "final_per_class_iou": (
            last_metrics.per_class_iou.tolist() if last_metrics is not None else None
        ),
        "edge_cache": {"hits": edge_cache.hits, "misses": edge_cache.misses},
    }

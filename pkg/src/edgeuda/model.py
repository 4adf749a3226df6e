"""The segmentation network: a shared encoder feeding an edge branch and a
segmentation branch, a sigmoid-gated correlation module exchanging
information between the two feature streams, and separate decoders for
initial and final predictions.

Desk-scale analog of the full-resolution architecture: a 3-stage strided
convolutional encoder stands in for a large backbone; the auxiliary-task
wiring is what matters and is backbone-agnostic.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"ELDA1"
MIN_DECODER_CHANNELS = 4


@dataclass
class ModelConfig:
    num_classes: int = 5
    in_channels: int = 3
    base_channels: int = 16
    encoder_depth: int = 3
    sigma: float = 1.0
    low: float = 0.1
    high: float = 0.2
    lam: float = 1.0
    enable_edge_aux: bool = True
    enable_cm: bool = True

    def validate(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.encoder_depth < 1:
            raise ValueError(f"encoder_depth must be >= 1, got {self.encoder_depth}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.low < self.high:
            raise ValueError(f"thresholds must satisfy 0 < low < high, got low={self.low} high={self.high}")
        if self.enable_cm and not self.enable_edge_aux:
            raise ValueError("enable_cm requires enable_edge_aux (the correlation module consumes edge features)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class ForwardOutputs:
    """Everything one forward pass produces, for loss wiring and probes."""

    y_init: Tensor                 # (C, H, W) class distribution
    y_final: Tensor
    e_init: Tensor | None = None   # (H, W) edge probability, absent without the edge branch
    e_final: Tensor | None = None
    f_shared: Tensor | None = None
    f_edge: Tensor | None = None
    f_seg: Tensor | None = None
    f_edge_cm: Tensor | None = None
    f_seg_cm: Tensor | None = None


def feature_channels(config):
    return config.base_channels * 2 ** (config.encoder_depth - 1)


def _decoder_plan(config):
    """Per-upsample-stage (in, out) channels, halving down to a floor of 4."""
    c = feature_channels(config)
    plan = []
    for _ in range(config.encoder_depth):
        nxt = max(c // 2, MIN_DECODER_CHANNELS)
        plan.append((c, nxt))
        c = nxt
    return plan, c


def param_spec(config):
    """Ordered name -> kernel/bias shape map for every learnable tensor."""
    spec = {}

    def conv(name, cout, cin, k=3):
        spec[f"{name}.kernel"] = (cout, cin, k, k)
        spec[f"{name}.bias"] = (cout,)

    cin = config.in_channels
    for i in range(config.encoder_depth):
        cout = config.base_channels * 2 ** i
        conv(f"sdi.enc{i}", cout, cin)
        cin = cout

    f = feature_channels(config)
    plan, head_in = _decoder_plan(config)
    branches = ("edge", "seg") if config.enable_edge_aux else ("seg",)

    def decoder(prefix, branch):
        for j, (ci, co) in enumerate(plan):
            conv(f"{prefix}.{branch}.up{j}", co, ci)
        n_out = 1 if branch == "edge" else config.num_classes
        conv(f"{prefix}.{branch}.head", n_out, head_in)

    for branch in branches:
        conv(f"tsb.{branch}.enc0", f, f)
        conv(f"tsb.{branch}.enc1", f, f)
        decoder("dec_init", branch)
    if config.enable_cm:
        for name in ("cm.seg_mid", "cm.edge_mid", "cm.seg_gate", "cm.edge_gate"):
            conv(name, f, f)
    for branch in branches:
        decoder("dec_final", branch)
    return spec


def init_params(config, seed):
    """He-initialized parameters; the correlation module starts at zero so
    training begins from an exact branch passthrough."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_spec(config).items():
        if name.endswith(".bias") or name.startswith("cm."):
            values = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            values = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        params[name] = Tensor(values, requires_grad=True)
    return params


def _conv_block(h, params, name, stride=1, padding=1):
    h = T.conv2d(h, params[f"{name}.kernel"], stride=stride, padding=padding)
    return T.bias_add(h, params[f"{name}.bias"])


def sdi_encode(x, params, config):
    """Shared encoder: strided conv + relu stages halving the resolution."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    c, h, w = x.shape
    factor = 2 ** config.encoder_depth
    if h % factor or w % factor:
        raise ValueError(f"input size {h}x{w} not divisible by 2^{config.encoder_depth}")
    out = T.reshape(x, (1, c, h, w))
    for i in range(config.encoder_depth):
        out = T.relu(_conv_block(out, params, f"sdi.enc{i}", stride=2, padding=1))
    return out


def _run_decoder(f, params, config, prefix, branch):
    plan, _ = _decoder_plan(config)
    h = f
    for j in range(len(plan)):
        h = T.upsample2x(h)
        h = T.relu(_conv_block(h, params, f"{prefix}.{branch}.up{j}"))
    h = _conv_block(h, params, f"{prefix}.{branch}.head")
    _, n_out, height, width = h.shape
    if branch == "edge":
        return T.reshape(T.sigmoid(h), (height, width))
    return T.reshape(T.softmax_channels(h), (n_out, height, width))


def tsb_forward(f_shared, params, config, branch):
    """Task-specific branch: two conv-relu layers, then the initial decoder."""
    if branch not in ("edge", "seg"):
        raise ValueError(f"branch must be 'edge' or 'seg', got {branch!r}")
    h = T.relu(_conv_block(f_shared, params, f"tsb.{branch}.enc0"))
    f_task = T.relu(_conv_block(h, params, f"tsb.{branch}.enc1"))
    initial = _run_decoder(f_task, params, config, "dec_init", branch)
    return f_task, initial


def correlation(f_edge, f_seg, params):
    """Sigmoid-gated residual exchange between the task feature streams.

    seg_mid  = Conv(f_seg)          edge_mid = Conv(f_edge)
    f_seg_cm  = f_seg  + edge_mid * Sigmoid(Conv(f_edge))
    f_edge_cm = f_edge + seg_mid  * Sigmoid(Conv(f_seg))

    All four convolutions are distinct shape-preserving 3x3 blocks.
    """
    if f_edge.shape != f_seg.shape:
        raise ValueError(f"correlation: edge features {f_edge.shape} != seg features {f_seg.shape}")
    seg_mid = _conv_block(f_seg, params, "cm.seg_mid")
    edge_mid = _conv_block(f_edge, params, "cm.edge_mid")
    edge_gate = T.sigmoid(_conv_block(f_edge, params, "cm.edge_gate"))
    seg_gate = T.sigmoid(_conv_block(f_seg, params, "cm.seg_gate"))
    f_seg_cm = f_seg + edge_mid * edge_gate
    f_edge_cm = f_edge + seg_mid * seg_gate
    return f_edge_cm, f_seg_cm


def decode_final(f_edge_cm, f_seg_cm, params, config):
    """Final decoders (same topology as the initial ones, fresh weights)."""
    e_final = None
    if f_edge_cm is not None:
        e_final = _run_decoder(f_edge_cm, params, config, "dec_final", "edge")
    y_final = _run_decoder(f_seg_cm, params, config, "dec_final", "seg")
    return e_final, y_final


def forward(x, params, config):
    """Full pipeline: encoder, both branches, correlation, final decoders."""
    f_shared = sdi_encode(x, params, config)
    f_seg, y_init = tsb_forward(f_shared, params, config, "seg")
    if config.enable_edge_aux:
        f_edge, e_init = tsb_forward(f_shared, params, config, "edge")
        if config.enable_cm:
            f_edge_cm, f_seg_cm = correlation(f_edge, f_seg, params)
        else:
            f_edge_cm, f_seg_cm = f_edge, f_seg
    else:
        f_edge = e_init = f_edge_cm = None
        f_seg_cm = f_seg
    e_final, y_final = decode_final(f_edge_cm, f_seg_cm, params, config)
    return ForwardOutputs(
        y_init=y_init, y_final=y_final, e_init=e_init, e_final=e_final,
        f_shared=f_shared, f_edge=f_edge, f_seg=f_seg,
        f_edge_cm=f_edge_cm, f_seg_cm=f_seg_cm,
    )


class Model:
    """Config plus named parameters, with forward and checkpoint helpers."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config, seed):
        return cls(config, init_params(config, seed))

    def forward(self, x):
        return forward(x, self.params, self.config)

    def save(self, path):
        save_checkpoint(path, self.config, self.params)

    @classmethod
    def load(cls, path):
        config, params = load_checkpoint(path)
        return cls(config, params)


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config, params):
    """Write magic, canonical-JSON config, then sorted name/shape/value records."""
    with open(str(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in sorted(params):
            values = np.ascontiguousarray(params[name].data, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", values.ndim))
            fh.write(struct.pack(f"<{values.ndim}Q", *values.shape))
            fh.write(values.tobytes())


def load_checkpoint(path):
    """Read and fully validate a checkpoint; returns (config, params)."""
    with open(str(path), "rb") as fh:
        blob = fh.read()

    view = memoryview(blob)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(CHECKPOINT_MAGIC), "magic")) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (cfg_len,) = struct.unpack("<Q", take(8, "config length"))
    try:
        config = ModelConfig.from_dict(json.loads(bytes(take(cfg_len, "config"))))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid config: {exc}") from None

    expected = param_spec(config)
    params = {}
    previous_name = None
    while pos < len(view):
        (name_len,) = struct.unpack("<Q", take(8, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        if previous_name is not None and name <= previous_name:
            raise CheckpointError(f"{path}: parameter names not sorted ({name!r} after {previous_name!r})")
        previous_name = name
        (rank,) = struct.unpack("<Q", take(8, "rank"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "dims")) if rank else ()
        count = int(np.prod(shape)) if shape else 1
        raw = take(8 * count, f"values of {name}")
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {name!r} for this config")
        if tuple(expected[name]) != tuple(int(d) for d in shape):
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {tuple(shape)}, config expects {expected[name]}"
            )
        values = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        params[name] = Tensor(values, requires_grad=True)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    return config, params


def clone_config(config, **overrides):
    cfg = replace(config, **overrides)
    cfg.validate()
    return cfg

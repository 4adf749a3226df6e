"""Reverse-mode automatic differentiation over float64 numpy arrays.

Deliberately small: exactly the operations the edge/segmentation network
needs (strided convolution, sigmoid, channel softmax, relu, nearest
upsampling, elementwise and scalar arithmetic, reductions), a backward
pass with accumulating gradients, and a hook for custom ops.

No broadcasting beyond scalar-tensor arithmetic; binary ops on mismatched
shapes raise immediately so wiring bugs surface at the call site.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

_node_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward-only mode)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled():
    return _grad_enabled


class Tensor:
    """Float64 array plus its slot in the differentiation graph.

    ``grad`` accumulates across backward() calls until ``zero_grads``
    resets it; summed loss terms rely on that. Graph edges are held in
    ``_parents``/``_backward`` and are only wired while grad mode is on.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """Copy of the value with no graph history."""
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        return add(-self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / float(other))

    # -- backward pass ---------------------------------------------------

    def backward(self):
        """Propagate d(self)/d(node) to every reachable node.

        Gradients are *added* into ``.grad``; calling backward twice on
        the same graph doubles them. The loss must be a single value.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")

        order = _topo_order(self)
        adjoint = {self.node_id: np.ones_like(self.data)}
        for node in reversed(order):
            grad = adjoint.pop(node.node_id, None)
            if grad is None:
                continue
            if node._backward is not None:
                contributions = node._backward(grad)
                for parent, contribution in zip(node._parents, contributions):
                    if contribution is None:
                        continue
                    acc = adjoint.get(parent.node_id)
                    if acc is None:
                        acc = np.zeros_like(parent.data)
                        adjoint[parent.node_id] = acc
                    acc += contribution
            if node.requires_grad:
                node.grad = grad if node.grad is None else node.grad + grad


def _topo_order(root):
    # Iterative post-order; each node appears once even when reused.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.node_id not in visited:
                stack.append((parent, False))
    return order


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def make_op(data, parents, backward):
    """Wrap an op result into the graph.

    ``backward(grad)`` must return one gradient array (or None) per
    parent, aligned positionally. Outside grad mode, or when no parent
    participates in differentiation, the result is a plain constant.
    """
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        return out
    return Tensor(data)


def _as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


# -- elementwise / scalar arithmetic --------------------------------------


def _check_binary_shapes(op, a, b):
    # Equal shapes, or one side holding a single value.
    if a.data.shape == b.data.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(grad, shape):
    # Undo scalar broadcasting in a binary op's backward.
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def add(a, b):
    if not isinstance(b, Tensor):
        scalar = float(b)

        def backward(grad):
            return (grad,)

        return make_op(a.data + scalar, (a,), backward)

    _check_binary_shapes("add", a, b)

    def backward(grad):
        ga = _reduce_to(grad, a.data.shape) if a.requires_grad else None
        gb = _reduce_to(grad, b.data.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data + b.data, (a, b), backward)


def mul(a, b):
    if not isinstance(b, Tensor):
        scalar = float(b)

        def backward(grad):
            return (grad * scalar,)

        return make_op(a.data * scalar, (a,), backward)

    _check_binary_shapes("mul", a, b)
    ad, bd = a.data, b.data

    def backward(grad):
        ga = _reduce_to(grad * bd, ad.shape) if a.requires_grad else None
        gb = _reduce_to(grad * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op(ad * bd, (a, b), backward)


def div(a, b):
    _check_binary_shapes("div", a, b)
    ad, bd = a.data, b.data

    def backward(grad):
        ga = _reduce_to(grad / bd, ad.shape) if a.requires_grad else None
        gb = _reduce_to(-grad * ad / (bd * bd), bd.shape) if b.requires_grad else None
        return ga, gb

    return make_op(ad / bd, (a, b), backward)


def relu(x):
    xd = x.data

    def backward(grad):
        return (grad * (xd > 0.0),)

    return make_op(np.maximum(xd, 0.0), (x,), backward)


def sigmoid(x):
    """Elementwise 1/(1+exp(-x)), overflow-safe on both tails."""
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(grad):
        return (grad * out * (1.0 - out),)

    return make_op(out, (x,), backward)


def sum_all(x):
    """Reduce every element to one scalar (shape ())."""
    xd = x.data

    def backward(grad):
        return (np.broadcast_to(grad, xd.shape),)

    return make_op(np.asarray(xd.sum()), (x,), backward)


def reshape(x, shape):
    xd = x.data

    def backward(grad):
        return (grad.reshape(xd.shape),)

    return make_op(xd.reshape(shape), (x,), backward)


# -- spatial ops -----------------------------------------------------------


def upsample2x(x):
    """Nearest-neighbor spatial doubling of an (N, C, H, W) tensor."""
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"upsample2x expects an (N, C, H, W) tensor, got shape {xd.shape}")
    out = np.repeat(np.repeat(xd, 2, axis=2), 2, axis=3)
    n, c, h, w = xd.shape

    def backward(grad):
        # Each input pixel fans out to a 2x2 block; its gradient is the block sum.
        return (grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_op(out, (x,), backward)


def softmax_channels(x):
    """Per-pixel distribution over channels of an (N, C, H, W) tensor.

    Stabilized by max-subtraction, so shifting all logits by a constant
    leaves the output bitwise unchanged.
    """
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"softmax_channels expects an (N, C, H, W) tensor, got shape {xd.shape}")
    shifted = xd - xd.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=1, keepdims=True)

    def backward(grad):
        inner = (grad * out).sum(axis=1, keepdims=True)
        return (out * (grad - inner),)

    return make_op(out, (x,), backward)


def conv2d(x, kernel, stride=1, padding=0):
    """2-D convolution of (N, C, H, W) input with a (K, C, kh, kw) kernel.

    Output spatial size is floor((H + 2*padding - kh)/stride) + 1 (same
    for W). Differentiable w.r.t. both input and kernel.
    """
    xd, kd = x.data, kernel.data
    if xd.ndim != 4 or kd.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-D input and kernel, got input {xd.shape} kernel {kd.shape}"
        )
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"conv2d stride must be a positive int, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ValueError(f"conv2d padding must be a non-negative int, got {padding!r}")
    n, c, h, w = xd.shape
    k, ck, kh, kw = kd.shape
    if ck != c:
        raise ValueError(f"conv2d channel mismatch: input {xd.shape} vs kernel {kd.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(
            f"conv2d kernel {kd.shape} larger than padded input {xd.shape} (padding={padding})"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    if padding:
        padded = np.zeros((n, c, hp, wp))
        padded[:, :, padding:padding + h, padding:padding + w] = xd
    else:
        padded = xd

    cols = np.empty((n, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = padded[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    cols = cols.reshape(n, c * kh * kw, oh * ow)
    kmat = kd.reshape(k, c * kh * kw)
    out = np.matmul(kmat, cols).reshape(n, k, oh, ow)

    def backward(grad):
        gmat = grad.reshape(n, k, oh * ow)
        gk = None
        if kernel.requires_grad:
            gk = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kd.shape)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(kmat.T, gmat).reshape(n, c, kh, kw, oh, ow)
            dpadded = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dpadded[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
            gx = dpadded[:, :, padding:padding + h, padding:padding + w] if padding else dpadded
        return gx, gk

    return make_op(out, (x, kernel), backward)


def bias_add(x, bias):
    """Add a per-channel bias vector (K,) to an (N, K, H, W) tensor."""
    xd, bd = x.data, bias.data
    if xd.ndim != 4 or bd.ndim != 1 or bd.shape[0] != xd.shape[1]:
        raise ValueError(f"bias_add: input {xd.shape} incompatible with bias {bd.shape}")

    def backward(grad):
        gx = grad if x.requires_grad else None
        gb = grad.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gb

    return make_op(xd + bd[None, :, None, None], (x, bias), backward)

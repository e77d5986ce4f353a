"""Minimal dense-tensor neural network kernel.

Forward/backward passes for the handful of layer kinds the multi-task
networks need (dense, valid 2-D convolution, ReLU, non-overlapping max
pooling, flatten, softmax-cross-entropy head) plus plain SGD with
per-parameter-group learning-rate scaling. Everything is float64 numpy
and seed-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Input shape incompatible with a layer."""


@dataclass
class ParamGroup:
    """Named parameter tensors updated together under one lr scale.

    lr_scale = 0 freezes the group: tensors are bit-identical before and
    after any optimizer step.
    """

    tensors: dict[str, np.ndarray]
    lr_scale: float = 1.0

    def size(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "ParamGroup":
        return ParamGroup({k: v.copy() for k, v in self.tensors.items()}, self.lr_scale)


# ---------------------------------------------------------------------------
# Layer kinds


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int

    def param_shapes(self):
        return {"w": (self.in_dim, self.out_dim), "b": (self.out_dim,)}

    @property
    def fan_in(self) -> int:
        return self.in_dim

    def forward(self, params, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"Dense({self.in_dim}->{self.out_dim}): bad input shape {x.shape}")
        y = x @ params.tensors["w"] + params.tensors["b"]
        return y, x

    def backward(self, params, cache, gy):
        x = cache
        gx = gy @ params.tensors["w"].T
        grads = {"w": x.T @ gy, "b": gy.sum(axis=0)}
        return gx, grads


@dataclass(frozen=True)
class Conv2D:
    """Valid (unpadded) 2-D convolution over NCHW input."""

    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1

    def param_shapes(self):
        k = self.kernel
        return {"w": (self.out_ch, self.in_ch, k, k), "b": (self.out_ch,)}

    @property
    def fan_in(self) -> int:
        return self.in_ch * self.kernel * self.kernel

    def _out_hw(self, h, w):
        k, s = self.kernel, self.stride
        if h < k or w < k:
            raise ShapeError(f"Conv2D: input {h}x{w} smaller than kernel {k}")
        return (h - k) // s + 1, (w - k) // s + 1

    def forward(self, params, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"Conv2D({self.in_ch}->{self.out_ch}): bad input shape {x.shape}")
        n, _, h, w = x.shape
        oh, ow = self._out_hw(h, w)
        cols = _im2col(x, self.kernel, self.stride, oh, ow)  # (N, C*k*k, OH*OW)
        w2 = params.tensors["w"].reshape(self.out_ch, -1)
        y = np.einsum("oc,ncp->nop", w2, cols) + params.tensors["b"][None, :, None]
        y = y.reshape(n, self.out_ch, oh, ow)
        return y, (x.shape, cols)

    def backward(self, params, cache, gy):
        x_shape, cols = cache
        n, _, h, w = x_shape
        oh, ow = self._out_hw(h, w)
        g2 = gy.reshape(n, self.out_ch, oh * ow)
        w2 = params.tensors["w"].reshape(self.out_ch, -1)
        gw = np.einsum("nop,ncp->oc", g2, cols).reshape(params.tensors["w"].shape)
        gb = g2.sum(axis=(0, 2))
        gcols = np.einsum("oc,nop->ncp", w2, g2)
        gx = _col2im(gcols, x_shape, self.kernel, self.stride, oh, ow)
        return gx, {"w": gw, "b": gb}


@dataclass(frozen=True)
class ReLU:
    def param_shapes(self):
        return {}

    def forward(self, params, x):
        return np.maximum(x, 0.0), x

    def backward(self, params, cache, gy):
        # subgradient 0 at x <= 0, fixed for reproducibility
        return gy * (cache > 0.0), {}


@dataclass(frozen=True)
class MaxPool2D:
    """Non-overlapping max pooling (stride = kernel)."""

    kernel: int

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        k = self.kernel
        if x.ndim != 4 or x.shape[2] % k or x.shape[3] % k:
            raise ShapeError(f"MaxPool2D({k}): bad input shape {getattr(x, 'shape', None)}")
        n, c, h, w = x.shape
        oh, ow = h // k, w // k
        windows = x.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
        idx = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, params, cache, gy):
        x_shape, idx = cache
        k = self.kernel
        n, c, h, w = x_shape
        oh, ow = h // k, w // k
        gwin = np.zeros((n, c, oh, ow, k * k))
        np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=-1)
        gx = gwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return gx, {}


@dataclass(frozen=True)
class Flatten:
    def param_shapes(self):
        return {}

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, gy):
        return gy.reshape(cache), {}


@dataclass(frozen=True)
class SoftmaxCrossEntropyHead:
    """Linear classifier with softmax output and cross-entropy loss."""

    in_dim: int
    classes: int

    def param_shapes(self):
        return {"w": (self.in_dim, self.classes), "b": (self.classes,)}

    @property
    def fan_in(self) -> int:
        return self.in_dim

    def forward(self, params, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"Head({self.in_dim}->{self.classes}): bad input shape {x.shape}")
        logits = x @ params.tensors["w"] + params.tensors["b"]
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        return probs, (x, probs)

    def loss(self, params, x, labels):
        probs, cache = self.forward(params, x)
        n = x.shape[0]
        nll = -np.log(np.maximum(probs[np.arange(n), labels], 1e-300))
        return float(nll.mean()), probs, cache

    def loss_backward(self, params, cache, labels):
        x, probs = cache
        n = x.shape[0]
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        gx = dlogits @ params.tensors["w"].T
        grads = {"w": x.T @ dlogits, "b": dlogits.sum(axis=0)}
        return gx, grads


LayerKind = Dense | Conv2D | ReLU | MaxPool2D | Flatten | SoftmaxCrossEntropyHead

_KIND_NAMES = {
    "Dense": Dense,
    "Conv2D": Conv2D,
    "ReLU": ReLU,
    "MaxPool2D": MaxPool2D,
    "Flatten": Flatten,
    "SoftmaxCrossEntropyHead": SoftmaxCrossEntropyHead,
}


def kind_to_dict(kind) -> dict:
    d = {"kind": type(kind).__name__}
    d.update(vars(kind))
    return d


def kind_from_dict(d: dict):
    d = dict(d)
    cls = _KIND_NAMES[d.pop("kind")]
    return cls(**d)


def _im2col(x, k, s, oh, ow):
    n, c, _, _ = x.shape
    cols = np.empty((n, c, k, k, oh, ow))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i : i + s * oh : s, j : j + s * ow : s]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(gcols, x_shape, k, s, oh, ow):
    n, c, h, w = x_shape
    g = gcols.reshape(n, c, k, k, oh, ow)
    gx = np.zeros((n, c, h, w))
    for i in range(k):
        for j in range(k):
            gx[:, :, i : i + s * oh : s, j : j + s * ow : s] += g[:, :, i, j]
    return gx


# ---------------------------------------------------------------------------
# Initialization and optimizer


def init_params(kind, rng: np.random.Generator, lr_scale: float = 1.0) -> ParamGroup:
    """Uniform fan-in init (bound = sqrt(1/fan_in)) for weights, zero biases."""
    tensors = {}
    shapes = kind.param_shapes()
    if shapes:
        bound = float(np.sqrt(1.0 / kind.fan_in))
        for name, shape in shapes.items():
            if name == "b":
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ParamGroup(tensors, lr_scale)


def sgd_step(groups_and_grads, base_lr: float) -> None:
    """theta <- theta - base_lr * lr_scale * g, in place per group.

    Groups with lr_scale == 0 are skipped entirely so their tensors stay
    bit-identical.
    """
    for group, grads in groups_and_grads:
        if group.lr_scale == 0.0:
            continue
        step = base_lr * group.lr_scale
        for name, g in grads.items():
            t = group.tensors[name]
            if t.shape != g.shape:
                raise ShapeError(f"sgd_step: grad shape {g.shape} != param shape {t.shape} for '{name}'")
            t -= step * g


# ---------------------------------------------------------------------------
# Block = one canonical trunk position (one parameterized op plus any
# surrounding activation / pooling / reshaping ops).


@dataclass(frozen=True)
class BlockSpec:
    name: str
    ops: tuple

    def param_op(self):
        for op in self.ops:
            if op.param_shapes():
                return op
        return None


def forward_block(block: BlockSpec, params: ParamGroup, x):
    caches = []
    h = x
    for op in block.ops:
        p = params if op.param_shapes() else None
        h, cache = op.forward(p, h)
        caches.append(cache)
    return h, caches


def backward_block(block: BlockSpec, params: ParamGroup, caches, gy):
    grads = {}
    g = gy
    for op, cache in zip(reversed(block.ops), reversed(caches)):
        p = params if op.param_shapes() else None
        g, op_grads = op.backward(p, cache, g)
        if op_grads:
            grads = op_grads
    return g, grads


# ---------------------------------------------------------------------------
# Gradient checking (used by tests and `bindgrow selfcheck`)


def finite_diff_check(kind, rng: np.random.Generator, h: float = 1e-5):
    """Max relative error between analytic and central-difference gradients.

    For ordinary layers the scalar objective is sum(forward(x) * R) for a
    fixed random projection R; for the head it is the cross-entropy loss.
    """
    x = _random_input(kind, rng)
    params = init_params(kind, rng)

    if isinstance(kind, SoftmaxCrossEntropyHead):
        labels = rng.integers(0, kind.classes, size=x.shape[0])

        def objective():
            loss, _, _ = kind.loss(params, x, labels)
            return loss

        _, _, cache = kind.loss(params, x, labels)
        gx, grads = kind.loss_backward(params, cache, labels)
    else:
        y, cache = kind.forward(params if kind.param_shapes() else None, x)
        r = rng.standard_normal(y.shape)

        def objective():
            out, _ = kind.forward(params if kind.param_shapes() else None, x)
            return float((out * r).sum())

        gx, grads = kind.backward(params if kind.param_shapes() else None, cache, r)

    worst = 0.0
    tensors = dict(grads)
    tensors["__input__"] = gx
    for name, analytic in tensors.items():
        target = x if name == "__input__" else params.tensors[name]
        num = np.empty_like(target)
        flat_t = target.reshape(-1)
        flat_n = num.reshape(-1)
        for i in range(flat_t.size):
            orig = flat_t[i]
            flat_t[i] = orig + h
            fp = objective()
            flat_t[i] = orig - h
            fm = objective()
            flat_t[i] = orig
            flat_n[i] = (fp - fm) / (2 * h)
        denom = max(float(np.abs(num).max()), float(np.abs(analytic).max()), 1e-8)
        worst = max(worst, float(np.abs(num - analytic).max()) / denom)
    return worst


def _random_input(kind, rng):
    if isinstance(kind, Dense):
        return rng.standard_normal((3, kind.in_dim))
    if isinstance(kind, SoftmaxCrossEntropyHead):
        return rng.standard_normal((4, kind.in_dim))
    if isinstance(kind, Conv2D):
        side = kind.kernel + kind.stride * 2
        return rng.standard_normal((2, kind.in_ch, side, side))
    if isinstance(kind, MaxPool2D):
        return rng.standard_normal((2, 2, kind.kernel * 2, kind.kernel * 2))
    if isinstance(kind, (ReLU, Flatten)):
        return rng.standard_normal((3, 4))
    raise TypeError(f"unknown layer kind {kind!r}")

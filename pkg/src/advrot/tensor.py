"""Layer primitives with hand-written backward passes.

Tensors are float64 numpy arrays. Every spatial op accepts either a single
sample (C, H, W) or a batch (N, C, H, W); dense ops accept (D,) or (N, D).
Nothing here mutates its inputs.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ValidationError

NUM_CLASSES = 10
LOG_FLOOR = 1e-12
L0_TOLERANCE = 1e-12


def _as_batch(x, rank, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise DimensionError(f"{name} must have rank {rank} or {rank + 1}, got shape {x.shape}")


def conv2d_forward(x, kernels, bias, stride=1):
    """Valid (unpadded) cross-correlation of `x` with `kernels` plus `bias`."""
    xb, single = _as_batch(x, 3)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"kernels must be (C_out, C_in, k, k), got {kernels.shape}")
    c_out, c_in, k, _ = kernels.shape
    _, c, h, w = xb.shape
    if c != c_in:
        raise DimensionError(f"channel axis: input has {c} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias axis: expected ({c_out},), got {bias.shape}")
    if stride < 1:
        raise ValidationError(f"stride must be positive, got {stride}")
    for axis, size in (("height", h), ("width", w)):
        if size < k:
            raise DimensionError(f"{axis} axis: size {size} is smaller than kernel {k}")
        if (size - k) % stride:
            raise DimensionError(f"{axis} axis: (size {size} - kernel {k}) not divisible by stride {stride}")

    windows = sliding_window_view(xb, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(grad_out, x, kernels, stride=1, need_input_grad=True):
    """Gradients of `conv2d_forward` w.r.t. input, kernels and bias.

    With ``need_input_grad=False`` the first element of the result is None,
    which saves work for the first layer during training.
    """
    xb, single = _as_batch(x, 3)
    gb, _ = _as_batch(grad_out, 3, "grad_out")
    kernels = np.asarray(kernels, dtype=np.float64)
    c_out, c_in, k, _ = kernels.shape
    n, c, h, w = xb.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    if c != c_in:
        raise DimensionError(f"channel axis: input has {c} channels, kernels expect {c_in}")
    if gb.shape != (n, c_out, ho, wo):
        raise DimensionError(f"grad_out must be {(n, c_out, ho, wo)}, got {gb.shape}")

    windows = sliding_window_view(xb, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    grad_kernels = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_bias = gb.sum(axis=(0, 2, 3))

    grad_x = None
    if need_input_grad:
        grad_x = np.zeros_like(xb)
        rows, cols = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(gb, kernels[:, :, i, j], axes=([1], [0]))
                grad_x[:, :, i:i + rows:stride, j:j + cols:stride] += contrib.transpose(0, 3, 1, 2)
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_kernels, grad_bias


def avgpool2_forward(x):
    """Mean over non-overlapping 2x2 blocks."""
    xb, single = _as_batch(x, 3)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise DimensionError(f"height/width axes must be even, got {h}x{w}")
    out = xb.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out[0] if single else out


def avgpool2_backward(grad_out):
    gb, single = _as_batch(grad_out, 3, "grad_out")
    grad = np.repeat(np.repeat(gb, 2, axis=2), 2, axis=3) / 4.0
    return grad[0] if single else grad


def dense_forward(x, weights, bias):
    """weights @ x + bias, row-wise for a batch."""
    xb, single = _as_batch(x, 1)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != xb.shape[1]:
        raise DimensionError(
            f"input length {xb.shape[1]} does not match weight columns {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise DimensionError(f"bias axis: expected ({weights.shape[0]},), got {bias.shape}")
    out = xb @ weights.T + bias
    return out[0] if single else out


def dense_backward(grad_out, x, weights):
    xb, single = _as_batch(x, 1)
    gb, _ = _as_batch(grad_out, 1, "grad_out")
    weights = np.asarray(weights, dtype=np.float64)
    if gb.shape != (xb.shape[0], weights.shape[0]):
        raise DimensionError(f"grad_out must be {(xb.shape[0], weights.shape[0])}, got {gb.shape}")
    grad_x = gb @ weights
    grad_w = gb.T @ xb
    grad_b = gb.sum(axis=0)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def tanh_forward(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("tanh input contains non-finite values")
    return np.tanh(x)


def tanh_backward(grad_out, out):
    """Backward of tanh given the forward *output* `out`."""
    return np.asarray(grad_out) * (1.0 - np.asarray(out) ** 2)


def softmax(logits):
    """Max-shifted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels, num_classes=NUM_CLASSES):
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValidationError(f"labels must lie in 0..{num_classes - 1}")
    return np.eye(num_classes)[labels]


def _check_one_hot(y_true):
    y_true = np.asarray(y_true, dtype=np.float64)
    ok = np.all((y_true == 0.0) | (y_true == 1.0)) and np.all(y_true.sum(axis=-1) == 1.0)
    if not ok:
        raise ValidationError("y_true must be one-hot")
    return y_true


def cross_entropy(y_true, y_pred):
    """-sum(y_true * log(y_pred)) with y_pred clamped at LOG_FLOOR.

    For batched (N, 10) inputs the mean over the batch is returned.
    """
    y_true = _check_one_hot(y_true)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"y_true {y_true.shape} and y_pred {y_pred.shape} differ")
    per_sample = -np.sum(y_true * np.log(np.maximum(y_pred, LOG_FLOOR)), axis=-1)
    return float(np.mean(per_sample))


def softmax_xent_grad(y_true, logits):
    """Gradient of cross_entropy(y_true, softmax(logits)) w.r.t. the logits: y_p - y.

    Batched input gives the per-sample gradients (not averaged).
    """
    y_true = _check_one_hot(y_true)
    probs = softmax(logits)
    if probs.shape != y_true.shape:
        raise DimensionError(f"y_true {y_true.shape} and logits {probs.shape} differ")
    return probs - y_true


@dataclass(frozen=True)
class PerturbationMetrics:
    l0: int
    l2: float
    linf: float


def lp_metrics(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b).ravel()
    if diff.size == 0:
        return PerturbationMetrics(0, 0.0, 0.0)
    return PerturbationMetrics(
        l0=int(np.count_nonzero(diff > L0_TOLERANCE)),
        l2=float(np.sqrt(np.sum(diff * diff))),
        linf=float(diff.max()),
    )

"""Small differentiable numerical engine on top of numpy.

Tensors are plain C-contiguous ``numpy.ndarray`` values; batches are laid out
``(batch, channels, height, width)``. Each layer caches what its backward pass
needs during ``forward`` and accumulates parameter gradients in ``backward``.
There is no graph: callers run layers in order and walk them back in reverse.

Reductions go through numpy's pairwise summation on row-major data, or through
single-threaded BLAS. For a fixed array shape the summation order is therefore
fixed, and repeated runs on one machine are bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray

INIT_RANGE = 0.1


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in a loss or gradient."""


def uniform_init(shape: Sequence[int], rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """Elements i.i.d. uniform on [-0.1, 0.1]."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ShapeError(f"cannot initialise tensor with shape {shape}")
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape).astype(dtype)


@dataclass
class LayerParams:
    name: str
    weight: Tensor
    bias: Tensor
    weight_grad: Tensor = field(init=False)
    bias_grad: Tensor = field(init=False)
    weight_momentum: Tensor = field(init=False)
    bias_momentum: Tensor = field(init=False)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight)
        self.bias = np.ascontiguousarray(self.bias)
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)
        self.weight_momentum = np.zeros_like(self.weight)
        self.bias_momentum = np.zeros_like(self.bias)

    @classmethod
    def uniform(cls, name, weight_shape, bias_shape, rng, dtype=np.float32) -> "LayerParams":
        # weight first, then bias: the draw order is part of the seed contract
        w = uniform_init(weight_shape, rng, dtype)
        b = uniform_init(bias_shape, rng, dtype)
        return cls(name, w, b)

    def zero_grad(self):
        self.weight_grad[...] = 0
        self.bias_grad[...] = 0

    def astype(self, dtype) -> "LayerParams":
        return LayerParams(self.name, self.weight.astype(dtype), self.bias.astype(dtype))

    def tensors(self) -> Dict[str, Tensor]:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# --------------------------------------------------------------------------
# convolution kernels


def _windows(x: Tensor, k: int, stride: int) -> Tensor:
    """(B, C, H, W) -> strided view (B, C, Ho, Wo, k, k)."""
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_windows(cols: Tensor, out_hw, stride: int) -> Tensor:
    """Adjoint of ``_windows``: (C, k, k, B, Ho, Wo) summed into (B, C, H, W).

    Kernel offsets are added in row-major (i, j) order.
    """
    c, k, _, b, ho, wo = cols.shape
    out = np.zeros((c, b) + tuple(out_hw), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _pad(x: Tensor, pad: int) -> Tensor:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding. ``weight`` is (C_out, C_in, k, k)."""
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) input, got {x.shape}")
    c_out, c_in, k, k2 = weight.shape
    if k != k2:
        raise ShapeError("only square kernels are supported")
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {c_in}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise ShapeError("kernel larger than padded input")
    win = _windows(_pad(x, pad), k, stride)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, C_out)
    out += bias
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(grad_out: Tensor, x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0):
    """Returns ``(grad_x, grad_weight, grad_bias)`` for ``conv2d_forward``."""
    k = weight.shape[2]
    xp = _pad(x, pad)
    win = _windows(xp, k, stride)
    grad_w = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    full = _transpose_full(grad_out, weight, stride)
    gxp = np.zeros_like(xp)
    gxp[:, :, :full.shape[2], :full.shape[3]] = full
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gxp), grad_w, grad_b


def deconv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride + k - 2 * pad


# Transposed convolutions use a sub-pixel split: output pixels of one stride
# phase only see every stride-th kernel tap, so each phase is a stride-1
# correlation of the input with a small flipped sub-kernel. All phases come out
# of a single GEMM and are then interleaved. Kernels whose size is not a
# multiple of the stride are zero-extended first.


def _phase_weight(w: Tensor, s: int) -> Tensor:
    """(C_in, C_out, k, k) -> (C_in * kk * kk, s * s * C_out) phase matrix."""
    c_in, c_out, k, _ = w.shape
    kk = -(-k // s)
    if kk * s != k:
        w = np.pad(w, ((0, 0), (0, 0), (0, kk * s - k), (0, kk * s - k)))
    # tap t = phase + s * j; sub-kernel is flipped in j
    w6 = w.reshape(c_in, c_out, kk, s, kk, s)[:, :, ::-1, :, ::-1, :]
    return np.ascontiguousarray(w6.transpose(0, 2, 4, 3, 5, 1)).reshape(c_in * kk * kk, s * s * c_out)


def _unphase_weight(g: Tensor, c_in: int, c_out: int, k: int, s: int) -> Tensor:
    kk = -(-k // s)
    g6 = g.reshape(c_in, kk, kk, s, s, c_out).transpose(0, 5, 1, 3, 2, 4)[:, :, ::-1, :, ::-1, :]
    return np.ascontiguousarray(g6.reshape(c_in, c_out, kk * s, kk * s)[:, :, :k, :k])


def _phase_cols(x: Tensor, kk: int) -> Tensor:
    """(B, C, H, W) -> (C * kk * kk, B * Hq * Wq) windows of the (kk-1)-padded input."""
    b, c, h, w = x.shape
    hq, wq = h + kk - 1, w + kk - 1
    xp = _pad(x, kk - 1).transpose(1, 0, 2, 3)
    cols = np.empty((c, kk, kk, b, hq, wq), dtype=x.dtype)
    for i in range(kk):
        for j in range(kk):
            cols[:, i, j] = xp[:, :, i:i + hq, j:j + wq]
    return cols.reshape(c * kk * kk, b * hq * wq)


def _transpose_full(x: Tensor, w: Tensor, s: int) -> Tensor:
    """Uncropped transposed convolution, shape (B, C_out, (H-1)s+k, (W-1)s+k)."""
    b, c_in, h, wd = x.shape
    _, c_out, k, _ = w.shape
    kk = -(-k // s)
    hq, wq = h + kk - 1, wd + kk - 1
    res = (_phase_weight(w, s).T @ _phase_cols(x, kk)).reshape(s, s, c_out, b, hq, wq)
    full = np.empty((b, c_out, hq, s, wq, s), dtype=res.dtype)
    for py in range(s):
        for px in range(s):
            full[:, :, :, py, :, px] = res[py, px].transpose(1, 0, 2, 3)
    return full.reshape(b, c_out, hq * s, wq * s)[:, :, :(h - 1) * s + k, :(wd - 1) * s + k]


def _transpose_full_backward(grad_full: Tensor, x: Tensor, w: Tensor, s: int):
    """Gradients of ``_transpose_full`` w.r.t. x and w."""
    b, c_in, h, wd = x.shape
    _, c_out, k, _ = w.shape
    kk = -(-k // s)
    hq, wq = h + kk - 1, wd + kk - 1
    g = grad_full
    eh, ew = hq * s - g.shape[2], wq * s - g.shape[3]
    if eh or ew:
        g = np.pad(g, ((0, 0), (0, 0), (0, eh), (0, ew)))
    g6 = g.reshape(b, c_out, hq, s, wq, s).transpose(1, 0, 2, 3, 4, 5)
    gm = np.empty((s, s, c_out, b, hq, wq), dtype=g.dtype)
    for py in range(s):
        for px in range(s):
            gm[py, px] = g6[:, :, :, py, :, px]
    gm = gm.reshape(s * s * c_out, b * hq * wq)
    grad_w = _unphase_weight(_phase_cols(x, kk) @ gm.T, c_in, c_out, k, s)
    gcols = (_phase_weight(w, s) @ gm).reshape(c_in, kk, kk, b, hq, wq)
    gxp = np.zeros((c_in, b, h + 2 * (kk - 1), wd + 2 * (kk - 1)), dtype=x.dtype)
    for i in range(kk):
        for j in range(kk):
            gxp[:, :, i:i + hq, j:j + wq] += gcols[:, i, j]
    return gxp[:, :, kk - 1:kk - 1 + h, kk - 1:kk - 1 + wd].transpose(1, 0, 2, 3), grad_w


def deconv2d_forward(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution. ``weight`` is (C_in, C_out, k, k).

    Equal to the input-gradient pass of ``conv2d_forward`` with the same kernel.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) input, got {x.shape}")
    c_in, c_out, k, _ = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {c_in}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    h, w = x.shape[2:]
    if (h - 1) * stride + k <= 2 * pad or (w - 1) * stride + k <= 2 * pad:
        raise ShapeError("padding removes the whole output")
    out = _transpose_full(x, weight, stride)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out + bias[None, :, None, None])


def deconv2d_backward(grad_out: Tensor, x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0):
    """Returns ``(grad_x, grad_weight, grad_bias)`` for ``deconv2d_forward``."""
    grad_full = _pad(grad_out, pad)
    gx, gw = _transpose_full_backward(grad_full, x, weight, stride)
    return np.ascontiguousarray(gx), gw, grad_out.sum(axis=(0, 2, 3))


def fc_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on (B, D_in) rows; ``weight`` is (D_out, D_in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input {x.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias


def fc_backward(grad_out: Tensor, x: Tensor, weight: Tensor):
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    return grad_out * (x > 0)


def sigmoid_forward(x: Tensor) -> Tensor:
    # tanh form cannot overflow
    half = x.dtype.type(0.5)
    return half * (np.tanh(half * x) + 1)


def sigmoid_backward(grad_out: Tensor, y: Tensor) -> Tensor:
    return grad_out * y * (1 - y)


# --------------------------------------------------------------------------
# stateful layers


class Layer:
    params: Optional[LayerParams] = None

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> Tensor:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a cached forward pass")
        return self._cache


class Conv2d(Layer):
    def __init__(self, params: LayerParams, stride: int = 1, pad: int = 0):
        self.params, self.stride, self.pad = params, stride, pad
        self._cache = None

    def forward(self, x, cache=True):
        out = conv2d_forward(x, self.params.weight, self.params.bias, self.stride, self.pad)
        self._cache = x if cache else None
        return out

    def backward(self, grad_out):
        x = self._cached()
        gx, gw, gb = conv2d_backward(grad_out, x, self.params.weight, self.stride, self.pad)
        self.params.weight_grad += gw
        self.params.bias_grad += gb
        return gx


class ConvTranspose2d(Layer):
    def __init__(self, params: LayerParams, stride: int = 1, pad: int = 0):
        self.params, self.stride, self.pad = params, stride, pad
        self._cache = None

    def forward(self, x, cache=True):
        out = deconv2d_forward(x, self.params.weight, self.params.bias, self.stride, self.pad)
        self._cache = x if cache else None
        return out

    def backward(self, grad_out):
        x = self._cached()
        gx, gw, gb = deconv2d_backward(grad_out, x, self.params.weight, self.stride, self.pad)
        self.params.weight_grad += gw
        self.params.bias_grad += gb
        return gx


class Linear(Layer):
    def __init__(self, params: LayerParams):
        self.params = params
        self._cache = None

    def forward(self, x, cache=True):
        out = fc_forward(x, self.params.weight, self.params.bias)
        self._cache = x if cache else None
        return out

    def backward(self, grad_out):
        x = self._cached()
        gx, gw, gb = fc_backward(grad_out, x, self.params.weight)
        self.params.weight_grad += gw
        self.params.bias_grad += gb
        return gx


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, cache=True):
        self._cache = x if cache else None
        return relu_forward(x)

    def backward(self, grad_out):
        return relu_backward(grad_out, self._cached())


class Sigmoid(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, cache=True):
        y = sigmoid_forward(x)
        self._cache = y if cache else None
        return y

    def backward(self, grad_out):
        return sigmoid_backward(grad_out, self._cached())


# --------------------------------------------------------------------------
# loss and optimiser


def mse_mean(pred: Tensor, target: Tensor, mask: Optional[Tensor] = None):
    """Mean squared error and its gradient with respect to ``pred``.

    With ``mask`` (broadcastable to ``pred``, 1 = keep), masked elements
    contribute nothing and the mean runs over the kept elements only.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    if mask is None:
        count = diff.size
    else:
        mask = np.broadcast_to(mask, diff.shape).astype(diff.dtype)
        diff = diff * mask
        count = int(mask.sum())
        if count == 0:
            raise ValueError("mask removes every element")
    loss = float(np.sum(np.square(diff, dtype=np.float64)) / count)
    grad = (2.0 / count) * diff
    return loss, grad.astype(pred.dtype, copy=False)


def sgd_momentum_step(params: Iterable[LayerParams], config: OptimizerConfig):
    """``v <- momentum * v + grad``; ``p <- p - lr * v``; then zero the grads.

    All gradients are checked before any parameter moves, so a non-finite
    gradient leaves the model untouched.
    """
    params = list(params)
    for p in params:
        for label, g in (("weight", p.weight_grad), ("bias", p.bias_grad)):
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise NonFiniteError(f"{p.name}.{label} gradient has {bad} non-finite entries")
    lr = config.learning_rate
    mu = config.momentum
    for p in params:
        p.weight_momentum *= mu
        p.weight_momentum += p.weight_grad
        p.weight -= lr * p.weight_momentum
        p.bias_momentum *= mu
        p.bias_momentum += p.bias_grad
        p.bias -= lr * p.bias_momentum
        p.zero_grad()


# --------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_error: Dict[str, float]
    tolerance: float
    entries_checked: Dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def lines(self) -> List[str]:
        return [f"{name}\t{err:.3e}\t{self.entries_checked[name]}" for name, err in self.max_rel_error.items()]


def relative_error(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], float],
    grad_fn: Callable[[], Dict[str, Tensor]],
    tensors: Dict[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``tensors`` maps names to float64 arrays that ``loss_fn`` reads; they are
    perturbed in place and restored. ``grad_fn`` returns the analytic gradient
    for each name. With ``max_entries`` only a random subset of each tensor is
    probed.
    """
    analytic = {k: np.array(v, dtype=np.float64) for k, v in grad_fn().items()}
    errors, counts = {}, {}
    for name, t in tensors.items():
        if t.dtype != np.float64:
            raise TypeError(f"{name}: gradient checks run in 64-bit mode, got {t.dtype}")
        flat = t.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
        g = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            worst = max(worst, relative_error(g[i], (up - down) / (2 * step)))
        errors[name] = worst
        counts[name] = int(idx.size)
    return GradCheckReport(errors, tolerance, counts)

"""Forward and reverse passes for a fixed set of CNN layers.

Tensors are plain ``numpy.float32`` arrays. Reductions inside conv2d and
linear accumulate in float64 and round once on output. The engine works on
one image at a time: conv inputs are ``[C, H, W]``, linear inputs ``[N]``.

Conventions:
    * conv2d is cross-correlation (no kernel flip).
    * relu'(0) == 0.
    * maxpool routes the gradient to the first maximum in row-major window
      order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KINDS = ("conv2d", "relu", "maxpool2d", "flatten", "linear")


class ShapeError(ValueError):
    """Tensor shapes are incompatible with an operation."""


class PipelineError(ValueError):
    """A layer sequence cannot be evaluated on the given input."""

    def __init__(self, index: int, message: str):
        super().__init__(f"layer {index}: {message}")
        self.index = index


@dataclass(eq=False)
class LayerParams:
    kind: str
    kernel: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    pool_size: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1 or self.padding < 0 or self.pool_size < 1:
            raise ValueError(
                f"{self.kind}: bad hyperparameters stride={self.stride} "
                f"padding={self.padding} pool_size={self.pool_size}"
            )
        if self.kind in ("conv2d", "linear"):
            if self.kernel is None or self.bias is None:
                raise ValueError(f"{self.kind} needs a kernel and a bias")
            self.kernel = np.ascontiguousarray(self.kernel, dtype=np.float32)
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
            want = 4 if self.kind == "conv2d" else 2
            if self.kernel.ndim != want:
                raise ValueError(f"{self.kind} kernel must be rank {want}, got {self.kernel.shape}")
            if self.bias.shape != (self.kernel.shape[0],):
                raise ValueError(
                    f"{self.kind} bias shape {self.bias.shape} does not match "
                    f"kernel shape {self.kernel.shape}"
                )
        elif self.kernel is not None or self.bias is not None:
            raise ValueError(f"{self.kind} carries no parameters")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv2d", "linear")


def _finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return out


def as_tensor(x) -> np.ndarray:
    """Coerce to a float32 array and check it is finite."""
    return _finite(np.asarray(x, dtype=np.float32), "as_tensor")


# ---------------------------------------------------------------- conv2d


def _conv_windows(x64: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        c, h, w = x64.shape
        padded = np.zeros((c, h + 2 * padding, w + 2 * padding))
        padded[:, padding : padding + h, padding : padding + w] = x64
        x64 = padded
    win = sliding_window_view(x64, (kh, kw), axis=(1, 2))
    return win[:, ::stride, ::stride]


def _conv_out_side(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: np.ndarray, layer: LayerParams) -> np.ndarray:
    """Cross-correlate ``x[C, H, W]`` with ``layer.kernel[O, C, kh, kw]`` plus bias."""
    kernel = layer.kernel
    if x.ndim != 3 or kernel.ndim != 4 or x.shape[0] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input shape {x.shape} incompatible with kernel shape {kernel.shape}")
    _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    if _conv_out_side(h, kh, layer.stride, layer.padding) < 1 or _conv_out_side(w, kw, layer.stride, layer.padding) < 1:
        raise ShapeError(f"conv2d: input shape {x.shape} too small for kernel shape {kernel.shape}")
    win = _conv_windows(x.astype(np.float64), kh, kw, layer.stride, layer.padding)
    out = np.tensordot(kernel.astype(np.float64), win, axes=([1, 2, 3], [0, 3, 4]))
    out += layer.bias.astype(np.float64)[:, None, None]
    return _finite(out.astype(np.float32), "conv2d")


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, layer: LayerParams):
    """Return (grad_input, grad_kernel, grad_bias)."""
    kernel = layer.kernel.astype(np.float64)
    _, kc, kh, kw = kernel.shape
    s, p = layer.stride, layer.padding
    g = grad_out.astype(np.float64)
    _, oh, ow = g.shape

    win = _conv_windows(x.astype(np.float64), kh, kw, s, p)
    grad_kernel = np.tensordot(g, win, axes=([1, 2], [1, 2]))
    grad_bias = g.sum(axis=(1, 2))

    c, h, w = x.shape
    cols = (kernel.reshape(kernel.shape[0], -1).T @ g.reshape(g.shape[0], -1)).reshape(kc, kh, kw, oh, ow)
    grad_pad = np.zeros((c, h + 2 * p, w + 2 * p))
    # col2im: scatter each kernel offset back onto the padded input
    for i in range(kh):
        for j in range(kw):
            grad_pad[:, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += cols[:, i, j]
    grad_in = grad_pad[:, p : p + h, p : p + w]
    return (
        _finite(grad_in.astype(np.float32), "conv2d_backward"),
        grad_kernel.astype(np.float32),
        grad_bias.astype(np.float32),
    )


# ---------------------------------------------------------------- relu


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, np.float32(0.0)).astype(np.float32)


# ---------------------------------------------------------------- maxpool


def _pool_windows(x: np.ndarray, pool_size: int, stride: int) -> np.ndarray:
    c, h, w = x.shape
    if h < pool_size or w < pool_size:
        raise ShapeError(f"maxpool2d: input shape {x.shape} smaller than pool {pool_size}")
    win = sliding_window_view(x, (pool_size, pool_size), axis=(1, 2))[:, ::stride, ::stride]
    return win.reshape(win.shape[0], win.shape[1], win.shape[2], pool_size * pool_size)


def maxpool2d(x: np.ndarray, pool_size: int, stride: int | None = None) -> np.ndarray:
    stride = pool_size if stride is None else stride
    return _pool_windows(x, pool_size, stride).max(axis=3)


def maxpool2d_argmax(x: np.ndarray, pool_size: int, stride: int | None = None) -> np.ndarray:
    """Flat in-window index of the first maximum, shape ``[C, H', W']``."""
    stride = pool_size if stride is None else stride
    return _pool_windows(x, pool_size, stride).argmax(axis=3)


def maxpool2d_backward(grad_out: np.ndarray, x: np.ndarray, pool_size: int, stride: int | None = None) -> np.ndarray:
    stride = pool_size if stride is None else stride
    idx = maxpool2d_argmax(x, pool_size, stride)
    c, oh, ow = idx.shape
    ch = np.arange(c)[:, None, None]
    rows = np.arange(oh)[None, :, None] * stride + idx // pool_size
    cols = np.arange(ow)[None, None, :] * stride + idx % pool_size
    grad_in = np.zeros(x.shape, dtype=np.float64)
    # overlapping windows (stride < pool_size) may hit the same cell twice
    np.add.at(grad_in, (ch, rows, cols), grad_out.astype(np.float64))
    return grad_in.astype(np.float32)


# ---------------------------------------------------------------- linear


def linear(x: np.ndarray, layer: LayerParams) -> np.ndarray:
    kernel = layer.kernel
    if x.ndim != 1 or kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with kernel shape {kernel.shape}")
    out = kernel.astype(np.float64) @ x.astype(np.float64) + layer.bias.astype(np.float64)
    return _finite(out.astype(np.float32), "linear")


def linear_backward(grad_out: np.ndarray, x: np.ndarray, layer: LayerParams):
    g = grad_out.astype(np.float64)
    grad_in = layer.kernel.astype(np.float64).T @ g
    grad_kernel = np.outer(g, x.astype(np.float64))
    return grad_in.astype(np.float32), grad_kernel.astype(np.float32), g.astype(np.float32)


# ---------------------------------------------------------------- loss


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Return (loss, probs) for ``-log softmax(logits)[label]``.

    Uses max subtraction, so ``logits = [1000, 0]`` is fine.
    """
    logits = np.asarray(logits)
    k = logits.shape[0]
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    z = logits.astype(np.float64)
    z = z - z.max()
    lse = np.log(np.exp(z).sum())
    probs = np.exp(z - lse)
    loss = float(lse - z[label])
    return loss, _finite(probs.astype(np.float32), "softmax")


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


# ---------------------------------------------------------------- pipelines


def check_pipeline(layers, input_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Propagate ``input_shape`` through ``layers``; return the output shape.

    Raises PipelineError naming the first layer that cannot accept its input.
    """
    shape = tuple(input_shape)
    for i, layer in enumerate(layers):
        kind = layer.kind
        if kind == "conv2d":
            k = layer.kernel.shape
            if len(shape) != 3 or shape[0] != k[1]:
                raise PipelineError(i, f"conv2d expects [{k[1]}, H, W], got {list(shape)}")
            oh = _conv_out_side(shape[1], k[2], layer.stride, layer.padding)
            ow = _conv_out_side(shape[2], k[3], layer.stride, layer.padding)
            if oh < 1 or ow < 1:
                raise PipelineError(i, f"conv2d input {list(shape)} too small for kernel {list(k)}")
            shape = (k[0], oh, ow)
        elif kind == "maxpool2d":
            if len(shape) != 3 or min(shape[1:]) < layer.pool_size:
                raise PipelineError(i, f"maxpool2d cannot pool {list(shape)} with size {layer.pool_size}")
            shape = (
                shape[0],
                (shape[1] - layer.pool_size) // layer.stride + 1,
                (shape[2] - layer.pool_size) // layer.stride + 1,
            )
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "linear":
            k = layer.kernel.shape
            if len(shape) != 1 or shape[0] != k[1]:
                raise PipelineError(i, f"linear expects [{k[1]}], got {list(shape)}")
            shape = (k[0],)
    if len(shape) != 1:
        raise PipelineError(len(layers) - 1, f"pipeline must end in a logit vector, ends in {list(shape)}")
    return shape


def forward(layers, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run ``layers`` on ``x``; return (logits, per-layer inputs)."""
    inputs = []
    for layer in layers:
        inputs.append(x)
        if layer.kind == "conv2d":
            x = conv2d(x, layer)
        elif layer.kind == "relu":
            x = relu(x)
        elif layer.kind == "maxpool2d":
            x = maxpool2d(x, layer.pool_size, layer.stride)
        elif layer.kind == "flatten":
            x = x.reshape(-1)
        else:
            x = linear(x, layer)
    return x, inputs


def backward(layers, inputs: list[np.ndarray], grad_logits: np.ndarray, want_params: bool = True):
    """Reverse pass. Returns (grad_input, [(grad_kernel, grad_bias) or None per layer])."""
    g = grad_logits.astype(np.float32)
    param_grads: list = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer, x = layers[i], inputs[i]
        if layer.kind == "conv2d":
            g, gk, gb = conv2d_backward(g, x, layer)
            if want_params:
                param_grads[i] = (gk, gb)
        elif layer.kind == "relu":
            g = relu_backward(g, x)
        elif layer.kind == "maxpool2d":
            g = maxpool2d_backward(g, x, layer.pool_size, layer.stride)
        elif layer.kind == "flatten":
            g = g.reshape(x.shape)
        else:
            g, gk, gb = linear_backward(g, x, layer)
            if want_params:
                param_grads[i] = (gk, gb)
    return g, param_grads


def loss_and_grads(layers, x: np.ndarray, label: int, want_params: bool = True):
    """Cross-entropy loss, softmax probs, input gradient and parameter gradients."""
    logits, inputs = forward(layers, x)
    loss, probs = softmax_cross_entropy(logits, label)
    grad_logits = _softmax64(logits)
    grad_logits[label] -= 1.0
    grad_in, param_grads = backward(layers, inputs, grad_logits, want_params)
    return loss, probs, grad_in, param_grads


def input_gradient(layers, image: np.ndarray, label: int) -> np.ndarray:
    """Exact gradient of the cross-entropy loss w.r.t. ``image[3, H, W]``."""
    image = as_tensor(image)
    (k,) = check_pipeline(layers, image.shape)
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    _, _, grad, _ = loss_and_grads(layers, image, label, want_params=False)
    return grad

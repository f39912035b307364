"""Layer zoo for the training engine.

Each layer keeps its parameters and the forward-pass caches needed for an
explicit, hand-derived backward pass.  Layers are deterministic: identical
inputs and parameters produce bit-identical outputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError
from .im2col import col2im, conv_output_size, im2col


class Layer:
    """Base: parameterless layers override forward/backward only."""

    name: str = ""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError


class Conv2D(Layer):
    """im2col convolution with per-filter bias.

    `patch_rows`, when set, selects a subset of patch-matrix rows before the
    GEMM, the compacted form of a column-pruned layer.  Such layers are
    inference-only (backward requires the full patch matrix).
    """

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        pad: int = 0,
        dtype=np.float32,
        patch_rows: np.ndarray | None = None,
    ):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh = self.kw = kernel
        self.stride = stride
        self.pad = pad
        self.patch_rows = patch_rows
        n_cols = len(patch_rows) if patch_rows is not None else in_channels * kernel * kernel
        self.weights = np.zeros((out_channels, n_cols), dtype=dtype).reshape(
            (out_channels, in_channels, kernel, kernel) if patch_rows is None else (out_channels, n_cols, 1, 1)
        )
        # column-compacted weights lose the (C, kh, kw) factorization; keep them 4-D
        # with a degenerate trailing shape so group bookkeeping stays uniform
        self.bias = np.zeros(out_channels, dtype=dtype)
        self._cols: np.ndarray | None = None
        self._x_shape: tuple[int, ...] | None = None
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def grads(self):
        return {"weights": self.grad_weights, "bias": self.grad_bias}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(
                f"layer {self.name}: expected {self.in_channels} input channels, got {c}"
            )
        oh, ow = conv_output_size(h, w, self.kh, self.kw, self.stride, self.pad)
        return (self.out_channels, oh, ow)

    def forward(self, x):
        b = x.shape[0]
        oh, ow = conv_output_size(x.shape[2], x.shape[3], self.kh, self.kw, self.stride, self.pad)
        cols = im2col(x, (self.kh, self.kw), self.stride, self.pad)
        if self.patch_rows is not None:
            cols = cols[self.patch_rows]
        self._cols = cols
        self._x_shape = x.shape
        w_mat = self.weights.reshape(self.out_channels, -1)
        out = w_mat @ cols + self.bias[:, None]
        return np.ascontiguousarray(
            out.reshape(self.out_channels, b, oh, ow).transpose(1, 0, 2, 3)
        )

    def backward(self, grad_out):
        if self.patch_rows is not None:
            raise ShapeError(f"layer {self.name}: column-compacted conv is inference-only")
        b, n, oh, ow = grad_out.shape
        g_mat = grad_out.transpose(1, 0, 2, 3).reshape(n, b * oh * ow)
        self.grad_weights = (g_mat @ self._cols.T).reshape(self.weights.shape)
        self.grad_bias = g_mat.sum(axis=1)
        w_mat = self.weights.reshape(self.out_channels, -1)
        grad_cols = w_mat.T @ g_mat
        return col2im(grad_cols, self._x_shape, (self.kh, self.kw), self.stride, self.pad)


class ReLU(Layer):
    def __init__(self, name: str):
        self.name = name
        self._mask: np.ndarray | None = None

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, grad_out):
        return np.where(self._mask, grad_out, 0)


class MaxPool2D(Layer):
    """Max pooling; the input spatial extent must tile exactly.

    Ties inside a window resolve to the first occurrence in row-major window
    order (argmax semantics), so backward routing is deterministic.
    """

    def __init__(self, name: str, kernel: int, stride: int | None = None):
        self.name = name
        self.kernel = kernel
        self.stride = stride if stride is not None else kernel
        self._argmax: np.ndarray | None = None
        self._in_shape: tuple[int, ...] | None = None

    def output_shape(self, in_shape):
        c, h, w = in_shape
        k, s = self.kernel, self.stride
        if h < k or w < k or (h - k) % s or (w - k) % s:
            raise ShapeError(
                f"layer {self.name}: pooling {k}/{s} does not tile input {h}x{w}"
            )
        return (c, (h - k) // s + 1, (w - k) // s + 1)

    def forward(self, x):
        b, c, h, w = x.shape
        _, oh, ow = self.output_shape((c, h, w))
        k, s = self.kernel, self.stride
        sb, sc, sh, sw = x.strides
        windows = np.lib.stride_tricks.as_strided(
            x,
            shape=(b, c, oh, ow, k, k),
            strides=(sb, sc, s * sh, s * sw, sh, sw),
            writeable=False,
        ).reshape(b, c, oh, ow, k * k)
        self._argmax = windows.argmax(axis=-1)
        self._in_shape = x.shape
        return windows.max(axis=-1)

    def backward(self, grad_out):
        b, c, h, w = self._in_shape
        _, _, oh, ow = grad_out.shape
        k, s = self.kernel, self.stride
        ki, kj = np.divmod(self._argmax, k)
        oi = np.arange(oh)[None, None, :, None] * s + ki
        oj = np.arange(ow)[None, None, None, :] * s + kj
        bi = np.arange(b)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        grad_in = np.zeros((b, c, h, w), dtype=grad_out.dtype)
        np.add.at(grad_in, (bi, ci, oi, oj), grad_out)
        return grad_in


class Dense(Layer):
    """Fully connected layer; flattens any trailing dims of the input.

    `in_index`, when set, gathers that subset of the flattened input features
    before the matmul, the compacted form of a column-pruned layer.  Such
    layers are inference-only.
    """

    def __init__(self, name: str, in_features: int, out_features: int, dtype=np.float32,
                 in_index: np.ndarray | None = None):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        self.in_index = in_index
        if in_index is not None and len(in_index) != in_features:
            raise ShapeError(
                f"layer {name}: gather index has {len(in_index)} entries "
                f"for {in_features} input features"
            )
        self.weights = np.zeros((out_features, in_features), dtype=dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self._x: np.ndarray | None = None
        self._x_shape: tuple[int, ...] | None = None
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def grads(self):
        return {"weights": self.grad_weights, "bias": self.grad_bias}

    def output_shape(self, in_shape):
        flat = int(np.prod(in_shape))
        if self.in_index is not None:
            if flat <= int(self.in_index.max()):
                raise ShapeError(
                    f"layer {self.name}: gather index reaches feature "
                    f"{int(self.in_index.max())} but input has only {flat}"
                )
        elif flat != self.in_features:
            raise ShapeError(
                f"layer {self.name}: expected {self.in_features} input features, "
                f"got {flat} (shape {in_shape})"
            )
        return (self.out_features,)

    def forward(self, x):
        self._x_shape = x.shape
        x = x.reshape(x.shape[0], -1)
        if self.in_index is not None:
            x = x[:, self.in_index]
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, grad_out):
        if self.in_index is not None:
            raise ShapeError(f"layer {self.name}: column-compacted dense is inference-only")
        self.grad_weights = grad_out.T @ self._x
        self.grad_bias = grad_out.sum(axis=0)
        return (grad_out @ self.weights).reshape(self._x_shape)


class SoftmaxCrossEntropy:
    """Head: mean cross-entropy over the batch with a stable log-softmax."""

    name = "softmax_ce"

    def __init__(self):
        self._probs: np.ndarray | None = None
        self._labels: np.ndarray | None = None

    def forward(self, logits: np.ndarray, labels: np.ndarray) -> float:
        if logits.ndim != 2:
            raise ShapeError(f"softmax head expects (batch, classes) logits, got {logits.shape}")
        z = logits - logits.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(logsumexp - z[np.arange(len(labels)), labels]))
        if not np.isfinite(loss):
            raise NumericError("softmax_ce produced a non-finite loss")
        self._probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        self._labels = labels
        return loss

    def backward(self) -> np.ndarray:
        grad = self._probs.copy()
        grad[np.arange(len(self._labels)), self._labels] -= 1.0
        return grad / len(self._labels)

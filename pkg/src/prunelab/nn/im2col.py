"""Patch unrolling so convolution becomes a single GEMM.

The weight tensor of a conv layer, shape (N, C, kh, kw), flattens row-major
into an N x (C*kh*kw) matrix.  `im2col` unrolls the input activations into a
(C*kh*kw) x (B*oh*ow) patch matrix with the same row ordering (channel-major,
then kernel row, then kernel column), so that

    conv(x, w) == w.reshape(N, -1) @ im2col(x, ...)

Column j of the patch matrix belongs to batch element j // (oh*ow) and output
position j % (oh*ow), row-major over (oh, ow).
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def conv_output_size(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    """Output spatial dims; raises ShapeError when they are not positive."""
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(
            f"convolution does not compose: input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, pad {pad} gives output {oh}x{ow}"
        )
    return oh, ow


def im2col(x: np.ndarray, kernel: tuple[int, int], stride: int = 1, pad: int = 0) -> np.ndarray:
    """Unroll (B, C, H, W) activations into a (C*kh*kw, B*oh*ow) patch matrix.

    Always returns a fresh contiguous array (the strided view is collapsed by
    the reshape), safe to mutate.
    """
    if x.ndim != 4:
        raise ShapeError(f"im2col expects a 4-D activation tensor, got shape {x.shape}")
    b, c, h, w = x.shape
    kh, kw = kernel
    oh, ow = conv_output_size(h, w, kh, kw, stride, pad)

    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    sb, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    # (b, c*kh*kw, oh*ow) -> rows are channel-major patch entries
    cols = patches.reshape(b, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols.transpose(1, 0, 2).reshape(c * kh * kw, b * oh * ow))


def col2im(
    cols: np.ndarray,
    x_shape: tuple[int, int, int, int],
    kernel: tuple[int, int],
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Scatter-add a patch matrix back onto an activation tensor.

    Adjoint of `im2col`: overlapping patch positions accumulate, which is
    exactly the gradient flow of the unrolling.
    """
    b, c, h, w = x_shape
    kh, kw = kernel
    oh, ow = conv_output_size(h, w, kh, kw, stride, pad)
    hp, wp = h + 2 * pad, w + 2 * pad

    patches = cols.reshape(c, kh, kw, b, oh, ow).transpose(3, 0, 1, 2, 4, 5)
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += patches[
                :, :, i, j
            ]
    if pad > 0:
        out = out[:, :, pad : hp - pad, pad : wp - pad]
    return out

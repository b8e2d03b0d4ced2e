"""Rank-4 array kernels with hand-written backward passes.

Every tensor is a plain ``numpy.ndarray`` laid out as (batch, channel, height,
width) in C order, so element (i, j, y, x) sits at flat index
((i*c + j)*h + y)*w + x. float32 is the working precision; float64 is used by
the gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass
class GradPair:
    """A trainable tensor together with its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad[...] = 0


def _check_rank4(x, name="input"):
    if x.ndim != 4 or min(x.shape) < 1:
        raise ShapeError(f"{name} must be a non-empty rank-4 tensor, got shape {x.shape}")


def _im2col(x, kh, kw, pad):
    """Patch matrix of shape (n*oh*ow, c*kh*kw) for a stride-1 convolution."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def conv2d(x, weight, bias=None, pad=0):
    """Stride-1 2-D cross-correlation with zero padding.

    ``weight`` is (out_c, in_c, kh, kw); the output is
    (n, out_c, h + 2*pad - kh + 1, w + 2*pad - kw + 1).
    """
    _check_rank4(x)
    _check_rank4(weight, "weight")
    out_c, in_c, kh, kw = weight.shape
    if x.shape[1] != in_c:
        raise ShapeError(f"conv2d: input shape {x.shape} incompatible with weight shape {weight.shape}")
    if bias is not None and bias.shape != (out_c,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} incompatible with weight shape {weight.shape}")
    n = x.shape[0]
    if x.shape[2] + 2 * pad < kh or x.shape[3] + 2 * pad < kw:
        raise ShapeError(f"conv2d: input shape {x.shape} smaller than kernel shape {weight.shape}")
    if kh == 1 and kw == 1 and pad == 0:
        out = np.einsum("oc,nchw->nohw", weight[:, :, 0, 0], x, optimize=True)
    else:
        cols, oh, ow = _im2col(x, kh, kw, pad)
        out = (cols @ weight.reshape(out_c, -1).T).reshape(n, oh, ow, out_c).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out, dtype=x.dtype)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(x, weight, grad_out, pad=0):
    """Gradients of sum(grad_out * conv2d(x, weight, b, pad)).

    Returns ``(grad_input, grad_weight, grad_bias)``.
    """
    _check_rank4(x)
    _check_rank4(weight, "weight")
    out_c, in_c, kh, kw = weight.shape
    n, c, h, w = x.shape
    expected = (n, out_c, h + 2 * pad - kh + 1, w + 2 * pad - kw + 1)
    if c != in_c or grad_out.shape != expected:
        raise ShapeError(
            f"conv2d_backward: input {x.shape}, weight {weight.shape} and grad_out {grad_out.shape} "
            f"are inconsistent (expected grad_out {expected})"
        )
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    if kh == 1 and kw == 1 and pad == 0:
        w2 = weight[:, :, 0, 0]
        grad_weight = np.einsum("nohw,nchw->oc", grad_out, x, optimize=True)[:, :, None, None]
        grad_input = np.einsum("oc,nohw->nchw", w2, grad_out, optimize=True)
        return (np.ascontiguousarray(grad_input, dtype=x.dtype),
                grad_weight.astype(weight.dtype), grad_bias.astype(weight.dtype))

    oh, ow = expected[2], expected[3]
    g = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, out_c)
    cols, _, _ = _im2col(x, kh, kw, pad)
    grad_weight = (g.T @ cols).reshape(weight.shape)
    gcols = (g @ weight.reshape(out_c, -1)).reshape(n, oh, ow, c, kh, kw)
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    for ky in range(kh):
        for kx in range(kw):
            padded[:, :, ky:ky + oh, kx:kx + ow] += gcols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    grad_input = padded[:, :, pad:pad + h, pad:pad + w] if pad else padded
    return np.ascontiguousarray(grad_input), grad_weight.astype(weight.dtype), grad_bias.astype(weight.dtype)


def global_avg_pool(x):
    _check_rank4(x)
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(x_shape, grad_out):
    n, c, h, w = x_shape
    if grad_out.shape != (n, c, 1, 1):
        raise ShapeError(f"global_avg_pool_backward: grad_out {grad_out.shape} does not match input {x_shape}")
    return np.broadcast_to(grad_out / (h * w), x_shape).copy()


def pixel_shuffle(x, r):
    """Rearrange (n, c*r*r, h, w) into (n, c, h*r, w*r)."""
    _check_rank4(x)
    n, cr2, h, w = x.shape
    if cr2 % (r * r):
        raise ShapeError(f"pixel_shuffle: channel count {cr2} not divisible by r^2={r * r}")
    c = cr2 // (r * r)
    out = x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, c, h * r, w * r))


def pixel_unshuffle(x, r):
    """Inverse of :func:`pixel_shuffle`; also its backward pass."""
    _check_rank4(x)
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {(hr, wr)} not divisible by {r}")
    h, w = hr // r, wr // r
    out = x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h, w))


pixel_shuffle_backward = pixel_unshuffle


def concat_channels(a, b):
    _check_rank4(a, "a")
    _check_rank4(b, "b")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape} differ outside the channel axis")
    return np.concatenate([a, b], axis=1)


def split_channels(x, at):
    """Backward of :func:`concat_channels`: the first ``at`` channels and the rest."""
    return np.ascontiguousarray(x[:, :at]), np.ascontiguousarray(x[:, at:])


def activation(x, kind):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(x, grad_out, kind):
    """Gradient through ``activation(x, kind)``; ``x`` is the forward input."""
    if kind == "relu":
        return grad_out * (x > 0)
    if kind == "sigmoid":
        s = activation(x, "sigmoid")
        return grad_out * s * (1 - s)
    raise ValueError(f"unknown activation {kind!r}")


def cubic(x, a=-0.5):
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return ((a + 2) * ax3 - (a + 3) * ax2 + 1) * (ax <= 1) + \
        (a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a) * ((ax > 1) & (ax <= 2))


def resize_weights(in_len, out_len, antialias=True):
    """Dense (out_len, in_len) resampling matrix for one axis.

    Follows the MATLAB ``imresize`` coordinate mapping. When shrinking with
    ``antialias`` the kernel is stretched by 1/scale. Source indices outside
    the image are clamped to the border.
    """
    scale = out_len / in_len
    if scale < 1 and antialias:
        width = 4.0 / scale

        def kernel(t):
            return scale * cubic(scale * t)
    else:
        width = 4.0
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = kernel(u[:, None] - idx)
    wts /= wts.sum(axis=1, keepdims=True)
    src = np.clip(idx - 1, 0, in_len - 1).astype(np.int64)
    mat = np.zeros((out_len, in_len))
    rows = np.broadcast_to(np.arange(out_len)[:, None], src.shape)
    np.add.at(mat, (rows, src), wts)
    return mat


def resize_bicubic(x, out_h, out_w, antialias=True):
    """Separable bicubic resampling (kernel parameter -0.5) of a rank-4 tensor."""
    _check_rank4(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bicubic: output size {(out_h, out_w)} must be positive")
    wh = resize_weights(x.shape[2], out_h, antialias)
    ww = resize_weights(x.shape[3], out_w, antialias)
    out = np.einsum("yh,nchw,xw->ncyx", wh, x.astype(np.float64), ww, optimize=True)
    return np.ascontiguousarray(out, dtype=x.dtype)

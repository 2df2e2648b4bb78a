"""Dense NCHW tensor primitives: direct convolution, 2x pooling, nearest upsampling.

Tensors are plain ``numpy.ndarray`` objects of rank 4 laid out row-major as
(batch, channel, height, width). Every function here is pure; adjoints are
provided next to each forward so the octave operator can compose them.

Convolution is a direct cross-correlation evaluated one kernel tap at a time,
in a fixed (i, j) order, so repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import record_macs
from .errors import ConfigError, ShapeError


def check_tensor4(x, name="x", allow_empty_channels=False):
    """Validate that ``x`` is a rank-4 float array and return it."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected rank-4 (n, c, h, w) tensor, got shape {x.shape}")
    n, c, h, w = x.shape
    if n < 1 or h < 1 or w < 1 or (c < 1 and not allow_empty_channels):
        raise ShapeError(f"{name}: all dims must be >= 1, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class ConvKernel:
    """Convolution weights of shape (c_out, c_in // groups, k_h, k_w).

    ``c_in`` is recorded explicitly because it cannot be recovered from the
    weight shape alone once ``groups > 1``.
    """

    weight: np.ndarray
    groups: int = 1

    def __post_init__(self):
        w = np.asarray(self.weight)
        if w.ndim != 4:
            raise ShapeError(f"kernel must be rank 4, got shape {w.shape}")
        object.__setattr__(self, "weight", w)
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        c_out, _, kh, kw = w.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {kh}x{kw}")
        if c_out % self.groups:
            raise ConfigError(f"c_out={c_out} not divisible by groups={self.groups}")

    @property
    def c_out(self):
        return self.weight.shape[0]

    @property
    def c_in(self):
        return self.weight.shape[1] * self.groups

    @property
    def k(self):
        return self.weight.shape[2]

    @property
    def shape(self):
        return self.weight.shape

    @property
    def size(self):
        return self.weight.size

    def is_empty(self):
        return self.weight.size == 0


def conv_output_size(size, k, stride, padding):
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"input size {size} with kernel {k}, stride {stride}, padding {padding} gives no output"
        )
    return out


def _check_conv_args(x, kernel, stride, padding):
    x = check_tensor4(x)
    if not isinstance(kernel, ConvKernel):
        kernel = ConvKernel(kernel)
    if x.shape[1] != kernel.c_in:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernel expects c_in={kernel.c_in}"
        )
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigError(f"padding must be non-negative, got {padding}")
    return x, kernel


def _taps(kernel):
    g = kernel.groups
    c_out, cin_g, kh, kw = kernel.shape
    # (g, c_out/g, c_in/g, kh, kw)
    return kernel.weight.reshape(g, c_out // g, cin_g, kh, kw)


def conv2d(x, kernel, stride=1, padding=0):
    """Direct 2D cross-correlation with zero padding and optional groups.

    ``kernel`` is a :class:`ConvKernel` (a bare ndarray is accepted for the
    ungrouped case). No bias, no dilation, no kernel flip.
    """
    x, kernel = _check_conv_args(x, kernel, stride, padding)
    n, c_in, h, w = x.shape
    c_out, cin_g, kh, kw = kernel.shape
    g = kernel.groups
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # channel-major so each tap is one batched matmul over groups
    xt = np.ascontiguousarray(xp.transpose(1, 0, 2, 3))
    taps = _taps(kernel)
    m = n * ho * wo
    acc = np.zeros((g, c_out // g, m), dtype=np.result_type(x, kernel.weight))
    for i in range(kh):
        for j in range(kw):
            patch = xt[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
            acc += taps[:, :, :, i, j] @ patch.reshape(g, cin_g, m)
            record_macs(m * cin_g * c_out)
    return np.ascontiguousarray(acc.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3))


def conv2d_backward(x, kernel, grad_out, stride=1, padding=0):
    """Adjoint of :func:`conv2d`; returns ``(grad_x, grad_weight)``.

    ``grad_x`` is the transposed-kernel correlation of ``grad_out``;
    ``grad_weight`` correlates ``grad_out`` with the input activations.
    """
    x, kernel = _check_conv_args(x, kernel, stride, padding)
    n, c_in, h, w = x.shape
    c_out, cin_g, kh, kw = kernel.shape
    g = kernel.groups
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (n, c_out, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, c_out, ho, wo)}")

    m = n * ho * wo
    go = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(g, c_out // g, m)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xt = np.ascontiguousarray(xp.transpose(1, 0, 2, 3))
    taps = _taps(kernel)
    dtype = np.result_type(x, kernel.weight, grad_out)
    gxt = np.zeros(xt.shape, dtype=dtype)
    gw = np.zeros((g, c_out // g, cin_g, kh, kw), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + stride * (ho - 1) + 1, stride)
            cols = slice(j, j + stride * (wo - 1) + 1, stride)
            patch = xt[:, :, rows, cols].reshape(g, cin_g, m)
            gw[:, :, :, i, j] = go @ patch.transpose(0, 2, 1)
            contrib = taps[:, :, :, i, j].transpose(0, 2, 1) @ go
            gxt[:, :, rows, cols] += contrib.reshape(c_in, n, ho, wo)
    gx = gxt.transpose(1, 0, 2, 3)[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(gx), gw.reshape(kernel.shape)


def _check_even(x, op):
    x = check_tensor4(x, allow_empty_channels=True)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"{op} needs even spatial dims, got {x.shape[2]}x{x.shape[3]}")
    return x


def _blocks(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2)


def avg_pool2(x):
    """2x2 average pooling with stride 2."""
    x = _check_even(x, "avg_pool2")
    b = _blocks(x)
    # fixed pairwise order keeps the result exact for upsampled inputs
    return ((b[:, :, :, 0, :, 0] + b[:, :, :, 0, :, 1]) + (b[:, :, :, 1, :, 0] + b[:, :, :, 1, :, 1])) * 0.25


def avg_pool2_backward(grad_out):
    """Adjoint of :func:`avg_pool2`: broadcast each gradient over its block, divided by 4."""
    return upsample_nearest2(grad_out) * 0.25


def max_pool2(x):
    """2x2 max pooling with stride 2."""
    x = _check_even(x, "max_pool2")
    return _blocks(x).max(axis=(3, 5))


def max_pool2_backward(x, grad_out):
    """Route each gradient to its block's arg-max; ties go to the first element in row-major order."""
    x = _check_even(x, "max_pool2")
    n, c, h, w = x.shape
    b = _blocks(x).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = b.argmax(axis=-1)
    onehot = np.arange(4) == idx[..., None]
    g = onehot * np.asarray(grad_out)[..., None]
    g = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g.reshape(n, c, h, w))


def upsample_nearest2(x):
    """Nearest-neighbour upsampling by 2: ``out[y, x] = in[y // 2, x // 2]``."""
    x = check_tensor4(x, allow_empty_channels=True)
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample_nearest2_backward(grad_out):
    """Adjoint of :func:`upsample_nearest2`: sum over each 2x2 block."""
    b = _blocks(_check_even(grad_out, "upsample_nearest2_backward"))
    return (b[:, :, :, 0, :, 0] + b[:, :, :, 0, :, 1]) + (b[:, :, :, 1, :, 0] + b[:, :, :, 1, :, 1])
